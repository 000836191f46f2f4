//! Martingale binomial test of the CH inequality.
//!
//! Trials are scanned in order. Every trial whose settings and aggregated
//! outcomes match one of the four CH terms is a category event. Scanning
//! stops at the event that brings the count to the predetermined `n_stop`,
//! and the rest of the data is discarded. Under local realism with settings
//! guessable with probability at most `(1 + ε)/2`, each category event is a
//! `++|ab` success with conditional probability at most
//!
//! ```text
//! β(ε) = (1 + ε)² / ((1 + ε)² + (1 − ε)²)
//! ```
//!
//! so `P[Binomial(n_stop, β) ≥ N(++|ab)]` is a valid p-value, whatever the
//! dependence between trials.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

use crate::simulator::{AggregatedOutcome, SlotWindow, TrialRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypothesisError {
    #[error("binomial tail needs 0 <= k <= n and 0 < beta < 1 (n = {n}, k = {k}, beta = {beta})")]
    BinomialDomain { n: u64, k: u64, beta: f64 },
    #[error("excess predictability must be in [0, 1), got {0}")]
    Epsilon(f64),
    #[error("p-value must be in (0, 1), got {0}")]
    PValueDomain(f64),
    #[error("n_stop must be at least 1")]
    EmptyStoppingRule,
    #[error("record offered after the stopping rule was met")]
    BeyondStop,
    #[error("expected one stopping rule per slot ({expected}), got {got}")]
    RuleCount { expected: usize, got: usize },
}

/// The four CH terms a trial can contribute to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    /// `++` with settings `a b`: the success event.
    PlusPlusAB,
    /// `+0` with settings `a b'`.
    PlusZeroABPrime,
    /// `0+` with settings `a' b`.
    ZeroPlusAPrimeB,
    /// `++` with settings `a' b'`.
    PlusPlusAPrimeBPrime,
}

pub fn categorize(outcome: &AggregatedOutcome) -> Option<Category> {
    match (
        outcome.setting_a,
        outcome.setting_b,
        outcome.plus_a,
        outcome.plus_b,
    ) {
        (false, false, true, true) => Some(Category::PlusPlusAB),
        (false, true, true, false) => Some(Category::PlusZeroABPrime),
        (true, false, false, true) => Some(Category::ZeroPlusAPrimeB),
        (true, true, true, true) => Some(Category::PlusPlusAPrimeBPrime),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub n_pp_ab: u64,
    pub n_p0_ab_prime: u64,
    pub n_0p_a_prime_b: u64,
    pub n_pp_a_prime_b_prime: u64,
    /// Every trial scanned, with or without a category event.
    pub n_total_trials: u64,
}

impl CategoryCounts {
    pub fn events(&self) -> u64 {
        self.n_pp_ab + self.n_p0_ab_prime + self.n_0p_a_prime_b + self.n_pp_a_prime_b_prime
    }

    pub fn record(&mut self, category: Category) {
        match category {
            Category::PlusPlusAB => self.n_pp_ab += 1,
            Category::PlusZeroABPrime => self.n_p0_ab_prime += 1,
            Category::ZeroPlusAPrimeB => self.n_0p_a_prime_b += 1,
            Category::PlusPlusAPrimeBPrime => self.n_pp_a_prime_b_prime += 1,
        }
    }
}

/// Number of category events after which the test stops. Must be fixed
/// before any data is looked at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub n_stop: u64,
}

impl StoppingRule {
    pub fn new(n_stop: u64) -> Result<Self, HypothesisError> {
        if n_stop == 0 {
            return Err(HypothesisError::EmptyStoppingRule);
        }
        Ok(Self { n_stop })
    }
}

/// Streaming category counter for one slot window. Refuses records once
/// the stopping rule has been met.
#[derive(Debug, Clone)]
pub struct StopAccumulator {
    rule: StoppingRule,
    window: SlotWindow,
    counts: CategoryCounts,
}

impl StopAccumulator {
    pub fn new(rule: StoppingRule, window: SlotWindow) -> Self {
        Self {
            rule,
            window,
            counts: CategoryCounts::default(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.counts.events() >= self.rule.n_stop
    }

    /// Consumes one trial; returns whether the rule is now met.
    pub fn push(&mut self, record: &TrialRecord) -> Result<bool, HypothesisError> {
        if self.is_complete() {
            return Err(HypothesisError::BeyondStop);
        }
        self.counts.n_total_trials += 1;
        if let Some(category) = categorize(&record.aggregate(&self.window)) {
            self.counts.record(category);
        }
        Ok(self.is_complete())
    }

    pub fn counts(&self) -> &CategoryCounts {
        &self.counts
    }

    pub fn rule(&self) -> StoppingRule {
        self.rule
    }

    pub fn window(&self) -> SlotWindow {
        self.window
    }
}

/// Counts up to the stopping point, or over the whole stream if it ends
/// first (then `complete` is false).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accumulation {
    pub counts: CategoryCounts,
    pub rule: StoppingRule,
    pub complete: bool,
}

pub fn accumulate_until_stop<I>(records: I, rule: StoppingRule, window: SlotWindow) -> Accumulation
where
    I: IntoIterator<Item = TrialRecord>,
{
    let mut acc = StopAccumulator::new(rule, window);
    for record in records {
        if acc.push(&record).expect("loop exits once complete") {
            break;
        }
    }
    Accumulation {
        counts: acc.counts,
        rule,
        complete: acc.is_complete(),
    }
}

/// `ln P[Binomial(n, beta) >= k]`, summed exactly in log space.
pub fn ln_binomial_tail(n: u64, k: u64, beta: f64) -> Result<f64, HypothesisError> {
    if k > n || !(beta > 0.0 && beta < 1.0) {
        return Err(HypothesisError::BinomialDomain { n, k, beta });
    }
    if k == 0 {
        return Ok(0.0);
    }
    let ln_p = beta.ln();
    let ln_q = (-beta).ln_1p();
    let mode = (n as f64 + 1.0) * beta;
    if (k as f64) < mode {
        // Tail near one: take the complement of the lower tail.
        let lower = ln_partial_sum(n, k - 1, ln_p, ln_q, false).exp();
        return Ok((-lower).ln_1p().min(0.0));
    }
    Ok(ln_partial_sum(n, k, ln_p, ln_q, true).min(0.0))
}

/// Log of `sum_j C(n,j) p^j q^(n-j)` for `j` from `start` upward to `n`, or
/// downward to `0`, stopping once the terms are negligible.
fn ln_partial_sum(n: u64, start: u64, ln_p: f64, ln_q: f64, upward: bool) -> f64 {
    let ln_odds = ln_p - ln_q;
    let mut term = ln_binomial(n, start) + start as f64 * ln_p + (n - start) as f64 * ln_q;
    let mut max = term;
    let mut scaled_sum = 1.0;
    let mut j = start;
    loop {
        if upward {
            if j == n {
                break;
            }
            term += ((n - j) as f64 / (j + 1) as f64).ln() + ln_odds;
            j += 1;
        } else {
            if j == 0 {
                break;
            }
            term -= ((n - j + 1) as f64 / j as f64).ln() + ln_odds;
            j -= 1;
        }
        if term > max {
            scaled_sum = scaled_sum * (max - term).exp() + 1.0;
            max = term;
        } else {
            scaled_sum += (term - max).exp();
            // Away from the mode terms shrink geometrically.
            if term < max - 60.0 {
                break;
            }
        }
    }
    max + scaled_sum.ln()
}

/// `P[Binomial(n, beta) >= k]`.
pub fn binomial_tail(n: u64, k: u64, beta: f64) -> Result<f64, HypothesisError> {
    ln_binomial_tail(n, k, beta).map(f64::exp)
}

/// Worst-case per-event success probability under local realism when each
/// setting can be guessed with probability `(1 + ε)/2`.
pub fn success_bound(epsilon: f64) -> Result<f64, HypothesisError> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(HypothesisError::Epsilon(epsilon));
    }
    let up = (1.0 + epsilon).powi(2);
    let down = (1.0 - epsilon).powi(2);
    Ok(up / (up + down))
}

/// One-sided standard normal quantile: `z` with `P[Z > z] = p`.
pub fn sigma_equivalent(p: f64) -> Result<f64, HypothesisError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(HypothesisError::PValueDomain(p));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(-normal.inverse_cdf(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValueReport {
    /// `N(++|ab)` among the counted category events.
    pub n_success: u64,
    pub n_stop: u64,
    /// Category events actually counted (`n_stop` unless the data ran out).
    pub n_events: u64,
    pub n_total_trials: u64,
    pub epsilon: f64,
    pub beta: f64,
    pub p_value: f64,
    /// Clamped to a finite value when `p_value` is 1.
    pub sigma_equivalent: f64,
    /// False if the stream ended before `n_stop` events.
    pub complete: bool,
}

impl PValueReport {
    /// `key=value` lines in field order.
    pub fn to_key_value(&self) -> String {
        format!(
            "n_success={}\nn_stop={}\nn_events={}\nn_total_trials={}\nepsilon={}\nbeta={}\np_value={:e}\nsigma_equivalent={:.6}\ncomplete={}\n",
            self.n_success,
            self.n_stop,
            self.n_events,
            self.n_total_trials,
            self.epsilon,
            self.beta,
            self.p_value,
            self.sigma_equivalent,
            self.complete
        )
    }
}

/// p-value of the counts against local realism with excess predictability
/// `epsilon`. Missing events (incomplete data) count as failures, which
/// keeps the p-value valid.
pub fn ch_pvalue(
    counts: &CategoryCounts,
    rule: &StoppingRule,
    epsilon: f64,
) -> Result<PValueReport, HypothesisError> {
    let beta = success_bound(epsilon)?;
    let n_success = counts.n_pp_ab.min(rule.n_stop);
    let p_value = binomial_tail(rule.n_stop, n_success, beta)?;
    let clamped = p_value.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    Ok(PValueReport {
        n_success,
        n_stop: rule.n_stop,
        n_events: counts.events().min(rule.n_stop),
        n_total_trials: counts.n_total_trials,
        epsilon,
        beta,
        p_value,
        sigma_equivalent: sigma_equivalent(clamped)?,
        complete: counts.events() >= rule.n_stop,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotReport {
    pub slot: usize,
    pub report: PValueReport,
    /// Whether all events of this slot are spacelike separated.
    pub separated: bool,
}

/// Runs several stop accumulators over one pass of the stream and stops
/// reading once every one of them is complete.
pub struct MultiAccumulator {
    accumulators: Vec<StopAccumulator>,
}

impl MultiAccumulator {
    pub fn new(accumulators: Vec<StopAccumulator>) -> Self {
        Self { accumulators }
    }

    pub fn all_complete(&self) -> bool {
        self.accumulators.iter().all(StopAccumulator::is_complete)
    }

    /// Feeds a record to every accumulator still running. Returns whether
    /// all are complete afterwards.
    pub fn push(&mut self, record: &TrialRecord) -> bool {
        for acc in self.accumulators.iter_mut().filter(|a| !a.is_complete()) {
            let _ = acc.push(record);
        }
        self.all_complete()
    }

    pub fn accumulators(&self) -> &[StopAccumulator] {
        &self.accumulators
    }
}

/// Independent single-slot tests for every slot.
pub fn per_slot_pvalues<I>(
    records: I,
    rules: &[StoppingRule],
    epsilon: f64,
    separated: &[bool],
) -> Result<Vec<SlotReport>, HypothesisError>
where
    I: IntoIterator<Item = TrialRecord>,
{
    let n_slots = rules.len();
    if separated.len() != n_slots {
        return Err(HypothesisError::RuleCount {
            expected: n_slots,
            got: separated.len(),
        });
    }
    let accumulators = rules
        .iter()
        .enumerate()
        .map(|(i, rule)| {
            let window = SlotWindow::single(i + 1, n_slots)
                .map_err(|_| HypothesisError::RuleCount { expected: 16, got: n_slots })?;
            Ok(StopAccumulator::new(*rule, window))
        })
        .collect::<Result<Vec<_>, HypothesisError>>()?;
    let mut multi = MultiAccumulator::new(accumulators);
    for record in records {
        if multi.push(&record) {
            break;
        }
    }
    multi
        .accumulators()
        .iter()
        .enumerate()
        .map(|(i, acc)| {
            Ok(SlotReport {
                slot: i + 1,
                report: ch_pvalue(acc.counts(), &acc.rule(), epsilon)?,
                separated: separated[i],
            })
        })
        .collect()
}
