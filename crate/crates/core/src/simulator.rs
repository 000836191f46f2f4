//! Synthetic trial streams for the pulsed Bell-test protocol.
//!
//! Every trial holds one setting per party for the whole Pockels window.
//! Inside that window `n_slots` pump pulses can each produce a pair. Slot
//! outcomes are conditionally independent given the settings.
//!
//! Setting bits come from stateful [`BitSource`]s and are drawn sequentially.
//! Slot outcomes use a random stream derived from `(seed, trial_index)`
//! alone, so a run is bit-identical however the outcome work is
//! parallelized.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{
    slot_outcome_distribution, DetectionParams, EntangledStateModel, MeasurementSettings,
    ModelError, OutcomeDistribution,
};
use crate::randomness::{xor_combine, BitSource, BitSourceSpec, RandomnessError};

/// Largest slot count representable in the 16-bit outcome masks.
pub const MAX_SLOTS: usize = 16;
pub const DEFAULT_SLOTS: usize = 15;
/// 79.3 MHz pump divided by 800.
pub const DEFAULT_TRIAL_RATE_HZ: f64 = 99_100.0;
/// One period of the 79.3 MHz pump, in ns.
pub const DEFAULT_PULSE_PERIOD_NS: f64 = 1000.0 / 79.3;
/// Slot whose events are furthest outside all relevant light cones.
pub const CENTER_SLOT: usize = 6;

const CHUNK: usize = 1 << 15;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
    #[error("n_slots must be in 1..={MAX_SLOTS}, got {0}")]
    SlotCount(usize),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{n_slots} slots of {pulse_period} ns do not fit in a trial period of {trial_period} ns")]
    WindowTooLong {
        n_slots: usize,
        pulse_period: f64,
        trial_period: f64,
    },
    #[error("slot_angle_offsets has {got} entries, expected 0 or {expected}")]
    OffsetCount { got: usize, expected: usize },
    #[error("slot window {center}:{width} is invalid for {n_slots} slots (width must be odd and fit)")]
    Window {
        center: usize,
        width: usize,
        n_slots: usize,
    },
    #[error("local strategy weights must be non-negative with a positive sum")]
    StrategyWeights,
}

/// All physical and protocol parameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub n_trials: u64,
    #[serde(default = "default_slots")]
    pub n_slots: usize,
    /// Trials per second.
    #[serde(default = "default_trial_rate")]
    pub trial_rate: f64,
    /// Pump pulse spacing in ns.
    #[serde(default = "default_pulse_period")]
    pub pulse_period: f64,
    /// Per-slot analyzer rotation in degrees, applied to all four angles.
    /// Empty means no offsets.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slot_angle_offsets: Vec<f64>,
    pub state: EntangledStateModel,
    #[serde(default)]
    pub settings: MeasurementSettings,
    pub detection: DetectionParams,
    /// Defaults to three unbiased sources seeded from `seed`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alice_sources: Vec<BitSourceSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bob_sources: Vec<BitSourceSpec>,
}

fn default_slots() -> usize {
    DEFAULT_SLOTS
}

fn default_trial_rate() -> f64 {
    DEFAULT_TRIAL_RATE_HZ
}

fn default_pulse_period() -> f64 {
    DEFAULT_PULSE_PERIOD_NS
}

impl ExperimentConfig {
    /// The published single-run configuration: optimal state and angles,
    /// calibrated noise (visibilities 0.999 / 0.996), measured efficiencies
    /// and backgrounds, and three XOR-ed setting sources per party with the
    /// measured phase-diffusion bias.
    pub fn published(n_trials: u64, seed: u64) -> Self {
        let noise = crate::quantum::calibrate_noise(
            0.999,
            0.996,
            &EntangledStateModel::maximally_entangled(),
        )
        .expect("published visibilities are feasible");
        Self {
            seed,
            n_trials,
            n_slots: DEFAULT_SLOTS,
            trial_rate: DEFAULT_TRIAL_RATE_HZ,
            pulse_period: DEFAULT_PULSE_PERIOD_NS,
            slot_angle_offsets: Vec::new(),
            state: EntangledStateModel::published_optimum()
                .with_noise(noise.dephasing, noise.extinction),
            settings: MeasurementSettings::published_optimum(),
            detection: DetectionParams::published(),
            alice_sources: BitSourceSpec::standard_triple(seed ^ 0xA11CE, 1.08e-4),
            bob_sources: BitSourceSpec::standard_triple(seed ^ 0xB0B, 1.08e-4),
        }
    }

    /// Replaces the run seed and re-derives every source seed from it, so a
    /// new seed changes the settings stream as well as the outcomes.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        for (salt, specs) in [(0xA11CE, &mut self.alice_sources), (0xB0B, &mut self.bob_sources)] {
            for (i, spec) in specs.iter_mut().enumerate() {
                spec.seed = (seed ^ salt).wrapping_add(i as u64);
            }
        }
        self
    }

    pub fn trial_period_ns(&self) -> f64 {
        1e9 / self.trial_rate
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        self.state.validate()?;
        self.settings.validate()?;
        self.detection.validate()?;
        if self.n_slots == 0 || self.n_slots > MAX_SLOTS {
            return Err(SimulationError::SlotCount(self.n_slots));
        }
        for (name, value) in [
            ("trial_rate", self.trial_rate),
            ("pulse_period", self.pulse_period),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SimulationError::NonPositive { name, value });
            }
        }
        if self.n_slots as f64 * self.pulse_period > self.trial_period_ns() {
            return Err(SimulationError::WindowTooLong {
                n_slots: self.n_slots,
                pulse_period: self.pulse_period,
                trial_period: self.trial_period_ns(),
            });
        }
        if !self.slot_angle_offsets.is_empty() && self.slot_angle_offsets.len() != self.n_slots {
            return Err(SimulationError::OffsetCount {
                got: self.slot_angle_offsets.len(),
                expected: self.n_slots,
            });
        }
        for spec in self.alice_sources.iter().chain(&self.bob_sources) {
            spec.validate()?;
        }
        Ok(())
    }

    fn party_sources(&self, alice: bool) -> Vec<BitSourceSpec> {
        let (given, salt) = if alice {
            (&self.alice_sources, 0xA11CE)
        } else {
            (&self.bob_sources, 0xB0B)
        };
        if given.is_empty() {
            BitSourceSpec::standard_triple(self.seed ^ salt, 0.0)
        } else {
            given.clone()
        }
    }

    /// Settings actually used in slot `slot` (1-based).
    pub fn slot_settings(&self, slot: usize) -> MeasurementSettings {
        match self.slot_angle_offsets.get(slot - 1) {
            Some(&offset) if offset != 0.0 => self.settings.rotated(offset),
            _ => self.settings,
        }
    }
}

/// "+" flags for up to 16 slots; bit `i` is slot `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotOutcomes(pub u16);

impl SlotOutcomes {
    /// Whether slot `slot` (1-based) recorded "+".
    pub fn is_plus(self, slot: usize) -> bool {
        (1..=MAX_SLOTS).contains(&slot) && self.0 >> (slot - 1) & 1 == 1
    }

    pub fn set(&mut self, slot: usize) {
        self.0 |= 1 << (slot - 1);
    }

    pub fn any_in(self, mask: u16) -> bool {
        self.0 & mask != 0
    }
}

/// One protocol trial. Setting `false` selects `a` / `b`, `true` selects
/// `a'` / `b'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: u64,
    #[serde(rename = "setting_A", with = "bit")]
    pub setting_a: bool,
    #[serde(rename = "setting_B", with = "bit")]
    pub setting_b: bool,
    #[serde(rename = "outcomes_A")]
    pub outcomes_a: SlotOutcomes,
    #[serde(rename = "outcomes_B")]
    pub outcomes_b: SlotOutcomes,
    pub trial_time_ns: u64,
}

/// Settings serialize as 0/1.
mod bit {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("setting must be 0 or 1, got {other}"))),
        }
    }
}

impl TrialRecord {
    pub fn aggregate(&self, window: &SlotWindow) -> AggregatedOutcome {
        let mask = window.mask();
        AggregatedOutcome {
            setting_a: self.setting_a,
            setting_b: self.setting_b,
            plus_a: self.outcomes_a.any_in(mask),
            plus_b: self.outcomes_b.any_in(mask),
        }
    }
}

/// Contiguous run of slots centred on `center` (1-based), `width` odd.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotWindow {
    pub center: usize,
    pub width: usize,
}

impl SlotWindow {
    pub fn new(center: usize, width: usize, n_slots: usize) -> Result<Self, SimulationError> {
        let half = width / 2;
        let fits = width % 2 == 1 && center > half && center + half <= n_slots;
        if !fits || n_slots > MAX_SLOTS {
            return Err(SimulationError::Window {
                center,
                width,
                n_slots,
            });
        }
        Ok(Self { center, width })
    }

    pub fn single(slot: usize, n_slots: usize) -> Result<Self, SimulationError> {
        Self::new(slot, 1, n_slots)
    }

    pub fn first(&self) -> usize {
        self.center - self.width / 2
    }

    pub fn last(&self) -> usize {
        self.center + self.width / 2
    }

    pub fn slots(&self) -> std::ops::RangeInclusive<usize> {
        self.first()..=self.last()
    }

    pub fn mask(&self) -> u16 {
        self.slots().fold(0u16, |m, s| m | 1 << (s - 1))
    }
}

/// A trial reduced to one outcome per party over a slot window: "+" iff any
/// slot in the window is "+".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregatedOutcome {
    pub setting_a: bool,
    pub setting_b: bool,
    pub plus_a: bool,
    pub plus_b: bool,
}

pub fn aggregate_slots(
    record: &TrialRecord,
    center: usize,
    width: usize,
    n_slots: usize,
) -> Result<AggregatedOutcome, SimulationError> {
    Ok(record.aggregate(&SlotWindow::new(center, width, n_slots)?))
}

/// Per-settings-pair sampling tables for all slots of a trial.
#[derive(Debug, Clone)]
struct TrialTable {
    /// Cumulative probabilities of "no slot active" followed by "first
    /// active slot is s" for s = 1..=n.
    first_active: Vec<f64>,
    /// Per slot, cumulative (++, +0, 0+) conditional on the slot not being 00.
    conditional: Vec<[f64; 3]>,
    /// Per slot, unconditional cumulative (++, +0, 0+).
    unconditional: Vec<[f64; 3]>,
}

impl TrialTable {
    fn new(distributions: &[OutcomeDistribution]) -> Self {
        let mut first_active = Vec::with_capacity(distributions.len() + 1);
        let mut conditional = Vec::with_capacity(distributions.len());
        let mut unconditional = Vec::with_capacity(distributions.len());

        let quiet_all: f64 = distributions.iter().map(|d| 1.0 - active(d)).product();
        first_active.push(quiet_all);
        let mut quiet_before = 1.0;
        let mut cumulative = quiet_all;
        for d in distributions {
            let a = active(d);
            cumulative += quiet_before * a;
            first_active.push(cumulative);
            quiet_before *= 1.0 - a;

            unconditional.push([d.p_pp, d.p_pp + d.p_p0, d.p_pp + d.p_p0 + d.p_0p]);
            conditional.push(if a > 0.0 {
                [d.p_pp / a, (d.p_pp + d.p_p0) / a, 1.0]
            } else {
                [0.0, 0.0, 0.0]
            });
        }
        Self {
            first_active,
            conditional,
            unconditional,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> (SlotOutcomes, SlotOutcomes) {
        let mut alice = SlotOutcomes::default();
        let mut bob = SlotOutcomes::default();
        let u: f64 = rng.random();
        if u < self.first_active[0] {
            return (alice, bob);
        }
        let n = self.conditional.len();
        let first = match self.first_active[1..].iter().position(|&c| u < c) {
            Some(i) => i + 1,
            // Rounding left a sliver above the last cumulative value; use the
            // last slot that can be active.
            None => match self.conditional.iter().rposition(|c| c[2] > 0.0) {
                Some(i) => i + 1,
                None => return (alice, bob),
            },
        };
        place(&mut alice, &mut bob, first, &self.conditional[first - 1], rng);
        for slot in first + 1..=n {
            place(&mut alice, &mut bob, slot, &self.unconditional[slot - 1], rng);
        }
        (alice, bob)
    }
}

fn active(d: &OutcomeDistribution) -> f64 {
    d.p_pp + d.p_p0 + d.p_0p
}

fn place(
    alice: &mut SlotOutcomes,
    bob: &mut SlotOutcomes,
    slot: usize,
    cdf: &[f64; 3],
    rng: &mut impl Rng,
) {
    let v: f64 = rng.random();
    if v < cdf[0] {
        alice.set(slot);
        bob.set(slot);
    } else if v < cdf[1] {
        alice.set(slot);
    } else if v < cdf[2] {
        bob.set(slot);
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream for the outcomes of one trial.
pub fn trial_rng(seed: u64, trial_index: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(mix64(mix64(seed) ^ trial_index))
}

/// Trial generator: owns the setting sources and the outcome tables.
pub struct TrialSimulator {
    config: ExperimentConfig,
    /// Indexed by `2 * setting_a + setting_b`.
    tables: [TrialTable; 4],
    alice_sources: Vec<BitSource>,
    bob_sources: Vec<BitSource>,
}

impl TrialSimulator {
    pub fn new(config: &ExperimentConfig) -> Result<Self, SimulationError> {
        config.validate()?;
        let tables = [(false, false), (false, true), (true, false), (true, true)].map(
            |(primed_a, primed_b)| {
                let distributions: Vec<OutcomeDistribution> = (1..=config.n_slots)
                    .map(|slot| {
                        let settings = config.slot_settings(slot);
                        slot_outcome_distribution(
                            &config.state,
                            settings.alice(primed_a),
                            settings.bob(primed_b),
                            &config.detection,
                        )
                    })
                    .collect();
                TrialTable::new(&distributions)
            },
        );
        let build = |specs: Vec<BitSourceSpec>| -> Result<Vec<BitSource>, SimulationError> {
            specs
                .iter()
                .map(|s| BitSource::from_spec(s).map_err(SimulationError::from))
                .collect()
        };
        Ok(Self {
            tables,
            alice_sources: build(config.party_sources(true))?,
            bob_sources: build(config.party_sources(false))?,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Next setting pair from the XOR of each party's sources.
    pub fn draw_settings(&mut self) -> Result<(bool, bool), SimulationError> {
        let draw = |sources: &mut Vec<BitSource>| -> Result<bool, SimulationError> {
            let bits = sources
                .iter_mut()
                .map(|s| s.next_bit())
                .collect::<Result<Vec<_>, _>>()?;
            Ok(xor_combine(&bits)?)
        };
        let a = draw(&mut self.alice_sources)?;
        let b = draw(&mut self.bob_sources)?;
        Ok((a, b))
    }

    /// Outcomes and timestamp of trial `trial_index` under fixed settings.
    /// Depends only on `(seed, trial_index, settings)`.
    pub fn complete_trial(&self, trial_index: u64, setting_a: bool, setting_b: bool) -> TrialRecord {
        let table = &self.tables[2 * setting_a as usize + setting_b as usize];
        let mut rng = trial_rng(self.config.seed, trial_index);
        let (outcomes_a, outcomes_b) = table.sample(&mut rng);
        TrialRecord {
            trial_index,
            setting_a,
            setting_b,
            outcomes_a,
            outcomes_b,
            trial_time_ns: (trial_index as f64 * self.config.trial_period_ns()).round() as u64,
        }
    }

    /// Draws the next settings from the sources and completes the trial.
    pub fn simulate_trial(&mut self, trial_index: u64) -> Result<TrialRecord, SimulationError> {
        let (a, b) = self.draw_settings()?;
        Ok(self.complete_trial(trial_index, a, b))
    }
}

/// Record stream of a whole run, in trial-index order.
pub struct RunStream {
    simulator: TrialSimulator,
    next_index: u64,
    buffer: std::vec::IntoIter<TrialRecord>,
    failed: bool,
}

impl RunStream {
    fn refill(&mut self) -> Result<(), SimulationError> {
        let remaining = self.simulator.config.n_trials - self.next_index;
        let count = remaining.min(CHUNK as u64);
        let start = self.next_index;
        let mut settings = Vec::with_capacity(count as usize);
        for _ in 0..count {
            settings.push(self.simulator.draw_settings()?);
        }
        let sim = &self.simulator;
        let records: Vec<TrialRecord> = settings
            .into_par_iter()
            .enumerate()
            .map(|(offset, (a, b))| sim.complete_trial(start + offset as u64, a, b))
            .collect();
        self.next_index += count;
        self.buffer = records.into_iter();
        Ok(())
    }
}

impl Iterator for RunStream {
    type Item = Result<TrialRecord, SimulationError>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(record) = self.buffer.next() {
            return Some(Ok(record));
        }
        if self.failed || self.next_index >= self.simulator.config.n_trials {
            return None;
        }
        if let Err(e) = self.refill() {
            self.failed = true;
            return Some(Err(e));
        }
        self.buffer.next().map(Ok)
    }
}

/// Simulates `config.n_trials` trials.
pub fn simulate_run(config: &ExperimentConfig) -> Result<RunStream, SimulationError> {
    Ok(RunStream {
        simulator: TrialSimulator::new(config)?,
        next_index: 0,
        buffer: Vec::new().into_iter(),
        failed: false,
    })
}

/// Deterministic local-realistic assignment: "+" (`true`) or "0" for each of
/// the four measurement settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocalStrategy {
    pub a: bool,
    pub a_prime: bool,
    pub b: bool,
    pub b_prime: bool,
}

impl LocalStrategy {
    /// All 16 deterministic strategies.
    pub fn all() -> Vec<Self> {
        (0..16u8)
            .map(|m| Self {
                a: m & 1 != 0,
                a_prime: m & 2 != 0,
                b: m & 4 != 0,
                b_prime: m & 8 != 0,
            })
            .collect()
    }

    pub fn outcomes(&self, setting_a: bool, setting_b: bool) -> (bool, bool) {
        (
            if setting_a { self.a_prime } else { self.a },
            if setting_b { self.b_prime } else { self.b },
        )
    }

    pub fn distribution(&self, setting_a: bool, setting_b: bool) -> OutcomeDistribution {
        let (x, y) = self.outcomes(setting_a, setting_b);
        OutcomeDistribution::deterministic(x, y)
    }
}

/// Mixture of deterministic strategies with uniformly random settings, used
/// as the null hypothesis in validity checks.
#[derive(Debug, Clone)]
pub struct LocalRealisticModel {
    strategies: Vec<LocalStrategy>,
    cumulative: Vec<f64>,
}

impl LocalRealisticModel {
    pub fn new(weighted: &[(LocalStrategy, f64)]) -> Result<Self, SimulationError> {
        let total: f64 = weighted.iter().map(|(_, w)| *w).sum();
        if weighted.iter().any(|(_, w)| !(*w >= 0.0)) || !(total > 0.0) {
            return Err(SimulationError::StrategyWeights);
        }
        let mut acc = 0.0;
        let cumulative = weighted
            .iter()
            .map(|(_, w)| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(Self {
            strategies: weighted.iter().map(|(s, _)| *s).collect(),
            cumulative,
        })
    }

    /// Single-slot records (slot 1) for `n_trials` trials.
    pub fn simulate(&self, n_trials: u64, seed: u64) -> impl Iterator<Item = TrialRecord> + '_ {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(mix64(seed));
        (0..n_trials).map(move |trial_index| {
            let setting_a: bool = rng.random();
            let setting_b: bool = rng.random();
            let u: f64 = rng.random();
            let pick = self
                .cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(self.strategies.len() - 1);
            let (x, y) = self.strategies[pick].outcomes(setting_a, setting_b);
            TrialRecord {
                trial_index,
                setting_a,
                setting_b,
                outcomes_a: SlotOutcomes(x as u16),
                outcomes_b: SlotOutcomes(y as u16),
                trial_time_ns: 0,
            }
        })
    }
}
