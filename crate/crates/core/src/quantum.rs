//! Outcome probabilities for polarization measurements on a (noisy)
//! nonmaximally entangled photon pair.
//!
//! The pure state is `c1 |H_A H_B> + c2 |V_A V_B>`. Two noise knobs are
//! layered on top of it:
//!
//! * `dephasing` is the weight kept by the coherent part; the remainder is the
//!   classically correlated mixture `c1² |HH><HH| + c2² |VV><VV|`. It lowers
//!   diagonal-basis visibility and leaves the H/V basis untouched.
//! * `extinction` is the polarizer contrast ratio. A finite ratio leaks the
//!   orthogonal polarization through the analyzer and lowers H/V visibility.
//!
//! An analyzer set to angle `χ` (degrees from vertical) transmits
//! `sin χ |H> + cos χ |V>`. Detection follows the analyzer with efficiency
//! `eta`; a party records "+" when its photon is detected or a background
//! count fires in its window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `c1² + c2² = 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("amplitudes are not normalized: c1² + c2² = {0}")]
    NotNormalized(f64),
    #[error("dephasing must lie in [0, 1], got {0}")]
    Dephasing(f64),
    #[error("extinction ratio must be >= 1, got {0}")]
    Extinction(f64),
    #[error("angle {0}° is outside (-90°, 90°]")]
    Angle(f64),
    #[error("detection parameter {name} = {value} is outside [0, 1]")]
    Detection { name: &'static str, value: f64 },
    #[error("visibility target {0} is outside (0, 1]")]
    VisibilityTarget(f64),
    #[error(
        "calibration infeasible: diagonal visibility {target_da} exceeds the best reachable value {reachable_da}"
    )]
    Infeasible { target_da: f64, reachable_da: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
}

/// Amplitudes of the entangled pair plus the two noise knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntangledStateModel {
    pub c1: f64,
    pub c2: f64,
    #[serde(default = "unit")]
    pub dephasing: f64,
    #[serde(default = "ideal_extinction")]
    pub extinction: f64,
}

fn unit() -> f64 {
    1.0
}

fn ideal_extinction() -> f64 {
    f64::INFINITY
}

impl EntangledStateModel {
    pub fn new(c1: f64, c2: f64, dephasing: f64, extinction: f64) -> Result<Self, ModelError> {
        let model = Self {
            c1,
            c2,
            dephasing,
            extinction,
        };
        model.validate()?;
        Ok(model)
    }

    /// Noiseless state with the given amplitudes.
    pub fn pure(c1: f64, c2: f64) -> Result<Self, ModelError> {
        Self::new(c1, c2, 1.0, f64::INFINITY)
    }

    /// Noiseless state with `c1 = cos θ`, `c2 = sin θ`.
    pub fn from_mixing_angle(theta_deg: f64) -> Self {
        let theta = theta_deg.to_radians();
        Self {
            c1: theta.cos(),
            c2: theta.sin(),
            dephasing: 1.0,
            extinction: f64::INFINITY,
        }
    }

    /// Rescales arbitrary amplitudes onto the unit circle.
    pub fn normalized(c1: f64, c2: f64) -> Self {
        let norm = c1.hypot(c2);
        Self {
            c1: c1 / norm,
            c2: c2 / norm,
            dephasing: 1.0,
            extinction: f64::INFINITY,
        }
    }

    pub fn maximally_entangled() -> Self {
        Self::from_mixing_angle(45.0)
    }

    /// The published optimal state, `0.961 |HH> + 0.276 |VV>`, renormalized
    /// (the quoted amplitudes are rounded to three digits).
    pub fn published_optimum() -> Self {
        Self::normalized(0.961, 0.276)
    }

    /// Same amplitudes, different noise knobs.
    pub fn with_noise(self, dephasing: f64, extinction: f64) -> Self {
        Self {
            dephasing,
            extinction,
            ..self
        }
    }

    /// Same noise knobs, amplitudes `cos θ`, `sin θ`.
    pub fn with_mixing_angle(self, theta_deg: f64) -> Self {
        let base = Self::from_mixing_angle(theta_deg);
        Self {
            c1: base.c1,
            c2: base.c2,
            ..self
        }
    }

    pub fn mixing_angle_deg(&self) -> f64 {
        self.c2.atan2(self.c1).to_degrees()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let norm = self.c1 * self.c1 + self.c2 * self.c2;
        if !norm.is_finite() || (norm - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(ModelError::NotNormalized(norm));
        }
        if !(0.0..=1.0).contains(&self.dephasing) {
            return Err(ModelError::Dephasing(self.dephasing));
        }
        if self.extinction.is_nan() || self.extinction < 1.0 {
            return Err(ModelError::Extinction(self.extinction));
        }
        Ok(())
    }

    /// Fraction of the orthogonal polarization an analyzer lets through,
    /// `1 / (1 + extinction)`. Zero for an ideal polarizer.
    pub fn leakage(&self) -> f64 {
        if self.extinction.is_infinite() {
            0.0
        } else {
            1.0 / (1.0 + self.extinction)
        }
    }

    /// `Tr[ρ (T_A ⊗ T_B)]` for two analyzer operators.
    fn joint_transmission(&self, ta: &Analyzer, tb: &Analyzer) -> f64 {
        let (c1, c2) = (self.c1, self.c2);
        c1 * c1 * ta.hh * tb.hh
            + c2 * c2 * ta.vv * tb.vv
            + 2.0 * self.dephasing * c1 * c2 * ta.hv * tb.hv
    }

    fn single_transmission(&self, t: &Analyzer) -> f64 {
        self.c1 * self.c1 * t.hh + self.c2 * self.c2 * t.vv
    }
}

impl Default for EntangledStateModel {
    fn default() -> Self {
        Self::published_optimum()
    }
}

/// Real symmetric 2×2 transmission operator of a leaky linear polarizer,
/// in the {H, V} basis.
#[derive(Debug, Clone, Copy)]
struct Analyzer {
    hh: f64,
    vv: f64,
    hv: f64,
}

impl Analyzer {
    fn new(angle_deg: f64, leakage: f64) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        let pass = 1.0 - leakage;
        Self {
            hh: pass * s * s + leakage * c * c,
            vv: pass * c * c + leakage * s * s,
            hv: (1.0 - 2.0 * leakage) * s * c,
        }
    }
}

/// Polarizer angles in degrees relative to a vertical polarizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSettings {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl MeasurementSettings {
    pub fn new(a: f64, a_prime: f64, b: f64, b_prime: f64) -> Result<Self, ModelError> {
        let settings = Self {
            a,
            a_prime,
            b,
            b_prime,
        };
        settings.validate()?;
        Ok(settings)
    }

    /// `{a = 4.2°, a' = -25.9°, b = -4.2°, b' = 25.9°}`.
    pub fn published_optimum() -> Self {
        Self {
            a: 4.2,
            a_prime: -25.9,
            b: -4.2,
            b_prime: 25.9,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for angle in [self.a, self.a_prime, self.b, self.b_prime] {
            if !(angle > -90.0 && angle <= 90.0) {
                return Err(ModelError::Angle(angle));
            }
        }
        Ok(())
    }

    /// Alice's angle for setting bit `primed`.
    pub fn alice(&self, primed: bool) -> f64 {
        if primed {
            self.a_prime
        } else {
            self.a
        }
    }

    pub fn bob(&self, primed: bool) -> f64 {
        if primed {
            self.b_prime
        } else {
            self.b
        }
    }

    /// Every analyzer rotated by `offset_deg`, wrapped back into (-90°, 90°].
    pub fn rotated(&self, offset_deg: f64) -> Self {
        Self {
            a: wrap_angle(self.a + offset_deg),
            a_prime: wrap_angle(self.a_prime + offset_deg),
            b: wrap_angle(self.b + offset_deg),
            b_prime: wrap_angle(self.b_prime + offset_deg),
        }
    }
}

impl Default for MeasurementSettings {
    fn default() -> Self {
        Self::published_optimum()
    }
}

/// Maps any angle onto (-90°, 90°]; polarizer angles are 180°-periodic.
pub fn wrap_angle(angle_deg: f64) -> f64 {
    let mut x = angle_deg.rem_euclid(180.0);
    if x > 90.0 {
        x -= 180.0;
    }
    if x <= -90.0 {
        x += 180.0;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    #[serde(rename = "eta_A")]
    pub eta_a: f64,
    #[serde(rename = "eta_B")]
    pub eta_b: f64,
    #[serde(rename = "bg_A")]
    pub bg_a: f64,
    #[serde(rename = "bg_B")]
    pub bg_b: f64,
    pub p_pair: f64,
}

impl DetectionParams {
    /// Pair-production probability per pump pulse calibrated so the slot-6
    /// category-event rate matches the 2376 events in 175,654,992 trials of
    /// the single-pulse run. The quoted order-of-magnitude figure is
    /// [`QUOTED_PAIR_PROBABILITY`].
    pub const CALIBRATED_PAIR_PROBABILITY: f64 = 6.94e-4;
    pub const QUOTED_PAIR_PROBABILITY: f64 = 5e-4;

    /// Measured system efficiencies, background probabilities per
    /// coincidence window (625 ps at Alice, 781 ps at Bob) and the calibrated
    /// pair probability.
    pub fn published() -> Self {
        Self {
            eta_a: 0.747,
            eta_b: 0.756,
            bg_a: 8.9e-7,
            bg_b: 3.2e-7,
            p_pair: Self::CALIBRATED_PAIR_PROBABILITY,
        }
    }

    /// Lossless, background-free detection.
    pub fn ideal(p_pair: f64) -> Self {
        Self {
            eta_a: 1.0,
            eta_b: 1.0,
            bg_a: 0.0,
            bg_b: 0.0,
            p_pair,
        }
    }

    pub fn with_efficiencies(self, eta_a: f64, eta_b: f64) -> Self {
        Self {
            eta_a,
            eta_b,
            ..self
        }
    }

    pub fn with_backgrounds(self, bg_a: f64, bg_b: f64) -> Self {
        Self { bg_a, bg_b, ..self }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [
            ("eta_A", self.eta_a),
            ("eta_B", self.eta_b),
            ("bg_A", self.bg_a),
            ("bg_B", self.bg_b),
            ("p_pair", self.p_pair),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ModelError::Detection { name, value });
            }
        }
        Ok(())
    }
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self::published()
    }
}

/// Joint outcome probabilities for one settings pair. "+" is any detection,
/// "0" is none; the first symbol is Alice's.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub p_pp: f64,
    pub p_p0: f64,
    pub p_0p: f64,
    pub p_00: f64,
}

impl OutcomeDistribution {
    pub fn total(&self) -> f64 {
        self.p_pp + self.p_p0 + self.p_0p + self.p_00
    }

    pub fn alice_plus(&self) -> f64 {
        self.p_pp + self.p_p0
    }

    pub fn bob_plus(&self) -> f64 {
        self.p_pp + self.p_0p
    }

    /// Convex combination `w·self + (1-w)·other`.
    pub fn mix(&self, other: &Self, w: f64) -> Self {
        let v = 1.0 - w;
        Self {
            p_pp: w * self.p_pp + v * other.p_pp,
            p_p0: w * self.p_p0 + v * other.p_p0,
            p_0p: w * self.p_0p + v * other.p_0p,
            p_00: w * self.p_00 + v * other.p_00,
        }
    }

    /// Deterministic outcome pair as a point mass.
    pub fn deterministic(alice_plus: bool, bob_plus: bool) -> Self {
        let mut d = Self::default();
        match (alice_plus, bob_plus) {
            (true, true) => d.p_pp = 1.0,
            (true, false) => d.p_p0 = 1.0,
            (false, true) => d.p_0p = 1.0,
            (false, false) => d.p_00 = 1.0,
        }
        d
    }
}

/// Probability that the party's photon passes its analyzer at `alpha`.
///
/// For the pure state this is `c1² sin²α + c2² cos²α`. The party argument is
/// kept for symmetry with the detection model; both arms use the same
/// analyzer model.
pub fn transmit_probability(state: &EntangledStateModel, alpha_deg: f64, _party: Party) -> f64 {
    state.single_transmission(&Analyzer::new(alpha_deg, state.leakage()))
}

/// Joint "+"/"0" distribution in one pulse slot for analyzer angles
/// `alpha` (Alice) and `beta` (Bob).
pub fn joint_outcome_distribution(
    state: &EntangledStateModel,
    alpha_deg: f64,
    beta_deg: f64,
    params: &DetectionParams,
    pair_present: bool,
) -> OutcomeDistribution {
    let (bg_a, bg_b) = (params.bg_a, params.bg_b);
    if !pair_present {
        return OutcomeDistribution {
            p_pp: bg_a * bg_b,
            p_p0: bg_a * (1.0 - bg_b),
            p_0p: (1.0 - bg_a) * bg_b,
            p_00: (1.0 - bg_a) * (1.0 - bg_b),
        };
    }

    let leak = state.leakage();
    let ta = Analyzer::new(alpha_deg, leak);
    let tb = Analyzer::new(beta_deg, leak);
    let both = params.eta_a * params.eta_b * state.joint_transmission(&ta, &tb);
    let alice_only = params.eta_a * state.single_transmission(&ta) - both;
    let bob_only = params.eta_b * state.single_transmission(&tb) - both;
    let neither = 1.0 - both - alice_only - bob_only;

    OutcomeDistribution {
        p_pp: both + alice_only * bg_b + bob_only * bg_a + neither * bg_a * bg_b,
        p_p0: alice_only * (1.0 - bg_b) + neither * bg_a * (1.0 - bg_b),
        p_0p: bob_only * (1.0 - bg_a) + neither * (1.0 - bg_a) * bg_b,
        p_00: neither * (1.0 - bg_a) * (1.0 - bg_b),
    }
}

/// Per-slot distribution with pair production marginalized out.
pub fn slot_outcome_distribution(
    state: &EntangledStateModel,
    alpha_deg: f64,
    beta_deg: f64,
    params: &DetectionParams,
) -> OutcomeDistribution {
    let with_pair = joint_outcome_distribution(state, alpha_deg, beta_deg, params, true);
    let without = joint_outcome_distribution(state, alpha_deg, beta_deg, params, false);
    with_pair.mix(&without, params.p_pair)
}

/// The four probabilities entering the CH inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChTerms {
    /// P(++ | a b)
    pub pp_ab: f64,
    /// P(+0 | a b')
    pub p0_ab_prime: f64,
    /// P(0+ | a' b)
    pub zp_a_prime_b: f64,
    /// P(++ | a' b')
    pub pp_a_prime_b_prime: f64,
}

impl ChTerms {
    /// Builds the terms from the distributions of the four settings pairs.
    pub fn from_distributions(
        ab: &OutcomeDistribution,
        ab_prime: &OutcomeDistribution,
        a_prime_b: &OutcomeDistribution,
        a_prime_b_prime: &OutcomeDistribution,
    ) -> Self {
        Self {
            pp_ab: ab.p_pp,
            p0_ab_prime: ab_prime.p_p0,
            zp_a_prime_b: a_prime_b.p_0p,
            pp_a_prime_b_prime: a_prime_b_prime.p_pp,
        }
    }

    /// `B = P(++|ab) - P(+0|ab') - P(0+|a'b) - P(++|a'b')`; positive values
    /// violate local realism.
    pub fn value(&self) -> f64 {
        self.pp_ab - self.p0_ab_prime - self.zp_a_prime_b - self.pp_a_prime_b_prime
    }

    /// Sum of the four terms. With uniform settings, a quarter of this is the
    /// per-trial probability of a category event.
    pub fn total(&self) -> f64 {
        self.pp_ab + self.p0_ab_prime + self.zp_a_prime_b + self.pp_a_prime_b_prime
    }

    /// Fraction of category events that are `++|ab`.
    pub fn success_fraction(&self) -> f64 {
        self.pp_ab / self.total()
    }
}

pub fn ch_terms(
    state: &EntangledStateModel,
    settings: &MeasurementSettings,
    params: &DetectionParams,
) -> ChTerms {
    let dist = |primed_a: bool, primed_b: bool| {
        slot_outcome_distribution(
            state,
            settings.alice(primed_a),
            settings.bob(primed_b),
            params,
        )
    };
    ChTerms::from_distributions(
        &dist(false, false),
        &dist(false, true),
        &dist(true, false),
        &dist(true, true),
    )
}

/// CH violation margin `B` for one pulse slot.
pub fn ch_value(
    state: &EntangledStateModel,
    settings: &MeasurementSettings,
    params: &DetectionParams,
) -> f64 {
    ch_terms(state, settings, params).value()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VisibilityBasis {
    /// Horizontal / vertical.
    HV,
    /// Diagonal / antidiagonal.
    DA,
}

impl VisibilityBasis {
    fn alice_angles(self) -> [f64; 2] {
        match self {
            VisibilityBasis::HV => [0.0, 90.0],
            VisibilityBasis::DA => [45.0, -45.0],
        }
    }
}

/// Coincidence visibility in the given basis.
///
/// Alice's analyzer is held at each of the two basis states while Bob's
/// analyzer sweeps a half turn; the reported value is the mean of the two
/// fringe contrasts `(max - min) / (max + min)`. The coincidence fringe is
/// `x + y cos 2β + z sin 2β`, so its extremes are read off exactly from
/// three samples.
pub fn coincidence_visibility(state: &EntangledStateModel, basis: VisibilityBasis) -> f64 {
    let leak = state.leakage();
    let contrasts = basis.alice_angles().map(|alpha| {
        let ta = Analyzer::new(alpha, leak);
        let at = |beta: f64| state.joint_transmission(&ta, &Analyzer::new(beta, leak));
        let (p0, p45, p90) = (at(0.0), at(45.0), at(90.0));
        let x = 0.5 * (p0 + p90);
        let y = 0.5 * (p0 - p90);
        let z = p45 - x;
        let amplitude = y.hypot(z);
        if x <= 0.0 {
            0.0
        } else {
            (amplitude / x).clamp(0.0, 1.0)
        }
    });
    0.5 * (contrasts[0] + contrasts[1])
}

/// Fits `extinction` to the H/V visibility and then `dephasing` to the
/// diagonal visibility, keeping the amplitudes of `state`.
///
/// H/V visibility does not depend on dephasing, so the two fits decouple.
/// Both are monotone one-dimensional bisections.
pub fn calibrate_noise(
    target_vis_hv: f64,
    target_vis_da: f64,
    state: &EntangledStateModel,
) -> Result<EntangledStateModel, ModelError> {
    for target in [target_vis_hv, target_vis_da] {
        if !(target > 0.0 && target <= 1.0) {
            return Err(ModelError::VisibilityTarget(target));
        }
    }

    let base = *state;
    let vis = |leak: f64, dephasing: f64, basis| {
        let extinction = if leak == 0.0 {
            f64::INFINITY
        } else {
            (1.0 - leak) / leak
        };
        coincidence_visibility(&base.with_noise(dephasing, extinction), basis)
    };

    let leak = if target_vis_hv >= 1.0 {
        0.0
    } else {
        // Visibility falls from 1 at zero leakage to 0 at leakage 1/2.
        bisect(0.0, 0.5, |l| vis(l, 1.0, VisibilityBasis::HV) - target_vis_hv)
    };

    let reachable_da = vis(leak, 1.0, VisibilityBasis::DA);
    if target_vis_da > reachable_da + 1e-12 {
        return Err(ModelError::Infeasible {
            target_da: target_vis_da,
            reachable_da,
        });
    }
    let dephasing = if target_vis_da >= reachable_da {
        1.0
    } else {
        // Diagonal visibility rises monotonically with the coherent weight.
        bisect(0.0, 1.0, |d| target_vis_da - vis(leak, d, VisibilityBasis::DA))
    };

    let extinction = if leak == 0.0 {
        f64::INFINITY
    } else {
        (1.0 - leak) / leak
    };
    Ok(base.with_noise(dephasing, extinction))
}

/// Root of a function that is positive at `lo` side and negative at `hi`
/// side (or the reverse), to machine precision.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
