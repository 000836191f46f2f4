//! Design optimization: state mixing angle and analyzer angles that best
//! violate the CH inequality for given detector parameters, the critical
//! symmetric efficiency, and Klyshko efficiency estimates.

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{
    calibrate_noise, ch_terms, wrap_angle, DetectionParams, EntangledStateModel,
    MeasurementSettings, ModelError,
};

/// Violations at or below this (in units of `p_pair`) count as none.
pub const VIOLATION_FLOOR: f64 = 1e-10;
pub const DEFAULT_RESTARTS: usize = 20;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
const MAX_ITERS: u64 = 20_000;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no positive violation found; best B = {best_b:e} (in units of p_pair)")]
    NoViolation { best_b: f64, solution: Box<DesignSolution> },
    #[error("critical efficiency not bracketed: violation at eta = {lo} is {b_lo:e}, at eta = {hi} is {b_hi:e}")]
    Bracket { lo: f64, hi: f64, b_lo: f64, b_hi: f64 },
    #[error("restart count must be at least 1")]
    NoRestarts,
    #[error("optimizer failure: {0}")]
    Solver(String),
    #[error("partner singles must be positive")]
    ZeroSingles,
    #[error("coincidences ({coincidences}) exceed partner singles ({singles})")]
    CoincidencesExceedSingles { coincidences: u64, singles: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Violation margin `B` per trial.
    MaxChValue,
    /// `B² / (sum of the four CH terms)`, signed like `B`: the squared
    /// z-score gained per trial by the binomial test.
    #[default]
    MaxSignificancePerTrial,
}

/// Noise either as target visibilities, calibrated on the maximally
/// entangled state, or as model knobs directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Visibilities { visibility_hv: f64, visibility_da: f64 },
    Model { dephasing: f64, extinction: f64 },
}

impl NoiseSpec {
    pub fn published() -> Self {
        NoiseSpec::Visibilities {
            visibility_hv: 0.999,
            visibility_da: 0.996,
        }
    }

    pub fn none() -> Self {
        NoiseSpec::Model {
            dephasing: 1.0,
            extinction: f64::INFINITY,
        }
    }

    /// `(dephasing, extinction)`.
    pub fn resolve(&self) -> Result<(f64, f64), ModelError> {
        match *self {
            NoiseSpec::Model {
                dephasing,
                extinction,
            } => {
                EntangledStateModel::new(1.0, 0.0, dephasing, extinction)?;
                Ok((dephasing, extinction))
            }
            NoiseSpec::Visibilities {
                visibility_hv,
                visibility_da,
            } => {
                let m = calibrate_noise(
                    visibility_hv,
                    visibility_da,
                    &EntangledStateModel::maximally_entangled(),
                )?;
                Ok((m.dephasing, m.extinction))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignProblem {
    pub detection: DetectionParams,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

impl DesignProblem {
    pub fn new(detection: DetectionParams, noise: NoiseSpec, objective: Objective) -> Self {
        Self {
            detection,
            noise,
            objective,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    /// Measured efficiencies, backgrounds and visibilities.
    pub fn published() -> Self {
        Self::new(
            DetectionParams::published(),
            NoiseSpec::published(),
            Objective::default(),
        )
    }

    /// Perfect detectors, no backgrounds, no noise, maximizing `B`.
    pub fn ideal() -> Self {
        Self::new(
            DetectionParams::ideal(DetectionParams::QUOTED_PAIR_PROBABILITY),
            NoiseSpec::none(),
            Objective::MaxChValue,
        )
    }

    pub fn with_objective(self, objective: Objective) -> Self {
        Self { objective, ..self }
    }

    pub fn with_detection(self, detection: DetectionParams) -> Self {
        Self { detection, ..self }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        self.detection.validate()?;
        self.noise.resolve()?;
        if self.restarts == 0 {
            return Err(DesignError::NoRestarts);
        }
        Ok(())
    }
}

/// Objective terms at one point of the design space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub theta_deg: f64,
    pub settings: MeasurementSettings,
    /// Objective value, in units of `p_pair`.
    pub value: f64,
    /// `B / p_pair`.
    pub ch_value: f64,
    /// Fraction of category events that are `++|ab`.
    pub success_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSolution {
    pub objective: Objective,
    pub theta_deg: f64,
    pub c1: f64,
    pub c2: f64,
    pub settings: MeasurementSettings,
    pub value: f64,
    pub ch_value: f64,
    pub success_fraction: f64,
    /// Every restart's local optimum, best first.
    pub restarts: Vec<DesignPoint>,
}

impl DesignSolution {
    pub fn to_key_value(&self) -> String {
        format!(
            "objective={}\ntheta_deg={:.4}\nc1={:.6}\nc2={:.6}\na={:.4}\na_prime={:.4}\nb={:.4}\nb_prime={:.4}\nvalue={:.9e}\nch_value={:.9e}\nsuccess_fraction={:.6}\nrestarts={}\n",
            match self.objective {
                Objective::MaxChValue => "max_ch_value",
                Objective::MaxSignificancePerTrial => "max_significance_per_trial",
            },
            self.theta_deg,
            self.c1,
            self.c2,
            self.settings.a,
            self.settings.a_prime,
            self.settings.b,
            self.settings.b_prime,
            self.value,
            self.ch_value,
            self.success_fraction,
            self.restarts.len()
        )
    }
}

/// Evaluates the objective at `x = [θ, a, a', b, b']` (degrees).
#[derive(Debug, Clone, Copy)]
pub struct DesignObjective {
    detection: DetectionParams,
    dephasing: f64,
    extinction: f64,
    objective: Objective,
}

impl DesignObjective {
    pub fn new(problem: &DesignProblem) -> Result<Self, DesignError> {
        problem.detection.validate()?;
        let (dephasing, extinction) = problem.noise.resolve()?;
        Ok(Self {
            detection: problem.detection,
            dephasing,
            extinction,
            objective: problem.objective,
        })
    }

    pub fn point(&self, x: &[f64]) -> DesignPoint {
        let state = EntangledStateModel::from_mixing_angle(x[0]).with_noise(self.dephasing, self.extinction);
        let settings = MeasurementSettings {
            a: x[1],
            a_prime: x[2],
            b: x[3],
            b_prime: x[4],
        };
        let terms = ch_terms(&state, &settings, &self.detection);
        let scale = self.detection.p_pair.max(f64::MIN_POSITIVE);
        let b = terms.value();
        let value = match self.objective {
            Objective::MaxChValue => b / scale,
            Objective::MaxSignificancePerTrial => b * b.abs() / terms.total().max(f64::MIN_POSITIVE) / scale,
        };
        DesignPoint {
            theta_deg: x[0],
            settings,
            value,
            ch_value: b / scale,
            success_fraction: terms.success_fraction(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.point(x).value
    }
}

impl CostFunction for DesignObjective {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> Result<f64, ArgminError> {
        Ok(-self.value(x))
    }
}

/// Maps a point to the reported representative: `θ ∈ [0°, 45°]` and
/// `a >= 0`, using the exact symmetries of the model.
///
/// * `θ -> -θ` with Bob's angles negated.
/// * `θ -> 90° - θ` with every analyzer rotated by 90°.
/// * all four angles negated together.
pub fn canonicalize(x: &[f64]) -> [f64; 5] {
    let mut theta = wrap_angle(x[0]);
    let mut angles = [x[1], x[2], x[3], x[4]];
    if theta < 0.0 {
        theta = -theta;
        angles[2] = -angles[2];
        angles[3] = -angles[3];
    }
    if theta > 45.0 {
        theta = 90.0 - theta;
        for angle in &mut angles {
            *angle += 90.0;
        }
    }
    let mut angles = angles.map(wrap_angle);
    if angles[0] < 0.0 {
        angles = angles.map(|v| wrap_angle(-v));
    }
    [theta, angles[0], angles[1], angles[2], angles[3]]
}

fn local_search(f: &DesignObjective, start: [f64; 5], tolerance: f64) -> Result<[f64; 5], DesignError> {
    let mut best = start;
    // A fresh simplex after convergence guards against premature collapse.
    for step in [10.0, 1.0] {
        let mut simplex = vec![best.to_vec()];
        for i in 0..5 {
            let mut v = best.to_vec();
            v[i] += step;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(tolerance * 1e-4)
            .map_err(|e| DesignError::Solver(e.to_string()))?;
        let result = Executor::new(*f, solver)
            .configure(|state| state.max_iters(MAX_ITERS))
            .run()
            .map_err(|e| DesignError::Solver(e.to_string()))?;
        let param = result
            .state()
            .get_best_param()
            .ok_or_else(|| DesignError::Solver("no parameter returned".into()))?;
        best = param.as_slice().try_into().expect("five parameters");
    }
    Ok(canonicalize(&best))
}

/// Multi-start Nelder-Mead over `(θ, a, a', b, b')`.
///
/// Fails with [`DesignError::NoViolation`] (carrying the best point) when
/// the best `B` is not positive.
pub fn optimize_design(problem: &DesignProblem) -> Result<DesignSolution, DesignError> {
    problem.validate()?;
    let f = DesignObjective::new(problem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let starts: Vec<[f64; 5]> = (0..problem.restarts)
        .map(|_| {
            [
                rng.random_range(1.0..45.0),
                rng.random_range(-45.0..45.0),
                rng.random_range(-45.0..45.0),
                rng.random_range(-45.0..45.0),
                rng.random_range(-45.0..45.0),
            ]
        })
        .collect();
    let mut optima = starts
        .par_iter()
        .map(|&x0| local_search(&f, x0, problem.tolerance).map(|x| f.point(&x)))
        .collect::<Result<Vec<_>, _>>()?;
    optima.sort_by(|p, q| q.value.total_cmp(&p.value));
    let best = optima[0];
    let solution = DesignSolution {
        objective: problem.objective,
        theta_deg: best.theta_deg,
        c1: best.theta_deg.to_radians().cos(),
        c2: best.theta_deg.to_radians().sin(),
        settings: best.settings,
        value: best.value,
        ch_value: best.ch_value,
        success_fraction: best.success_fraction,
        restarts: optima,
    };
    if solution.ch_value <= VIOLATION_FLOOR {
        return Err(DesignError::NoViolation {
            best_b: solution.ch_value,
            solution: Box::new(solution),
        });
    }
    Ok(solution)
}

/// Best `B / p_pair` over the design space at symmetric efficiency `eta`
/// (zero when no violation is found).
pub fn optimal_violation(problem: &DesignProblem, eta: f64) -> Result<f64, DesignError> {
    let p = problem
        .with_objective(Objective::MaxChValue)
        .with_detection(problem.detection.with_efficiencies(eta, eta));
    match optimize_design(&p) {
        Ok(s) => Ok(s.ch_value),
        Err(DesignError::NoViolation { best_b, .. }) => Ok(best_b.min(0.0)),
        Err(e) => Err(e),
    }
}

/// Smallest symmetric efficiency with a positive optimal violation, by
/// bisection on `[0.5, 1]` to within `1e-3`.
pub fn critical_efficiency(problem: &DesignProblem) -> Result<f64, DesignError> {
    let (mut lo, mut hi) = (0.5, 1.0);
    let (b_lo, b_hi) = (optimal_violation(problem, lo)?, optimal_violation(problem, hi)?);
    if b_lo > VIOLATION_FLOOR || b_hi <= VIOLATION_FLOOR {
        return Err(DesignError::Bracket { lo, hi, b_lo, b_hi });
    }
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if optimal_violation(problem, mid)? > VIOLATION_FLOOR {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEstimate {
    pub efficiency: f64,
    pub std_error: f64,
}

/// Heralded efficiency: coincidences over the partner's singles, with a
/// binomial standard error.
pub fn klyshko_efficiency(coincidences: u64, partner_singles: u64) -> Result<EfficiencyEstimate, DesignError> {
    if partner_singles == 0 {
        return Err(DesignError::ZeroSingles);
    }
    if coincidences > partner_singles {
        return Err(DesignError::CoincidencesExceedSingles {
            coincidences,
            singles: partner_singles,
        });
    }
    let n = partner_singles as f64;
    let eta = coincidences as f64 / n;
    Ok(EfficiencyEstimate {
        efficiency: eta,
        std_error: (eta * (1.0 - eta) / n).sqrt(),
    })
}
