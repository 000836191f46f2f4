//! Locality bookkeeping: interval classification, timing margins for
//! aggregated pulse windows, per-slot separation flags and the movable
//! boundary regions around Alice, Bob and the source.
//!
//! Distances are in metres, times in nanoseconds. The four locality
//! conditions reduce to pairwise distance floors. With the chronology held
//! fixed, a margin `m` between parties `X` and `Y` at distance `d` stays
//! positive as long as the parties are at least `d - c·m` apart.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::{CENTER_SLOT, DEFAULT_PULSE_PERIOD_NS, DEFAULT_SLOTS};

/// Speed of light in m/ns.
pub const C_M_PER_NS: f64 = 0.299_792_458;
/// Light travel time over one metre.
pub const NS_PER_M_PER_LEG: f64 = 1.0 / C_M_PER_NS;
/// Combined margin uncertainty per metre of position uncertainty.
pub const MARGIN_BAND_NS_PER_M: f64 = 3.7;
/// Minimum boundary distance below which separation claims are weak.
pub const WEAK_BOUNDARY_M: f64 = 3.0;

const FIXED_POINT_TOL_M: f64 = 1e-6;
const FIXED_POINT_MAX_ITER: usize = 5000;
const TRACE_LEN: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpacetimeError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("position uncertainty must be >= 0, got {0}")]
    Uncertainty(f64),
    #[error("inconsistent chronology: emission window ends {0} ns before it starts")]
    EmissionOrder(f64),
    #[error("pulse period must be positive, got {0}")]
    PulsePeriod(f64),
    #[error("aggregate width must be odd and >= 1, got {0}")]
    Width(u32),
    #[error("angular resolution must be in (0, 90] degrees, got {0}")]
    Resolution(f64),
    #[error("boundary iteration did not converge after {iterations} steps; last max changes (m): {trace:?}")]
    NoConvergence { iterations: usize, trace: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeEvent {
    pub position: [f64; 3],
    pub time: f64,
}

impl SpacetimeEvent {
    pub fn new(position: [f64; 3], time: f64) -> Result<Self, SpacetimeError> {
        if position.iter().chain([&time]).any(|v| !v.is_finite()) {
            return Err(SpacetimeError::NonFinite("event"));
        }
        Ok(Self { position, time })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Spacelike,
    Timelike,
    Lightlike,
}

pub fn distance(p: [f64; 3], q: [f64; 3]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Compares spatial separation with light travel distance, treating a
/// relative difference below 1e-6 as lightlike.
pub fn interval_classify(e1: &SpacetimeEvent, e2: &SpacetimeEvent) -> IntervalKind {
    let dx = distance(e1.position, e2.position);
    let ct = C_M_PER_NS * (e1.time - e2.time).abs();
    if (dx - ct).abs() <= 1e-6 * dx.max(ct) {
        IntervalKind::Lightlike
    } else if dx > ct {
        IntervalKind::Spacelike
    } else {
        IntervalKind::Timelike
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Site {
    A,
    B,
    S,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::A, Site::B, Site::S];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Site::A => "A",
            Site::B => "B",
            Site::S => "S",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGeometry {
    #[serde(rename = "pos_A")]
    pub pos_a: [f64; 3],
    #[serde(rename = "pos_B")]
    pub pos_b: [f64; 3],
    #[serde(rename = "pos_S")]
    pub pos_s: [f64; 3],
    #[serde(default = "default_uncertainty")]
    pub position_uncertainty: f64,
}

fn default_uncertainty() -> f64 {
    1.0
}

impl ExperimentGeometry {
    /// Floor-plan layout with the source near the middle and the two
    /// stations roughly 130 m away in different directions.
    pub fn calibrated() -> Self {
        Self {
            pos_a: [-130.0, 8.0, 0.0],
            pos_b: [10.0, 135.0, 0.0],
            pos_s: [0.0, 0.0, 0.0],
            position_uncertainty: 1.0,
        }
    }

    pub fn position(&self, site: Site) -> [f64; 3] {
        match site {
            Site::A => self.pos_a,
            Site::B => self.pos_b,
            Site::S => self.pos_s,
        }
    }

    pub fn position_mut(&mut self, site: Site) -> &mut [f64; 3] {
        match site {
            Site::A => &mut self.pos_a,
            Site::B => &mut self.pos_b,
            Site::S => &mut self.pos_s,
        }
    }

    pub fn distance(&self, x: Site, y: Site) -> f64 {
        distance(self.position(x), self.position(y))
    }

    /// All positions scaled about the origin.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |p: [f64; 3]| p.map(|v| v * factor);
        Self {
            pos_a: s(self.pos_a),
            pos_b: s(self.pos_b),
            pos_s: s(self.pos_s),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), SpacetimeError> {
        if [self.pos_a, self.pos_b, self.pos_s]
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(SpacetimeError::NonFinite("geometry"));
        }
        if !(self.position_uncertainty >= 0.0) {
            return Err(SpacetimeError::Uncertainty(self.position_uncertainty));
        }
        Ok(())
    }
}

/// Event times of one trial for a given aggregated emission window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialChronology {
    #[serde(rename = "t_choice_done_A")]
    pub t_choice_done_a: f64,
    #[serde(rename = "t_choice_done_B")]
    pub t_choice_done_b: f64,
    pub t_emission_first: f64,
    pub t_emission_last: f64,
    #[serde(rename = "t_meas_done_A")]
    pub t_meas_done_a: f64,
    #[serde(rename = "t_meas_done_B")]
    pub t_meas_done_b: f64,
    #[serde(default = "default_pulse_period")]
    pub pulse_period: f64,
}

fn default_pulse_period() -> f64 {
    DEFAULT_PULSE_PERIOD_NS
}

impl TrialChronology {
    /// Single-pulse chronology with emission at `t = 0` that produces the
    /// given margins `[choice_A, choice_B, meas_A, meas_B]` at `geometry`.
    pub fn from_margins(geometry: &ExperimentGeometry, margins: [f64; 4], pulse_period: f64) -> Self {
        let [choice_a, choice_b, meas_a, meas_b] = margins;
        let t_choice_done_a = geometry.distance(Site::A, Site::S) / C_M_PER_NS - choice_a;
        let t_choice_done_b = geometry.distance(Site::B, Site::S) / C_M_PER_NS - choice_b;
        let ab = geometry.distance(Site::A, Site::B) / C_M_PER_NS;
        Self {
            t_choice_done_a,
            t_choice_done_b,
            t_emission_first: 0.0,
            t_emission_last: 0.0,
            t_meas_done_a: t_choice_done_b + ab - meas_a,
            t_meas_done_b: t_choice_done_a + ab - meas_b,
            pulse_period,
        }
    }

    /// Center-slot chronology for [`ExperimentGeometry::calibrated`]: Bob's
    /// measurement margin of 63.5 ns is the smallest of the four.
    pub fn calibrated() -> Self {
        Self::from_margins(
            &ExperimentGeometry::calibrated(),
            [63.6, 75.0, 70.0, 63.5],
            DEFAULT_PULSE_PERIOD_NS,
        )
    }

    pub fn validate(&self) -> Result<(), SpacetimeError> {
        let times = [
            self.t_choice_done_a,
            self.t_choice_done_b,
            self.t_emission_first,
            self.t_emission_last,
            self.t_meas_done_a,
            self.t_meas_done_b,
        ];
        if times.iter().any(|t| !t.is_finite()) {
            return Err(SpacetimeError::NonFinite("chronology"));
        }
        if !(self.pulse_period > 0.0) {
            return Err(SpacetimeError::PulsePeriod(self.pulse_period));
        }
        if self.t_emission_last < self.t_emission_first {
            return Err(SpacetimeError::EmissionOrder(
                self.t_emission_first - self.t_emission_last,
            ));
        }
        Ok(())
    }

    /// Widens the emission window by `half_width` pulses on each side. The
    /// last aggregated pulse is measured `half_width` periods later.
    pub fn aggregated(&self, width: u32) -> Result<Self, SpacetimeError> {
        if width == 0 || width.is_multiple_of(2) {
            return Err(SpacetimeError::Width(width));
        }
        self.validate()?;
        let shift = f64::from((width - 1) / 2) * self.pulse_period;
        Ok(Self {
            t_emission_first: self.t_emission_first - shift,
            t_emission_last: self.t_emission_last + shift,
            t_meas_done_a: self.t_meas_done_a + shift,
            t_meas_done_b: self.t_meas_done_b + shift,
            ..*self
        })
    }

    /// Shifts emission and measurement by `offset` pulses, leaving the
    /// setting choices in place.
    pub fn shifted_pulses(&self, offset: i64) -> Self {
        let dt = offset as f64 * self.pulse_period;
        Self {
            t_emission_first: self.t_emission_first + dt,
            t_emission_last: self.t_emission_last + dt,
            t_meas_done_a: self.t_meas_done_a + dt,
            t_meas_done_b: self.t_meas_done_b + dt,
            ..*self
        }
    }

    pub fn emission_spread(&self) -> f64 {
        self.t_emission_last - self.t_emission_first
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    ChoiceA,
    ChoiceB,
    MeasA,
    MeasB,
}

impl fmt::Display for MarginKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MarginKind::ChoiceA => "choice_A",
            MarginKind::ChoiceB => "choice_B",
            MarginKind::MeasA => "meas_A",
            MarginKind::MeasB => "meas_B",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalityMargins {
    pub width: u32,
    /// Alice's choice before light from the first emission reaches her.
    pub choice_a: f64,
    pub choice_b: f64,
    /// Alice's measurement before light from Bob's choice reaches her.
    pub meas_a: f64,
    pub meas_b: f64,
    pub minimum: f64,
    pub limiting: MarginKind,
    /// Plus or minus band from position uncertainty.
    pub uncertainty: f64,
}

impl LocalityMargins {
    pub fn as_array(&self) -> [f64; 4] {
        [self.choice_a, self.choice_b, self.meas_a, self.meas_b]
    }

    pub fn all_positive(&self) -> bool {
        self.minimum > 0.0
    }
}

pub fn locality_margins(
    geometry: &ExperimentGeometry,
    chronology: &TrialChronology,
    width: u32,
) -> Result<LocalityMargins, SpacetimeError> {
    geometry.validate()?;
    let ch = chronology.aggregated(width)?;
    let light = |x, y| geometry.distance(x, y) / C_M_PER_NS;
    let choice_a = ch.t_emission_first + light(Site::S, Site::A) - ch.t_choice_done_a;
    let choice_b = ch.t_emission_first + light(Site::S, Site::B) - ch.t_choice_done_b;
    let meas_a = ch.t_choice_done_b + light(Site::A, Site::B) - ch.t_meas_done_a;
    let meas_b = ch.t_choice_done_a + light(Site::A, Site::B) - ch.t_meas_done_b;
    let (limiting, minimum) = [
        (MarginKind::ChoiceA, choice_a),
        (MarginKind::ChoiceB, choice_b),
        (MarginKind::MeasA, meas_a),
        (MarginKind::MeasB, meas_b),
    ]
    .into_iter()
    .min_by(|x, y| x.1.total_cmp(&y.1))
    .expect("four margins");
    Ok(LocalityMargins {
        width,
        choice_a,
        choice_b,
        meas_a,
        meas_b,
        minimum,
        limiting,
        uncertainty: MARGIN_BAND_NS_PER_M * geometry.position_uncertainty,
    })
}

/// Single-slot margins for slots `1..=n_slots`, with `chronology`
/// describing the center slot.
pub fn slot_margins(
    geometry: &ExperimentGeometry,
    chronology: &TrialChronology,
    n_slots: usize,
    center: usize,
) -> Result<Vec<LocalityMargins>, SpacetimeError> {
    (1..=n_slots)
        .map(|slot| {
            let shifted = chronology.shifted_pulses(slot as i64 - center as i64);
            locality_margins(geometry, &shifted, 1)
        })
        .collect()
}

/// Whether every locality condition holds for each slot.
pub fn slot_separation_flags(
    geometry: &ExperimentGeometry,
    chronology: &TrialChronology,
    n_slots: usize,
    center: usize,
) -> Result<Vec<bool>, SpacetimeError> {
    Ok(slot_margins(geometry, chronology, n_slots, center)?
        .iter()
        .map(LocalityMargins::all_positive)
        .collect())
}

/// Flags for the calibrated layout with the default slot count.
pub fn calibrated_slot_flags() -> Vec<bool> {
    slot_separation_flags(
        &ExperimentGeometry::calibrated(),
        &TrialChronology::calibrated(),
        DEFAULT_SLOTS,
        CENTER_SLOT,
    )
    .expect("calibrated preset is consistent")
}

/// Star-shaped region a party may occupy, given as a radius per sampled
/// in-plane direction around its nominal position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRegion {
    pub site: Site,
    pub width: u32,
    pub center: [f64; 2],
    pub directions_deg: Vec<f64>,
    pub radii: Vec<f64>,
    pub min_distance: f64,
}

impl BoundaryRegion {
    pub fn polygon(&self) -> Vec<[f64; 2]> {
        star_vertices(self.center, &self.directions_deg, &self.radii)
    }

    pub fn is_empty(&self) -> bool {
        self.radii.iter().all(|&r| r <= 0.0)
    }

    /// Radius along an arbitrary direction, interpolated between samples.
    pub fn radius_at(&self, angle_deg: f64) -> f64 {
        let n = self.radii.len();
        let step = 360.0 / n as f64;
        let a = angle_deg.rem_euclid(360.0) / step;
        let j = a.floor() as usize % n;
        let f = a - a.floor();
        self.radii[j] * (1.0 - f) + self.radii[(j + 1) % n] * f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRegions {
    pub width: u32,
    pub regions: Vec<BoundaryRegion>,
    pub iterations: usize,
}

impl BoundaryRegions {
    pub fn region(&self, site: Site) -> &BoundaryRegion {
        &self.regions[site.index()]
    }

    /// Smallest distance from any party to its own boundary.
    pub fn min_distance(&self) -> f64 {
        self.regions
            .iter()
            .map(|r| r.min_distance)
            .fold(f64::INFINITY, f64::min)
    }
}

fn star_vertices(center: [f64; 2], directions_deg: &[f64], radii: &[f64]) -> Vec<[f64; 2]> {
    directions_deg
        .iter()
        .zip(radii)
        .map(|(a, r)| {
            let (s, c) = a.to_radians().sin_cos();
            [center[0] + r * c, center[1] + r * s]
        })
        .collect()
}

/// Smallest `s >= 0` with `origin + s·dir` inside the capsule of radius
/// `radius` around segment `v w`, if any.
fn ray_capsule_hit(origin: [f64; 2], dir: [f64; 2], v: [f64; 2], w: [f64; 2], radius: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut take = |s: f64| {
        if s >= 0.0 && best.is_none_or(|b| s < b) {
            best = Some(s);
        }
    };
    for p in [v, w] {
        let o = [origin[0] - p[0], origin[1] - p[1]];
        let b = dir[0] * o[0] + dir[1] * o[1];
        let c = o[0] * o[0] + o[1] * o[1] - radius * radius;
        if c <= 0.0 {
            return Some(0.0);
        }
        let disc = b * b - c;
        if disc >= 0.0 {
            take(-b - disc.sqrt());
        }
    }
    let e = [w[0] - v[0], w[1] - v[1]];
    let len = e[0].hypot(e[1]);
    if len > 1e-12 {
        let t_hat = [e[0] / len, e[1] / len];
        let n_hat = [-t_hat[1], t_hat[0]];
        let o = [origin[0] - v[0], origin[1] - v[1]];
        let along = t_hat[0] * o[0] + t_hat[1] * o[1];
        let across = n_hat[0] * o[0] + n_hat[1] * o[1];
        if across.abs() <= radius && (0.0..=len).contains(&along) {
            return Some(0.0);
        }
        let rate = n_hat[0] * dir[0] + n_hat[1] * dir[1];
        if rate.abs() > 1e-15 {
            for side in [radius, -radius] {
                let s = (side - across) / rate;
                let t = along + s * (t_hat[0] * dir[0] + t_hat[1] * dir[1]);
                if (0.0..=len).contains(&t) {
                    take(s);
                }
            }
        }
    }
    best
}

struct Constraint {
    partner: usize,
    /// Required in-plane separation.
    floor: f64,
}

/// Joint boundary regions for all three parties under full collusion.
///
/// `F` gives each party's largest radius per direction that keeps the
/// distance floors to every point of the partners' current regions.
/// Starting from the regions computed with the other parties pinned at
/// their nominal positions, capped at the largest single-pair slack
/// `c·max(margin)`, all three regions are shrunk together with
/// `r <- min(r, (r + F(r)) / 2)` until `r <= F(r)` holds everywhere, so
/// every point of every region is safe against every point of the others.
/// Where two parties compete for the same slack the budget ends up split
/// equally.
pub fn boundary_regions(
    geometry: &ExperimentGeometry,
    chronology: &TrialChronology,
    width: u32,
    angular_resolution_deg: f64,
) -> Result<BoundaryRegions, SpacetimeError> {
    if !(angular_resolution_deg > 0.0 && angular_resolution_deg <= 90.0) {
        return Err(SpacetimeError::Resolution(angular_resolution_deg));
    }
    let margins = locality_margins(geometry, chronology, width)?;
    let n_dir = (360.0 / angular_resolution_deg).round().max(4.0) as usize;
    let directions_deg: Vec<f64> = (0..n_dir).map(|j| j as f64 * 360.0 / n_dir as f64).collect();
    let units: Vec<[f64; 2]> = directions_deg
        .iter()
        .map(|a| {
            let (s, c) = a.to_radians().sin_cos();
            [c, s]
        })
        .collect();
    let centers: Vec<[f64; 2]> = Site::ALL
        .iter()
        .map(|&s| {
            let p = geometry.position(s);
            [p[0], p[1]]
        })
        .collect();

    let finish = |radii: Vec<Vec<f64>>, iterations| BoundaryRegions {
        width,
        iterations,
        regions: Site::ALL
            .iter()
            .zip(radii)
            .map(|(&site, r)| BoundaryRegion {
                site,
                width,
                center: centers[site.index()],
                directions_deg: directions_deg.clone(),
                min_distance: r.iter().copied().fold(f64::INFINITY, f64::min).max(0.0),
                radii: r,
            })
            .collect(),
    };

    if !margins.all_positive() {
        return Ok(finish(vec![vec![0.0; n_dir]; 3], 0));
    }

    let floor = |x: Site, y: Site, margin: f64| {
        let px = geometry.position(x);
        let py = geometry.position(y);
        let required = distance(px, py) - C_M_PER_NS * margin;
        let dz = px[2] - py[2];
        (required.max(0.0).powi(2) - dz * dz).max(0.0).sqrt()
    };
    let l_as = floor(Site::A, Site::S, margins.choice_a);
    let l_bs = floor(Site::B, Site::S, margins.choice_b);
    let l_ab = floor(Site::A, Site::B, margins.meas_a.min(margins.meas_b));
    let constraints: [Vec<Constraint>; 3] = [
        vec![
            Constraint { partner: 1, floor: l_ab },
            Constraint { partner: 2, floor: l_as },
        ],
        vec![
            Constraint { partner: 0, floor: l_ab },
            Constraint { partner: 2, floor: l_bs },
        ],
        vec![
            Constraint { partner: 0, floor: l_as },
            Constraint { partner: 1, floor: l_bs },
        ],
    ];
    // No displacement can exceed the largest single-pair slack, even with
    // every partner pinned.
    let cap = C_M_PER_NS * margins.as_array().into_iter().fold(0.0, f64::max);

    let update = |radii: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let polygons: Vec<Vec<[f64; 2]>> = (0..3)
            .map(|i| star_vertices(centers[i], &directions_deg, &radii[i]))
            .collect();
        (0..3)
            .map(|i| {
                units
                    .par_iter()
                    .map(|&u| {
                        let mut reach = cap;
                        for c in &constraints[i] {
                            if c.floor <= 0.0 {
                                continue;
                            }
                            let poly = &polygons[c.partner];
                            for k in 0..poly.len() {
                                let next = poly[(k + 1) % poly.len()];
                                if let Some(s) = ray_capsule_hit(centers[i], u, poly[k], next, c.floor) {
                                    reach = reach.min(s);
                                }
                            }
                        }
                        reach
                    })
                    .collect()
            })
            .collect()
    };

    let mut radii = update(&vec![vec![0.0; n_dir]; 3]);
    let mut trace = Vec::new();
    for iteration in 1..=FIXED_POINT_MAX_ITER {
        let target = update(&radii);
        let mut change: f64 = 0.0;
        for (r, t) in radii.iter_mut().zip(&target) {
            for (x, y) in r.iter_mut().zip(t) {
                let next = x.min(0.5 * (*x + y));
                change = change.max((next - *x).abs());
                *x = next;
            }
        }
        if trace.len() == TRACE_LEN {
            trace.remove(0);
        }
        trace.push(change);
        if change < FIXED_POINT_TOL_M {
            return Ok(finish(radii, iteration));
        }
    }
    Err(SpacetimeError::NoConvergence {
        iterations: FIXED_POINT_MAX_ITER,
        trace,
    })
}

pub fn boundary_region(
    geometry: &ExperimentGeometry,
    chronology: &TrialChronology,
    site: Site,
    width: u32,
    angular_resolution_deg: f64,
) -> Result<BoundaryRegion, SpacetimeError> {
    let all = boundary_regions(geometry, chronology, width, angular_resolution_deg)?;
    Ok(all.regions[site.index()].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(x: f64, t: f64) -> SpacetimeEvent {
        SpacetimeEvent::new([x, 0.0, 0.0], t).unwrap()
    }

    #[test]
    fn classify_examples() {
        assert_eq!(interval_classify(&ev(0.0, 0.0), &ev(0.0, 1.0)), IntervalKind::Timelike);
        assert_eq!(interval_classify(&ev(0.0, 0.0), &ev(300.0, 500.0)), IntervalKind::Spacelike);
        assert_eq!(
            interval_classify(&ev(0.0, 0.0), &ev(C_M_PER_NS * 1000.0, 1000.0)),
            IntervalKind::Lightlike
        );
        assert!((300.0 / C_M_PER_NS - 1000.7).abs() < 0.1);
    }

    #[test]
    fn calibrated_margins_follow_pulse_period() {
        let g = ExperimentGeometry::calibrated();
        let ch = TrialChronology::calibrated();
        let expected = [63.5, 50.9, 38.3, 25.7];
        for (w, e) in [1, 3, 5, 7].into_iter().zip(expected) {
            let m = locality_margins(&g, &ch, w).unwrap();
            assert!((m.minimum - e).abs() < 0.1, "width {w}: {}", m.minimum);
            assert_eq!(m.limiting, MarginKind::MeasB);
        }
        let m9 = locality_margins(&g, &ch, 9).unwrap();
        assert!((m9.minimum - 13.1).abs() < 0.1);
        assert!((locality_margins(&g, &ch, 1).unwrap().uncertainty - 3.7).abs() < 1e-12);
    }

    #[test]
    fn co_located_parties_have_negative_margins() {
        let mut g = ExperimentGeometry::calibrated();
        g.pos_a = g.pos_s;
        g.pos_b = g.pos_s;
        let m = locality_margins(&g, &TrialChronology::calibrated(), 1).unwrap();
        assert!(m.as_array().iter().all(|&x| x < 0.0), "{m:?}");
        let r = boundary_regions(&g, &TrialChronology::calibrated(), 1, 10.0).unwrap();
        assert!(r.regions.iter().all(BoundaryRegion::is_empty));
        assert_eq!(r.min_distance(), 0.0);
    }

    #[test]
    fn doubling_distances_increases_margins() {
        let g = ExperimentGeometry::calibrated();
        let ch = TrialChronology::calibrated();
        let base = locality_margins(&g, &ch, 1).unwrap().as_array();
        let far = locality_margins(&g.scaled(2.0), &ch, 1).unwrap().as_array();
        assert!(base.iter().zip(far).all(|(b, f)| f > *b));
    }

    #[test]
    fn inverted_emission_window_rejected() {
        let mut ch = TrialChronology::calibrated();
        ch.t_emission_last = ch.t_emission_first - 1.0;
        assert!(matches!(
            locality_margins(&ExperimentGeometry::calibrated(), &ch, 1),
            Err(SpacetimeError::EmissionOrder(_))
        ));
        assert!(matches!(
            locality_margins(&ExperimentGeometry::calibrated(), &TrialChronology::calibrated(), 4),
            Err(SpacetimeError::Width(4))
        ));
    }

    #[test]
    fn late_slots_not_separated() {
        let flags = calibrated_slot_flags();
        assert_eq!(flags.len(), 15);
        assert!(flags[1..11].iter().all(|&f| f));
        assert!(flags[11..].iter().all(|&f| !f));
    }

    #[test]
    fn capsule_hits() {
        let hit = ray_capsule_hit([0.0, 0.0], [1.0, 0.0], [10.0, -5.0], [10.0, 5.0], 1.0);
        assert!((hit.unwrap() - 9.0).abs() < 1e-12);
        let end = ray_capsule_hit([0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [10.0, 0.0], 2.0);
        assert!((end.unwrap() - 8.0).abs() < 1e-12);
        assert!(ray_capsule_hit([0.0, 0.0], [-1.0, 0.0], [10.0, 0.0], [12.0, 0.0], 1.0).is_none());
        assert_eq!(ray_capsule_hit([10.0, 0.5], [1.0, 0.0], [10.0, 0.0], [12.0, 0.0], 1.0), Some(0.0));
    }
}
