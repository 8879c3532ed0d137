//! Position solvers: amplitude-ratio trilateration and TDOA least squares.
//!
//! Both minimize a small non-convex objective in the plane with a
//! Nelder-Mead simplex, started from the tower centroid and from four
//! deterministic jittered points; the best run wins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::SPEED_OF_LIGHT;
use crate::geom::{centroid, diameter, Point};
use crate::lte::Pci;

/// Amplitudes are floored here before forming ratios.
pub const AMPLITUDE_FLOOR: f64 = 1e-12;
/// Simplex diameter tolerance relative to scene scale.
pub const REL_TOL: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocateError {
    #[error("need at least 3 towers, got {0}")]
    InsufficientAnchors(usize),
    #[error("invalid observation: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TowerObservation {
    pub pci: Pci,
    pub position: Point,
    pub amplitude: f64,
    /// Arrival time in samples (integer + fractional part).
    pub toa_samples: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub position: Point,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ratio,
    #[default]
    Tdoa,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ratio" => Ok(Self::Ratio),
            "tdoa" => Ok(Self::Tdoa),
            other => Err(format!("unknown solver '{other}' (ratio|tdoa)")),
        }
    }
}

pub fn sample_to_distance(delta_samples: f64, sample_rate_hz: f64) -> f64 {
    delta_samples * SPEED_OF_LIGHT / sample_rate_hz
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexResult {
    pub point: Point,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead in two dimensions with standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
pub fn nelder_mead(f: impl Fn(Point) -> f64, start: Point, step: f64, tol: f64, max_iter: usize) -> SimplexResult {
    let mut s = [start, start + Point::new(step, 0.0), start + Point::new(0.0, step)];
    let mut v = s.map(&f);
    let mut it = 0;
    let mut converged = false;
    while it < max_iter {
        // order: best first
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
        s = idx.map(|i| s[i]);
        v = idx.map(|i| v[i]);
        if diameter(&s) < tol {
            converged = true;
            break;
        }
        it += 1;
        let c = (s[0] + s[1]) * 0.5;
        let r = c + (c - s[2]);
        let fr = f(r);
        if fr < v[0] {
            let e = c + (r - c) * 2.0;
            let fe = f(e);
            if fe < fr {
                s[2] = e;
                v[2] = fe;
            } else {
                s[2] = r;
                v[2] = fr;
            }
        } else if fr < v[1] {
            s[2] = r;
            v[2] = fr;
        } else {
            let (k, fk) = if fr < v[2] {
                let k = c + (r - c) * 0.5;
                (k, f(k))
            } else {
                let k = c + (s[2] - c) * 0.5;
                (k, f(k))
            };
            if fk < v[2].min(fr) {
                s[2] = k;
                v[2] = fk;
            } else {
                for i in 1..3 {
                    s[i] = s[0] + (s[i] - s[0]) * 0.5;
                    v[i] = f(s[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    SimplexResult {
        point: s[best],
        value: v[best],
        iterations: it,
        converged,
    }
}

fn validate(obs: &[TowerObservation]) -> Result<Vec<String>, LocateError> {
    if obs.len() < 3 {
        return Err(LocateError::InsufficientAnchors(obs.len()));
    }
    if obs.iter().any(|o| !o.position.is_finite()) {
        return Err(LocateError::Invalid("tower position is not finite".into()));
    }
    let mut warnings = Vec::new();
    let pts: Vec<Point> = obs.iter().map(|o| o.position).collect();
    let scale = diameter(&pts).max(1e-9);
    let collinear = pts.iter().all(|p| (pts[1] - pts[0]).cross(*p - pts[0]).abs() <= 1e-9 * scale * scale);
    if collinear {
        warnings.push("towers are collinear; position is ambiguous across their line".into());
    }
    Ok(warnings)
}

fn scene_scale(obs: &[TowerObservation]) -> f64 {
    let pts: Vec<Point> = obs.iter().map(|o| o.position).collect();
    diameter(&pts).max(1.0)
}

/// Centroid plus four jittered starts at a fixed fraction of the scene.
fn starts(init: Point, scale: f64) -> Vec<Point> {
    let j = 0.25 * scale;
    vec![
        init,
        init + Point::new(j, 0.37 * j),
        init + Point::new(-0.41 * j, j),
        init + Point::new(-j, -0.29 * j),
        init + Point::new(0.33 * j, -j),
    ]
}

fn solve(obs: &[TowerObservation], init: Option<Point>, f: impl Fn(Point) -> f64, mut warnings: Vec<String>) -> PositionEstimate {
    let scale = scene_scale(obs);
    let init = init.unwrap_or_else(|| centroid(&obs.iter().map(|o| o.position).collect::<Vec<_>>()));
    let runs: Vec<SimplexResult> = starts(init, scale)
        .into_iter()
        .map(|s| nelder_mead(&f, s, 0.1 * scale, REL_TOL * scale, MAX_ITERATIONS))
        .collect();
    let total_iter = runs.iter().map(|r| r.iterations).sum();
    let lowest = runs.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    // Mirror solutions can tie; prefer the one nearest the initial guess.
    let tie = lowest.abs() * 1e-6 + 1e-18;
    let b = *runs
        .iter()
        .filter(|r| r.value <= lowest + tie)
        .min_by(|a, b| a.point.distance(init).total_cmp(&b.point.distance(init)))
        .expect("at least one start");
    if !b.converged {
        warnings.push(format!("simplex did not converge in {MAX_ITERATIONS} iterations"));
    }
    PositionEstimate {
        position: b.point,
        objective_value: f(b.point),
        iterations: total_iter,
        converged: b.converged,
        warnings,
    }
}

/// `sum over pairs (A_i/A_j - d_j/d_i)^2`: under `A ~ 1/d` the amplitude
/// ratio equals the inverse distance ratio.
pub fn ratio_objective(obs: &[TowerObservation], p: Point) -> f64 {
    let mut acc = 0.0;
    for i in 0..obs.len() {
        for j in i + 1..obs.len() {
            let ai = obs[i].amplitude.max(AMPLITUDE_FLOOR);
            let aj = obs[j].amplitude.max(AMPLITUDE_FLOOR);
            let di = p.distance(obs[i].position).max(f64::MIN_POSITIVE);
            let dj = p.distance(obs[j].position);
            acc += (ai / aj - dj / di).powi(2);
        }
    }
    acc
}

/// Amplitude-ratio trilateration; amplitudes must be field amplitudes
/// normalized for transmit power (proportional to `1/d`).
pub fn trilaterate_ratio(obs: &[TowerObservation], init: Option<Point>) -> Result<PositionEstimate, LocateError> {
    let mut warnings = validate(obs)?;
    if obs.iter().any(|o| !(o.amplitude > AMPLITUDE_FLOOR)) {
        warnings.push(format!("amplitudes floored at {AMPLITUDE_FLOOR}"));
    }
    Ok(solve(obs, init, |p| ratio_objective(obs, p), warnings))
}

/// TDOA objective in s^2 over all pairs.
pub fn tdoa_objective(obs: &[TowerObservation], sample_rate_hz: f64, p: Point) -> f64 {
    tdoa_objective_m2(obs, sample_rate_hz, p) / (SPEED_OF_LIGHT * SPEED_OF_LIGHT)
}

/// Same objective expressed in m^2 (better conditioned for the simplex).
fn tdoa_objective_m2(obs: &[TowerObservation], sample_rate_hz: f64, p: Point) -> f64 {
    let mut acc = 0.0;
    for i in 0..obs.len() {
        for j in i + 1..obs.len() {
            let dt = sample_to_distance(obs[i].toa_samples - obs[j].toa_samples, sample_rate_hz);
            let geo = p.distance(obs[i].position) - p.distance(obs[j].position);
            acc += (dt - geo).powi(2);
        }
    }
    acc
}

pub fn solve_tdoa(obs: &[TowerObservation], sample_rate_hz: f64, init: Option<Point>) -> Result<PositionEstimate, LocateError> {
    if !(sample_rate_hz > 0.0) {
        return Err(LocateError::Invalid("sample rate must be positive".into()));
    }
    if obs.iter().any(|o| !o.toa_samples.is_finite()) {
        return Err(LocateError::Invalid("arrival time is not finite".into()));
    }
    let warnings = validate(obs)?;
    let mut est = solve(obs, init, |p| tdoa_objective_m2(obs, sample_rate_hz, p), warnings);
    est.objective_value = tdoa_objective(obs, sample_rate_hz, est.position);
    Ok(est)
}
