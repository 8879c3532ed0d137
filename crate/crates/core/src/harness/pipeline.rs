//! In-memory end-to-end pipeline: synthesis, detection, localization, tracking.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::amplitude::{detection_segments, detection_subsample, iterative_separation, SeparationOptions};
use crate::buffer::RealBuffer;
use crate::channel::{synthesize_detector_output, SPEED_OF_LIGHT};
use crate::detect::{hierarchical_detect, sort_detections, stack_frames, suppress_below_ratio, Detection, TemplateBank};
use crate::geom::Point;
use crate::locate::{solve_tdoa, trilaterate_ratio, LocateError, Method, PositionEstimate, TowerObservation};
use crate::lte::Pci;
use crate::route::{geofence_events, snap_trajectory_with_slack, Fix, GeofenceAlert, GeofenceRegion, RoadGraph, SnapStatus};
use crate::seed::substream;

use super::celldb::{CellDatabase, Lookup};
use super::scenario::{DetectorSettings, Scenario};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub pci: Pci,
    /// Arrival delay in ADC samples, modulo one frame.
    pub delay_samples: f64,
    /// Received field amplitude.
    pub amplitude: f64,
    pub power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixTruth {
    pub index: usize,
    pub t: f64,
    pub position: Point,
    /// Cells at or above the receiver sensitivity floor (the only ones rendered).
    pub cells: Vec<CellTruth>,
}

impl FixTruth {
    pub fn pcis(&self) -> BTreeSet<Pci> {
        self.cells.iter().map(|c| c.pci).collect()
    }
}

/// Renders the detector output seen at fix `index`.
pub fn synth_fix(sc: &Scenario, index: usize) -> Result<(RealBuffer, FixTruth), HarnessError> {
    let (t, rx) = sc.trajectory[index];
    let fe = &sc.front_end;
    let fs = fe.adc_rate_hz;
    let frame_len = fe.frame_len() as f64;
    let mut cells = Vec::new();
    let mut truth = Vec::new();
    for (j, (cell, mp)) in sc.cells.iter().enumerate() {
        let power = cell.received_power_dbm(rx)?;
        if power < fe.sensitivity_floor_dbm {
            continue;
        }
        let mut c = cell.clone();
        if sc.timing_jitter_samples > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(substream(sc.rng_seed, "jitter", &[index as u64, j as u64]));
            let n = Normal::new(0.0, sc.timing_jitter_samples).expect("validated jitter");
            c.frame_time_origin_s += n.sample(&mut rng) / fs;
        }
        let delay = ((c.frame_time_origin_s + c.position.distance(rx) / SPEED_OF_LIGHT) * fs).rem_euclid(frame_len);
        truth.push(CellTruth {
            pci: c.pci,
            delay_samples: delay,
            amplitude: c.received_amplitude(rx)?,
            power_dbm: power,
        });
        cells.push((c, mp.clone()));
    }
    let seed = substream(sc.rng_seed, "fix", &[index as u64]);
    let buf = synthesize_detector_output(&cells, rx, fe, 0, sc.samples_per_fix(), sc.synth_path, seed)?;
    Ok((
        buf,
        FixTruth {
            index,
            t,
            position: rx,
            cells: truth,
        },
    ))
}

/// Trace minus every detection except `keep` (pass `None` to subtract all),
/// at the detections' amplitudes and sub-sample offsets.
fn isolate(x: &RealBuffer, dets: &[Detection], bank: &TemplateBank, keep: Option<usize>) -> RealBuffer {
    let n = x.len();
    let mut r = x.samples.clone();
    for (k, d) in dets.iter().enumerate() {
        if Some(k) == keep {
            continue;
        }
        for s in detection_segments(bank.template(d.pci), n, d.delay_samples, d.subsample_offset) {
            for (i, v) in s.samples.iter().enumerate() {
                r[(s.lag + i) % n] -= d.amplitude * v;
            }
        }
    }
    RealBuffer::new(x.sample_rate_hz, r)
}

fn fit_amplitudes(stacked: &RealBuffer, dets: &mut [Detection], bank: &TemplateBank, fractional: bool) -> Result<(), HarnessError> {
    if dets.is_empty() {
        return Ok(());
    }
    // Loose box: no single template can need more than this.
    let xn = stacked.energy().sqrt();
    let tn = dets
        .iter()
        .map(|d| {
            let t = bank.template(d.pci);
            (t.norm * t.norm + t.alt_norm * t.alt_norm).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    let a_max = (10.0 * xn / tn).max(f64::MIN_POSITIVE);
    let opts = SeparationOptions {
        fractional,
        joint_refit: true,
    };
    let sep = iterative_separation(stacked, dets, bank, a_max, opts)?;
    for (d, f) in dets.iter_mut().zip(&sep.fits) {
        d.amplitude = f.amplitude;
    }
    Ok(())
}

/// Joint amplitudes, suppression, sub-sample offsets, then a fractional refit.
fn refine(stacked: &RealBuffer, dets: Vec<Detection>, bank: &TemplateBank, settings: &DetectorSettings) -> Result<Vec<Detection>, HarnessError> {
    let mut dets = dets;
    sort_detections(&mut dets);
    fit_amplitudes(stacked, &mut dets, bank, false)?;
    let mut dets = suppress_below_ratio(&dets, settings.suppress_radius, settings.suppress_ratio);
    dets.retain(|d| d.amplitude > 0.0);
    dets.iter_mut().for_each(|d| d.subsample_offset = 0.0);
    fit_amplitudes(stacked, &mut dets, bank, false)?;
    // Alternate offsets and amplitudes: each offset is estimated against the
    // others' latest fit.
    for _ in 0..OFFSET_ITERATIONS {
        let mut moved = 0.0f64;
        for k in 0..dets.len() {
            let tau = detection_subsample(&isolate(stacked, &dets, bank, Some(k)), bank.template(dets[k].pci), dets[k].delay_samples).tau;
            moved = moved.max((tau - dets[k].subsample_offset).abs());
            dets[k].subsample_offset = tau;
        }
        fit_amplitudes(stacked, &mut dets, bank, true)?;
        if moved < OFFSET_TOL {
            break;
        }
    }
    dets.retain(|d| d.amplitude > 0.0);
    sort_detections(&mut dets);
    Ok(dets)
}

/// Offset/amplitude alternations per refinement.
pub const OFFSET_ITERATIONS: usize = 8;
const OFFSET_TOL: f64 = 1e-3;

/// Rounds of residual re-detection after the first pass.
pub const CANCELLATION_ROUNDS: usize = 6;
/// Residual candidates tried per round before giving up.
pub const CANCELLATION_TRIES: usize = 4;
/// Stage-2 threshold scale on residuals; the amplitude fit vets what passes.
pub const RESIDUAL_SSS_SCALE: f64 = 0.6;
/// Fraction of residual energy a new cell must explain to be kept.
pub const MIN_RESIDUAL_GAIN: f64 = 0.25;

fn energy(x: &RealBuffer) -> f64 {
    x.samples.iter().map(|v| v * v).sum()
}

/// Fraction of the residual that detection `k` removes, given the residual
/// energy `e_all` with every detection subtracted.
fn gain(stacked: &RealBuffer, dets: &[Detection], bank: &TemplateBank, k: usize, e_all: f64) -> f64 {
    let without = energy(&isolate(stacked, dets, bank, Some(k)));
    (without - e_all) / without.max(f64::MIN_POSITIVE)
}

/// Drops, one at a time, detections that explain less than
/// `MIN_RESIDUAL_GAIN` of the residual they would leave behind. Catches
/// half-frame aliases: the sf5 region of a real cell half-matches the sf0
/// region of a same-sector PCI, and the joint fit leaves the alias little to
/// explain.
fn prune_unexplained(
    stacked: &RealBuffer,
    mut dets: Vec<Detection>,
    bank: &TemplateBank,
    settings: &DetectorSettings,
) -> Result<Vec<Detection>, HarnessError> {
    while dets.len() > 1 {
        let e_all = energy(&isolate(stacked, &dets, bank, None));
        let weakest = (0..dets.len())
            .map(|k| (k, gain(stacked, &dets, bank, k, e_all)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if weakest.1 >= MIN_RESIDUAL_GAIN {
            break;
        }
        dets.remove(weakest.0);
        dets = refine(stacked, dets, bank, settings)?;
    }
    Ok(dets)
}

/// Stack, detect, separate, suppress, and refine one fix trace. Weak cells
/// hidden under strong ones are recovered by re-detecting on the residual
/// after subtracting everything found so far, one cell per round.
pub fn detect_trace(
    trace: &RealBuffer,
    n_frames: usize,
    bank: &TemplateBank,
    settings: &DetectorSettings,
) -> Result<Vec<Detection>, HarnessError> {
    let expect = (trace.sample_rate_hz * crate::lte::FRAME_DURATION_S).round() as usize;
    if expect != bank.frame_len {
        return Err(HarnessError::Data {
            context: "trace".into(),
            msg: format!("sample rate {} Hz does not match the template bank", trace.sample_rate_hz),
        });
    }
    let stacked = stack_frames(trace, n_frames)?;
    let first = hierarchical_detect(&stacked, bank, &settings.config)?.detections;
    let refined = refine(&stacked, first, bank, settings)?;
    let mut dets = prune_unexplained(&stacked, refined, bank, settings)?;
    let mut rejected: Vec<Pci> = Vec::new();
    let mut residual_cfg = settings.config.clone();
    residual_cfg.thresh_sss *= RESIDUAL_SSS_SCALE;
    for _ in 0..CANCELLATION_ROUNDS {
        if dets.is_empty() {
            break;
        }
        let residual = isolate(&stacked, &dets, bank, None);
        let fresh: Vec<Detection> = hierarchical_detect(&residual, bank, &residual_cfg)?
            .detections
            .into_iter()
            .filter(|c| !dets.iter().any(|d| d.pci == c.pci) && !rejected.contains(&c.pci))
            .take(CANCELLATION_TRIES)
            .collect();
        let e0 = energy(&residual);
        let mut accepted = false;
        for c in fresh {
            let mut next = dets.clone();
            next.push(c.clone());
            let next = refine(&stacked, next, bank, settings)?;
            let e1 = energy(&isolate(&stacked, &next, bank, None));
            // the candidate itself must carry the gain, not the refit of the others
            let own = next.iter().position(|d| d.pci == c.pci).map(|k| gain(&stacked, &next, bank, k, e1));
            if own.is_some_and(|g| g >= MIN_RESIDUAL_GAIN) && e1 <= (1.0 - MIN_RESIDUAL_GAIN) * e0 {
                dets = next;
                accepted = true;
                break;
            }
            rejected.push(c.pci);
        }
        if !accepted {
            break;
        }
    }
    let dets = swap_lookalikes(&stacked, dets, bank, settings)?;
    // look-alikes that stood in for cells found later now explain nothing
    prune_unexplained(&stacked, dets, bank, settings)
}

/// Alternative labels tried per detection by [`swap_lookalikes`].
pub const LOOKALIKES: usize = 6;

/// The `n` PCIs whose templates correlate most with `p`'s.
fn lookalikes(bank: &TemplateBank, p: Pci, n: usize) -> Vec<Pci> {
    let t = &bank.template(p).samples;
    let mut scored: Vec<(f64, Pci)> = Pci::all()
        .filter(|&q| q != p)
        .map(|q| (t.iter().zip(&bank.template(q).samples).map(|(a, b)| a * b).sum::<f64>(), q))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, q)| q).collect()
}

/// Relabels detections with a look-alike PCI when that lowers the residual.
/// Cells sharing a coarse delay (synchronized towers a few samples apart)
/// let the greedy pass lock onto a template that correlates ~0.98 with the
/// true one; the joint residual tells them apart.
fn swap_lookalikes(
    stacked: &RealBuffer,
    mut dets: Vec<Detection>,
    bank: &TemplateBank,
    settings: &DetectorSettings,
) -> Result<Vec<Detection>, HarnessError> {
    let mut best = energy(&isolate(stacked, &dets, bank, None));
    let mut k = 0;
    while k < dets.len() {
        let mut improved = false;
        for q in lookalikes(bank, dets[k].pci, LOOKALIKES) {
            if dets.iter().any(|d| d.pci == q) {
                continue;
            }
            let mut trial = dets.clone();
            trial[k] = Detection {
                pci: q,
                subsample_offset: 0.0,
                ..dets[k].clone()
            };
            let trial = refine(stacked, trial, bank, settings)?;
            let e = energy(&isolate(stacked, &trial, bank, None));
            if trial.iter().any(|d| d.pci == q) && e < best * (1.0 - 1e-6) {
                dets = trial;
                best = e;
                improved = true;
                break;
            }
        }
        // refine re-sorts; restart so every label is revisited after a swap
        k = if improved { 0 } else { k + 1 };
    }
    Ok(dets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixStatus {
    Resolved,
    /// Fewer than three usable towers.
    Unresolvable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixEstimate {
    pub status: FixStatus,
    pub estimate: Option<PositionEstimate>,
    pub n_towers: usize,
    pub warnings: Vec<String>,
}

/// Builds tower observations from one fix's detections. Amplitudes become
/// field amplitudes normalized for transmit power; arrival times are
/// unwrapped around the strongest detection.
pub fn observations(
    dets: &[Detection],
    db: &CellDatabase,
    frame_len: usize,
    previous: Option<Point>,
    carrier_hz: Option<f64>,
) -> (Vec<TowerObservation>, Vec<String>) {
    let mut obs = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = BTreeSet::new();
    let l = frame_len as f64;
    let mut reference: Option<f64> = None;
    for d in dets {
        if !seen.insert(d.pci) {
            warnings.push(format!("pci {} detected more than once; kept the strongest", d.pci));
            continue;
        }
        let rec = match db.lookup(d.pci, carrier_hz, previous) {
            Lookup::Found(r) => r,
            Lookup::Missing => {
                warnings.push(format!("pci {} not in cell database", d.pci));
                continue;
            }
            Lookup::Ambiguous(n) => {
                warnings.push(format!("pci {} matches {n} database rows and there is no previous fix", d.pci));
                continue;
            }
        };
        let mut toa = d.delay_samples as f64 + d.subsample_offset;
        match reference {
            None => reference = Some(toa),
            Some(r) => {
                while toa - r > l / 2.0 {
                    toa -= l;
                }
                while toa - r <= -l / 2.0 {
                    toa += l;
                }
            }
        }
        obs.push(TowerObservation {
            pci: d.pci,
            position: rec.position,
            amplitude: d.amplitude.max(0.0).sqrt() / 10f64.powf(rec.tx_power_dbm / 20.0),
            toa_samples: toa,
        });
    }
    (obs, warnings)
}

pub fn localize_fix(
    dets: &[Detection],
    db: &CellDatabase,
    method: Method,
    sample_rate_hz: f64,
    frame_len: usize,
    previous: Option<Point>,
    carrier_hz: Option<f64>,
) -> FixEstimate {
    let (obs, mut warnings) = observations(dets, db, frame_len, previous, carrier_hz);
    let n = obs.len();
    let res = match method {
        Method::Tdoa => solve_tdoa(&obs, sample_rate_hz, None),
        Method::Ratio => trilaterate_ratio(&obs, None),
    };
    match res {
        Ok(mut e) => {
            warnings.append(&mut e.warnings);
            FixEstimate {
                status: FixStatus::Resolved,
                estimate: Some(e),
                n_towers: n,
                warnings,
            }
        }
        Err(e) => {
            if !matches!(e, LocateError::InsufficientAnchors(_)) {
                warnings.push(e.to_string());
            }
            FixEstimate {
                status: FixStatus::Unresolvable,
                estimate: None,
                n_towers: n,
                warnings,
            }
        }
    }
}

/// Localizes a sequence of fixes; the previous resolved position feeds the
/// repeated-PCI policy.
pub fn localize_all(
    per_fix: &[Vec<Detection>],
    db: &CellDatabase,
    method: Method,
    sample_rate_hz: f64,
    frame_len: usize,
) -> Vec<FixEstimate> {
    let mut prev = None;
    per_fix
        .iter()
        .map(|dets| {
            let e = localize_fix(dets, db, method, sample_rate_hz, frame_len, prev, None);
            if let Some(p) = &e.estimate {
                prev = Some(p.position);
            }
            e
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackOutput {
    pub fixes: Vec<Fix>,
    pub alerts: Vec<GeofenceAlert>,
}

/// Snaps (when a graph is given) and evaluates a geofence (when given).
/// `detected` holds one PCI set per fix.
pub fn track(
    fixes: &[Fix],
    graph: Option<&RoadGraph>,
    k: usize,
    slack_m: f64,
    fence: Option<&GeofenceRegion>,
    detected: Option<&[BTreeSet<Pci>]>,
) -> Result<TrackOutput, HarnessError> {
    let fixes = match graph {
        Some(g) => snap_trajectory_with_slack(fixes, g, k, slack_m)?,
        None => fixes.to_vec(),
    };
    let alerts = match fence {
        Some(f) => geofence_events(&fixes, f, detected),
        None => Vec::new(),
    };
    Ok(TrackOutput { fixes, alerts })
}

/// Snap status of a fix for reporting.
pub fn snap_label(s: SnapStatus) -> &'static str {
    match s {
        SnapStatus::Raw => "raw",
        SnapStatus::Initial => "initial",
        SnapStatus::Constrained => "constrained",
        SnapStatus::Rebranched => "rebranched",
        SnapStatus::Reseeded => "reseeded",
    }
}
