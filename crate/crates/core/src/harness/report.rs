//! Manifests, metrics, run reports, and the subcommand drivers.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::RealBuffer;
use crate::channel::FrontEndConfig;
use crate::detect::{CorrelationMode, Detection, DetectorConfig, TemplateBank};
use crate::geom::Point;
use crate::locate::Method;
use crate::lte::{Pci, FRAME_DURATION_S};
use crate::route::{Fix, GeofenceAlert, GeofenceRegion, RoadGraph, SnapStatus};

use super::celldb::CellDatabase;
use super::io::{self, FixDetections, TrajectoryRow};
use super::pipeline::{detect_trace, localize_all, synth_fix, track, FixStatus, FixTruth};
use super::scenario::{DetectorSettings, Scenario};
use super::trace::{load_trace, save_trace};
use super::HarnessError;

pub const MANIFEST_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFix {
    pub index: usize,
    pub t: f64,
    /// Trace path relative to the manifest.
    pub trace: String,
    pub truth: FixTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub rng_seed: u64,
    pub sample_rate_hz: f64,
    pub frame_len: usize,
    pub n_frames_per_fix: usize,
    pub frontend_hash: String,
    pub front_end: FrontEndConfig,
    pub detector: DetectorConfig,
    pub suppress_radius: usize,
    pub suppress_ratio: f64,
    pub solver: Method,
    pub origin: Option<(f64, f64)>,
    /// Cell database path relative to the manifest.
    pub cells_csv: String,
    pub fixes: Vec<ManifestFix>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let f = File::open(path).map_err(|e| HarnessError::Validation {
            context: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let m: Manifest = serde_json::from_reader(BufReader::new(f)).map_err(|e| HarnessError::Validation {
            context: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(HarnessError::Validation {
                context: path.display().to_string(),
                msg: format!("unsupported manifest version {}", m.version),
            });
        }
        Ok(m)
    }

    pub fn detector_settings(&self) -> DetectorSettings {
        DetectorSettings {
            config: self.detector.clone(),
            suppress_radius: self.suppress_radius,
            suppress_ratio: self.suppress_ratio,
        }
    }
}

/// Micro-averaged PCI identification counts over fixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PciMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `tp / (tp + fp)`; absent with no detections.
    pub precision: Option<f64>,
    /// `tp / (tp + fn)`; absent with no ground truth cells.
    pub recall: Option<f64>,
}

pub fn pci_metrics(detected: &[BTreeSet<Pci>], truth: &[BTreeSet<Pci>]) -> PciMetrics {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (d, t) in detected.iter().zip(truth) {
        tp += d.intersection(t).count();
        fp += d.difference(t).count();
        fn_ += t.difference(d).count();
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    PciMetrics {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision: ratio(tp, fp),
        recall: ratio(tp, fn_),
    }
}

/// Linear-interpolation percentile (`q` in [0, 100]) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    pub p50: Option<f64>,
    pub p90: Option<f64>,
}

impl ErrorStats {
    pub fn of(errors: &[f64]) -> Self {
        Self {
            n: errors.len(),
            p50: percentile(errors, 50.0),
            p90: percentile(errors, 90.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixRecord {
    pub index: usize,
    pub t: f64,
    pub truth_position: Point,
    pub truth_pcis: Vec<Pci>,
    pub detections: Vec<Detection>,
    pub status: FixStatus,
    pub n_towers: usize,
    pub estimate: Option<Point>,
    pub objective: Option<f64>,
    pub error_m: Option<f64>,
    pub snapped: Option<Point>,
    pub snap_status: Option<SnapStatus>,
    pub snapped_error_m: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_fixes: usize,
    pub n_resolved: usize,
    pub pci: PciMetrics,
    pub error: ErrorStats,
    pub snapped_error: Option<ErrorStats>,
    pub n_alerts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub rng_seed: u64,
    pub frontend_hash: String,
    pub mode: CorrelationMode,
    pub solver: Method,
    pub fixes: Vec<FixRecord>,
    pub metrics: Metrics,
    pub alerts: Vec<GeofenceAlert>,
}

impl RunReport {
    /// Metrics derived from the per-fix records alone.
    pub fn recompute_metrics(&self) -> Metrics {
        let detected: Vec<BTreeSet<Pci>> = self.fixes.iter().map(|f| f.detections.iter().map(|d| d.pci).collect()).collect();
        let truth: Vec<BTreeSet<Pci>> = self.fixes.iter().map(|f| f.truth_pcis.iter().copied().collect()).collect();
        let errors: Vec<f64> = self.fixes.iter().filter_map(|f| f.error_m).collect();
        let snapped: Vec<f64> = self.fixes.iter().filter_map(|f| f.snapped_error_m).collect();
        let any_snap = self.fixes.iter().any(|f| f.snap_status.is_some());
        Metrics {
            n_fixes: self.fixes.len(),
            n_resolved: self.fixes.iter().filter(|f| f.status == FixStatus::Resolved).count(),
            pci: pci_metrics(&detected, &truth),
            error: ErrorStats::of(&errors),
            snapped_error: any_snap.then(|| ErrorStats::of(&snapped)),
            n_alerts: self.alerts.len(),
        }
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Runtime(format!("worker pool: {e}")))
}

/// Loads the template bank for `fe`, from `dir` (or the cache environment
/// variable) when a cached copy exists.
pub fn load_bank(fe: &FrontEndConfig, dir: Option<&Path>) -> Result<TemplateBank, HarnessError> {
    Ok(TemplateBank::load_or_build(fe, dir)?)
}

/// Same rounding a trace file applies.
fn quantize(mut b: RealBuffer) -> RealBuffer {
    b.samples.iter_mut().for_each(|v| *v = *v as f32 as f64);
    b
}

fn load_geometry(sc: &Scenario) -> Result<(Option<RoadGraph>, Option<GeofenceRegion>), HarnessError> {
    let graph = sc.road_graph.as_deref().map(|p| RoadGraph::from_csv_path(p, sc.origin)).transpose()?;
    let fence = sc.geofence.as_deref().map(GeofenceRegion::from_csv_path).transpose()?;
    Ok((graph, fence))
}

/// Full pipeline on an in-memory scenario. Fixes are synthesized and
/// detected in parallel; everything downstream runs in fix order, so the
/// report does not depend on `workers`.
pub fn run_eval(sc: &Scenario, bank: &TemplateBank, workers: usize) -> Result<RunReport, HarnessError> {
    bank.check_hash(&sc.front_end.template_hash())?;
    let (graph, fence) = load_geometry(sc)?;
    let per_fix: Vec<(FixTruth, Vec<Detection>)> = pool(workers)?.install(|| {
        (0..sc.trajectory.len())
            .into_par_iter()
            .map(|i| {
                let (buf, truth) = synth_fix(sc, i)?;
                let dets = detect_trace(&quantize(buf), sc.n_frames_per_fix, bank, &sc.detector)?;
                Ok((truth, dets))
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let plain: Vec<_> = sc.cells.iter().map(|(c, _)| c.clone()).collect();
    let db = CellDatabase::from_cells(&plain)?;
    let dets: Vec<Vec<Detection>> = per_fix.iter().map(|(_, d)| d.clone()).collect();
    let estimates = localize_all(&dets, &db, sc.solver, sc.front_end.adc_rate_hz, sc.front_end.frame_len());

    let resolved: Vec<usize> = (0..per_fix.len()).filter(|&i| estimates[i].estimate.is_some()).collect();
    let fixes: Vec<Fix> = resolved
        .iter()
        .map(|&i| Fix::new(per_fix[i].0.t, estimates[i].estimate.as_ref().unwrap().position))
        .collect();
    let detected: Vec<BTreeSet<Pci>> = resolved.iter().map(|&i| dets[i].iter().map(|d| d.pci).collect()).collect();
    let tracked = track(&fixes, graph.as_ref(), sc.snap_k, sc.snap_slack_m, fence.as_ref(), Some(&detected))?;

    let mut records = Vec::with_capacity(per_fix.len());
    let mut tracked_iter = resolved.iter().zip(&tracked.fixes).peekable();
    for (i, ((truth, d), est)) in per_fix.iter().zip(&estimates).enumerate() {
        let position = est.estimate.as_ref().map(|e| e.position);
        let mut snapped = None;
        let mut snap_status = None;
        if let Some((&j, f)) = tracked_iter.peek() {
            if j == i {
                if graph.is_some() {
                    snapped = f.snapped;
                    snap_status = Some(f.status);
                }
                tracked_iter.next();
            }
        }
        records.push(FixRecord {
            index: i,
            t: truth.t,
            truth_position: truth.position,
            truth_pcis: truth.pcis().into_iter().collect(),
            detections: d.clone(),
            status: est.status,
            n_towers: est.n_towers,
            estimate: position,
            objective: est.estimate.as_ref().map(|e| e.objective_value),
            error_m: position.map(|p| p.distance(truth.position)),
            snapped,
            snap_status,
            snapped_error_m: snapped.map(|p| p.distance(truth.position)),
            warnings: est.warnings.clone(),
        });
    }
    let alerts: Vec<GeofenceAlert> = tracked
        .alerts
        .iter()
        .map(|a| GeofenceAlert {
            fix_index: resolved[a.fix_index],
            ..*a
        })
        .collect();
    let mut report = RunReport {
        version: REPORT_VERSION,
        rng_seed: sc.rng_seed,
        frontend_hash: sc.front_end.template_hash(),
        mode: sc.detector.config.mode,
        solver: sc.solver,
        fixes: records,
        metrics: Metrics {
            n_fixes: 0,
            n_resolved: 0,
            pci: pci_metrics(&[], &[]),
            error: ErrorStats::of(&[]),
            snapped_error: None,
            n_alerts: 0,
        },
        alerts,
    };
    report.metrics = report.recompute_metrics();
    Ok(report)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<(), HarnessError>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>, HarnessError> {
    File::open(path).map(BufReader::new).map_err(|e| HarnessError::Validation {
        context: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Writes one trace per fix, `cells.csv`, and `manifest.json` into `out_dir`.
pub fn cmd_synth(scenario: &Path, out_dir: &Path, workers: usize) -> Result<Manifest, HarnessError> {
    let sc = Scenario::load(scenario)?;
    std::fs::create_dir_all(out_dir)?;
    let hash = sc.front_end.template_hash();
    let fixes: Vec<ManifestFix> = pool(workers)?.install(|| {
        (0..sc.trajectory.len())
            .into_par_iter()
            .map(|i| {
                let (buf, truth) = synth_fix(&sc, i)?;
                let name = format!("fix_{i:04}.trace");
                save_trace(&out_dir.join(&name), &buf, &hash)?;
                Ok(ManifestFix {
                    index: i,
                    t: truth.t,
                    trace: name,
                    truth,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let plain: Vec<_> = sc.cells.iter().map(|(c, _)| c.clone()).collect();
    let db = CellDatabase::from_cells(&plain)?;
    write_file(&out_dir.join("cells.csv"), |w| db.write(w))?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        rng_seed: sc.rng_seed,
        sample_rate_hz: sc.front_end.adc_rate_hz,
        frame_len: sc.front_end.frame_len(),
        n_frames_per_fix: sc.n_frames_per_fix,
        frontend_hash: hash,
        front_end: sc.front_end.clone(),
        detector: sc.detector.config.clone(),
        suppress_radius: sc.detector.suppress_radius,
        suppress_ratio: sc.detector.suppress_ratio,
        solver: sc.solver,
        origin: sc.origin,
        cells_csv: "cells.csv".into(),
        fixes,
    };
    write_file(&out_dir.join("manifest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default)]
pub struct DetectOptions {
    pub manifest: Option<PathBuf>,
    /// A single trace instead of a manifest.
    pub trace: Option<PathBuf>,
    /// Front end for a bare trace; defaults apply otherwise.
    pub scenario: Option<PathBuf>,
    pub n_frames: Option<usize>,
    pub mode: Option<CorrelationMode>,
    pub thresh_pss: Option<f64>,
    pub thresh_sss: Option<f64>,
    pub suppress_radius: Option<usize>,
    pub bank_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectSummary {
    pub n_fixes: usize,
    pub n_detections: usize,
    pub pci: Option<PciMetrics>,
}

pub fn cmd_detect(opts: &DetectOptions) -> Result<DetectSummary, HarnessError> {
    struct Job {
        index: usize,
        t: f64,
        path: PathBuf,
        truth: Option<BTreeSet<Pci>>,
    }
    let (fe, mut settings, n_frames, jobs) = match (&opts.manifest, &opts.trace) {
        (Some(m), None) => {
            let man = Manifest::load(m)?;
            let base = m.parent().unwrap_or(Path::new("."));
            let jobs = man
                .fixes
                .iter()
                .map(|f| Job {
                    index: f.index,
                    t: f.t,
                    path: base.join(&f.trace),
                    truth: Some(f.truth.pcis()),
                })
                .collect::<Vec<_>>();
            (man.front_end.clone(), man.detector_settings(), man.n_frames_per_fix, jobs)
        }
        (None, Some(t)) => {
            let (fe, settings, n) = match &opts.scenario {
                Some(s) => {
                    let sc = Scenario::load(s)?;
                    (sc.front_end.clone(), sc.detector.clone(), sc.n_frames_per_fix)
                }
                None => (FrontEndConfig::default(), DetectorSettings::for_mode(CorrelationMode::Plain), 1),
            };
            let jobs = vec![Job {
                index: 0,
                t: 0.0,
                path: t.clone(),
                truth: None,
            }];
            (fe, settings, n, jobs)
        }
        _ => {
            return Err(HarnessError::Validation {
                context: "detect".into(),
                msg: "give exactly one of --manifest or --trace".into(),
            })
        }
    };
    if let Some(mode) = opts.mode {
        if mode != settings.config.mode {
            let (radius, ratio) = (settings.suppress_radius, settings.suppress_ratio);
            settings = DetectorSettings::for_mode(mode);
            settings.suppress_radius = radius;
            settings.suppress_ratio = ratio;
        }
    }
    if let Some(v) = opts.thresh_pss {
        settings.config.thresh_pss = v;
    }
    if let Some(v) = opts.thresh_sss {
        settings.config.thresh_sss = v;
    }
    if let Some(v) = opts.suppress_radius {
        settings.suppress_radius = v;
    }
    settings.config.validate().map_err(|e| HarnessError::Validation {
        context: "detector flags".into(),
        msg: e.to_string(),
    })?;
    let n_frames = opts.n_frames.unwrap_or(n_frames);
    if n_frames == 0 {
        return Err(HarnessError::Validation {
            context: "--stack".into(),
            msg: "must be at least 1".into(),
        });
    }
    fe.validate()?;
    // Traces are read before the bank is built so bad inputs fail fast.
    let traces = jobs.iter().map(|j| load_trace(&j.path)).collect::<Result<Vec<_>, _>>()?;
    let bank = load_bank(&fe, opts.bank_dir.as_deref())?;
    for t in &traces {
        bank.check_hash(&t.frontend_hash)?;
    }
    let found: Vec<Vec<Detection>> = pool(opts.workers)?.install(|| {
        traces
            .par_iter()
            .map(|t| detect_trace(&t.buffer, n_frames, &bank, &settings))
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let rows: Vec<FixDetections> = jobs
        .iter()
        .zip(&found)
        .map(|(j, d)| FixDetections {
            fix: j.index,
            t: j.t,
            detections: d.clone(),
        })
        .collect();
    write_file(&opts.out, |w| io::write_detections(w, &rows))?;
    let pci = jobs.iter().all(|j| j.truth.is_some()).then(|| {
        let detected: Vec<BTreeSet<Pci>> = found.iter().map(|d| d.iter().map(|x| x.pci).collect()).collect();
        let truth: Vec<BTreeSet<Pci>> = jobs.iter().map(|j| j.truth.clone().unwrap()).collect();
        pci_metrics(&detected, &truth)
    });
    Ok(DetectSummary {
        n_fixes: jobs.len(),
        n_detections: found.iter().map(Vec::len).sum(),
        pci,
    })
}

#[derive(Debug, Clone, Default)]
pub struct LocalizeOptions {
    pub detections: PathBuf,
    pub cells: PathBuf,
    pub method: Option<Method>,
    /// Supplies fix times, ground truth, sample rate, and the solver default.
    pub manifest: Option<PathBuf>,
    pub sample_rate_hz: Option<f64>,
    pub origin: Option<(f64, f64)>,
    pub out: PathBuf,
    pub cdf: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeSummary {
    pub n_fixes: usize,
    pub n_resolved: usize,
    pub error: Option<ErrorStats>,
}

pub fn cmd_localize(opts: &LocalizeOptions) -> Result<LocalizeSummary, HarnessError> {
    let manifest = opts.manifest.as_deref().map(Manifest::load).transpose()?;
    let origin = opts.origin.or(manifest.as_ref().and_then(|m| m.origin));
    let db = CellDatabase::load(&opts.cells, origin)?;
    let found = io::read_detections(open(&opts.detections)?, &opts.detections.display().to_string())?;
    let fs = opts
        .sample_rate_hz
        .or(manifest.as_ref().map(|m| m.sample_rate_hz))
        .unwrap_or(crate::lte::BASE_SAMPLE_RATE_HZ);
    if !(fs > 0.0) {
        return Err(HarnessError::Validation {
            context: "--sample-rate".into(),
            msg: "must be positive".into(),
        });
    }
    let method = opts.method.or(manifest.as_ref().map(|m| m.solver)).unwrap_or_default();
    let frame_len = (fs * FRAME_DURATION_S).round() as usize;

    // (fix, t, truth position)
    let fixes: Vec<(usize, f64, Option<Point>)> = match &manifest {
        Some(m) => m.fixes.iter().map(|f| (f.index, f.t, Some(f.truth.position))).collect(),
        None => found.iter().map(|f| (f.fix, f.t, None)).collect(),
    };
    let per_fix: Vec<Vec<Detection>> = fixes
        .iter()
        .map(|(i, _, _)| found.iter().find(|f| f.fix == *i).map(|f| f.detections.clone()).unwrap_or_default())
        .collect();
    let estimates = localize_all(&per_fix, &db, method, fs, frame_len);
    let rows: Vec<TrajectoryRow> = fixes
        .iter()
        .zip(&estimates)
        .map(|((i, t, truth), e)| {
            let p = e.estimate.as_ref().map(|x| x.position);
            for w in &e.warnings {
                log::warn!("fix {i}: {w}");
            }
            TrajectoryRow {
                fix: *i,
                t: *t,
                estimate: p,
                objective: e.estimate.as_ref().map(|x| x.objective_value),
                n_towers: e.n_towers,
                status: e.status,
                error_m: p.zip(*truth).map(|(a, b)| a.distance(b)),
            }
        })
        .collect();
    write_file(&opts.out, |w| io::write_trajectory(w, &rows))?;
    let errors: Vec<f64> = rows.iter().filter_map(|r| r.error_m).collect();
    if let Some(c) = &opts.cdf {
        write_file(c, |w| io::write_cdf(w, &errors))?;
    }
    Ok(LocalizeSummary {
        n_fixes: rows.len(),
        n_resolved: rows.iter().filter(|r| r.status == FixStatus::Resolved).count(),
        error: manifest.is_some().then(|| ErrorStats::of(&errors)),
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrackOptions {
    pub trajectory: PathBuf,
    pub roads: Option<PathBuf>,
    pub geofence: Option<PathBuf>,
    /// Detected PCI sets for allow-list geofences.
    pub detections: Option<PathBuf>,
    pub origin: Option<(f64, f64)>,
    pub k: usize,
    /// Extra snapping reachability radius, meters.
    pub slack_m: f64,
    pub out: PathBuf,
    pub alerts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub n_fixes: usize,
    pub n_snapped: usize,
    pub alerts: Vec<GeofenceAlert>,
}

pub fn cmd_track(opts: &TrackOptions) -> Result<TrackSummary, HarnessError> {
    let rows = io::read_trajectory(open(&opts.trajectory)?, &opts.trajectory.display().to_string())?;
    let graph = opts.roads.as_deref().map(|p| RoadGraph::from_csv_path(p, opts.origin)).transpose()?;
    let fence = opts.geofence.as_deref().map(GeofenceRegion::from_csv_path).transpose()?;
    let found = opts
        .detections
        .as_deref()
        .map(|p| -> Result<_, HarnessError> { io::read_detections(open(p)?, &p.display().to_string()) })
        .transpose()?;
    let kept: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.estimate.is_some()).collect();
    let ids: Vec<usize> = kept.iter().map(|r| r.fix).collect();
    let fixes: Vec<Fix> = kept.iter().map(|r| Fix::new(r.t, r.estimate.unwrap())).collect();
    let detected: Option<Vec<BTreeSet<Pci>>> = found.map(|f| {
        ids.iter()
            .map(|i| f.iter().find(|x| x.fix == *i).map(|x| x.detections.iter().map(|d| d.pci).collect()).unwrap_or_default())
            .collect()
    });
    let out = track(&fixes, graph.as_ref(), opts.k.max(1), opts.slack_m, fence.as_ref(), detected.as_deref())?;
    write_file(&opts.out, |w| io::write_snapped(w, &ids, &out.fixes))?;
    if let Some(a) = &opts.alerts {
        write_file(a, |w| io::write_alerts(w, &ids, &out.alerts))?;
    }
    Ok(TrackSummary {
        n_fixes: out.fixes.len(),
        n_snapped: out.fixes.iter().filter(|f| f.snapped.is_some()).count(),
        alerts: out
            .alerts
            .iter()
            .map(|a| GeofenceAlert {
                fix_index: ids[a.fix_index],
                ..*a
            })
            .collect(),
    })
}

/// Runs the whole pipeline for a scenario file and writes the report JSON.
pub fn cmd_eval(scenario: &Path, out: Option<&Path>, workers: usize, bank_dir: Option<&Path>) -> Result<RunReport, HarnessError> {
    let sc = Scenario::load(scenario)?;
    let bank = load_bank(&sc.front_end, bank_dir)?;
    let report = run_eval(&sc, &bank, workers)?;
    if let Some(p) = out {
        let json = report.to_json()?;
        write_file(p, |w| Ok(w.write_all(json.as_bytes())?))?;
    }
    Ok(report)
}
