//! Scenario files (TOML).
//!
//! ```toml
//! rng_seed = 7
//! n_frames_per_fix = 10
//! solver = "tdoa"                 # tdoa | ratio
//! timing_jitter_samples = 0.0     # per-cell, per-fix frame-origin jitter (std, samples)
//! origin = { lat = 47.37, lon = 8.54 }   # optional; enables lat/lon inputs
//! road_graph = "roads.csv"        # optional, relative to this file
//! geofence = "fence.csv"          # optional
//! snap_k = 5                      # road candidates per fix
//! snap_slack_m = 0.0              # extra reachability radius absorbing fix noise
//! synth_path = "auto"             # auto | baseband | rf
//!
//! [front_end]                     # any FrontEndConfig field
//! noise_sigma = 0.0
//!
//! [detector]
//! mode = "plain"                  # plain | phat
//!
//! [[cells]]
//! pci = 12
//! x = 0.0
//! y = 0.0
//! carrier_hz = 7.4e8
//! bandwidth_mhz = 1.4
//! tx_power_dbm = 43.0
//!
//! [trajectory]
//! points = [[0.0, 500.0, 400.0], [1.0, 510.0, 400.0]]   # t, x, y
//! # or: static = [500.0, 400.0], n_fixes = 3, interval_s = 1.0
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::channel::{CellConfig, FrontEndConfig, MultipathProfile, SynthPath, Tap};
use crate::detect::{CorrelationMode, DetectorConfig};
use crate::geom::{latlon_to_local, Point};
use crate::locate::Method;
use crate::lte::{Bandwidth, CyclicPrefix, DataMode, Pci};

use super::HarnessError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    rng_seed: u64,
    #[serde(default = "one")]
    n_frames_per_fix: usize,
    #[serde(default)]
    solver: Method,
    #[serde(default)]
    timing_jitter_samples: f64,
    #[serde(default)]
    origin: Option<RawOrigin>,
    #[serde(default)]
    road_graph: Option<PathBuf>,
    #[serde(default)]
    geofence: Option<PathBuf>,
    #[serde(default = "five")]
    snap_k: usize,
    #[serde(default)]
    snap_slack_m: f64,
    #[serde(default)]
    synth_path: RawPath,
    #[serde(default)]
    front_end: FrontEndConfig,
    #[serde(default)]
    detector: RawDetector,
    #[serde(default)]
    cells: Vec<RawCell>,
    trajectory: RawTrajectory,
}

fn one() -> usize {
    1
}
fn five() -> usize {
    5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOrigin {
    lat: f64,
    lon: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawPath {
    #[default]
    Auto,
    Baseband,
    Rf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetector {
    #[serde(default)]
    mode: CorrelationMode,
    thresh_pss: Option<f64>,
    thresh_sss: Option<f64>,
    window: Option<usize>,
    max_candidates: Option<usize>,
    suppress_radius: Option<usize>,
    suppress_ratio: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    pci: i64,
    x: Option<f64>,
    y: Option<f64>,
    lat: Option<f64>,
    lon: Option<f64>,
    carrier_hz: f64,
    sim_carrier_hz: Option<f64>,
    bandwidth_mhz: f64,
    #[serde(default)]
    tx_power_dbm: f64,
    #[serde(default)]
    frame_time_origin_s: f64,
    #[serde(default)]
    data: DataMode,
    #[serde(default)]
    cp: CyclicPrefix,
    #[serde(default)]
    multipath: Option<Vec<Tap>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectory {
    points: Option<Vec<[f64; 3]>>,
    #[serde(rename = "static")]
    fixed: Option<[f64; 2]>,
    n_fixes: Option<usize>,
    interval_s: Option<f64>,
}

/// Detector settings of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSettings {
    pub config: DetectorConfig,
    /// Delay radius for false-positive suppression.
    pub suppress_radius: usize,
    /// Cluster members at or above this fraction of the cluster's largest
    /// amplitude survive suppression.
    pub suppress_ratio: f64,
}

impl DetectorSettings {
    pub fn for_mode(mode: CorrelationMode) -> Self {
        Self {
            config: DetectorConfig::for_mode(mode),
            suppress_radius: DEFAULT_SUPPRESS_RADIUS,
            suppress_ratio: DEFAULT_SUPPRESS_RATIO,
        }
    }
}

pub const DEFAULT_SUPPRESS_RADIUS: usize = 1;
pub const DEFAULT_SUPPRESS_RATIO: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Scenario {
    pub rng_seed: u64,
    pub n_frames_per_fix: usize,
    pub solver: Method,
    pub timing_jitter_samples: f64,
    pub origin: Option<(f64, f64)>,
    pub road_graph: Option<PathBuf>,
    pub geofence: Option<PathBuf>,
    pub snap_k: usize,
    /// Extra reachability radius for snapping noisy fixes, meters.
    pub snap_slack_m: f64,
    pub synth_path: SynthPath,
    pub front_end: FrontEndConfig,
    pub detector: DetectorSettings,
    pub cells: Vec<(CellConfig, MultipathProfile)>,
    /// (t, receiver position), strictly increasing in t.
    pub trajectory: Vec<(f64, Point)>,
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> HarnessError {
    HarnessError::Validation {
        context: field.into(),
        msg: msg.into(),
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, &path.display().to_string(), base)
    }

    /// Parses and validates; relative file references resolve against `base`.
    pub fn from_toml_str(text: &str, name: &str, base: &Path) -> Result<Self, HarnessError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| invalid(name, e.to_string().trim_end()))?;
        let at = |field: &str| format!("{name}: {field}");

        if raw.cells.is_empty() {
            return Err(invalid(at("cells"), "scenario needs at least one cell"));
        }
        if raw.n_frames_per_fix == 0 {
            return Err(invalid(at("n_frames_per_fix"), "must be at least 1"));
        }
        if !(raw.timing_jitter_samples >= 0.0) || !raw.timing_jitter_samples.is_finite() {
            return Err(invalid(at("timing_jitter_samples"), "must be finite and >= 0"));
        }
        if raw.snap_k == 0 {
            return Err(invalid(at("snap_k"), "must be at least 1"));
        }
        if !(raw.snap_slack_m >= 0.0) || !raw.snap_slack_m.is_finite() {
            return Err(invalid(at("snap_slack_m"), "must be finite and >= 0"));
        }
        raw.front_end.validate().map_err(|e| invalid(at("front_end"), e.to_string()))?;
        let origin = raw.origin.as_ref().map(|o| (o.lat, o.lon));
        if let Some((lat, lon)) = origin {
            if !(lat.abs() <= 90.0 && lon.abs() <= 180.0) {
                return Err(invalid(at("origin"), "lat/lon out of range"));
            }
        }

        let mut det = DetectorSettings::for_mode(raw.detector.mode);
        let d = &raw.detector;
        if let Some(v) = d.thresh_pss {
            det.config.thresh_pss = v;
        }
        if let Some(v) = d.thresh_sss {
            det.config.thresh_sss = v;
        }
        if let Some(v) = d.window {
            det.config.window = v;
        }
        if let Some(v) = d.max_candidates {
            det.config.max_candidates = v;
        }
        if let Some(v) = d.suppress_radius {
            det.suppress_radius = v;
        }
        if let Some(v) = d.suppress_ratio {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(at("detector.suppress_ratio"), "must lie in (0, 1]"));
            }
            det.suppress_ratio = v;
        }
        det.config.validate().map_err(|e| invalid(at("detector"), e.to_string()))?;

        let mut cells = Vec::with_capacity(raw.cells.len());
        for (i, c) in raw.cells.iter().enumerate() {
            let f = |field: &str| at(&format!("cells[{i}].{field}"));
            let pci = u16::try_from(c.pci)
                .ok()
                .and_then(|v| Pci::new(v).ok())
                .ok_or_else(|| invalid(f("pci"), format!("{} is outside 0..=503", c.pci)))?;
            let position = match (c.x, c.y, c.lat, c.lon) {
                (Some(x), Some(y), None, None) => Point::new(x, y),
                (None, None, Some(lat), Some(lon)) => {
                    let (olat, olon) = origin.ok_or_else(|| invalid(f("lat"), "lat/lon cells need a scenario origin"))?;
                    latlon_to_local(lat, lon, olat, olon)
                }
                _ => return Err(invalid(f("x"), "give either x and y, or lat and lon")),
            };
            if !position.is_finite() {
                return Err(invalid(f("x"), "position must be finite"));
            }
            let bandwidth = Bandwidth::from_mhz(c.bandwidth_mhz)
                .map_err(|_| invalid(f("bandwidth_mhz"), format!("{} is not one of 1.4, 3, 5, 10, 15, 20", c.bandwidth_mhz)))?;
            let mut cell = CellConfig::new(pci, c.carrier_hz, bandwidth, position);
            cell.sim_carrier_hz = c.sim_carrier_hz;
            cell.tx_power_dbm = c.tx_power_dbm;
            cell.frame_time_origin_s = c.frame_time_origin_s;
            cell.data = c.data;
            cell.cp = c.cp;
            cell.validate().map_err(|e| invalid(f("carrier_hz"), e.to_string()))?;
            let mp = match &c.multipath {
                Some(taps) => MultipathProfile { taps: taps.clone() },
                None => MultipathProfile::los(),
            };
            mp.validate().map_err(|e| invalid(f("multipath"), e.to_string()))?;
            cells.push((cell, mp));
        }
        let plain: Vec<CellConfig> = cells.iter().map(|(c, _)| c.clone()).collect();
        crate::channel::check_distinct_cells(&plain).map_err(|e| invalid(at("cells"), e.to_string()))?;

        let t = &raw.trajectory;
        let trajectory: Vec<(f64, Point)> = match (&t.points, &t.fixed) {
            (Some(pts), None) => {
                if t.n_fixes.is_some() || t.interval_s.is_some() {
                    return Err(invalid(at("trajectory"), "n_fixes/interval_s only apply to a static trajectory"));
                }
                pts.iter().map(|p| (p[0], Point::new(p[1], p[2]))).collect()
            }
            (None, Some(p)) => {
                let n = t.n_fixes.unwrap_or(1);
                let dt = t.interval_s.unwrap_or(1.0);
                if n == 0 || !(dt > 0.0) {
                    return Err(invalid(at("trajectory"), "n_fixes must be >= 1 and interval_s > 0"));
                }
                (0..n).map(|i| (i as f64 * dt, Point::new(p[0], p[1]))).collect()
            }
            _ => return Err(invalid(at("trajectory"), "give exactly one of 'points' or 'static'")),
        };
        if trajectory.is_empty() {
            return Err(invalid(at("trajectory.points"), "needs at least one point"));
        }
        for (i, (ti, p)) in trajectory.iter().enumerate() {
            if !ti.is_finite() || !p.is_finite() {
                return Err(invalid(at(&format!("trajectory.points[{i}]")), "values must be finite"));
            }
        }
        if let Some(i) = trajectory.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(invalid(
                at(&format!("trajectory.points[{}]", i + 1)),
                "times must be strictly increasing",
            ));
        }

        let synth_path = match raw.synth_path {
            RawPath::Auto => SynthPath::Auto,
            RawPath::Baseband => SynthPath::Baseband,
            RawPath::Rf => SynthPath::Rf {
                oversample_rate_hz: crate::channel::DEFAULT_RF_RATE_HZ,
            },
        };
        Ok(Self {
            rng_seed: raw.rng_seed,
            n_frames_per_fix: raw.n_frames_per_fix,
            solver: raw.solver,
            timing_jitter_samples: raw.timing_jitter_samples,
            origin,
            road_graph: raw.road_graph.map(|p| base.join(p)),
            geofence: raw.geofence.map(|p| base.join(p)),
            snap_k: raw.snap_k,
            snap_slack_m: raw.snap_slack_m,
            synth_path,
            front_end: raw.front_end,
            detector: det,
            cells,
            trajectory,
        })
    }

    /// Samples per fix trace.
    pub fn samples_per_fix(&self) -> usize {
        self.front_end.frame_len() * self.n_frames_per_fix
    }
}
