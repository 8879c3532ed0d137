use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use foldloc::detect::CorrelationMode;
use foldloc::harness::report::{cmd_detect, cmd_eval, cmd_localize, cmd_synth, cmd_track, DetectOptions, LocalizeOptions, TrackOptions};
use foldloc::harness::HarnessError;
use foldloc::locate::Method;

/// Envelope-detector LTE cell identification and localization harness.
#[derive(Parser)]
#[command(name = "foldloc", version)]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct DetectorFlags {
    /// Correlation mode: plain | phat.
    #[arg(long)]
    mode: Option<CorrelationMode>,
    /// Stage-1 (folded PSS) threshold.
    #[arg(long)]
    thresh_pss: Option<f64>,
    /// Stage-2 (full template) threshold.
    #[arg(long)]
    thresh_sss: Option<f64>,
    /// Frames to stack per fix.
    #[arg(long)]
    stack: Option<usize>,
    /// Delay radius of false-positive clustering.
    #[arg(long)]
    suppress_radius: Option<usize>,
    /// Template bank cache directory.
    #[arg(long, env = "FOLDLOC_BANK_DIR")]
    bank_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render per-fix detector traces and a manifest from a scenario.
    Synth {
        scenario: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Detect cells in traces; writes a detections CSV.
    Detect {
        /// Manifest written by `synth`.
        #[arg(long, conflicts_with = "trace", required_unless_present = "trace")]
        manifest: Option<PathBuf>,
        /// A single trace file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Scenario supplying the front end for a bare trace.
        #[arg(long, requires = "trace")]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        flags: DetectorFlags,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Position fixes from detections and a cell database.
    Localize {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        cells: PathBuf,
        /// Solver: tdoa | ratio.
        #[arg(long)]
        method: Option<Method>,
        /// Manifest with fix times and ground truth.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        sample_rate: Option<f64>,
        /// Error CDF table (needs --manifest).
        #[arg(long)]
        cdf: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Snap a trajectory to roads and evaluate a geofence.
    Track {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        roads: Option<PathBuf>,
        #[arg(long)]
        geofence: Option<PathBuf>,
        /// Detections CSV, for PCI allow-list geofences.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Candidates per fix.
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Extra reachability radius (m) absorbing fix noise when snapping.
        #[arg(long, default_value_t = 0.0)]
        slack: f64,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        alerts: Option<PathBuf>,
    },
    /// Run the whole pipeline on a scenario and write the run report.
    Eval {
        scenario: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, env = "FOLDLOC_BANK_DIR")]
        bank_dir: Option<PathBuf>,
    },
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let workers = cli.workers;
    match cli.cmd {
        Cmd::Synth { scenario, out } => {
            let m = cmd_synth(&scenario, &out, workers)?;
            println!("wrote {} traces and manifest.json to {}", m.fixes.len(), out.display());
        }
        Cmd::Detect {
            manifest,
            trace,
            scenario,
            flags,
            out,
        } => {
            let s = cmd_detect(&DetectOptions {
                manifest,
                trace,
                scenario,
                n_frames: flags.stack,
                mode: flags.mode,
                thresh_pss: flags.thresh_pss,
                thresh_sss: flags.thresh_sss,
                suppress_radius: flags.suppress_radius,
                bank_dir: flags.bank_dir,
                out: out.clone(),
                workers,
            })?;
            println!("{} detections over {} fixes -> {}", s.n_detections, s.n_fixes, out.display());
            if let Some(p) = s.pci {
                println!("precision {} recall {}", fmt_opt(p.precision), fmt_opt(p.recall));
            }
        }
        Cmd::Localize {
            detections,
            cells,
            method,
            manifest,
            sample_rate,
            cdf,
            out,
        } => {
            let s = cmd_localize(&LocalizeOptions {
                detections,
                cells,
                method,
                manifest,
                sample_rate_hz: sample_rate,
                origin: None,
                out: out.clone(),
                cdf,
            })?;
            println!("{}/{} fixes resolved -> {}", s.n_resolved, s.n_fixes, out.display());
            if let Some(e) = s.error {
                println!("error p50 {} m, p90 {} m", fmt_opt(e.p50), fmt_opt(e.p90));
            }
        }
        Cmd::Track {
            trajectory,
            roads,
            geofence,
            detections,
            k,
            slack,
            out,
            alerts,
        } => {
            let s = cmd_track(&TrackOptions {
                trajectory,
                roads,
                geofence,
                detections,
                origin: None,
                k,
                slack_m: slack,
                out: out.clone(),
                alerts,
            })?;
            println!("{} fixes ({} snapped), {} alerts -> {}", s.n_fixes, s.n_snapped, s.alerts.len(), out.display());
        }
        Cmd::Eval { scenario, out, bank_dir } => {
            let r = cmd_eval(&scenario, out.as_deref(), workers, bank_dir.as_deref())?;
            let m = &r.metrics;
            println!(
                "fixes {} resolved {} | pci precision {} recall {} | error p50 {} m p90 {} m | alerts {}",
                m.n_fixes,
                m.n_resolved,
                fmt_opt(m.pci.precision),
                fmt_opt(m.pci.recall),
                fmt_opt(m.error.p50),
                fmt_opt(m.error.p90),
                m.n_alerts
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
