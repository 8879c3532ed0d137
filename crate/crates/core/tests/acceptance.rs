//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run one subset with `cargo test --test acceptance -- ac4 ac7`.
//!
//! Every threshold is pinned below; oracles are computed here independently
//! of the library wherever the library would otherwise grade itself.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;

use foldloc::amplitude::{detection_segments, detection_subsample, fit_amplitude, iterative_separation, SeparationOptions};
use foldloc::buffer::RealBuffer;
use foldloc::channel::{
    add_receiver_impairments, fold_periodic_frame, synthesize_detector_output, CellConfig, FrontEndConfig, MultipathProfile, Spur,
    SynthPath, SPEED_OF_LIGHT,
};
use foldloc::detect::{hierarchical_detect, identify_top1, stack_frames, CorrelationMode, Detection, DetectorConfig, TemplateBank};
use foldloc::geom::Point;
use foldloc::harness::pipeline::detect_trace;
use foldloc::harness::scenario::{DetectorSettings, DEFAULT_SUPPRESS_RADIUS};
use foldloc::harness::{run_eval, Scenario};
use foldloc::locate::{solve_tdoa, trilaterate_ratio, TowerObservation};
use foldloc::lte::{ofdm_modulate, Bandwidth, DataMode, FrameConfig, Pci, PssIndex, ResourceGrid, Subframe, BASE_FFT_SIZE, SYNC_LEN};
use foldloc::route::{geofence_events, snap_trajectory, Edge, FenceEvent, FenceMode, Fix, GeofenceRegion, RoadGraph, SnapStatus};

// AC1
const FOLD_MERGE_MIN: f64 = 0.999;
const FOLD_CROSS_BAND: (f64, f64) = (0.80, 0.90);
const FOLD_ORACLE_TOL: f64 = 0.02;
const AC1_BUDGET_S: f64 = 1.0;
// AC2
const AC2_BUDGET_S: f64 = 120.0;
// AC4
const AC4_TRIALS: usize = 200;
const AC4_STACK: usize = 100;
const AC4_SINGLE_MAX: f64 = 0.5;
const AC4_STACKED_MIN: f64 = 0.9;
// AC5
const AC5_SET: usize = 25;
const AC5_TRIALS: usize = 50;
const AC5_STACK: usize = 10;
const AC5_SPUR_GAIN: f64 = 10.0;
// AC6: targets 0.99 / 0.90 less an absolute 0.03 tolerance
const AC6_TRIALS: usize = 200;
const AC6_PRECISION_MIN: f64 = 0.99 - 0.03;
const AC6_ACCURACY_MIN: f64 = 0.90 - 0.03;
// AC7
const AC7_SNR_DB: f64 = 10.0;
const AC7_SEEDS: usize = 5;
const AC7_FINE_MAX: f64 = 0.05;
const AC7_TOTAL_MAX: f64 = 0.1;
// AC8
const AC8_TRIALS: usize = 50;
const AC8_MIX_TOL: f64 = 0.10;
const AC8_SINGLE_TOL: f64 = 1e-6;
// AC9
const AC9_TRIALS: usize = 200;
const AC9_TDOA_P50_MAX_M: f64 = 1.0;
const AC9_RATIO_FRACTION: f64 = 0.005;
const AC9_BIAS_TOL_M: f64 = 1e-6;
// AC10
const AC10_P50_MAX_M: f64 = 10.0;
const AC10_SOFT_TARGET_M: f64 = 4.0;
// AC11
const AC11_SCENARIOS: usize = 10;
const AC11_PIP_POINTS: usize = 1000;
// AC12
const AC12_WORKERS: usize = 4;

const FS: f64 = 1.92e6;
const FRAME: usize = 19_200;
const RANGE_M: f64 = 100.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn bank_dir() -> PathBuf {
    std::env::var_os("FOLDLOC_BANK_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("foldloc-acceptance-bank"))
}

fn bank() -> &'static TemplateBank {
    static BANK: OnceLock<TemplateBank> = OnceLock::new();
    BANK.get_or_init(|| TemplateBank::load_or_build(&FrontEndConfig::default(), Some(&bank_dir())).expect("template bank"))
}

fn pci(v: u16) -> Pci {
    Pci::new(v).unwrap()
}

/// A cell whose frame arrives `delay` ADC samples after the receiver's frame
/// boundary (receiver at the origin, tower `RANGE_M` away).
fn cell_at(p: Pci, bw: Bandwidth, carrier_hz: f64, delay: f64, data: DataMode) -> CellConfig {
    let mut c = CellConfig::new(p, carrier_hz, bw, Point::new(RANGE_M, 0.0));
    c.frame_time_origin_s = delay / FS - RANGE_M / SPEED_OF_LIGHT;
    c.data = data;
    c
}

fn render(cells: &[CellConfig], fe: &FrontEndConfig, start: usize, n: usize, seed: u64) -> RealBuffer {
    let cm: Vec<(CellConfig, MultipathProfile)> = cells.iter().map(|c| (c.clone(), MultipathProfile::los())).collect();
    synthesize_detector_output(&cm, Point::new(0.0, 0.0), fe, start as i64, n, SynthPath::Auto, seed).expect("synthesis")
}

/// `n_frames` consecutive frames, rendered in chunks to bound memory.
fn render_frames(cells: &[CellConfig], fe: &FrontEndConfig, n_frames: usize, seed: u64) -> RealBuffer {
    const CHUNK: usize = 10;
    let mut samples = Vec::with_capacity(n_frames * FRAME);
    let mut f = 0;
    while f < n_frames {
        let k = CHUNK.min(n_frames - f);
        samples.extend(render(cells, fe, f * FRAME, k * FRAME, seed).samples);
        f += k;
    }
    RealBuffer::new(FS, samples)
}

fn std_dev(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Uncentred normalized correlation; the squared envelope's DC term is part
/// of the waveform and is kept.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a) * dot(b, b)).sqrt()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- AC1

/// Zadoff-Chu root `u`, written out from the definition.
fn zc(u: f64) -> Vec<Complex64> {
    (0..SYNC_LEN)
        .map(|n| {
            let n = n as f64;
            let m = if n < 31.0 { n * (n + 1.0) } else { (n + 1.0) * (n + 2.0) };
            Complex64::from_polar(1.0, -std::f64::consts::PI * u * m / 63.0)
        })
        .collect()
}

/// Oracle fold: one periodic OFDM symbol, squared, brick-wall low-passed at
/// the front-end cutoff, sampled at the ADC rate.
fn oracle_folded_pss(root: f64, fe: &FrontEndConfig) -> Vec<f64> {
    let os = fe.baseband_oversample;
    let n = BASE_FFT_SIZE * os;
    let mut sym = vec![Complex64::new(0.0, 0.0); n];
    for (i, v) in zc(root).into_iter().enumerate() {
        let k = i as isize - 31;
        let bin = if k < 0 { (n as isize + k) as usize } else { (k + 1) as usize };
        sym[bin] = v;
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut sym);
    let mut sq: Vec<Complex64> = sym.iter().map(|v| Complex64::new(v.norm_sqr(), 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut sq);
    let df = FS * os as f64 / n as f64;
    for (k, v) in sq.iter_mut().enumerate() {
        let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 } * df;
        if f.abs() > fe.lpf_cutoff_hz {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut sq);
    sq.iter().step_by(os).map(|v| v.re).collect()
}

/// Library fold of a PSS-only frame; returns the PSS symbol (CP dropped).
fn library_folded_pss(sector: u8, fe: &FrontEndConfig) -> Vec<f64> {
    let os = fe.baseband_oversample;
    let cfg = FrameConfig::new(Bandwidth::Mhz1_4).with_fft_size(BASE_FFT_SIZE * os);
    let mut grid = ResourceGrid::empty(cfg);
    let pss = foldloc::lte::generate_pss(PssIndex::new(sector).unwrap());
    let half = cfg.n_subcarriers() / 2;
    for sf in [Subframe::Zero, Subframe::Five] {
        let (_, l) = cfg.sync_symbols(sf);
        for (i, v) in pss.iter().enumerate() {
            grid.set(i + half - 31, l, *v);
        }
    }
    let frame = ofdm_modulate(&grid);
    let folded = fold_periodic_frame(&frame, BASE_FFT_SIZE, fe).unwrap();
    let (_, l) = cfg.sync_symbols(Subframe::Zero);
    let start = (cfg.symbol_start(l) + cfg.cp_len(l)) / os;
    folded.samples[start..start + BASE_FFT_SIZE].to_vec()
}

fn ac1() -> Outcome {
    let t0 = Instant::now();
    let fe = FrontEndConfig::default();
    let lib: Vec<Vec<f64>> = (0..3).map(|s| library_folded_pss(s, &fe)).collect();
    let merge = cosine(&lib[1], &lib[2]);
    let cross = cosine(&lib[0], &lib[1]);
    let elapsed = t0.elapsed().as_secs_f64();
    let orc: Vec<Vec<f64>> = [25.0, 29.0, 34.0].iter().map(|&u| oracle_folded_pss(u, &fe)).collect();
    let o_merge = cosine(&orc[1], &orc[2]);
    let o_cross = cosine(&orc[0], &orc[1]);
    let pass = merge >= FOLD_MERGE_MIN
        && (FOLD_CROSS_BAND.0..=FOLD_CROSS_BAND.1).contains(&cross)
        && (merge - o_merge).abs() <= FOLD_ORACLE_TOL
        && (cross - o_cross).abs() <= FOLD_ORACLE_TOL
        && elapsed < AC1_BUDGET_S;
    outcome(
        pass,
        format!(
            "corr(29,34) = {merge:.5} (>= {FOLD_MERGE_MIN}; oracle {o_merge:.5}), corr(25,29) = {cross:.4} (in [{}, {}]; oracle {o_cross:.4}), {elapsed:.3} s (< {AC1_BUDGET_S} s)",
            FOLD_CROSS_BAND.0, FOLD_CROSS_BAND.1
        ),
    )
}

// ---------------------------------------------------------------- AC2

fn ac2() -> Outcome {
    let b = bank();
    let t0 = Instant::now();
    let n = b.templates.len();
    let mut diag_err = 0.0f64;
    let mut global = (f64::NEG_INFINITY, 0usize, 0usize);
    let mut strict = true;
    let mut rows_at_4 = 0;
    for i in 0..n {
        let a = &b.templates[i].samples;
        let mut row_max = (f64::NEG_INFINITY, 0usize);
        let mut diag = 0.0;
        for j in 0..n {
            let c: f64 = a.iter().zip(&b.templates[j].samples).map(|(x, y)| x * y).sum();
            if i == j {
                diag = c;
                continue;
            }
            if c > row_max.0 {
                row_max = (c, j);
            }
            if c > global.0 {
                global = (c, i, j);
            }
        }
        diag_err = diag_err.max((diag - 1.0).abs());
        strict &= diag > row_max.0;
        if row_max.1.abs_diff(i) == 4 {
            rows_at_4 += 1;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let dist = global.1.abs_diff(global.2);
    let pass = diag_err < 1e-12 && dist == 4 && strict && elapsed < AC2_BUDGET_S;
    outcome(
        pass,
        format!(
            "{n}x{n}: |diag - 1| <= {diag_err:.1e}, max off-diagonal {:.4} at PCIs ({}, {}) distance {dist}, row argmax at distance 4 in {rows_at_4}/{n} rows, diagonal strictly dominant: {strict}, {elapsed:.1} s (< {AC2_BUDGET_S} s)",
            global.0, global.1, global.2
        ),
    )
}

// ---------------------------------------------------------------- AC3

fn ac3() -> Outcome {
    let b = bank();
    let fe = FrontEndConfig::default();
    let cfg = DetectorConfig::for_mode(CorrelationMode::Plain);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut correct = 0;
    let mut misses = Vec::new();
    for p in Pci::all() {
        let d = rng.gen_range(0..FRAME);
        let x = render(&[cell_at(p, Bandwidth::Mhz1_4, 7.0e8, d as f64, DataMode::None)], &fe, 0, FRAME, 0);
        let top = hierarchical_detect(&x, b, &cfg).unwrap().detections.into_iter().next();
        match top {
            Some(t) if t.pci == p && t.delay_samples == d => correct += 1,
            other => misses.push((p.value(), other.map(|t| (t.pci.value(), t.delay_samples)))),
        }
    }
    let acc = correct as f64 / Pci::COUNT as f64;
    outcome(
        acc == 1.0,
        format!("hierarchical plain top-1 (PCI and delay) {correct}/{} = {acc:.4} (= 1.0){}", Pci::COUNT, fmt_misses(&misses)),
    )
}

fn fmt_misses<T: std::fmt::Debug>(m: &[T]) -> String {
    if m.is_empty() {
        String::new()
    } else {
        format!("; first misses {:?}", &m[..m.len().min(5)])
    }
}

// ---------------------------------------------------------------- AC4

fn ac4() -> Outcome {
    let b = bank();
    let fe = FrontEndConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut single, mut stacked) = (0, 0);
    for trial in 0..AC4_TRIALS {
        let p = pci(rng.gen_range(0..Pci::COUNT as u16));
        let d = rng.gen_range(0..FRAME);
        let cell = cell_at(p, Bandwidth::Mhz10, 7.0e8, d as f64, DataMode::RandomQpsk);
        let x = render_frames(&[cell], &fe, AC4_STACK, 4_000 + trial as u64);
        let one = stack_frames(&x, 1).unwrap();
        let all = stack_frames(&x, AC4_STACK).unwrap();
        if identify_top1(&one, b, CorrelationMode::Plain, None).unwrap().map(|t| t.pci) == Some(p) {
            single += 1;
        }
        if identify_top1(&all, b, CorrelationMode::Plain, None).unwrap().map(|t| t.pci) == Some(p) {
            stacked += 1;
        }
    }
    let a1 = single as f64 / AC4_TRIALS as f64;
    let a100 = stacked as f64 / AC4_TRIALS as f64;
    outcome(
        a1 < AC4_SINGLE_MAX && a100 > AC4_STACKED_MIN,
        format!(
            "10 MHz QPSK, {AC4_TRIALS} trials over 504 PCIs: single-frame {a1:.3} (< {AC4_SINGLE_MAX}), {AC4_STACK} stacked {a100:.3} (> {AC4_STACKED_MIN})"
        ),
    )
}

// ---------------------------------------------------------------- AC5

fn ac5() -> Outcome {
    let b = bank();
    let fe = FrontEndConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut all: Vec<u16> = (0..Pci::COUNT as u16).collect();
    all.shuffle(&mut rng);
    let set: Vec<Pci> = all[..AC5_SET].iter().map(|&v| pci(v)).collect();
    let (mut plain, mut phat) = (0, 0);
    for trial in 0..AC5_TRIALS {
        let p = set[trial % AC5_SET];
        let d = rng.gen_range(0..FRAME);
        let cell = cell_at(p, Bandwidth::Mhz1_4, 7.0e8, d as f64, DataMode::RandomQpsk);
        let mut x = render_frames(&[cell], &fe, AC5_STACK, 5_000 + trial as u64);
        // post-detector spurs well above the signal
        let amp = AC5_SPUR_GAIN * std_dev(&x.samples);
        let spurs = FrontEndConfig {
            spurs: vec![
                Spur { freq_hz: 150e3, amplitude: amp, phase_rad: rng.gen_range(0.0..6.283) },
                Spur { freq_hz: 400e3, amplitude: amp, phase_rad: rng.gen_range(0.0..6.283) },
            ],
            ..fe.clone()
        };
        add_receiver_impairments(&mut x, &spurs, 0);
        let s = stack_frames(&x, AC5_STACK).unwrap();
        if identify_top1(&s, b, CorrelationMode::Plain, Some(&set)).unwrap().map(|t| t.pci) == Some(p) {
            plain += 1;
        }
        if identify_top1(&s, b, CorrelationMode::Phat, Some(&set)).unwrap().map(|t| t.pci) == Some(p) {
            phat += 1;
        }
    }
    let ap = plain as f64 / AC5_TRIALS as f64;
    let ah = phat as f64 / AC5_TRIALS as f64;
    outcome(
        ap < 1.0 && ah == 1.0,
        format!(
            "{AC5_SET}-PCI set, 1.4 MHz QPSK, {AC5_STACK} frames, spurs at 150/400 kHz x{AC5_SPUR_GAIN} signal std, {AC5_TRIALS} trials: plain {ap:.3} (< 1), PHAT {ah:.3} (= 1)"
        ),
    )
}

// ---------------------------------------------------------------- AC6

/// Returns (true positives, false positives, truth count).
fn mixture_trials(k: usize, set_size: usize, seed: u64) -> (usize, usize, usize) {
    let b = bank();
    let fe = FrontEndConfig::default();
    let settings = DetectorSettings {
        config: DetectorConfig::for_mode(CorrelationMode::Plain),
        suppress_radius: DEFAULT_SUPPRESS_RADIUS,
        suppress_ratio: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<u16> = (0..Pci::COUNT as u16).collect();
    all.shuffle(&mut rng);
    let set = &all[..set_size];
    let (mut tp, mut fp, mut truth_n) = (0, 0, 0);
    for trial in 0..AC6_TRIALS {
        let pcis: Vec<Pci> = set.choose_multiple(&mut rng, k).map(|&v| pci(v)).collect();
        let cells: Vec<CellConfig> = pcis
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                // distinct carriers 5 MHz apart keep envelope cross terms out of band
                let mut c = cell_at(p, Bandwidth::Mhz1_4, 7.0e8 + 5e6 * j as f64, rng.gen_range(0..FRAME) as f64, DataMode::None);
                c.sim_carrier_hz = Some(20.0e6 + 5e6 * j as f64);
                c.tx_power_dbm = rng.gen_range(-6.0..0.0);
                c
            })
            .collect();
        let x = render(&cells, &fe, 0, FRAME, seed * 1000 + trial as u64);
        let found: BTreeSet<Pci> = detect_trace(&x, 1, b, &settings).unwrap().into_iter().map(|d| d.pci).collect();
        let truth: BTreeSet<Pci> = pcis.into_iter().collect();
        tp += found.intersection(&truth).count();
        fp += found.difference(&truth).count();
        truth_n += truth.len();
    }
    (tp, fp, truth_n)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

fn ac6() -> Outcome {
    let (tp2, fp2, n2) = mixture_trials(2, 100, 61);
    let (tp3, fp3, n3) = mixture_trials(3, 75, 62);
    let precision2 = ratio(tp2, tp2 + fp2);
    let accuracy3 = ratio(tp3, n3);
    outcome(
        precision2 >= AC6_PRECISION_MIN && accuracy3 >= AC6_ACCURACY_MIN,
        format!(
            "{AC6_TRIALS} trials each, strict suppression: 2-PCI/100 precision {precision2:.4} (>= {AC6_PRECISION_MIN:.2}; recall {:.4}), 3-PCI/75 accuracy {accuracy3:.4} (>= {AC6_ACCURACY_MIN:.2}; precision {:.4})",
            ratio(tp2, n2),
            ratio(tp3, tp3 + fp3)
        ),
    )
}

// ---------------------------------------------------------------- AC7

fn ac7() -> Outcome {
    let b = bank();
    let fe = FrontEndConfig::default();
    let cfg = DetectorConfig::for_mode(CorrelationMode::Plain);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut fine_max, mut total_max) = (0.0f64, 0.0f64);
    let mut worst = (0.0, 0.0);
    let mut n = 0;
    for step in -9..=9 {
        let tau = step as f64 / 10.0;
        for s in 0..AC7_SEEDS {
            let p = pci(rng.gen_range(0..Pci::COUNT as u16));
            let d = rng.gen_range(100..FRAME - 100);
            let mut x = render(&[cell_at(p, Bandwidth::Mhz1_4, 7.0e8, d as f64 + tau, DataMode::None)], &fe, 0, FRAME, 0);
            let sigma = std_dev(&x.samples) / 10f64.powf(AC7_SNR_DB / 20.0);
            let noise = Normal::new(0.0, sigma).unwrap();
            let mut nr = ChaCha8Rng::seed_from_u64(7_000 + (step + 9) as u64 * 100 + s as u64);
            x.samples.iter_mut().for_each(|v| *v += noise.sample(&mut nr));

            let fine = detection_subsample(&x, b.template(p), d).tau;
            let top = hierarchical_detect(&x, b, &cfg).unwrap().detections.into_iter().find(|t| t.pci == p);
            let total = match top {
                Some(t) => (t.delay_samples as f64 + detection_subsample(&x, b.template(p), t.delay_samples).tau - (d as f64 + tau)).abs(),
                None => f64::INFINITY,
            };
            let fe_err = (fine - tau).abs();
            if fe_err > fine_max {
                fine_max = fe_err;
                worst = (tau, fine);
            }
            total_max = total_max.max(total);
            n += 1;
        }
    }
    outcome(
        fine_max <= AC7_FINE_MAX && total_max <= AC7_TOTAL_MAX,
        format!(
            "{n} trials, tau in [-0.9, 0.9] step 0.1, SNR {AC7_SNR_DB} dB: max fine error {fine_max:.4} (<= {AC7_FINE_MAX}; worst tau {:.1} -> {:.4}), max coarse+fine error {total_max:.4} (<= {AC7_TOTAL_MAX})",
            worst.0, worst.1
        ),
    )
}

// ---------------------------------------------------------------- AC8

/// Frame-long vector of a unit-amplitude detection's sync regions.
fn placed(b: &TemplateBank, p: Pci, delay: usize) -> Vec<f64> {
    let mut v = vec![0.0; b.frame_len];
    for s in detection_segments(b.template(p), b.frame_len, delay, 0.0) {
        for (i, x) in s.samples.iter().enumerate() {
            v[(s.lag + i) % b.frame_len] += x;
        }
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ac8() -> Outcome {
    let b = bank();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_mix = 0.0f64;
    let mut worst_single = 0.0f64;
    for trial in 0..AC8_TRIALS {
        let p1 = pci(rng.gen_range(0..Pci::COUNT as u16));
        let p2 = loop {
            let q = pci(rng.gen_range(0..Pci::COUNT as u16));
            if q != p1 {
                break q;
            }
        };
        let d1 = rng.gen_range(0..FRAME);
        let d2 = (d1 + rng.gen_range(20..200)) % FRAME; // overlapping sync regions
        let (a1, a2) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        let u1 = placed(b, p1, d1);
        let u2 = placed(b, p2, d2);
        let clean: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| a1 * x + a2 * y).collect();
        let sigma = 0.3 * (dot(&clean, &clean) / FRAME as f64).sqrt();
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut nr = ChaCha8Rng::seed_from_u64(8_000 + trial as u64);
        let x: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut nr)).collect();

        // joint least squares on the 2x2 normal equations
        let (g11, g12, g22) = (dot(&u1, &u1), dot(&u1, &u2), dot(&u2, &u2));
        let (r1, r2) = (dot(&u1, &x), dot(&u2, &x));
        let det = g11 * g22 - g12 * g12;
        let oracle = [(g22 * r1 - g12 * r2) / det, (g11 * r2 - g12 * r1) / det];

        let dets = [det_of(p1, d1), det_of(p2, d2)];
        let sep = iterative_separation(
            &RealBuffer::new(FS, x.clone()),
            &dets,
            b,
            10.0,
            SeparationOptions {
                fractional: false,
                joint_refit: true,
            },
        )
        .unwrap();
        for (fit, o) in sep.fits.iter().zip(oracle) {
            worst_mix = worst_mix.max((fit.amplitude - o).abs() / o.abs());
        }

        let single: Vec<f64> = u1.iter().map(|v| a1 * v).collect();
        // fit_amplitude takes the raw template lag, not the frame delay
        let lag = (d1 + b.template(p1).offset) % FRAME;
        let f = fit_amplitude(&RealBuffer::new(FS, single), b.template(p1), lag, 10.0).unwrap();
        worst_single = worst_single.max((f.amplitude - a1).abs() / a1);
    }
    outcome(
        worst_mix <= AC8_MIX_TOL && worst_single <= AC8_SINGLE_TOL,
        format!(
            "{AC8_TRIALS} overlapping two-cell mixtures: max relative deviation from joint LS {worst_mix:.2e} (<= {AC8_MIX_TOL}); single cell max relative error {worst_single:.2e} (<= {AC8_SINGLE_TOL:.0e})"
        ),
    )
}

fn det_of(p: Pci, d: usize) -> Detection {
    Detection {
        pci: p,
        delay_samples: d,
        score: 1.0,
        amplitude: 0.0,
        subsample_offset: 0.0,
    }
}

// ---------------------------------------------------------------- AC9

/// Deliberately not concyclic: towers on a common circle make distance
/// ratios invariant under inversion in that circle, so the ratio solver has
/// two exact solutions.
fn towers() -> Vec<Point> {
    vec![Point::new(0.0, 0.0), Point::new(2000.0, 0.0), Point::new(1800.0, 2000.0), Point::new(300.0, 1700.0)]
}

fn observations(rx: Point, bias: f64) -> Vec<TowerObservation> {
    towers()
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let d = t.distance(rx);
            TowerObservation {
                pci: pci(i as u16 * 7),
                position: t,
                amplitude: 1.0 / d,
                toa_samples: d / SPEED_OF_LIGHT * FS + bias,
            }
        })
        .collect()
}

fn ac9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = towers();
    let diameter = t.iter().flat_map(|a| t.iter().map(move |b| a.distance(*b))).fold(0.0, f64::max);
    let mut tdoa_err = Vec::new();
    let mut ratio_worst = 0.0f64;
    let mut bias_worst = 0.0f64;
    for _ in 0..AC9_TRIALS {
        let rx = Point::new(rng.gen_range(300.0..1700.0), rng.gen_range(300.0..1700.0));
        let obs = observations(rx, 0.0);
        let e = solve_tdoa(&obs, FS, None).unwrap();
        tdoa_err.push(e.position.distance(rx));
        let r = trilaterate_ratio(&obs, None).unwrap();
        ratio_worst = ratio_worst.max(r.position.distance(rx));
        let shifted = solve_tdoa(&observations(rx, rng.gen_range(-5000.0..5000.0)), FS, None).unwrap();
        bias_worst = bias_worst.max(shifted.position.distance(e.position));
    }
    let p50 = median(&mut tdoa_err);
    let ratio_max = AC9_RATIO_FRACTION * diameter;
    outcome(
        p50 < AC9_TDOA_P50_MAX_M && ratio_worst <= ratio_max && bias_worst <= AC9_BIAS_TOL_M,
        format!(
            "{AC9_TRIALS} positions, 4 towers on a 2 km scene: noiseless TDOA p50 {p50:.2e} m (< {AC9_TDOA_P50_MAX_M} m); ratio solver worst {ratio_worst:.3} m (<= {ratio_max:.2} m); uniform TOA bias shift worst {bias_worst:.2e} m (<= {AC9_BIAS_TOL_M:.0e} m)"
        ),
    )
}

// ---------------------------------------------------------------- AC10 / AC12

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/urban.toml")
}

fn urban() -> (Scenario, TemplateBank) {
    let sc = Scenario::load(&scenario_path()).expect("urban scenario");
    let b = TemplateBank::load_or_build(&sc.front_end, Some(&bank_dir())).expect("bank");
    (sc, b)
}

fn urban_report_single_worker() -> &'static String {
    static R: OnceLock<String> = OnceLock::new();
    R.get_or_init(|| {
        let (sc, b) = urban();
        run_eval(&sc, &b, 1).expect("eval").to_json().unwrap()
    })
}

fn ac10() -> Outcome {
    let json = urban_report_single_worker();
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    let m = &v["metrics"];
    let raw = m["error"]["p50"].as_f64();
    let snapped = m["snapped_error"]["p50"].as_f64();
    let p = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.2} m"));
    // the end-to-end output is the road-snapped track
    let pass = snapped.is_some_and(|s| s <= AC10_P50_MAX_M);
    outcome(
        pass,
        format!(
            "urban (3 towers, 2 km, 0.1-sample jitter, {} fixes): end-to-end (snapped) p50 {} (<= {AC10_P50_MAX_M} m; soft target {AC10_SOFT_TARGET_M} m), raw TDOA p50 {}, PCI precision {} recall {}",
            m["n_fixes"],
            p(snapped),
            p(raw),
            m["pci"]["precision"],
            m["pci"]["recall"]
        ),
    )
}

fn ac12() -> Outcome {
    let a = urban_report_single_worker();
    let (sc, b) = urban();
    let other = run_eval(&sc, &b, AC12_WORKERS).expect("eval").to_json().unwrap();
    let again = run_eval(&sc, &b, 1).expect("eval").to_json().unwrap();
    let pass = *a == other && *a == again;
    outcome(
        pass,
        format!(
            "urban RunReport, 1 vs {AC12_WORKERS} workers and a repeat: byte-identical {pass} ({} bytes)",
            a.len()
        ),
    )
}

// ---------------------------------------------------------------- AC11

/// Grid road network with random per-edge limits; returns the graph and the
/// node coordinates by id.
fn grid_graph(rng: &mut ChaCha8Rng, n: usize, spacing: f64) -> RoadGraph {
    let id = |i: usize, j: usize| (i * n + j) as u64;
    let mut nodes = std::collections::BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            nodes.insert(id(i, j), Point::new(j as f64 * spacing, i as f64 * spacing));
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if j + 1 < n {
                edges.push(Edge { a: id(i, j), b: id(i, j + 1), max_speed_mps: rng.gen_range(10.0..25.0) });
            }
            if i + 1 < n {
                edges.push(Edge { a: id(i, j), b: id(i + 1, j), max_speed_mps: rng.gen_range(10.0..25.0) });
            }
        }
    }
    RoadGraph::new(nodes, edges).unwrap()
}

/// Random walk over grid nodes at constant speed, sampled every `dt`.
fn drive(rng: &mut ChaCha8Rng, n: usize, spacing: f64, speed: f64, dt: f64, n_fixes: usize, noise: f64) -> Vec<Fix> {
    let (mut i, mut j) = (rng.gen_range(0..n) as i64, rng.gen_range(0..n) as i64);
    let mut path = vec![Point::new(j as f64 * spacing, i as f64 * spacing)];
    while path.len() < n_fixes {
        let (di, dj) = *[(0, 1), (0, -1), (1, 0), (-1, 0)].choose(rng).unwrap();
        if (0..n as i64).contains(&(i + di)) && (0..n as i64).contains(&(j + dj)) {
            i += di;
            j += dj;
            path.push(Point::new(j as f64 * spacing, i as f64 * spacing));
        }
    }
    let gauss = Normal::new(0.0, noise).unwrap();
    let step = speed * dt;
    let mut out = Vec::new();
    let (mut seg, mut along) = (0usize, 0.0);
    for k in 0..n_fixes {
        let (a, b) = (path[seg], path[seg + 1]);
        let len = a.distance(b);
        let f = along / len;
        let p = Point::new(a.x + (b.x - a.x) * f + gauss.sample(rng), a.y + (b.y - a.y) * f + gauss.sample(rng));
        out.push(Fix::new(k as f64 * dt, p));
        along += step;
        while along >= path[seg].distance(path[seg + 1]) && seg + 2 < path.len() {
            along -= path[seg].distance(path[seg + 1]);
            seg += 1;
        }
        along = along.min(path[seg].distance(path[seg + 1]) - 1e-9);
    }
    out
}

/// Winding number of `poly` around `p` (non-zero = inside).
fn winding(poly: &[Point], p: Point) -> i32 {
    let mut w = 0;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        let side = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
        if a.y <= p.y {
            if b.y > p.y && side > 0.0 {
                w += 1;
            }
        } else if b.y <= p.y && side < 0.0 {
            w -= 1;
        }
    }
    w
}

fn seg_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = Point::new(b.x - a.x, b.y - a.y);
    let t = (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / (ab.x * ab.x + ab.y * ab.y)).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + ab.x * t, a.y + ab.y * t))
}

fn random_star(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    let mut ang: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    ang.sort_by(f64::total_cmp);
    ang.into_iter()
        .map(|a| {
            let r = rng.gen_range(30.0..100.0);
            Point::new(r * a.cos(), r * a.sin())
        })
        .collect()
}

fn ac11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // speed feasibility
    let (mut checked, mut flagged, mut violations, mut filter_breaks) = (0, 0, 0, 0);
    for _ in 0..AC11_SCENARIOS {
        let g = grid_graph(&mut rng, 5, 200.0);
        let v_max = g.max_speed();
        let dt = 2.0;
        let fixes = drive(&mut rng, 5, 200.0, 8.0, dt, 40, 5.0);
        let snapped = snap_trajectory(&fixes, &g, 5).unwrap();
        for w in snapped.windows(2) {
            let (prev, cur) = (&w[0], &w[1]);
            let s = cur.snapped.unwrap();
            let step = s.distance(prev.snapped.unwrap());
            match cur.status {
                SnapStatus::Constrained => {
                    checked += 1;
                    if step > dt * v_max + 1e-9 {
                        violations += 1;
                    }
                }
                _ => flagged += 1,
            }
            if cur.status != SnapStatus::Reseeded && !prev.candidates.iter().any(|q| q.distance(s) <= dt * v_max + 1e-9) {
                filter_breaks += 1;
            }
        }
    }
    let speed_ok = violations == 0 && filter_breaks == 0;

    // one boundary crossing -> one alert, both directions
    let mut crossing_ok = true;
    for _ in 0..AC11_SCENARIOS {
        // convex polygon: every inside-to-outside segment crosses once
        // one vertex per 45 degree sector keeps the centre well inside
        let ang: Vec<f64> = (0..8).map(|k| (k as f64 + rng.gen_range(0.1..0.9)) * std::f64::consts::FRAC_PI_4).collect();
        let poly: Vec<Point> = ang.iter().map(|a| Point::new(100.0 * a.cos(), 100.0 * a.sin())).collect();
        let inside = Point::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let outside = Point::new(300.0 * a.cos(), 300.0 * a.sin());
        let path = |from: Point, to: Point| -> Vec<Fix> {
            (0..50)
                .map(|k| {
                    let f = k as f64 / 49.0;
                    Fix::new(k as f64, Point::new(from.x + (to.x - from.x) * f, from.y + (to.y - from.y) * f))
                })
                .collect()
        };
        let exit = GeofenceRegion::new(poly.clone(), FenceMode::Exit, None).unwrap();
        let enter = GeofenceRegion::new(poly, FenceMode::Enter, None).unwrap();
        let e1 = geofence_events(&path(inside, outside), &exit, None);
        let e2 = geofence_events(&path(outside, inside), &enter, None);
        crossing_ok &= e1.len() == 1 && e1[0].event == FenceEvent::Exit && e2.len() == 1 && e2[0].event == FenceEvent::Enter;
    }

    // point in polygon vs winding number
    let poly = random_star(&mut rng, 12);
    let region = GeofenceRegion::new(poly.clone(), FenceMode::Enter, None).unwrap();
    let (mut agree, mut skipped) = (0, 0);
    for _ in 0..AC11_PIP_POINTS {
        let p = Point::new(rng.gen_range(-110.0..110.0), rng.gen_range(-110.0..110.0));
        let near = (0..poly.len()).any(|k| seg_distance(p, poly[k], poly[(k + 1) % poly.len()]) < 1e-9);
        if near {
            skipped += 1;
            continue;
        }
        if region.contains(p) == (winding(&poly, p) != 0) {
            agree += 1;
        }
    }
    let pip_ok = agree + skipped == AC11_PIP_POINTS;

    outcome(
        speed_ok && crossing_ok && pip_ok,
        format!(
            "{AC11_SCENARIOS} random grid scenarios: {checked} constrained steps, {violations} speed violations, {flagged} flagged (rebranched/reseeded) exempt, {filter_breaks} filter breaches; single crossing -> one alert: {crossing_ok}; point-in-polygon agrees with winding number on {agree}/{} points ({skipped} on boundary)",
            AC11_PIP_POINTS - skipped
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).map(|a| a.to_lowercase()).collect();
    let checks: [(&str, &str, fn() -> Outcome); 12] = [
        ("ac1", "PSS fold-merge", ac1),
        ("ac2", "template correlation structure", ac2),
        ("ac3", "preamble-only identification", ac3),
        ("ac4", "data interference and stacking", ac4),
        ("ac5", "PHAT under narrowband interference", ac5),
        ("ac6", "mixtures", ac6),
        ("ac7", "sub-sample estimator", ac7),
        ("ac8", "amplitude separation", ac8),
        ("ac9", "solvers", ac9),
        ("ac10", "end-to-end urban simulation", ac10),
        ("ac11", "route and geofence", ac11),
        ("ac12", "determinism", ac12),
    ];
    let mut failed = 0;
    for (id, name, f) in checks {
        if !filter.is_empty() && !filter.iter().any(|x| x == id) {
            continue;
        }
        let t0 = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{:<5} {verdict}  {name}: {} [{:.1} s]", id.to_uppercase(), o.detail, t0.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
