//! Per-cell amplitude and sub-sample timing.
//!
//! The residual energy `E(A) = (1/N) sum (x - A t)^2` is quadratic in `A`, so
//! the box-constrained minimizer is the clamped projection
//! `clamp(<x, t> / <t, t>, 0, a_max)`. All windows are circular in the trace.
//!
//! Sub-sample delay comes from the phase slope of `X(f) S*(f)`: a delay of
//! `tau` samples turns into a phase `-2 pi k tau / P` on bin `k` of a
//! `P`-point transform.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::RealBuffer;
use crate::detect::{Detection, FoldedTemplate, TemplateBank};
use crate::dsp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmplitudeError {
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeFit {
    pub amplitude: f64,
    pub residual_energy: f64,
    pub delay: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleEstimate {
    /// Fractional delay in samples, |tau| < 1.
    pub tau: f64,
    /// Phase slope in radians per bin of the padded transform.
    pub phase_slope: f64,
    /// Bin spacing of the padded transform in cycles per sample.
    pub bin_spacing: f64,
    /// Weighted spectral coherence of the used bins, in [0, 1].
    pub confidence: f64,
    pub bins_used: usize,
    pub low_confidence: bool,
}

/// Bins below this fraction of the peak template magnitude are ignored.
pub const BIN_FLOOR: f64 = 0.05;
/// Fewer usable bins than this flags the estimate.
pub const MIN_BINS: usize = 8;

fn window(x: &[f64], start: usize, len: usize) -> Vec<f64> {
    let n = x.len();
    (0..len).map(|i| x[(start + i) % n]).collect()
}

/// One template placement: `samples` starting at trace index `lag`.
#[derive(Debug, Clone)]
pub struct Segment {
    pub lag: usize,
    pub samples: Vec<f64>,
}

/// Clamped least-squares amplitude of a set of non-overlapping segments.
pub fn fit_segments(x: &[f64], segments: &[Segment], a_max: f64) -> Result<(f64, f64), AmplitudeError> {
    if !(a_max > 0.0) {
        return Err(AmplitudeError::Domain(format!("a_max {a_max} must be positive")));
    }
    let (mut xt, mut tt, mut count) = (0.0, 0.0, 0usize);
    for s in segments {
        let w = window(x, s.lag, s.samples.len());
        xt += dsp::dot(&w, &s.samples);
        tt += dsp::dot(&s.samples, &s.samples);
        count += s.samples.len();
    }
    if !(tt > 0.0) {
        return Err(AmplitudeError::Domain("template has zero energy".into()));
    }
    let a = (xt / tt).clamp(0.0, a_max);
    let mut resid = 0.0;
    for s in segments {
        let w = window(x, s.lag, s.samples.len());
        resid += w.iter().zip(&s.samples).map(|(v, t)| (v - a * t).powi(2)).sum::<f64>();
    }
    Ok((a, resid / count as f64))
}

/// Residual energy at a given amplitude (for optimality checks).
pub fn residual_energy(x: &[f64], tpl: &[f64], d: usize, a: f64) -> f64 {
    let w = window(x, d, tpl.len());
    w.iter().zip(tpl).map(|(v, t)| (v - a * t).powi(2)).sum::<f64>() / tpl.len() as f64
}

/// Fits `A * tpl` (the unit-amplitude folded template) at window start `d`.
pub fn fit_amplitude(x: &RealBuffer, tpl: &FoldedTemplate, d: usize, a_max: f64) -> Result<AmplitudeFit, AmplitudeError> {
    fit_amplitude_raw(&x.samples, &tpl.raw(), d, a_max)
}

pub fn fit_amplitude_raw(x: &[f64], tpl: &[f64], d: usize, a_max: f64) -> Result<AmplitudeFit, AmplitudeError> {
    if d >= x.len() || tpl.len() > x.len() {
        return Err(AmplitudeError::Domain(format!("delay {d} outside trace of {}", x.len())));
    }
    let (a, r) = fit_segments(
        x,
        &[Segment {
            lag: d,
            samples: tpl.to_vec(),
        }],
        a_max,
    )?;
    Ok(AmplitudeFit {
        amplitude: a,
        residual_energy: r,
        delay: d,
    })
}

/// Both sync regions of `tpl` for a cell at frame delay `delay`, optionally
/// shifted by a fractional delay.
pub fn detection_segments(tpl: &FoldedTemplate, frame_len: usize, delay: usize, frac: f64) -> Vec<Segment> {
    [(tpl.raw(), 0), (tpl.alt_raw(), frame_len / 2)]
        .into_iter()
        .map(|(raw, extra)| Segment {
            lag: (delay + tpl.offset + extra) % frame_len,
            samples: if frac == 0.0 { raw } else { shift_template(&raw, frac) },
        })
        .collect()
}

/// Fractionally delays a template; the padding absorbs the circular wrap.
fn shift_template(t: &[f64], frac: f64) -> Vec<f64> {
    let pad = 64;
    let mut buf = vec![0.0; t.len() + 2 * pad];
    buf[pad..pad + t.len()].copy_from_slice(t);
    let d = dsp::delay_real(&buf, frac);
    d[pad..pad + t.len()].to_vec()
}

fn subtract(x: &mut [f64], segments: &[Segment], a: f64) {
    let n = x.len();
    for s in segments {
        for (i, t) in s.samples.iter().enumerate() {
            x[(s.lag + i) % n] -= a * t;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeparationOptions {
    /// Shift each template by the detection's sub-sample offset.
    pub fractional: bool,
    /// Follow the greedy pass with a joint box-constrained least-squares refit.
    pub joint_refit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub fits: Vec<AmplitudeFit>,
    /// Energy of the whole residual trace before and after each subtraction.
    pub residual_trace_energy: Vec<f64>,
}

/// Greedy fit-and-subtract in the given order (normally score descending).
pub fn iterative_separation(
    x: &RealBuffer,
    detections: &[Detection],
    bank: &TemplateBank,
    a_max: f64,
    opts: SeparationOptions,
) -> Result<Separation, AmplitudeError> {
    let n = x.len();
    let mut r = x.samples.clone();
    let energy = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let mut trace_energy = vec![energy(&r)];
    let mut fits = Vec::with_capacity(detections.len());
    let mut segs_all = Vec::with_capacity(detections.len());
    for d in detections {
        let frac = if opts.fractional { d.subsample_offset } else { 0.0 };
        let segs = detection_segments(bank.template(d.pci), n, d.delay_samples, frac);
        let (a, res) = fit_segments(&r, &segs, a_max)?;
        subtract(&mut r, &segs, a);
        trace_energy.push(energy(&r));
        fits.push(AmplitudeFit {
            amplitude: a,
            residual_energy: res,
            delay: d.delay_samples,
        });
        segs_all.push(segs);
    }
    if opts.joint_refit && !fits.is_empty() {
        let amps = joint_least_squares(&x.samples, &segs_all, a_max, fits.iter().map(|f| f.amplitude).collect());
        let mut r = x.samples.clone();
        for (segs, a) in segs_all.iter().zip(&amps) {
            subtract(&mut r, segs, *a);
        }
        trace_energy.push(energy(&r));
        for (f, a) in fits.iter_mut().zip(amps) {
            f.amplitude = a;
        }
    }
    Ok(Separation {
        fits,
        residual_trace_energy: trace_energy,
    })
}

/// Box-constrained joint least squares by projected Gauss-Seidel sweeps.
fn joint_least_squares(x: &[f64], segs: &[Vec<Segment>], a_max: f64, mut a: Vec<f64>) -> Vec<f64> {
    let n = x.len();
    let k = segs.len();
    let dense: Vec<Vec<f64>> = segs
        .iter()
        .map(|ss| {
            let mut v = vec![0.0; n];
            for s in ss {
                for (i, t) in s.samples.iter().enumerate() {
                    v[(s.lag + i) % n] += t;
                }
            }
            v
        })
        .collect();
    let gram: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dsp::dot(&dense[i], &dense[j])).collect()).collect();
    let rhs: Vec<f64> = dense.iter().map(|v| dsp::dot(v, x)).collect();
    for _ in 0..500 {
        let mut change = 0.0f64;
        for i in 0..k {
            if gram[i][i] <= 0.0 {
                continue;
            }
            let others: f64 = (0..k).filter(|&j| j != i).map(|j| gram[i][j] * a[j]).sum();
            let new = ((rhs[i] - others) / gram[i][i]).clamp(0.0, a_max);
            change = change.max((new - a[i]).abs());
            a[i] = new;
        }
        if change < 1e-13 * a_max {
            break;
        }
    }
    a
}

/// Phase-slope sub-sample delay of the window at `d` against `tpl`.
pub fn estimate_subsample(x: &RealBuffer, tpl: &FoldedTemplate, d: usize) -> SubsampleEstimate {
    estimate_subsample_raw(&x.samples, &tpl.raw(), d)
}

pub fn estimate_subsample_raw(x: &[f64], tpl: &[f64], d: usize) -> SubsampleEstimate {
    let len = tpl.len();
    let p = (4 * len).next_power_of_two();
    let mut xb = vec![0.0; p];
    let mut sb = vec![0.0; p];
    xb[..len].copy_from_slice(&window(x, d, len));
    sb[..len].copy_from_slice(tpl);
    let xf = dsp::real_fft(&xb);
    let sf = dsp::real_fft(&sb);
    let peak = sf[..=p / 2].iter().map(|v| v.norm()).fold(0.0, f64::max);

    let mut ks = Vec::new();
    let mut phases = Vec::new();
    let mut weights = Vec::new();
    let (mut cross, mut ex, mut es) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    let mut prev = 0.0;
    for k in 1..p / 2 {
        let s = sf[k];
        if s.norm() <= BIN_FLOOR * peak {
            continue;
        }
        let c = xf[k] * s.conj();
        // unwrap against the previous used bin
        let mut ph = c.arg();
        while ph - prev > PI {
            ph -= 2.0 * PI;
        }
        while ph - prev < -PI {
            ph += 2.0 * PI;
        }
        prev = ph;
        ks.push(k as f64);
        phases.push(ph);
        weights.push(s.norm_sqr());
        cross += c;
        ex += xf[k].norm_sqr();
        es += s.norm_sqr();
    }
    let bins_used = ks.len();
    let num: f64 = ks.iter().zip(&phases).zip(&weights).map(|((k, ph), w)| w * k * ph).sum();
    let den: f64 = ks.iter().zip(&weights).map(|(k, w)| w * k * k).sum();
    let slope = if den > 0.0 { num / den } else { 0.0 };
    let raw_tau = -slope * p as f64 / (2.0 * PI);
    let tau = raw_tau.clamp(-0.999, 0.999);
    let confidence = if ex > 0.0 && es > 0.0 { cross.norm() / (ex * es).sqrt() } else { 0.0 };
    SubsampleEstimate {
        tau,
        phase_slope: slope,
        bin_spacing: 1.0 / p as f64,
        confidence,
        bins_used,
        low_confidence: bins_used < MIN_BINS || raw_tau.abs() >= 1.0,
    }
}

/// Sub-sample offset for a detection: averages the estimates from both sync
/// regions, weighted by confidence.
pub fn detection_subsample(x: &RealBuffer, tpl: &FoldedTemplate, delay: usize) -> SubsampleEstimate {
    let n = x.len();
    let a = estimate_subsample_raw(&x.samples, &tpl.raw(), (delay + tpl.offset) % n);
    let b = estimate_subsample_raw(&x.samples, &tpl.alt_raw(), (delay + tpl.offset + n / 2) % n);
    let wsum = a.confidence + b.confidence;
    if wsum <= 0.0 {
        return a;
    }
    let tau = (a.tau * a.confidence + b.tau * b.confidence) / wsum;
    SubsampleEstimate {
        tau,
        phase_slope: -tau * 2.0 * PI * a.bin_spacing,
        bin_spacing: a.bin_spacing,
        confidence: wsum / 2.0,
        bins_used: a.bins_used.min(b.bins_used),
        low_confidence: a.low_confidence && b.low_confidence,
    }
}
