//! Propagation and envelope-detector front end.
//!
//! Each tower's frame stream is delayed by time of flight, passed through its
//! multipath taps, scaled by free-space loss and transmit power, upconverted
//! and summed. The detector squares the RF sum; a linear-phase FIR low-pass
//! removes everything but the difference-frequency products before the ADC.
//!
//! Upconversion uses `sqrt(2) * Re{y(t) exp(j 2 pi f_c t)}` so that the
//! low-passed square of a single band equals `|y(t)|^2` exactly. That identity
//! is what the complex-baseband fast path relies on.
//!
//! Simulated carriers are usually scaled down (tens of MHz) so the RF proxy can
//! be sampled directly. Folding depends only on carrier differences and
//! bandwidths, so path loss keeps using the physical `carrier_hz` while RF
//! synthesis uses `sim_carrier_hz` when it is set.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::buffer::{IqBuffer, RealBuffer};
use crate::dsp;
use crate::geom::Point;
use crate::lte::{
    self, Bandwidth, CyclicPrefix, DataMode, FrameConfig, LteError, Pci, BASE_FFT_SIZE,
    BASE_SAMPLE_RATE_HZ, SUBCARRIER_SPACING_HZ, SYNC_RESERVED_SUBCARRIERS,
};
use crate::seed::substream;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Width of the folded synchronization band (central 6 resource blocks).
pub const SYNC_BAND_HZ: f64 = SYNC_RESERVED_SUBCARRIERS as f64 * SUBCARRIER_SPACING_HZ;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Lte(#[from] LteError),
}

/// Free-space amplitude factor `c / (4 pi d f)`.
pub fn path_amplitude(distance_m: f64, freq_hz: f64) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::Domain(format!("distance {distance_m} m must be positive")));
    }
    if !(freq_hz > 0.0) {
        return Err(ChannelError::Domain(format!("frequency {freq_hz} Hz must be positive")));
    }
    Ok(SPEED_OF_LIGHT / (4.0 * PI * distance_m * freq_hz))
}

fn default_data() -> DataMode {
    DataMode::None
}

/// One transmitting cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub pci: Pci,
    /// Physical carrier, used for path loss and overlap analysis.
    pub carrier_hz: f64,
    /// Scaled carrier used for RF synthesis; defaults to `carrier_hz`.
    #[serde(default)]
    pub sim_carrier_hz: Option<f64>,
    pub bandwidth: Bandwidth,
    #[serde(default)]
    pub cp: CyclicPrefix,
    pub position: Point,
    pub tx_power_dbm: f64,
    #[serde(default)]
    pub frame_time_origin_s: f64,
    #[serde(default = "default_data")]
    pub data: DataMode,
}

impl CellConfig {
    pub fn new(pci: Pci, carrier_hz: f64, bandwidth: Bandwidth, position: Point) -> Self {
        Self {
            pci,
            carrier_hz,
            sim_carrier_hz: None,
            bandwidth,
            cp: CyclicPrefix::Normal,
            position,
            tx_power_dbm: 0.0,
            frame_time_origin_s: 0.0,
            data: DataMode::None,
        }
    }

    pub fn rf_carrier_hz(&self) -> f64 {
        self.sim_carrier_hz.unwrap_or(self.carrier_hz)
    }

    pub fn frame_config(&self) -> FrameConfig {
        FrameConfig::new(self.bandwidth).with_cp(self.cp)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bw = self.bandwidth.hz();
        if !(self.carrier_hz > bw) || !self.carrier_hz.is_finite() {
            return Err(ChannelError::Config(format!(
                "PCI {}: carrier {} Hz must exceed bandwidth {} Hz",
                self.pci, self.carrier_hz, bw
            )));
        }
        if let Some(f) = self.sim_carrier_hz {
            if !(f > bw) || !f.is_finite() {
                return Err(ChannelError::Config(format!(
                    "PCI {}: simulated carrier {f} Hz must exceed bandwidth {bw} Hz",
                    self.pci
                )));
            }
        }
        if !self.tx_power_dbm.is_finite() || !self.position.is_finite() {
            return Err(ChannelError::Config(format!("PCI {}: non-finite power or position", self.pci)));
        }
        Ok(())
    }

    /// Received field amplitude (sqrt(mW)) at `rx`.
    pub fn received_amplitude(&self, rx: Point) -> Result<f64, ChannelError> {
        let a = path_amplitude(self.position.distance(rx), self.carrier_hz)?;
        Ok(a * 10f64.powf(self.tx_power_dbm / 20.0))
    }

    pub fn received_power_dbm(&self, rx: Point) -> Result<f64, ChannelError> {
        Ok(20.0 * self.received_amplitude(rx)?.log10())
    }

    /// Time of flight plus the tower's frame timing origin.
    pub fn arrival_delay_s(&self, rx: Point) -> f64 {
        self.position.distance(rx) / SPEED_OF_LIGHT + self.frame_time_origin_s
    }
}

/// Rejects scenarios with two cells sharing a (PCI, carrier) pair.
pub fn check_distinct_cells(cells: &[CellConfig]) -> Result<(), ChannelError> {
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            if a.pci == b.pci && a.carrier_hz == b.carrier_hz {
                return Err(ChannelError::Config(format!(
                    "duplicate cell PCI {} at {} Hz",
                    a.pci, a.carrier_hz
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub amplitude: f64,
    #[serde(default)]
    pub phase_rad: f64,
    #[serde(default)]
    pub delay_s: f64,
}

/// Discrete multipath channel; the first tap is line of sight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipathProfile {
    pub taps: Vec<Tap>,
}

impl Default for MultipathProfile {
    fn default() -> Self {
        Self::los()
    }
}

impl MultipathProfile {
    pub fn los() -> Self {
        Self {
            taps: vec![Tap {
                amplitude: 1.0,
                phase_rad: 0.0,
                delay_s: 0.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.taps.is_empty() {
            return Err(ChannelError::Config("multipath profile needs a line-of-sight tap".into()));
        }
        if self.taps.iter().any(|t| !(t.delay_s >= 0.0) || !t.amplitude.is_finite()) {
            return Err(ChannelError::Config("multipath taps need finite amplitude and delay >= 0".into()));
        }
        Ok(())
    }
}

/// Narrowband interference at the detector output (regulator ripple, clock
/// feed-through).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spur {
    pub freq_hz: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

fn d_cutoff() -> f64 {
    1.4e6
}
fn d_transition() -> f64 {
    0.6e6
}
fn d_stopband() -> f64 {
    60.0
}
fn d_adc() -> f64 {
    BASE_SAMPLE_RATE_HZ
}
fn d_floor() -> f64 {
    -70.0
}
fn d_oversample() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEndConfig {
    /// Passband edge of the post-detector low-pass.
    #[serde(default = "d_cutoff")]
    pub lpf_cutoff_hz: f64,
    /// Stopband starts at `lpf_cutoff_hz + lpf_transition_hz`.
    #[serde(default = "d_transition")]
    pub lpf_transition_hz: f64,
    #[serde(default = "d_stopband")]
    pub stopband_db: f64,
    #[serde(default = "d_adc")]
    pub adc_rate_hz: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "d_floor")]
    pub sensitivity_floor_dbm: f64,
    #[serde(default)]
    pub spurs: Vec<Spur>,
    /// Complex-baseband render rate as a multiple of the ADC rate.
    #[serde(default = "d_oversample")]
    pub baseband_oversample: usize,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            lpf_cutoff_hz: d_cutoff(),
            lpf_transition_hz: d_transition(),
            stopband_db: d_stopband(),
            adc_rate_hz: d_adc(),
            noise_sigma: 0.0,
            sensitivity_floor_dbm: d_floor(),
            spurs: Vec::new(),
            baseband_oversample: d_oversample(),
        }
    }
}

impl FrontEndConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::Config(m.to_string()));
        if !(self.adc_rate_hz > 0.0) {
            return bad("adc_rate_hz must be positive");
        }
        let ratio = self.adc_rate_hz / BASE_SAMPLE_RATE_HZ;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad("adc_rate_hz must be a multiple of 1.92 MHz");
        }
        if !(self.lpf_cutoff_hz > 0.0) || !(self.lpf_transition_hz > 0.0) {
            return bad("low-pass cutoff and transition must be positive");
        }
        if !(self.stopband_db >= 21.0) {
            return bad("stopband_db must be at least 21 dB");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if self.baseband_oversample < 2 {
            return bad("baseband_oversample must be at least 2");
        }
        let nyq = self.adc_rate_hz * self.baseband_oversample as f64 / 2.0;
        if self.lpf_cutoff_hz + self.lpf_transition_hz >= nyq {
            return bad("low-pass stopband edge must lie below the render-rate Nyquist frequency");
        }
        Ok(())
    }

    /// Hash of every field that shapes the noise-free folded waveform.
    pub fn template_hash(&self) -> String {
        let key = serde_json::json!({
            "v": 1,
            "lpf_cutoff_hz": self.lpf_cutoff_hz,
            "lpf_transition_hz": self.lpf_transition_hz,
            "stopband_db": self.stopband_db,
            "adc_rate_hz": self.adc_rate_hz,
            "baseband_oversample": self.baseband_oversample,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn frame_len(&self) -> usize {
        (self.adc_rate_hz * lte::FRAME_DURATION_S).round() as usize
    }

    /// Decimation filter for an input at `rate_hz`.
    pub fn design_filter(&self, rate_hz: f64) -> Vec<f64> {
        dsp::kaiser_lowpass(
            rate_hz,
            self.lpf_cutoff_hz,
            self.lpf_cutoff_hz + self.lpf_transition_hz,
            self.stopband_db,
        )
    }

    fn decimation(&self, rate_hz: f64) -> Result<usize, ChannelError> {
        let m = rate_hz / self.adc_rate_hz;
        if m < 1.0 - 1e-12 || (m - m.round()).abs() > 1e-9 {
            return Err(ChannelError::Config(format!(
                "input rate {rate_hz} Hz is not an integer multiple of the ADC rate {} Hz",
                self.adc_rate_hz
            )));
        }
        Ok(m.round() as usize)
    }
}

/// Extra samples rendered around each window so circular delays and their
/// ringing stay out of the returned samples.
const DELAY_GUARD: i64 = 2048;

fn rate_to_fft(rate_hz: f64) -> Result<usize, ChannelError> {
    let fft = rate_hz / SUBCARRIER_SPACING_HZ;
    let n = fft.round() as usize;
    if (fft - n as f64).abs() > 1e-6 || n == 0 || n % BASE_FFT_SIZE != 0 {
        return Err(ChannelError::Config(format!(
            "render rate {rate_hz} Hz must be a multiple of 1.92 MHz"
        )));
    }
    Ok(n)
}

/// Complex baseband of one cell as seen at `rx`, sampled at `rate_hz` for
/// `n_samples` starting at `start_sample` (relative to the start of frame 0
/// at the transmitter; may be negative).
///
/// The frames covering the window plus a guard of `|delay| + DELAY_GUARD`
/// samples on either side are rendered. Integer delays are applied by
/// indexing; fractional ones by a circular frequency-domain phase ramp whose
/// wrap-around stays inside the guard.
pub fn received_baseband(
    cell: &CellConfig,
    multipath: &MultipathProfile,
    rx: Point,
    rate_hz: f64,
    start_sample: i64,
    n_samples: usize,
    rng_seed: u64,
) -> Result<IqBuffer, ChannelError> {
    cell.validate()?;
    multipath.validate()?;
    let fft = rate_to_fft(rate_hz)?;
    let cfg = cell.frame_config().with_fft_size(fft);
    cfg.validate()?;
    let frame_len = cfg.frame_len() as i64;

    let amp = cell.received_amplitude(rx)?;
    let base_delay = cell.arrival_delay_s(rx) * rate_hz;
    let delays: Vec<f64> = multipath.taps.iter().map(|t| base_delay + t.delay_s * rate_hz).collect();
    let max_delay = delays.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if max_delay + 1.0 >= frame_len as f64 {
        return Err(ChannelError::Config(format!(
            "PCI {}: arrival delay exceeds one frame",
            cell.pci
        )));
    }
    let pad = max_delay.ceil() as i64 + DELAY_GUARD;
    let lo = start_sample - pad;
    let hi = start_sample + n_samples as i64 + pad;
    let first = lo.div_euclid(frame_len);
    let last = (hi - 1).div_euclid(frame_len);

    let mut buf: Vec<Complex64> = Vec::with_capacity((hi - lo) as usize + 2 * frame_len as usize);
    if cell.data == DataMode::None {
        let grid = lte::build_frame(&cfg, cell.pci, DataMode::None, 0)?;
        let frame = lte::ofdm_modulate(&grid);
        for _ in first..=last {
            buf.extend_from_slice(&frame.samples);
        }
    } else {
        for f in first..=last {
            let seed = substream(rng_seed, "frame-data", &[f as u64]);
            let grid = lte::build_frame(&cfg, cell.pci, cell.data, seed)?;
            buf.extend(lte::ofdm_modulate(&grid).samples);
        }
    }
    let off = (lo - first * frame_len) as usize;
    buf.truncate(off + (hi - lo) as usize);
    buf.drain(..off);

    // The unitary IDFT shrinks samples by 1/sqrt(N); rescale so the waveform
    // does not depend on the render rate (unit-power-per-element at native rate).
    let render_gain = (fft as f64 / cell.bandwidth.native_fft_size() as f64).sqrt();
    let gains: Vec<Complex64> = multipath
        .taps
        .iter()
        .map(|t| Complex64::from_polar(t.amplitude * amp * render_gain, t.phase_rad))
        .collect();
    let pad = pad as usize;
    if delays.iter().all(|d| (d - d.round()).abs() < 1e-9) {
        let mut out = vec![Complex64::new(0.0, 0.0); n_samples];
        for (g, d) in gains.iter().zip(&delays) {
            let src = (pad as i64 - d.round() as i64) as usize;
            for (o, x) in out.iter_mut().zip(&buf[src..src + n_samples]) {
                *o += g * x;
            }
        }
        return Ok(IqBuffer::new(rate_hz, out));
    }

    let n = buf.len();
    dsp::fft(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = dsp::bin_frequency(k, n);
        let h: Complex64 = gains
            .iter()
            .zip(&delays)
            .map(|(g, d)| g * Complex64::from_polar(1.0, -2.0 * PI * f * d))
            .sum();
        *v *= h / n as f64;
    }
    dsp::ifft(&mut buf);
    buf.truncate(pad + n_samples);
    buf.drain(..pad);
    Ok(IqBuffer::new(rate_hz, buf))
}

fn cell_seed(seed: u64, index: usize) -> u64 {
    substream(seed, "cell", &[index as u64])
}

/// Real RF proxy: all cells delayed, scaled, upconverted and summed.
pub fn superpose(
    cells: &[(CellConfig, MultipathProfile)],
    rx: Point,
    duration_s: f64,
    oversample_rate_hz: f64,
    rng_seed: u64,
) -> Result<RealBuffer, ChannelError> {
    let n = (duration_s * oversample_rate_hz).round() as usize;
    superpose_window(cells, rx, 0, n, oversample_rate_hz, rng_seed)
}

/// [`superpose`] over an arbitrary sample window.
pub fn superpose_window(
    cells: &[(CellConfig, MultipathProfile)],
    rx: Point,
    start_sample: i64,
    n_samples: usize,
    rate_hz: f64,
    rng_seed: u64,
) -> Result<RealBuffer, ChannelError> {
    for (cell, _) in cells {
        let top = cell.rf_carrier_hz() + cell.bandwidth.hz() / 2.0;
        if rate_hz <= 2.0 * top {
            return Err(ChannelError::Config(format!(
                "oversample rate {rate_hz} Hz must exceed twice the top band edge {top} Hz of PCI {}",
                cell.pci
            )));
        }
    }
    let mut rf = vec![0.0; n_samples];
    for (i, (cell, mp)) in cells.iter().enumerate() {
        let bb = received_baseband(cell, mp, rx, rate_hz, start_sample, n_samples, cell_seed(rng_seed, i))?;
        let w = 2.0 * PI * cell.rf_carrier_hz() / rate_hz;
        for (j, (out, y)) in rf.iter_mut().zip(&bb.samples).enumerate() {
            let phase = w * (start_sample + j as i64) as f64;
            let lo = Complex64::from_polar(1.0, phase % (2.0 * PI));
            *out += SQRT_2 * (y * lo).re;
        }
    }
    Ok(RealBuffer::new(rate_hz, rf))
}

/// Complex-baseband equivalent of [`superpose_window`]: each cell shifted by
/// its carrier offset from `ref_carrier_hz`.
pub fn superpose_baseband_window(
    cells: &[(CellConfig, MultipathProfile)],
    rx: Point,
    ref_carrier_hz: f64,
    start_sample: i64,
    n_samples: usize,
    rate_hz: f64,
    rng_seed: u64,
) -> Result<IqBuffer, ChannelError> {
    let mut acc = vec![Complex64::new(0.0, 0.0); n_samples];
    for (i, (cell, mp)) in cells.iter().enumerate() {
        let off = cell.rf_carrier_hz() - ref_carrier_hz;
        if 2.0 * (off.abs() + cell.bandwidth.hz() / 2.0) >= rate_hz {
            return Err(ChannelError::Config(format!(
                "render rate {rate_hz} Hz cannot hold PCI {} at offset {off} Hz",
                cell.pci
            )));
        }
        let bb = received_baseband(cell, mp, rx, rate_hz, start_sample, n_samples, cell_seed(rng_seed, i))?;
        let w = 2.0 * PI * off / rate_hz;
        for (j, (out, y)) in acc.iter_mut().zip(&bb.samples).enumerate() {
            if off == 0.0 {
                *out += y;
            } else {
                let phase = (w * (start_sample + j as i64) as f64) % (2.0 * PI);
                *out += y * Complex64::from_polar(1.0, phase);
            }
        }
    }
    Ok(IqBuffer::new(rate_hz, acc))
}

/// Ideal square-law detector.
pub fn envelope_square(rf: &RealBuffer) -> RealBuffer {
    RealBuffer::new(rf.sample_rate_hz, rf.samples.iter().map(|v| v * v).collect())
}

/// `|I + jQ|^2`, the square-law output of a complex-baseband signal.
pub fn envelope_magnitude_sq(iq: &IqBuffer) -> RealBuffer {
    RealBuffer::new(iq.sample_rate_hz, iq.samples.iter().map(|v| v.norm_sqr()).collect())
}

/// Low-pass filter and decimate to the ADC rate without receiver impairments.
///
/// The FIR is centred on each output instant, so the output is aligned with
/// the input (group delay removed). Samples beyond the input are zero. When
/// the input is already at the ADC rate the filter is bypassed.
pub fn filter_decimate(sq: &RealBuffer, cfg: &FrontEndConfig) -> Result<RealBuffer, ChannelError> {
    let m = cfg.decimation(sq.sample_rate_hz)?;
    if m == 1 {
        return Ok(sq.clone());
    }
    let taps = cfg.design_filter(sq.sample_rate_hz);
    let half = (taps.len() / 2) as i64;
    let x = &sq.samples;
    let n_out = x.len() / m;
    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let centre = (i * m) as i64;
        let lo = (centre - half).max(0);
        let hi = (centre + half).min(x.len() as i64 - 1);
        let mut acc = 0.0;
        // x[j] pairs with taps[j - centre + half]
        let t0 = (lo - centre + half) as usize;
        for (xj, h) in x[lo as usize..=hi as usize].iter().zip(&taps[t0..]) {
            acc += xj * h;
        }
        out.push(acc);
    }
    Ok(RealBuffer::new(cfg.adc_rate_hz, out))
}

/// Noise-free detector output for a cell that repeats `frame` forever: the
/// square law, then circular low-pass filtering and decimation, so the result
/// is the steady-state response with no start-up transient.
///
/// `native_fft` is the cell's native FFT size; the frame is rescaled to the
/// same power convention as [`received_baseband`].
pub fn fold_periodic_frame(
    frame: &IqBuffer,
    native_fft: usize,
    cfg: &FrontEndConfig,
) -> Result<RealBuffer, ChannelError> {
    let m = cfg.decimation(frame.sample_rate_hz)?;
    let fft = rate_to_fft(frame.sample_rate_hz)?;
    let gain = fft as f64 / native_fft as f64;
    let sq: Vec<f64> = frame.samples.iter().map(|v| v.norm_sqr() * gain).collect();
    let n = sq.len();
    if n % m != 0 {
        return Err(ChannelError::Config("frame length is not a multiple of the decimation".into()));
    }
    let taps = if m == 1 { vec![1.0] } else { cfg.design_filter(frame.sample_rate_hz) };
    let half = taps.len() / 2;
    let out = (0..n / m)
        .map(|i| {
            let start = (i * m + n - half % n) % n;
            taps.iter()
                .enumerate()
                .map(|(j, h)| h * sq[(start + j) % n])
                .sum()
        })
        .collect();
    Ok(RealBuffer::new(cfg.adc_rate_hz, out))
}

/// Adds post-detector spurs and white Gaussian noise in place.
pub fn add_receiver_impairments(trace: &mut RealBuffer, cfg: &FrontEndConfig, rng_seed: u64) {
    let fs = trace.sample_rate_hz;
    for spur in &cfg.spurs {
        let w = 2.0 * PI * spur.freq_hz / fs;
        for (i, v) in trace.samples.iter_mut().enumerate() {
            *v += spur.amplitude * (w * i as f64 + spur.phase_rad).cos();
        }
    }
    if cfg.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
        for v in trace.samples.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
}

/// Low-pass, decimate, then add receiver noise and spurs.
pub fn lowpass_decimate(
    sq: &RealBuffer,
    cfg: &FrontEndConfig,
    rng_seed: u64,
) -> Result<RealBuffer, ChannelError> {
    let mut out = filter_decimate(sq, cfg)?;
    add_receiver_impairments(&mut out, cfg, rng_seed);
    Ok(out)
}

/// How the detector output is synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SynthPath {
    /// Complex baseband when every cell shares one carrier, RF otherwise.
    #[default]
    Auto,
    Baseband,
    /// Real RF at the given oversample rate.
    Rf { oversample_rate_hz: f64 },
}

/// Default RF oversample rate: 80 x 1.92 MHz.
pub const DEFAULT_RF_RATE_HZ: f64 = 153.6e6;

/// Render multiple of the ADC rate for the complex-baseband path.
pub fn baseband_render_factor(cells: &[CellConfig], cfg: &FrontEndConfig, ref_carrier_hz: f64) -> usize {
    let base = (cfg.adc_rate_hz / BASE_SAMPLE_RATE_HZ).round() as usize;
    let mut m = cfg.baseband_oversample;
    for c in cells {
        let span = 2.0 * ((c.rf_carrier_hz() - ref_carrier_hz).abs() + c.bandwidth.hz() / 2.0);
        while (m * base * BASE_FFT_SIZE) < c.bandwidth.native_fft_size()
            || (m as f64) * cfg.adc_rate_hz <= span * 1.05
        {
            m += 1;
        }
    }
    m
}

/// Detector output at the ADC rate for `n_samples` starting at `start_sample`
/// (ADC samples from frame 0 of the transmitters), including receiver noise.
pub fn synthesize_detector_output(
    cells: &[(CellConfig, MultipathProfile)],
    rx: Point,
    front_end: &FrontEndConfig,
    start_sample: i64,
    n_samples: usize,
    path: SynthPath,
    rng_seed: u64,
) -> Result<RealBuffer, ChannelError> {
    front_end.validate()?;
    if cells.is_empty() {
        let mut out = RealBuffer::zeros(front_end.adc_rate_hz, n_samples);
        add_receiver_impairments(&mut out, front_end, substream(rng_seed, "noise", &[]));
        return Ok(out);
    }
    let plain: Vec<CellConfig> = cells.iter().map(|(c, _)| c.clone()).collect();
    check_distinct_cells(&plain)?;
    let single_band = plain.iter().all(|c| c.rf_carrier_hz() == plain[0].rf_carrier_hz());
    let path = match path {
        SynthPath::Auto if single_band => SynthPath::Baseband,
        SynthPath::Auto => SynthPath::Rf {
            oversample_rate_hz: DEFAULT_RF_RATE_HZ,
        },
        p => p,
    };

    let (rate, squared) = match path {
        SynthPath::Baseband | SynthPath::Auto => {
            let lo = plain.iter().map(|c| c.rf_carrier_hz()).fold(f64::INFINITY, f64::min);
            let hi = plain.iter().map(|c| c.rf_carrier_hz()).fold(f64::NEG_INFINITY, f64::max);
            let reference = (lo + hi) / 2.0;
            let m = baseband_render_factor(&plain, front_end, reference);
            let rate = front_end.adc_rate_hz * m as f64;
            let margin = front_end.design_filter(rate).len() as i64;
            let bb = superpose_baseband_window(
                cells,
                rx,
                reference,
                start_sample * m as i64 - margin,
                n_samples * m + 2 * margin as usize,
                rate,
                rng_seed,
            )?;
            (rate, envelope_magnitude_sq(&bb))
        }
        SynthPath::Rf { oversample_rate_hz } => {
            let rate = oversample_rate_hz;
            let m = front_end.decimation(rate)? as i64;
            let margin = front_end.design_filter(rate).len() as i64;
            let rf = superpose_window(
                cells,
                rx,
                start_sample * m - margin,
                n_samples * m as usize + 2 * margin as usize,
                rate,
                rng_seed,
            )?;
            (rate, envelope_square(&rf))
        }
    };
    let m = front_end.decimation(rate)?;
    let margin = front_end.design_filter(rate).len();
    // The window starts `margin` input samples early; margin may not be a
    // multiple of the decimation factor, so shift it off before decimating.
    let skip = margin % m;
    let trimmed = RealBuffer::new(rate, squared.samples[skip..].to_vec());
    let dec = filter_decimate(&trimmed, front_end)?;
    let lead = margin / m;
    let mut out = RealBuffer::new(front_end.adc_rate_hz, dec.samples[lead..lead + n_samples].to_vec());
    add_receiver_impairments(&mut out, front_end, substream(rng_seed, "noise", &[]));
    Ok(out)
}

/// Percentage of the folded sync band `[0, 1.08 MHz]` covered by the
/// low-passed cross-term spectrum of two cells.
///
/// The cross product `x1 * conj(x2)` occupies the difference set of the two
/// occupied bands. It is evaluated numerically by convolving occupancy masks
/// on a fine frequency grid, folding to non-negative frequencies, and keeping
/// only what survives the low-pass.
pub fn folded_sync_overlap(c1: &CellConfig, c2: &CellConfig, lpf_cutoff_hz: f64) -> f64 {
    let step = SUBCARRIER_SPACING_HZ / 8.0;
    let b1 = c1.bandwidth.occupied_hz();
    let b2 = c2.bandwidth.occupied_hz();
    let n1 = (b1 / step).round() as usize;
    let n2 = (b2 / step).round() as usize;
    let n = (n1 + n2).next_power_of_two() * 2;
    let mut m1 = vec![Complex64::new(0.0, 0.0); n];
    let mut m2 = vec![Complex64::new(0.0, 0.0); n];
    m1[..n1].iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
    // Mirror band 2 so the convolution yields the difference set.
    m2[..n2].iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
    m2[..n2].reverse();
    dsp::fft(&mut m1);
    dsp::fft(&mut m2);
    let mut conv: Vec<Complex64> = m1.iter().zip(&m2).map(|(a, b)| a * b).collect();
    dsp::ifft(&mut conv);

    // conv[i] > 0 covers offsets (f1 - b1/2 + i1*step) - (f2 + b2/2 - i2'*step).
    let delta = c1.carrier_hz - c2.carrier_hz;
    let f0 = delta - b1 / 2.0 - b2 / 2.0;
    let sync_bins = (SYNC_BAND_HZ / step).round() as usize;
    let mut covered = vec![false; sync_bins];
    for (i, v) in conv.iter().enumerate().take(n1 + n2) {
        if v.re / n as f64 <= 0.5 {
            continue;
        }
        let lo = (f0 + i as f64 * step).abs();
        let hi = (f0 + (i + 1) as f64 * step).abs();
        let (lo, hi) = if lo < hi { (lo, hi) } else { (hi, lo) };
        // a bin straddling DC folds onto [0, max]
        let lo = if (f0 + i as f64 * step) * (f0 + (i + 1) as f64 * step) < 0.0 { 0.0 } else { lo };
        let hi = hi.min(lpf_cutoff_hz);
        if hi <= lo {
            continue;
        }
        let a = (lo / step).floor() as usize;
        let b = ((hi / step).ceil() as usize).min(sync_bins);
        for c in covered.iter_mut().take(b).skip(a) {
            *c = true;
        }
    }
    100.0 * covered.iter().filter(|&&c| c).count() as f64 / sync_bins as f64
}
