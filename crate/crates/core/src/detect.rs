//! PCI detection on folded traces.
//!
//! Every PCI has a folded reference: the detector output of a preamble-only
//! 1.4 MHz cell, excised around the SSS+PSS symbol pair of subframe 0 (and,
//! separately, subframe 5, whose SSS differs). A trace is stacked to one
//! frame and correlated against the references.
//!
//! Delay convention: `delay_samples = D` means the cell's frame boundary sits
//! at sample `D` of the stacked frame. The subframe-0 reference then starts at
//! `D + offset` and the subframe-5 reference at `D + offset + frame_len / 2`.
//!
//! Plain score at delay D is the mean of the two zero-mean normalized
//! correlations. PHAT score is the whitened cross-correlation against the
//! frame-long reference holding both sync regions.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::RealBuffer;
use crate::channel::{fold_periodic_frame, ChannelError, FrontEndConfig};
use crate::dsp;
use crate::lte::{
    self, Bandwidth, DataMode, FrameConfig, LteError, Pci, PssIndex, Subframe, BASE_FFT_SIZE,
    BASE_SAMPLE_RATE_HZ,
};

/// Environment variable naming the template-bank cache directory.
pub const BANK_CACHE_ENV: &str = "FOLDLOC_BANK_DIR";

const BANK_MAGIC: &[u8; 4] = b"FLTB";
const BANK_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("trace too short: {have} samples, need {need}")]
    TooShort { have: usize, need: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("template bank was built for front end {bank}, trace uses {trace}")]
    HashMismatch { bank: String, trace: String },
    #[error("bank cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Lte(#[from] LteError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    #[default]
    Plain,
    Phat,
}

impl std::str::FromStr for CorrelationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plain" => Ok(Self::Plain),
            "phat" => Ok(Self::Phat),
            other => Err(format!("unknown correlation mode '{other}' (plain|phat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub pci: Pci,
    pub delay_samples: usize,
    pub score: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub subsample_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldedTemplate {
    pub pci: Pci,
    /// Subframe-0 SSS+PSS region, unit norm.
    pub samples: Vec<f64>,
    /// Subframe-5 region, unit norm.
    pub alt_samples: Vec<f64>,
    /// Norm of the subframe-0 region for a unit received amplitude.
    pub norm: f64,
    pub alt_norm: f64,
    /// Start of the subframe-0 region relative to the frame boundary.
    pub offset: usize,
    zm: Vec<f64>,
    alt_zm: Vec<f64>,
}

impl FoldedTemplate {
    fn new(pci: Pci, raw: Vec<f64>, alt_raw: Vec<f64>, offset: usize) -> Self {
        let norm = dsp::norm(&raw);
        let alt_norm = dsp::norm(&alt_raw);
        let samples: Vec<f64> = raw.iter().map(|v| v / norm).collect();
        let alt_samples: Vec<f64> = alt_raw.iter().map(|v| v / alt_norm).collect();
        Self::from_parts(pci, samples, alt_samples, norm, alt_norm, offset)
    }

    fn from_parts(pci: Pci, samples: Vec<f64>, alt_samples: Vec<f64>, norm: f64, alt_norm: f64, offset: usize) -> Self {
        let zm = zero_mean_unit(&samples);
        let alt_zm = zero_mean_unit(&alt_samples);
        Self {
            pci,
            samples,
            alt_samples,
            norm,
            alt_norm,
            offset,
            zm,
            alt_zm,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Subframe-0 region as the detector sees it for a unit-amplitude cell.
    pub fn raw(&self) -> Vec<f64> {
        self.samples.iter().map(|v| v * self.norm).collect()
    }

    pub fn alt_raw(&self) -> Vec<f64> {
        self.alt_samples.iter().map(|v| v * self.alt_norm).collect()
    }
}

fn zero_mean_unit(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let n = dsp::norm(&c);
    c.iter().map(|v| if n > 0.0 { v / n } else { 0.0 }).collect()
}

type SpectrumSet = Arc<Vec<Vec<Complex64>>>;

/// All 504 folded templates plus the two distinct folded PSS waveforms.
#[derive(Debug)]
pub struct TemplateBank {
    pub config_hash: String,
    pub frame_len: usize,
    pub templates: Vec<FoldedTemplate>,
    /// Folded PSS symbol for sector 0 and for sectors 1/2 (which fold to the
    /// same waveform).
    pub pss_folded: [Vec<f64>; 2],
    /// Start of the PSS region relative to the frame boundary.
    pub pss_offset: usize,
    pss_zm: [Vec<f64>; 2],
    spectra: Mutex<HashMap<CorrelationMode, SpectrumSet>>,
}

impl Clone for TemplateBank {
    fn clone(&self) -> Self {
        Self {
            config_hash: self.config_hash.clone(),
            frame_len: self.frame_len,
            templates: self.templates.clone(),
            pss_folded: self.pss_folded.clone(),
            pss_offset: self.pss_offset,
            pss_zm: self.pss_zm.clone(),
            spectra: Mutex::new(HashMap::new()),
        }
    }
}

impl PartialEq for TemplateBank {
    fn eq(&self, other: &Self) -> bool {
        self.config_hash == other.config_hash
            && self.frame_len == other.frame_len
            && self.templates == other.templates
            && self.pss_folded == other.pss_folded
            && self.pss_offset == other.pss_offset
    }
}

/// Geometry of the excised regions at the ADC rate.
struct Layout {
    cfg: FrameConfig,
    offset: usize,
    len: usize,
    pss_offset: usize,
    pss_len: usize,
}

fn layout(front_end: &FrontEndConfig) -> Layout {
    let r = (front_end.adc_rate_hz / BASE_SAMPLE_RATE_HZ).round() as usize;
    let cfg = FrameConfig::new(Bandwidth::Mhz1_4).with_fft_size(BASE_FFT_SIZE * r);
    let (l_sss, l_pss) = cfg.sync_symbols(Subframe::Zero);
    let margin = r;
    let start = cfg.symbol_start(l_sss) - margin;
    let end = cfg.symbol_start(l_pss) + cfg.cp_len(l_pss) + cfg.fft_size + margin;
    let pss_start = cfg.symbol_start(l_pss) - margin;
    Layout {
        cfg,
        offset: start,
        len: end - start,
        pss_offset: pss_start,
        pss_len: end - pss_start,
    }
}

fn render_fold(
    pci: Pci,
    front_end: &FrontEndConfig,
    grid_edit: impl Fn(&mut lte::ResourceGrid),
) -> Result<RealBuffer, DetectError> {
    let r = (front_end.adc_rate_hz / BASE_SAMPLE_RATE_HZ).round() as usize;
    let fft = BASE_FFT_SIZE * r * front_end.baseband_oversample;
    let cfg = FrameConfig::new(Bandwidth::Mhz1_4).with_fft_size(fft);
    let mut grid = lte::build_frame(&cfg, pci, DataMode::None, 0)?;
    grid_edit(&mut grid);
    let frame = lte::ofdm_modulate(&grid);
    Ok(fold_periodic_frame(&frame, Bandwidth::Mhz1_4.native_fft_size(), front_end)?)
}

impl TemplateBank {
    /// Renders every template through the noise-free front end.
    pub fn build(front_end: &FrontEndConfig) -> Result<Self, DetectError> {
        front_end.validate()?;
        let lay = layout(front_end);
        let half = lay.cfg.frame_len() / 2;
        let mut templates = Vec::with_capacity(Pci::COUNT);
        for pci in Pci::all() {
            let fold = render_fold(pci, front_end, |_| {})?;
            let raw = fold.samples[lay.offset..lay.offset + lay.len].to_vec();
            let alt = fold.samples[lay.offset + half..lay.offset + half + lay.len].to_vec();
            templates.push(FoldedTemplate::new(pci, raw, alt, lay.offset));
        }
        let mut pss_folded: [Vec<f64>; 2] = Default::default();
        for (slot, sector) in [(0usize, 0u8), (1, 1)] {
            let pci = Pci::from_parts(lte::SssIndex::new(0)?, PssIndex::new(sector)?);
            let fold = render_fold(pci, front_end, |grid| {
                let n_sc = grid.n_subcarriers();
                for sf in [Subframe::Zero, Subframe::Five] {
                    let (l_sss, _) = grid.config.sync_symbols(sf);
                    for k in 0..n_sc {
                        grid.set(k, l_sss, Complex64::new(0.0, 0.0));
                    }
                }
            })?;
            let raw = &fold.samples[lay.pss_offset..lay.pss_offset + lay.pss_len];
            let n = dsp::norm(raw);
            pss_folded[slot] = raw.iter().map(|v| v / n).collect();
        }
        Ok(Self::assemble(
            front_end.template_hash(),
            lay.cfg.frame_len(),
            templates,
            pss_folded,
            lay.pss_offset,
        ))
    }

    fn assemble(
        config_hash: String,
        frame_len: usize,
        templates: Vec<FoldedTemplate>,
        pss_folded: [Vec<f64>; 2],
        pss_offset: usize,
    ) -> Self {
        let pss_zm = [zero_mean_unit(&pss_folded[0]), zero_mean_unit(&pss_folded[1])];
        Self {
            config_hash,
            frame_len,
            templates,
            pss_folded,
            pss_offset,
            pss_zm,
            spectra: Mutex::new(HashMap::new()),
        }
    }

    pub fn template(&self, pci: Pci) -> &FoldedTemplate {
        &self.templates[pci.index()]
    }

    /// Folded PSS slot for a sector (0 for sector 0, 1 for sectors 1 and 2).
    pub fn pss_slot(sector: PssIndex) -> usize {
        usize::from(sector.value() != 0)
    }

    /// Loads the bank from `dir` when a file for this front end exists,
    /// otherwise builds it and writes it there.
    pub fn load_or_build(front_end: &FrontEndConfig, dir: Option<&Path>) -> Result<Self, DetectError> {
        let dir = match dir {
            Some(d) => Some(d.to_path_buf()),
            None => std::env::var_os(BANK_CACHE_ENV).map(PathBuf::from),
        };
        let Some(dir) = dir else {
            return Self::build(front_end);
        };
        let path = dir.join(format!("bank-{}.bin", front_end.template_hash()));
        if path.exists() {
            match Self::read_from(&path) {
                Ok(bank) if bank.config_hash == front_end.template_hash() => return Ok(bank),
                Ok(_) => log::warn!("cached bank {} has a different hash; rebuilding", path.display()),
                Err(e) => log::warn!("ignoring unreadable bank cache {}: {e}", path.display()),
            }
        }
        let bank = Self::build(front_end)?;
        fs::create_dir_all(&dir)?;
        let tmp = path.with_extension("tmp");
        bank.write_to(&tmp)?;
        fs::rename(&tmp, &path)?;
        Ok(bank)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), DetectError> {
        let mut w = io::BufWriter::new(fs::File::create(path)?);
        w.write_all(BANK_MAGIC)?;
        w.write_u32::<LittleEndian>(BANK_VERSION)?;
        let h = self.config_hash.as_bytes();
        w.write_u32::<LittleEndian>(h.len() as u32)?;
        w.write_all(h)?;
        w.write_u64::<LittleEndian>(self.frame_len as u64)?;
        w.write_u64::<LittleEndian>(self.pss_offset as u64)?;
        for p in &self.pss_folded {
            write_vec(&mut w, p)?;
        }
        w.write_u32::<LittleEndian>(self.templates.len() as u32)?;
        for t in &self.templates {
            w.write_u16::<LittleEndian>(t.pci.value())?;
            w.write_u64::<LittleEndian>(t.offset as u64)?;
            w.write_f64::<LittleEndian>(t.norm)?;
            w.write_f64::<LittleEndian>(t.alt_norm)?;
            write_vec(&mut w, &t.samples)?;
            write_vec(&mut w, &t.alt_samples)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, DetectError> {
        let mut r = io::BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BANK_MAGIC {
            return Err(DetectError::Cache("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != BANK_VERSION {
            return Err(DetectError::Cache(format!("unsupported version {version}")));
        }
        let hl = r.read_u32::<LittleEndian>()? as usize;
        let mut h = vec![0u8; hl];
        r.read_exact(&mut h)?;
        let config_hash = String::from_utf8(h).map_err(|e| DetectError::Cache(e.to_string()))?;
        let frame_len = r.read_u64::<LittleEndian>()? as usize;
        let pss_offset = r.read_u64::<LittleEndian>()? as usize;
        let pss_folded = [read_vec(&mut r)?, read_vec(&mut r)?];
        let count = r.read_u32::<LittleEndian>()? as usize;
        if count != Pci::COUNT {
            return Err(DetectError::Cache(format!("{count} templates, expected 504")));
        }
        let mut templates = Vec::with_capacity(count);
        for i in 0..count {
            let pci = Pci::new(r.read_u16::<LittleEndian>()?)?;
            if pci.index() != i {
                return Err(DetectError::Cache("templates out of order".into()));
            }
            let offset = r.read_u64::<LittleEndian>()? as usize;
            let norm = r.read_f64::<LittleEndian>()?;
            let alt_norm = r.read_f64::<LittleEndian>()?;
            let samples = read_vec(&mut r)?;
            let alt = read_vec(&mut r)?;
            templates.push(FoldedTemplate::from_parts(pci, samples, alt, norm, alt_norm, offset));
        }
        Ok(Self::assemble(config_hash, frame_len, templates, pss_folded, pss_offset))
    }

    /// Refuses traces synthesized for a different front end.
    pub fn check_hash(&self, trace_hash: &str) -> Result<(), DetectError> {
        if self.config_hash != trace_hash {
            return Err(DetectError::HashMismatch {
                bank: self.config_hash.clone(),
                trace: trace_hash.to_string(),
            });
        }
        Ok(())
    }

    /// Frame-long reference holding both sync regions of `t`.
    fn frame_reference(&self, t: &FoldedTemplate) -> Vec<f64> {
        let n = self.frame_len;
        let mut r = vec![0.0; n];
        for (i, v) in t.samples.iter().enumerate() {
            r[(t.offset + i) % n] += v;
        }
        for (i, v) in t.alt_samples.iter().enumerate() {
            r[(t.offset + n / 2 + i) % n] += v;
        }
        r
    }

    /// Per-template spectra used by exhaustive correlation, built on first use.
    fn spectra(&self, mode: CorrelationMode) -> SpectrumSet {
        let mut cache = self.spectra.lock().expect("spectrum cache poisoned");
        if let Some(s) = cache.get(&mode) {
            return Arc::clone(s);
        }
        let n = self.frame_len;
        let set: Vec<Vec<Complex64>> = self
            .templates
            .iter()
            .map(|t| match mode {
                CorrelationMode::Plain => {
                    // real part: subframe-0 template, imaginary: subframe 5
                    let mut c = vec![Complex64::new(0.0, 0.0); n];
                    for (i, (a, b)) in t.zm.iter().zip(&t.alt_zm).enumerate() {
                        c[i] = Complex64::new(*a, *b);
                    }
                    dsp::fft(&mut c);
                    c
                }
                CorrelationMode::Phat => whiten(dsp::real_fft(&self.frame_reference(t))),
            })
            .collect();
        let set = Arc::new(set);
        cache.insert(mode, Arc::clone(&set));
        set
    }
}

fn write_vec<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    w.write_u32::<LittleEndian>(v.len() as u32)?;
    for x in v {
        w.write_f64::<LittleEndian>(*x)?;
    }
    Ok(())
}

fn read_vec<R: Read>(r: &mut R) -> io::Result<Vec<f64>> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    (0..n).map(|_| r.read_f64::<LittleEndian>()).collect()
}

/// Unit-magnitude spectrum; bins more than 240 dB below the peak shrink
/// proportionally instead of being blown up.
fn whiten(mut spec: Vec<Complex64>) -> Vec<Complex64> {
    let peak = spec.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let floor = peak * 1e-12;
    for v in spec.iter_mut() {
        let m = v.norm();
        *v /= m.max(floor).max(f64::MIN_POSITIVE);
    }
    spec
}

/// Element-wise mean of `n_frames` consecutive frames.
pub fn stack_frames(trace: &RealBuffer, n_frames: usize) -> Result<RealBuffer, DetectError> {
    let frame_len = (trace.sample_rate_hz * lte::FRAME_DURATION_S).round() as usize;
    if n_frames == 0 {
        return Err(DetectError::Config("n_frames must be at least 1".into()));
    }
    let need = n_frames * frame_len;
    if trace.len() < need {
        return Err(DetectError::TooShort {
            have: trace.len(),
            need,
        });
    }
    let mut out = vec![0.0; frame_len];
    for f in 0..n_frames {
        for (o, v) in out.iter_mut().zip(&trace.samples[f * frame_len..(f + 1) * frame_len]) {
            *o += v;
        }
    }
    let s = 1.0 / n_frames as f64;
    out.iter_mut().for_each(|v| *v *= s);
    Ok(RealBuffer::new(trace.sample_rate_hz, out))
}

/// Circular correlation engine over one stacked frame.
pub struct Correlator {
    x: Vec<f64>,
    spectrum: Vec<Complex64>,
    whitened: Vec<Complex64>,
    prefix: Vec<f64>,
    prefix_sq: Vec<f64>,
    /// Windows whose spread is below this (per sqrt(sample)) count as silent.
    std_floor: f64,
}

impl Correlator {
    pub fn new(x: &[f64]) -> Self {
        let n = x.len();
        let spectrum = dsp::real_fft(x);
        let whitened = whiten(spectrum.clone());
        // doubled prefix sums make circular windows contiguous
        let mut prefix = Vec::with_capacity(2 * n + 1);
        let mut prefix_sq = Vec::with_capacity(2 * n + 1);
        let (mut s, mut q) = (0.0, 0.0);
        prefix.push(0.0);
        prefix_sq.push(0.0);
        for i in 0..2 * n {
            let v = x[i % n];
            s += v;
            q += v * v;
            prefix.push(s);
            prefix_sq.push(q);
        }
        let mean = x.iter().sum::<f64>() / n.max(1) as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
        Self {
            x: x.to_vec(),
            spectrum,
            whitened,
            prefix,
            prefix_sq,
            std_floor: 1e-3 * var.sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Norm of the mean-removed window `[start, start + len)` (circular).
    fn window_spread(&self, start: usize, len: usize) -> f64 {
        let s = self.prefix[start + len] - self.prefix[start];
        let q = self.prefix_sq[start + len] - self.prefix_sq[start];
        let var = (q - s * s / len as f64).max(0.0);
        var.sqrt().max(self.std_floor * (len as f64).sqrt())
    }

    fn normalize(&self, num: f64, lag: usize, len: usize) -> f64 {
        let d = self.window_spread(lag % self.len(), len);
        if d > 0.0 {
            (num / d).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }

    /// Zero-mean normalized correlation against a zero-mean unit template at
    /// one lag.
    fn plain_at(&self, zm: &[f64], lag: usize) -> f64 {
        let n = self.len();
        let num: f64 = zm.iter().enumerate().map(|(i, t)| t * self.x[(lag + i) % n]).sum();
        self.normalize(num, lag, zm.len())
    }

    /// Plain scores of a zero-mean unit template at every lag.
    fn plain_all(&self, zm: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut t = vec![Complex64::new(0.0, 0.0); n];
        for (i, v) in zm.iter().enumerate() {
            t[i] = Complex64::new(*v, 0.0);
        }
        dsp::fft(&mut t);
        let mut r: Vec<Complex64> = self.spectrum.iter().zip(&t).map(|(a, b)| a * b.conj()).collect();
        dsp::ifft(&mut r);
        (0..n).map(|l| self.normalize(r[l].re / n as f64, l, zm.len())).collect()
    }

    /// PHAT scores against a whitened reference spectrum.
    fn phat_all(&self, white_ref: &[Complex64]) -> Vec<f64> {
        let n = self.len();
        let mut r: Vec<Complex64> = self.whitened.iter().zip(white_ref).map(|(a, b)| a * b.conj()).collect();
        dsp::ifft(&mut r);
        r.iter().map(|v| (v.re / n as f64).clamp(-1.0, 1.0)).collect()
    }
}

/// Scores of one template (placed at lag `l`) for every lag of `stacked`.
///
/// Plain mode is the zero-mean normalized cross-correlation; PHAT mode is the
/// inverse transform of the unit-magnitude cross-spectrum, scaled so a perfect
/// match scores 1.
pub fn correlate(stacked: &[f64], tpl: &[f64], mode: CorrelationMode) -> Result<Vec<f64>, DetectError> {
    if stacked.len() < tpl.len() || tpl.is_empty() {
        return Err(DetectError::TooShort {
            have: stacked.len(),
            need: tpl.len().max(1),
        });
    }
    let c = Correlator::new(stacked);
    Ok(match mode {
        CorrelationMode::Plain => c.plain_all(&zero_mean_unit(tpl)),
        CorrelationMode::Phat => {
            let mut padded = vec![0.0; stacked.len()];
            padded[..tpl.len()].copy_from_slice(tpl);
            c.phat_all(&whiten(dsp::real_fft(&padded)))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub mode: CorrelationMode,
    pub thresh_pss: f64,
    pub thresh_sss: f64,
    /// Stage-2 search half-width around each PSS candidate.
    pub window: usize,
    /// Stage-1 keeps at most this many strongest PSS peaks.
    pub max_candidates: usize,
}

impl DetectorConfig {
    pub fn for_mode(mode: CorrelationMode) -> Self {
        let (thresh_pss, thresh_sss) = match mode {
            CorrelationMode::Plain => (0.3, 0.5),
            CorrelationMode::Phat => (0.05, 0.1),
        };
        Self {
            mode,
            thresh_pss,
            thresh_sss,
            window: 3,
            max_candidates: 16,
        }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.thresh_pss > 0.0 && self.thresh_pss <= 1.0) || !(self.thresh_sss > 0.0 && self.thresh_sss < 1.0) {
            return Err(DetectError::Config("thresholds must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::for_mode(CorrelationMode::Plain)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalResult {
    pub detections: Vec<Detection>,
    /// Frame delays proposed by the PSS stage.
    pub candidates: Vec<usize>,
    /// Template-lag score evaluations performed.
    pub correlations: u64,
}

fn check_frame(stacked: &RealBuffer, bank: &TemplateBank) -> Result<(), DetectError> {
    if stacked.len() != bank.frame_len {
        return Err(DetectError::Config(format!(
            "stacked trace has {} samples; the bank expects one frame of {}",
            stacked.len(),
            bank.frame_len
        )));
    }
    Ok(())
}

/// Detection scores of `pci` at every frame delay.
fn scores_all(c: &Correlator, bank: &TemplateBank, spectra: &[Vec<Complex64>], pci: Pci, mode: CorrelationMode) -> Vec<f64> {
    let n = c.len();
    let t = bank.template(pci);
    match mode {
        CorrelationMode::Plain => {
            let s = &spectra[pci.index()];
            let mut r: Vec<Complex64> = c.spectrum.iter().zip(s).map(|(a, b)| a * b.conj()).collect();
            dsp::ifft(&mut r);
            let len = t.len();
            (0..n)
                .map(|d| {
                    let l0 = (d + t.offset) % n;
                    let l5 = (d + t.offset + n / 2) % n;
                    let a = c.normalize(r[l0].re / n as f64, l0, len);
                    let b = c.normalize(-r[l5].im / n as f64, l5, len);
                    0.5 * (a + b)
                })
                .collect()
        }
        CorrelationMode::Phat => c.phat_all(&spectra[pci.index()]),
    }
}

fn score_at(c: &Correlator, t: &FoldedTemplate, d: usize) -> f64 {
    let n = c.len();
    0.5 * (c.plain_at(&t.zm, (d + t.offset) % n) + c.plain_at(&t.alt_zm, (d + t.offset + n / 2) % n))
}

/// Full-bank scores: one score per frame delay for each PCI in `pcis`
/// (all 504 when `None`).
pub fn exhaustive_scores(
    stacked: &RealBuffer,
    bank: &TemplateBank,
    mode: CorrelationMode,
    pcis: Option<&[Pci]>,
) -> Result<Vec<(Pci, Vec<f64>)>, DetectError> {
    check_frame(stacked, bank)?;
    let c = Correlator::new(&stacked.samples);
    let spectra = bank.spectra(mode);
    let all: Vec<Pci>;
    let list = match pcis {
        Some(p) => p,
        None => {
            all = Pci::all().collect();
            &all
        }
    };
    Ok(list.iter().map(|&p| (p, scores_all(&c, bank, &spectra, p, mode))).collect())
}

/// Best (PCI, delay) over the bank or a PCI subset. Ties go to the lower PCI
/// and delay.
pub fn identify_top1(
    stacked: &RealBuffer,
    bank: &TemplateBank,
    mode: CorrelationMode,
    pcis: Option<&[Pci]>,
) -> Result<Option<Detection>, DetectError> {
    let mut best: Option<Detection> = None;
    for (pci, scores) in exhaustive_scores(stacked, bank, mode, pcis)? {
        for (d, &s) in scores.iter().enumerate() {
            if best.as_ref().map_or(true, |b| s > b.score) {
                best = Some(Detection {
                    pci,
                    delay_samples: d,
                    score: s,
                    amplitude: 0.0,
                    subsample_offset: 0.0,
                });
            }
        }
    }
    Ok(best)
}

fn circ_dist(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b) % n;
    d.min(n - d)
}

/// Brute-force oracle: every (PCI, delay) whose score exceeds `thresh` and is
/// the maximum within `±window` delays of that PCI's score sequence.
pub fn exhaustive_detect(
    stacked: &RealBuffer,
    bank: &TemplateBank,
    mode: CorrelationMode,
    thresh: f64,
    window: usize,
) -> Result<Vec<Detection>, DetectError> {
    let n = bank.frame_len;
    let mut out = Vec::new();
    for (pci, scores) in exhaustive_scores(stacked, bank, mode, None)? {
        for (d, &s) in scores.iter().enumerate() {
            if s <= thresh {
                continue;
            }
            let is_peak = (1..=window).all(|k| scores[(d + k) % n] < s && scores[(d + n - k) % n] <= s);
            if is_peak {
                out.push(Detection {
                    pci,
                    delay_samples: d,
                    score: s,
                    amplitude: 0.0,
                    subsample_offset: 0.0,
                });
            }
        }
    }
    sort_detections(&mut out);
    Ok(out)
}

/// Orders by score descending, then delay, then PCI.
pub fn sort_detections(d: &mut [Detection]) {
    d.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.delay_samples.cmp(&b.delay_samples))
            .then(a.pci.cmp(&b.pci))
    });
}

/// Two-stage search: folded-PSS peaks propose frame delays, then only the
/// PCIs of the matching sectors are scored within `±window` of each proposal.
pub fn hierarchical_detect(
    stacked: &RealBuffer,
    bank: &TemplateBank,
    cfg: &DetectorConfig,
) -> Result<HierarchicalResult, DetectError> {
    cfg.validate()?;
    check_frame(stacked, bank)?;
    let n = bank.frame_len;
    let half = n / 2;
    let c = Correlator::new(&stacked.samples);
    let mut correlations = 0u64;

    // Stage 1 on the half-frame grid: PSS repeats every half frame.
    let mut peaks: Vec<(f64, usize, usize)> = Vec::new(); // (score, delay, slot)
    for slot in 0..2 {
        let folded = match cfg.mode {
            CorrelationMode::Plain => {
                let s = c.plain_all(&bank.pss_zm[slot]);
                (0..half).map(|l| 0.5 * (s[l] + s[l + half])).collect::<Vec<_>>()
            }
            CorrelationMode::Phat => {
                let mut r = vec![0.0; n];
                for (i, v) in bank.pss_folded[slot].iter().enumerate() {
                    r[i] += v;
                    r[i + half] += v;
                }
                let s = c.phat_all(&whiten(dsp::real_fft(&r)));
                s[..half].to_vec()
            }
        };
        correlations += n as u64;
        for l in 0..half {
            let v = folded[l];
            if v < cfg.thresh_pss {
                continue;
            }
            let w = cfg.window.max(1);
            let is_peak = (1..=w).all(|k| folded[(l + k) % half] < v && folded[(l + half - k) % half] <= v);
            if is_peak {
                let delay = (l + n - bank.pss_offset) % half;
                peaks.push((v, delay, slot));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    peaks.truncate(cfg.max_candidates);

    let mut candidates: Vec<usize> = Vec::new();
    for &(_, d, _) in &peaks {
        for base in [d, d + half] {
            if !candidates.contains(&base) {
                candidates.push(base);
            }
        }
    }
    candidates.sort_unstable();

    // Stage 2.
    let mut best: HashMap<(Pci, usize), Detection> = HashMap::new();
    let mut phat_cache: HashMap<Pci, Vec<f64>> = HashMap::new();
    let phat_spectra = (cfg.mode == CorrelationMode::Phat).then(|| bank.spectra(CorrelationMode::Phat));
    let w = cfg.window as i64;
    for &(_, d0, slot) in &peaks {
        let sectors: Vec<u8> = if slot == 0 { vec![0] } else { vec![1, 2] };
        for base in [d0, d0 + half] {
            for sector in &sectors {
                for g in 0..168u8 {
                    let pci = Pci::from_parts(lte::SssIndex::new(g)?, PssIndex::new(*sector)?);
                    let mut top: Option<(f64, usize)> = None;
                    for k in -w..=w {
                        let d = ((base as i64 + k).rem_euclid(n as i64)) as usize;
                        let s = match cfg.mode {
                            CorrelationMode::Plain => {
                                correlations += 1;
                                score_at(&c, bank.template(pci), d)
                            }
                            CorrelationMode::Phat => {
                                let row = phat_cache.entry(pci).or_insert_with(|| {
                                    correlations += n as u64;
                                    scores_all(&c, bank, phat_spectra.as_ref().unwrap(), pci, cfg.mode)
                                });
                                row[d]
                            }
                        };
                        if top.map_or(true, |(b, _)| s > b) {
                            top = Some((s, d));
                        }
                    }
                    if let Some((s, d)) = top {
                        if s > cfg.thresh_sss {
                            let key = (pci, base);
                            let det = Detection {
                                pci,
                                delay_samples: d,
                                score: s,
                                amplitude: 0.0,
                                subsample_offset: 0.0,
                            };
                            match best.get(&key) {
                                Some(b) if b.score >= s => {}
                                _ => {
                                    best.insert(key, det);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    // Merge hits of one PCI that landed on the same delay from different
    // candidates.
    let mut dets: Vec<Detection> = best.into_values().collect();
    sort_detections(&mut dets);
    let mut merged: Vec<Detection> = Vec::new();
    for d in dets {
        let dup = merged
            .iter()
            .any(|m| m.pci == d.pci && circ_dist(m.delay_samples, d.delay_samples, n) <= 2 * cfg.window);
        if !dup {
            merged.push(d);
        }
    }
    Ok(HierarchicalResult {
        detections: merged,
        candidates,
        correlations,
    })
}

/// Keeps, within each group of detections whose delays chain within
/// `delay_cluster_radius`, only those with the largest amplitude.
pub fn suppress_false_positives(raw: &[Detection], delay_cluster_radius: usize) -> Vec<Detection> {
    suppress_below_ratio(raw, delay_cluster_radius, 1.0)
}

/// Like [`suppress_false_positives`], but keeps every cluster member whose
/// amplitude is at least `keep_ratio` times the cluster maximum. Real cells
/// can share a delay; after a joint amplitude fit, spurious look-alikes sit
/// near zero while real cells do not.
pub fn suppress_below_ratio(raw: &[Detection], delay_cluster_radius: usize, keep_ratio: f64) -> Vec<Detection> {
    if raw.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<&Detection> = raw.iter().collect();
    order.sort_by(|a, b| a.delay_samples.cmp(&b.delay_samples).then(a.pci.cmp(&b.pci)));
    let mut clusters: Vec<Vec<&Detection>> = Vec::new();
    for d in order {
        match clusters.last_mut() {
            Some(c) if d.delay_samples - c.last().unwrap().delay_samples <= delay_cluster_radius => c.push(d),
            _ => clusters.push(vec![d]),
        }
    }
    let mut out = Vec::new();
    for c in clusters {
        let top = c.iter().map(|d| d.amplitude).fold(f64::NEG_INFINITY, f64::max);
        out.extend(c.into_iter().filter(|d| d.amplitude >= top * keep_ratio).cloned());
    }
    sort_detections(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    pub(crate) fn bank() -> &'static TemplateBank {
        static BANK: OnceLock<TemplateBank> = OnceLock::new();
        BANK.get_or_init(|| TemplateBank::build(&FrontEndConfig::default()).unwrap())
    }

    fn pci(v: u16) -> Pci {
        Pci::new(v).unwrap()
    }

    fn det(p: u16, delay: usize, amp: f64, score: f64) -> Detection {
        Detection {
            pci: pci(p),
            delay_samples: delay,
            score,
            amplitude: amp,
            subsample_offset: 0.0,
        }
    }

    /// A stacked frame holding the folded preamble of `p` at `delay`.
    fn frame_with(p: u16, delay: usize, amp: f64) -> RealBuffer {
        let b = bank();
        let fe = FrontEndConfig::default();
        let fold = render_fold(pci(p), &fe, |_| {}).unwrap();
        let n = b.frame_len;
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[(i + delay) % n] = amp * fold.samples[i];
        }
        RealBuffer::new(fe.adc_rate_hz, x)
    }

    #[test]
    fn templates_have_documented_shape() {
        let b = bank();
        assert_eq!(b.templates.len(), 504);
        assert_eq!(b.frame_len, 19200);
        for t in &b.templates {
            assert_eq!(t.len(), 276);
            assert!((dsp::norm(&t.samples) - 1.0).abs() < 1e-12);
            assert!((dsp::norm(&t.alt_samples) - 1.0).abs() < 1e-12);
        }
        // SSS CP start minus one margin sample
        assert_eq!(b.templates[0].offset, (10 + 128) + 4 * (9 + 128) - 1);
        assert_eq!(b.pss_offset, (10 + 128) + 5 * (9 + 128) - 1);
    }

    #[test]
    fn self_correlation_peaks_at_lag_zero_in_both_modes() {
        let t = &bank().templates[77].samples;
        let mut x = vec![0.0; 2048];
        x[..t.len()].copy_from_slice(t);
        for mode in [CorrelationMode::Plain, CorrelationMode::Phat] {
            let s = correlate(&x, t, mode).unwrap();
            let (arg, peak) = s.iter().enumerate().fold((0, f64::MIN), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
            assert_eq!(arg, 0, "{mode:?}");
            assert!((peak - 1.0).abs() < 1e-9, "{mode:?} {peak}");
        }
    }

    #[test]
    fn stacking_identity_and_identical_frames() {
        let f = frame_with(3, 50, 1.0);
        assert_eq!(stack_frames(&f, 1).unwrap(), f);
        let mut two = f.samples.clone();
        two.extend_from_slice(&f.samples);
        let s = stack_frames(&RealBuffer::new(f.sample_rate_hz, two), 2).unwrap();
        for (a, b) in s.samples.iter().zip(&f.samples) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(stack_frames(&f, 2), Err(DetectError::TooShort { .. })));
    }

    #[test]
    fn hierarchical_finds_single_cell() {
        let f = frame_with(200, 1234, 1.0);
        let r = hierarchical_detect(&f, bank(), &DetectorConfig::default()).unwrap();
        assert_eq!(r.detections[0].pci, pci(200));
        assert_eq!(r.detections[0].delay_samples, 1234);
        assert!(r.correlations < 504 * 19200);
        // PSS peaks every half frame -> candidates 9600 apart
        assert!(r.candidates.iter().any(|&c| c == 1234));
        assert!(r.candidates.iter().any(|&c| c == 1234 + 9600));
    }

    #[test]
    fn threshold_one_gives_nothing() {
        let f = frame_with(200, 1234, 1.0);
        let cfg = DetectorConfig {
            thresh_pss: 1.0,
            ..DetectorConfig::default()
        };
        let r = hierarchical_detect(&f, bank(), &cfg).unwrap();
        assert!(r.candidates.is_empty());
        assert!(r.detections.is_empty());
    }

    #[test]
    fn suppression_keeps_loudest_per_cluster() {
        assert!(suppress_false_positives(&[], 5).is_empty());
        let out = suppress_false_positives(&[det(10, 100, 1.0, 0.9), det(14, 102, 0.05, 0.95)], 5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].pci, pci(10));
        let out = suppress_false_positives(&[det(10, 100, 1.0, 0.7), det(14, 5000, 0.05, 0.95)], 5);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].pci, pci(14));
    }

    #[test]
    fn bank_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        bank().write_to(&path).unwrap();
        let back = TemplateBank::read_from(&path).unwrap();
        assert_eq!(&back, bank());
        let fe = FrontEndConfig::default();
        let loaded = TemplateBank::load_or_build(&fe, Some(dir.path())).unwrap();
        assert_eq!(&loaded, bank());
        assert!(dir.path().join(format!("bank-{}.bin", fe.template_hash())).exists());
    }

    #[test]
    fn hash_mismatch_is_refused() {
        assert!(matches!(bank().check_hash("nope"), Err(DetectError::HashMismatch { .. })));
        bank().check_hash(&FrontEndConfig::default().template_hash()).unwrap();
    }
}
