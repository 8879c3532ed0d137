//! LTE FDD downlink frame synthesis: synchronization sequences, resource-grid
//! mapping and OFDM modulation.
//!
//! Conventions used throughout the crate:
//!
//! * Subcarrier index `k` runs over the `12 * n_rb` occupied subcarriers,
//!   lowest frequency first. The DC bin is never part of `k`; subcarriers
//!   `k < n_sc / 2` land on negative FFT bins and the rest on bins `1..`.
//! * The DFT is unitary in both directions (`1/sqrt(N)` scaling).
//! * The PSS occupies the last OFDM symbol of slots 0 and 10, the SSS the
//!   symbol right before it. Both use the central 62 subcarriers with five
//!   reserved (zero) subcarriers on each side.
//!
//! SSS generator polynomials (3GPP TS 36.211, 6.11.2), all with initial state
//! `x(0..4) = 0, 0, 0, 0, 1`:
//!
//! * `s`: `x(i+5) = x(i+2) + x(i) mod 2`
//! * `c`: `x(i+5) = x(i+3) + x(i) mod 2`
//! * `z`: `x(i+5) = x(i+4) + x(i+2) + x(i+1) + x(i) mod 2`

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::IqBuffer;

pub const SUBCARRIER_SPACING_HZ: f64 = 15_000.0;
pub const FRAME_DURATION_S: f64 = 0.010;
pub const SYNC_LEN: usize = 62;
pub const SUBCARRIERS_PER_RB: usize = 12;
/// Subcarriers around DC reserved in sync symbols (6 resource blocks).
pub const SYNC_RESERVED_SUBCARRIERS: usize = 72;
/// FFT size of the 1.4 MHz configuration; every supported size is a multiple.
pub const BASE_FFT_SIZE: usize = 128;
/// Sample rate of the 1.4 MHz configuration.
pub const BASE_SAMPLE_RATE_HZ: f64 = 1.92e6;

/// Zadoff-Chu roots for PSS sectors 0, 1, 2.
pub const PSS_ROOTS: [u32; 3] = [25, 29, 34];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LteError {
    #[error("PSS index {0} out of range 0..=2")]
    PssIndex(u32),
    #[error("SSS group {0} out of range 0..=167")]
    SssIndex(u32),
    #[error("PCI {0} out of range 0..=503")]
    Pci(u32),
    #[error("unsupported bandwidth {0} MHz")]
    Bandwidth(f64),
    #[error("inconsistent frame config: {0}")]
    FrameConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PssIndex(u8);

impl PssIndex {
    pub fn new(value: u8) -> Result<Self, LteError> {
        if value < 3 {
            Ok(Self(value))
        } else {
            Err(LteError::PssIndex(value as u32))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Zadoff-Chu root of this sector.
    pub fn root(self) -> u32 {
        PSS_ROOTS[self.0 as usize]
    }

    pub fn all() -> impl Iterator<Item = PssIndex> {
        (0..3).map(PssIndex)
    }
}

impl TryFrom<u8> for PssIndex {
    type Error = LteError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<PssIndex> for u8 {
    fn from(v: PssIndex) -> u8 {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SssIndex(u8);

impl SssIndex {
    pub fn new(value: u8) -> Result<Self, LteError> {
        if value < 168 {
            Ok(Self(value))
        } else {
            Err(LteError::SssIndex(value as u32))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = SssIndex> {
        (0..168).map(SssIndex)
    }
}

impl TryFrom<u8> for SssIndex {
    type Error = LteError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SssIndex> for u8 {
    fn from(v: SssIndex) -> u8 {
        v.0
    }
}

/// Physical cell identity, `3 * group + sector`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct Pci(u16);

impl Pci {
    pub const COUNT: usize = 504;

    pub fn new(value: u16) -> Result<Self, LteError> {
        if (value as usize) < Self::COUNT {
            Ok(Self(value))
        } else {
            Err(LteError::Pci(value as u32))
        }
    }

    pub fn from_parts(group: SssIndex, sector: PssIndex) -> Self {
        Self(3 * group.0 as u16 + sector.0 as u16)
    }

    pub fn value(self) -> u16 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn group(self) -> SssIndex {
        SssIndex((self.0 / 3) as u8)
    }

    pub fn sector(self) -> PssIndex {
        PssIndex((self.0 % 3) as u8)
    }

    pub fn all() -> impl Iterator<Item = Pci> {
        (0..Self::COUNT as u16).map(Pci)
    }
}

impl TryFrom<u16> for Pci {
    type Error = LteError;
    fn try_from(v: u16) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Pci> for u16 {
    fn from(v: Pci) -> u16 {
        v.0
    }
}

impl fmt::Display for Pci {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Channel bandwidths defined for LTE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bandwidth {
    Mhz1_4,
    Mhz3,
    Mhz5,
    Mhz10,
    Mhz15,
    Mhz20,
}

impl Bandwidth {
    pub const ALL: [Bandwidth; 6] = [
        Bandwidth::Mhz1_4,
        Bandwidth::Mhz3,
        Bandwidth::Mhz5,
        Bandwidth::Mhz10,
        Bandwidth::Mhz15,
        Bandwidth::Mhz20,
    ];

    pub fn from_mhz(mhz: f64) -> Result<Self, LteError> {
        Self::ALL
            .iter()
            .copied()
            .find(|b| (b.mhz() - mhz).abs() < 1e-6)
            .ok_or(LteError::Bandwidth(mhz))
    }

    pub fn mhz(self) -> f64 {
        match self {
            Bandwidth::Mhz1_4 => 1.4,
            Bandwidth::Mhz3 => 3.0,
            Bandwidth::Mhz5 => 5.0,
            Bandwidth::Mhz10 => 10.0,
            Bandwidth::Mhz15 => 15.0,
            Bandwidth::Mhz20 => 20.0,
        }
    }

    pub fn hz(self) -> f64 {
        self.mhz() * 1e6
    }

    pub fn n_resource_blocks(self) -> usize {
        match self {
            Bandwidth::Mhz1_4 => 6,
            Bandwidth::Mhz3 => 15,
            Bandwidth::Mhz5 => 25,
            Bandwidth::Mhz10 => 50,
            Bandwidth::Mhz15 => 75,
            Bandwidth::Mhz20 => 100,
        }
    }

    /// Smallest standard FFT size for this bandwidth.
    pub fn native_fft_size(self) -> usize {
        match self {
            Bandwidth::Mhz1_4 => 128,
            Bandwidth::Mhz3 => 256,
            Bandwidth::Mhz5 => 512,
            Bandwidth::Mhz10 => 1024,
            Bandwidth::Mhz15 => 1536,
            Bandwidth::Mhz20 => 2048,
        }
    }

    /// Width of the occupied subcarriers.
    pub fn occupied_hz(self) -> f64 {
        (self.n_resource_blocks() * SUBCARRIERS_PER_RB) as f64 * SUBCARRIER_SPACING_HZ
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CyclicPrefix {
    #[default]
    Normal,
    Extended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subframe {
    Zero,
    Five,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    #[default]
    None,
    RandomQpsk,
}

/// Numerology of one carrier at one rendering rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig {
    pub bandwidth: Bandwidth,
    pub fft_size: usize,
    pub sample_rate_hz: f64,
    pub cp: CyclicPrefix,
    pub n_resource_blocks: usize,
}

impl FrameConfig {
    /// Native FFT size, normal cyclic prefix.
    pub fn new(bandwidth: Bandwidth) -> Self {
        let fft_size = bandwidth.native_fft_size();
        Self {
            bandwidth,
            fft_size,
            sample_rate_hz: fft_size as f64 * SUBCARRIER_SPACING_HZ,
            cp: CyclicPrefix::Normal,
            n_resource_blocks: bandwidth.n_resource_blocks(),
        }
    }

    /// Same carrier rendered with a larger (oversampling) FFT.
    pub fn with_fft_size(mut self, fft_size: usize) -> Self {
        self.fft_size = fft_size;
        self.sample_rate_hz = fft_size as f64 * SUBCARRIER_SPACING_HZ;
        self
    }

    pub fn with_cp(mut self, cp: CyclicPrefix) -> Self {
        self.cp = cp;
        self
    }

    pub fn validate(&self) -> Result<(), LteError> {
        let err = |m: String| Err(LteError::FrameConfig(m));
        if self.n_resource_blocks != self.bandwidth.n_resource_blocks() {
            return err(format!(
                "{} resource blocks do not match {} MHz (expected {})",
                self.n_resource_blocks,
                self.bandwidth.mhz(),
                self.bandwidth.n_resource_blocks()
            ));
        }
        if self.fft_size == 0 || self.fft_size % BASE_FFT_SIZE != 0 {
            return err(format!("fft size {} is not a multiple of 128", self.fft_size));
        }
        if self.fft_size <= self.n_subcarriers() {
            return err(format!(
                "fft size {} cannot hold {} subcarriers plus DC",
                self.fft_size,
                self.n_subcarriers()
            ));
        }
        let expected = self.fft_size as f64 * SUBCARRIER_SPACING_HZ;
        if (self.sample_rate_hz - expected).abs() > 1e-6 * expected {
            return err(format!(
                "sample rate {} Hz != fft size x 15 kHz ({} Hz)",
                self.sample_rate_hz, expected
            ));
        }
        Ok(())
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_resource_blocks * SUBCARRIERS_PER_RB
    }

    pub fn symbols_per_slot(&self) -> usize {
        match self.cp {
            CyclicPrefix::Normal => 7,
            CyclicPrefix::Extended => 6,
        }
    }

    pub fn symbols_per_frame(&self) -> usize {
        20 * self.symbols_per_slot()
    }

    /// CP length of symbol `l` (frame-wide index).
    pub fn cp_len(&self, l: usize) -> usize {
        let scale = self.fft_size;
        match self.cp {
            CyclicPrefix::Normal if l % 7 == 0 => 160 * scale / 2048,
            CyclicPrefix::Normal => 144 * scale / 2048,
            CyclicPrefix::Extended => 512 * scale / 2048,
        }
    }

    /// Offset of symbol `l` (start of its CP) from the frame start.
    pub fn symbol_start(&self, l: usize) -> usize {
        (0..l).map(|i| self.cp_len(i) + self.fft_size).sum()
    }

    /// Samples per 10 ms frame.
    pub fn frame_len(&self) -> usize {
        self.fft_size * 150
    }

    /// Frame-wide indices of the (SSS, PSS) symbols of the given half frame.
    pub fn sync_symbols(&self, subframe: Subframe) -> (usize, usize) {
        let n = self.symbols_per_slot();
        let slot = match subframe {
            Subframe::Zero => 0,
            Subframe::Five => 10,
        };
        (slot * n + n - 2, slot * n + n - 1)
    }

    /// Occupied subcarrier `k` to FFT bin.
    pub fn subcarrier_bin(&self, k: usize) -> usize {
        let half = self.n_subcarriers() / 2;
        if k < half {
            self.fft_size - half + k
        } else {
            k - half + 1
        }
    }
}

/// One frame of resource elements, `n_subcarriers x n_symbols`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    pub config: FrameConfig,
    elements: Vec<Complex64>,
}

impl ResourceGrid {
    pub fn empty(config: FrameConfig) -> Self {
        Self {
            elements: vec![Complex64::new(0.0, 0.0); config.n_subcarriers() * config.symbols_per_frame()],
            config,
        }
    }

    pub fn n_subcarriers(&self) -> usize {
        self.config.n_subcarriers()
    }

    pub fn n_symbols(&self) -> usize {
        self.config.symbols_per_frame()
    }

    pub fn get(&self, k: usize, l: usize) -> Complex64 {
        self.elements[l * self.n_subcarriers() + k]
    }

    pub fn set(&mut self, k: usize, l: usize, v: Complex64) {
        let n = self.n_subcarriers();
        self.elements[l * n + k] = v;
    }

    pub fn symbol(&self, l: usize) -> &[Complex64] {
        let n = self.n_subcarriers();
        &self.elements[l * n..(l + 1) * n]
    }

    pub fn energy(&self) -> f64 {
        self.elements.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Length-62 frequency-domain PSS: the length-63 Zadoff-Chu sequence with its
/// centre element punctured.
pub fn generate_pss(idx: PssIndex) -> [Complex64; SYNC_LEN] {
    let u = idx.root() as f64;
    let mut out = [Complex64::new(0.0, 0.0); SYNC_LEN];
    for (n, v) in out.iter_mut().enumerate() {
        let m = if n <= 30 { n } else { n + 1 } as f64;
        *v = Complex64::from_polar(1.0, -PI * u * m * (m + 1.0) / 63.0);
    }
    out
}

fn m_sequence(taps: &[usize]) -> [f64; 31] {
    let mut x = [0u8; 31];
    x[4] = 1;
    for i in 0..26 {
        x[i + 5] = taps.iter().map(|&t| x[i + t]).sum::<u8>() % 2;
    }
    x.map(|b| 1.0 - 2.0 * b as f64)
}

/// Length-62 BPSK SSS for cell group `group`, sector `sector`, in subframe 0 or 5.
pub fn generate_sss(group: SssIndex, sector: PssIndex, subframe: Subframe) -> [f64; SYNC_LEN] {
    let s_t = m_sequence(&[2, 0]);
    let c_t = m_sequence(&[3, 0]);
    let z_t = m_sequence(&[4, 2, 1, 0]);

    let g = group.0 as usize;
    let q_prime = g / 30;
    let q = (g + q_prime * (q_prime + 1) / 2) / 30;
    let m_prime = g + q * (q + 1) / 2;
    let m0 = m_prime % 31;
    let m1 = (m0 + m_prime / 31 + 1) % 31;
    let nid2 = sector.0 as usize;

    let mut out = [0.0; SYNC_LEN];
    for n in 0..31 {
        let s0 = s_t[(n + m0) % 31];
        let s1 = s_t[(n + m1) % 31];
        let c0 = c_t[(n + nid2) % 31];
        let c1 = c_t[(n + nid2 + 3) % 31];
        let z_m0 = z_t[(n + m0 % 8) % 31];
        let z_m1 = z_t[(n + m1 % 8) % 31];
        let (even, odd) = match subframe {
            Subframe::Zero => (s0 * c0, s1 * c1 * z_m0),
            Subframe::Five => (s1 * c0, s0 * c1 * z_m1),
        };
        out[2 * n] = even;
        out[2 * n + 1] = odd;
    }
    out
}

/// Occupied-subcarrier index of sync element `n` (may be negative offsets for
/// the reserved guard elements).
fn sync_subcarrier(cfg: &FrameConfig, n: isize) -> usize {
    (n - 31 + cfg.n_subcarriers() as isize / 2) as usize
}

/// Builds one frame for `pci`: PSS/SSS at their standard positions and,
/// optionally, unit-power QPSK on every other resource element.
pub fn build_frame(
    cfg: &FrameConfig,
    pci: Pci,
    data: DataMode,
    rng_seed: u64,
) -> Result<ResourceGrid, LteError> {
    cfg.validate()?;
    let mut grid = ResourceGrid::empty(*cfg);
    let n_sc = cfg.n_subcarriers();

    if data == DataMode::RandomQpsk {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let mut bits = 0u64;
        let mut left = 0;
        for e in grid.elements.iter_mut() {
            if left == 0 {
                bits = rng.gen();
                left = 32;
            }
            let re = if bits & 1 == 0 { a } else { -a };
            let im = if bits & 2 == 0 { a } else { -a };
            bits >>= 2;
            left -= 1;
            *e = Complex64::new(re, im);
        }
    }

    let pss = generate_pss(pci.sector());
    let lo = sync_subcarrier(cfg, -5);
    let hi = sync_subcarrier(cfg, SYNC_LEN as isize + 5);
    debug_assert!(hi <= n_sc);
    for subframe in [Subframe::Zero, Subframe::Five] {
        let (l_sss, l_pss) = cfg.sync_symbols(subframe);
        let sss = generate_sss(pci.group(), pci.sector(), subframe);
        for l in [l_sss, l_pss] {
            for k in lo..hi {
                grid.set(k, l, Complex64::new(0.0, 0.0));
            }
        }
        for n in 0..SYNC_LEN {
            let k = sync_subcarrier(cfg, n as isize);
            grid.set(k, l_sss, Complex64::new(sss[n], 0.0));
            grid.set(k, l_pss, pss[n]);
        }
    }
    Ok(grid)
}

/// Unitary inverse DFT per symbol with cyclic prefix. Output is exactly one
/// frame (`fft_size * 150` samples).
pub fn ofdm_modulate(grid: &ResourceGrid) -> IqBuffer {
    let cfg = grid.config;
    let n = cfg.fft_size;
    let scale = 1.0 / (n as f64).sqrt();
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut out = Vec::with_capacity(cfg.frame_len());
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for l in 0..grid.n_symbols() {
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (k, &v) in grid.symbol(l).iter().enumerate() {
            buf[cfg.subcarrier_bin(k)] = v;
        }
        ifft.process(&mut buf);
        let cp = cfg.cp_len(l);
        out.extend(buf[n - cp..].iter().map(|v| v * scale));
        out.extend(buf.iter().map(|v| v * scale));
    }
    IqBuffer::new(cfg.sample_rate_hz, out)
}

/// Strips cyclic prefixes and applies the unitary forward DFT.
pub fn ofdm_demodulate(frame: &IqBuffer, cfg: &FrameConfig) -> Result<ResourceGrid, LteError> {
    cfg.validate()?;
    if frame.len() != cfg.frame_len() {
        return Err(LteError::FrameConfig(format!(
            "frame has {} samples, expected {}",
            frame.len(),
            cfg.frame_len()
        )));
    }
    let n = cfg.fft_size;
    let scale = 1.0 / (n as f64).sqrt();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut grid = ResourceGrid::empty(*cfg);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for l in 0..grid.n_symbols() {
        let start = cfg.symbol_start(l) + cfg.cp_len(l);
        buf.copy_from_slice(&frame.samples[start..start + n]);
        fft.process(&mut buf);
        for k in 0..grid.n_subcarriers() {
            grid.set(k, l, buf[cfg.subcarrier_bin(k)] * scale);
        }
    }
    Ok(grid)
}
