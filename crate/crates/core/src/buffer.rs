use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A uniformly sampled time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBuffer<T> {
    pub sample_rate_hz: f64,
    pub samples: Vec<T>,
}

/// Complex baseband samples.
pub type IqBuffer = SampleBuffer<Complex64>;
/// Real samples: RF proxy or post-detector output.
pub type RealBuffer = SampleBuffer<f64>;

impl<T> SampleBuffer<T> {
    pub fn new(sample_rate_hz: f64, samples: Vec<T>) -> Self {
        Self {
            sample_rate_hz,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

impl RealBuffer {
    pub fn zeros(sample_rate_hz: f64, len: usize) -> Self {
        Self::new(sample_rate_hz, vec![0.0; len])
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

impl IqBuffer {
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum()
    }
}
