//! Small DSP toolbox shared by the front-end model and the detectors.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser shape parameter for a stopband attenuation in dB.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Linear-phase Kaiser-window low-pass FIR.
///
/// The passband extends to `pass_hz`, the stopband starts at `stop_hz`.
/// Always returns an odd number of taps normalized to unit DC gain, so the
/// group delay is exactly `(len - 1) / 2` samples.
pub fn kaiser_lowpass(sample_rate_hz: f64, pass_hz: f64, stop_hz: f64, atten_db: f64) -> Vec<f64> {
    assert!(stop_hz > pass_hz && pass_hz > 0.0 && stop_hz < sample_rate_hz / 2.0 + 1e-9);
    let transition = 2.0 * PI * (stop_hz - pass_hz) / sample_rate_hz;
    let mut n = ((atten_db - 7.95) / (2.285 * transition)).ceil() as usize + 1;
    if n % 2 == 0 {
        n += 1;
    }
    let beta = kaiser_beta(atten_db);
    let fc = (pass_hz + stop_hz) / 2.0 / sample_rate_hz;
    let mid = (n - 1) as f64 / 2.0;
    let norm = bessel_i0(beta);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            let r = t / mid;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            sinc * w
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc);
    taps
}

/// Magnitude response of a real FIR at `freq_hz`.
pub fn fir_response(taps: &[f64], sample_rate_hz: f64, freq_hz: f64) -> f64 {
    let w = 2.0 * PI * freq_hz / sample_rate_hz;
    let acc: Complex64 = taps
        .iter()
        .enumerate()
        .map(|(i, &h)| Complex64::from_polar(h, -w * i as f64))
        .sum();
    acc.norm()
}

pub fn fft(x: &mut [Complex64]) {
    FftPlanner::new().plan_fft_forward(x.len()).process(x);
}

pub fn ifft(x: &mut [Complex64]) {
    FftPlanner::new().plan_fft_inverse(x.len()).process(x);
}

pub fn real_fft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut buf);
    buf
}

/// Signed frequency (in cycles per sample) of DFT bin `k` out of `n`.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

/// Circular delay by `delay` samples (any real value) through a frequency
/// domain phase ramp. For even lengths the Nyquist bin keeps only its real
/// part so real inputs stay real.
pub fn delay_complex(x: &[Complex64], delay: f64) -> Vec<Complex64> {
    let n = x.len();
    let mut buf = x.to_vec();
    fft(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = bin_frequency(k, n);
        if n % 2 == 0 && k == n / 2 {
            *v *= (PI * delay).cos();
        } else {
            *v *= Complex64::from_polar(1.0, -2.0 * PI * f * delay);
        }
    }
    ifft(&mut buf);
    let s = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= s);
    buf
}

/// Real-valued circular fractional delay.
pub fn delay_real(x: &[f64], delay: f64) -> Vec<f64> {
    let c: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    delay_complex(&c, delay).into_iter().map(|v| v.re).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of two equal-length vectors (no mean removal).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_matches_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-12);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_44).abs() < 1e-9);
    }

    #[test]
    fn lowpass_meets_its_mask() {
        let fs = 15.36e6;
        let taps = kaiser_lowpass(fs, 1.4e6, 2.0e6, 60.0);
        assert_eq!(taps.len() % 2, 1);
        for i in 0..taps.len() / 2 {
            assert!((taps[i] - taps[taps.len() - 1 - i]).abs() < 1e-15);
        }
        assert!((fir_response(&taps, fs, 0.0) - 1.0).abs() < 1e-12);
        for f in [0.2e6, 0.8e6, 1.4e6] {
            let g = fir_response(&taps, fs, f);
            assert!((g - 1.0).abs() < 0.01, "passband {f}: {g}");
        }
        for f in [2.0e6, 3.0e6, 5.0e6, 7.6e6] {
            let g = 20.0 * fir_response(&taps, fs, f).log10();
            assert!(g < -59.0, "stopband {f}: {g} dB");
        }
    }

    #[test]
    fn integer_delay_is_a_rotation() {
        let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = delay_real(&x, 3.0);
        for i in 0..32 {
            assert!((y[(i + 3) % 32] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    // odd length: no Nyquist bin, so the phase ramps compose exactly
    fn fractional_delays_compose() {
        let x: Vec<f64> = (0..63).map(|i| (i as f64 * 0.2).cos() + 0.1 * i as f64 % 3.0).collect();
        let a = delay_real(&delay_real(&x, 0.3), 0.7);
        let b = delay_real(&x, 1.0);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
