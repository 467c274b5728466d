//! DFT-domain shaping and band measurements.
//!
//! Uses the scalar (non-SIMD) FFT planner so the generated data does not
//! depend on which instruction set the host supports.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlannerScalar};

/// Cached plans keyed by `(length, inverse)`.
type PlanCache = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

thread_local! {
    static PLANS: RefCell<PlanCache> = RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlannerScalar::new();
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

fn forward(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(x.len(), false).process(&mut buf);
    buf
}

/// Frequency in Hz of DFT bin `k` (folded to `[0, fs/2]`).
pub fn bin_freq(k: usize, len: usize, sample_rate: u32) -> f64 {
    let k = k.min(len - k);
    k as f64 * f64::from(sample_rate) / len as f64
}

/// Multiplies each DFT bin by `gain(freq_hz)` and returns the real part of
/// the inverse transform. `gain` sees folded frequencies, so the response is
/// conjugate-symmetric and the output real.
pub fn shape(x: &[f64], sample_rate: u32, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = x.len();
    let mut spec = forward(x);
    for (k, c) in spec.iter_mut().enumerate() {
        *c *= gain(bin_freq(k, n, sample_rate));
    }
    plan(n, true).process(&mut spec);
    let scale = 1.0 / n as f64;
    spec.iter().map(|c| c.re * scale).collect()
}

/// Keeps only bins whose frequency lies in `[lo, hi]`.
pub fn band_filter(x: &[f64], sample_rate: u32, lo: f64, hi: f64) -> Vec<f64> {
    shape(x, sample_rate, |f| if (lo..=hi).contains(&f) { 1.0 } else { 0.0 })
}

/// Fraction of spectral energy with frequency inside `[lo, hi]`.
pub fn band_energy_fraction(x: &[f64], sample_rate: u32, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let spec = forward(x);
    let mut inside = 0.0;
    let mut total = 0.0;
    for (k, c) in spec.iter().enumerate() {
        let e = c.norm_sqr();
        total += e;
        if (lo..=hi).contains(&bin_freq(k, n, sample_rate)) {
            inside += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

/// Energy-weighted mean frequency.
pub fn spectral_centroid(x: &[f64], sample_rate: u32) -> f64 {
    let n = x.len();
    let spec = forward(x);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, c) in spec.iter().enumerate() {
        let e = c.norm_sqr();
        num += e * bin_freq(k, n, sample_rate);
        den += e;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
