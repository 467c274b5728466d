//! Waveform containers and the batch-level operations every trainer builds on.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default sample rate of the synthetic domains, in Hz.
pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// A `B x T` block of time-domain signals, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveBatch<S> {
    data: Vec<S>,
    batch: usize,
    len: usize,
    sample_rate: u32,
}

impl<S: Scalar> WaveBatch<S> {
    pub fn new(data: Vec<S>, batch: usize, len: usize, sample_rate: u32) -> Result<Self> {
        if batch == 0 || len == 0 {
            return Err(Error::Invalid(format!("empty wave batch [{batch}, {len}]")));
        }
        if data.len() != batch * len {
            return Err(Error::shape(
                format!("[{batch}, {len}]"),
                format!("buffer of {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "wave batch".into() });
        }
        Ok(Self { data, batch, len, sample_rate })
    }

    pub fn zeros(batch: usize, len: usize, sample_rate: u32) -> Self {
        assert!(batch > 0 && len > 0, "empty wave batch");
        Self { data: vec![S::zero(); batch * len], batch, len, sample_rate }
    }

    pub fn from_rows(rows: &[&[S]], sample_rate: u32) -> Result<Self> {
        let len = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != len) {
            return Err(Error::shape(format!("row of {len}"), format!("row of {}", bad.len())));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(data, rows.len(), len, sample_rate)
    }

    pub(crate) fn from_raw(data: Vec<S>, batch: usize, len: usize, sample_rate: u32) -> Self {
        debug_assert_eq!(data.len(), batch * len);
        Self { data, batch, len, sample_rate }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.batch, self.len]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn row(&self, b: usize) -> &[S] {
        &self.data[b * self.len..(b + 1) * self.len]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[S]> {
        self.data.chunks_exact(self.len)
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> WaveBatch<U> {
        WaveBatch {
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            batch: self.batch,
            len: self.len,
            sample_rate: self.sample_rate,
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::from_raw(self.data.iter().map(|&v| f(v)).collect(), self.batch, self.len, self.sample_rate)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("{:?}", self.shape()), format!("{:?}", other.shape())));
        }
        Ok(())
    }

    /// Per-item energy `sum_t x[b,t]^2`.
    pub fn energies(&self) -> Vec<S> {
        self.rows().map(|r| r.iter().map(|&v| v * v).sum()).collect()
    }
}

/// Elementwise sum of speech and noise: `x = s + n`.
pub fn mix<S: Scalar>(speech: &WaveBatch<S>, noise: &WaveBatch<S>) -> Result<WaveBatch<S>> {
    speech.check_same_shape(noise)?;
    let data = speech.data.iter().zip(&noise.data).map(|(&a, &b)| a + b).collect();
    Ok(WaveBatch::from_raw(data, speech.batch, speech.len, speech.sample_rate))
}

/// Separator output: `M` source slots over a `B x T` batch, stored
/// slot-major (`[M, B, T]`).
#[derive(Clone, Debug, PartialEq)]
pub struct SourceEstimates<S> {
    sources: Vec<S>,
    slots: usize,
    batch: usize,
    len: usize,
    sample_rate: u32,
    consistent_with: Option<WaveBatch<S>>,
}

impl<S: Scalar> SourceEstimates<S> {
    pub fn new(sources: Vec<S>, slots: usize, batch: usize, len: usize, sample_rate: u32) -> Result<Self> {
        if slots == 0 || batch == 0 || len == 0 {
            return Err(Error::Invalid(format!("empty estimates [{slots}, {batch}, {len}]")));
        }
        if sources.len() != slots * batch * len {
            return Err(Error::shape(
                format!("[{slots}, {batch}, {len}]"),
                format!("buffer of {}", sources.len()),
            ));
        }
        Ok(Self { sources, slots, batch, len, sample_rate, consistent_with: None })
    }

    pub fn from_slots(slots: &[WaveBatch<S>]) -> Result<Self> {
        let first = slots.first().ok_or_else(|| Error::Invalid("no source slots".into()))?;
        for s in slots {
            first.check_same_shape(s)?;
        }
        let sources = slots.iter().flat_map(|s| s.data.iter().copied()).collect();
        Self::new(sources, slots.len(), first.batch, first.len, first.sample_rate)
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.slots, self.batch, self.len]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.sources
    }

    pub fn consistent_with(&self) -> Option<&WaveBatch<S>> {
        self.consistent_with.as_ref()
    }

    pub fn slot_slice(&self, i: usize) -> &[S] {
        let n = self.batch * self.len;
        &self.sources[i * n..(i + 1) * n]
    }

    /// Slot `i` at batch item `b`.
    pub fn item(&self, i: usize, b: usize) -> &[S] {
        let start = (i * self.batch + b) * self.len;
        &self.sources[start..start + self.len]
    }

    pub fn slot(&self, i: usize) -> WaveBatch<S> {
        WaveBatch::from_raw(self.slot_slice(i).to_vec(), self.batch, self.len, self.sample_rate)
    }

    /// Sum of slots `from..` (the noise estimate of a separator whose slot 0
    /// is speech).
    pub fn sum_slots_from(&self, from: usize) -> WaveBatch<S> {
        let n = self.batch * self.len;
        let mut acc = vec![S::zero(); n];
        for i in from..self.slots {
            for (a, &v) in acc.iter_mut().zip(self.slot_slice(i)) {
                *a += v;
            }
        }
        WaveBatch::from_raw(acc, self.batch, self.len, self.sample_rate)
    }

    /// Largest `|sum_i est[i,b,t] - mixture[b,t]|`.
    pub fn consistency_error(&self, mixture: &WaveBatch<S>) -> Result<S> {
        if mixture.shape() != [self.batch, self.len] {
            return Err(Error::shape(format!("{:?}", self.shape()), format!("{:?}", mixture.shape())));
        }
        let total = self.sum_slots_from(0);
        Ok(total
            .data
            .iter()
            .zip(&mixture.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max))
    }
}

/// A bijection on batch indices. `perm[b]` is the source row for output row `b`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BatchPermutation {
    perm: Vec<usize>,
}

impl BatchPermutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Invalid(format!("{perm:?} is not a permutation")));
            }
        }
        if perm.is_empty() {
            return Err(Error::Invalid("empty permutation".into()));
        }
        Ok(Self { perm })
    }

    pub fn identity(size: usize) -> Self {
        Self { perm: (0..size).collect() }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Self { perm: inv }
    }
}

/// Draws a permutation uniformly over all `size!` orderings (Fisher-Yates).
pub fn sample_permutation<R: Rng + ?Sized>(rng: &mut R, size: usize) -> BatchPermutation {
    assert!(size >= 1, "permutation of an empty batch");
    let mut perm: Vec<usize> = (0..size).collect();
    perm.shuffle(rng);
    BatchPermutation { perm }
}

/// Output row `b` is input row `p(b)`.
pub fn permute_batch<S: Scalar>(x: &WaveBatch<S>, p: &BatchPermutation) -> Result<WaveBatch<S>> {
    if p.len() != x.batch {
        return Err(Error::shape(format!("batch of {}", x.batch), format!("permutation of {}", p.len())));
    }
    let mut data = Vec::with_capacity(x.data.len());
    for &src in &p.perm {
        data.extend_from_slice(x.row(src));
    }
    Ok(WaveBatch::from_raw(data, x.batch, x.len, x.sample_rate))
}

/// Projects estimates onto the set whose slots sum to `mixture`.
///
/// The residual `mixture - sum_i est[i]` is split evenly over the `M` slots,
/// which is the minimum-norm correction restoring the sum.
pub fn mixture_consistency<S: Scalar>(
    est: &SourceEstimates<S>,
    mixture: &WaveBatch<S>,
) -> Result<SourceEstimates<S>> {
    if mixture.shape() != [est.batch, est.len] {
        return Err(Error::shape(format!("{:?}", est.shape()), format!("{:?}", mixture.shape())));
    }
    let mut sources = est.sources.clone();
    project_in_place(&mut sources, est.slots, mixture.as_slice());
    Ok(SourceEstimates {
        sources,
        slots: est.slots,
        batch: est.batch,
        len: est.len,
        sample_rate: est.sample_rate,
        consistent_with: Some(mixture.clone()),
    })
}

/// In-place projection of a slot-major `[M, B*T]` buffer.
pub(crate) fn project_in_place<S: Scalar>(sources: &mut [S], slots: usize, mixture: &[S]) {
    let n = mixture.len();
    let inv_m = S::one() / S::of(slots as f64);
    for (idx, &x) in mixture.iter().enumerate() {
        let mut sum = S::zero();
        for i in 0..slots {
            sum += sources[i * n + idx];
        }
        let share = (x - sum) * inv_m;
        for i in 0..slots {
            sources[i * n + idx] += share;
        }
    }
}

/// Adjoint of the projection: subtract the per-sample slot mean.
pub(crate) fn project_adjoint_in_place<S: Scalar>(grads: &mut [S], slots: usize, n: usize) {
    let inv_m = S::one() / S::of(slots as f64);
    for idx in 0..n {
        let mut sum = S::zero();
        for i in 0..slots {
            sum += grads[i * n + idx];
        }
        let mean = sum * inv_m;
        for i in 0..slots {
            grads[i * n + idx] -= mean;
        }
    }
}

pub(crate) fn attach_mixture<S: Scalar>(
    sources: Vec<S>,
    slots: usize,
    mixture: &WaveBatch<S>,
) -> SourceEstimates<S> {
    SourceEstimates {
        sources,
        slots,
        batch: mixture.batch,
        len: mixture.len,
        sample_rate: mixture.sample_rate,
        consistent_with: Some(mixture.clone()),
    }
}

/// Per-item `10 log10(||s||^2 / ||n||^2)`.
pub fn snr_db<S: Scalar>(signal: &WaveBatch<S>, noise: &WaveBatch<S>) -> Result<Vec<S>> {
    signal.check_same_shape(noise)?;
    let ten = S::of(10.0);
    signal
        .energies()
        .into_iter()
        .zip(noise.energies())
        .enumerate()
        .map(|(item, (es, en))| {
            if en <= S::zero() {
                Err(Error::ZeroNoise { item })
            } else {
                Ok(ten * (es / en).log10())
            }
        })
        .collect()
}

/// Scales each noise row so that `snr_db(signal, noise')` equals `target_db`.
pub fn rescale_noise_to_snr<S: Scalar>(
    signal: &WaveBatch<S>,
    noise: &WaveBatch<S>,
    target_db: &[S],
) -> Result<WaveBatch<S>> {
    signal.check_same_shape(noise)?;
    if target_db.len() != signal.batch {
        return Err(Error::shape(format!("batch of {}", signal.batch), format!("{} targets", target_db.len())));
    }
    let mut data = Vec::with_capacity(noise.data.len());
    for (b, ((es, en), &db)) in signal.energies().into_iter().zip(noise.energies()).zip(target_db).enumerate() {
        if en <= S::zero() {
            return Err(Error::ZeroNoise { item: b });
        }
        let want = es / S::of(10.0).powf(db / S::of(10.0));
        let gain = (want / en).sqrt();
        data.extend(noise.row(b).iter().map(|&v| v * gain));
    }
    Ok(WaveBatch::from_raw(data, noise.batch, noise.len, noise.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wb(rows: &[&[f64]]) -> WaveBatch<f64> {
        WaveBatch::from_rows(rows, DEFAULT_SAMPLE_RATE).unwrap()
    }

    #[test]
    fn mix_examples() {
        let n = wb(&[&[0.5, -1.0, 2.0]]);
        let z = WaveBatch::zeros(1, 3, DEFAULT_SAMPLE_RATE);
        assert_eq!(mix(&z, &n).unwrap(), n);
        let neg = n.map(|v| -v);
        assert_eq!(mix(&n, &neg).unwrap(), z);
        let got = mix(&wb(&[&[1.0, 2.0]]), &wb(&[&[3.0, -1.0]])).unwrap();
        assert_eq!(got.as_slice(), &[4.0, 1.0]);
    }

    #[test]
    fn mix_shape_error_names_both_shapes() {
        let err = mix(&wb(&[&[1.0, 2.0]]), &wb(&[&[1.0, 2.0, 3.0]])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2]") && msg.contains("[1, 3]"), "{msg}");
    }

    #[test]
    fn wave_batch_rejects_non_finite() {
        assert!(WaveBatch::new(vec![1.0, f64::NAN], 1, 2, 8000).is_err());
        assert!(WaveBatch::<f64>::new(vec![], 0, 0, 8000).is_err());
    }

    #[test]
    fn single_item_permutation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_permutation(&mut rng, 1).is_identity());
    }

    #[test]
    fn permutation_is_deterministic_per_seed() {
        let a = sample_permutation(&mut ChaCha8Rng::seed_from_u64(11), 16);
        let b = sample_permutation(&mut ChaCha8Rng::seed_from_u64(11), 16);
        assert_eq!(a, b);
    }

    #[test]
    fn two_item_swap_frequency_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 10_000;
        let swaps = (0..draws).filter(|_| !sample_permutation(&mut rng, 2).is_identity()).count();
        let freq = swaps as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "swap frequency {freq}");
        // chi-square with one degree of freedom, 99.9% critical value 10.83
        let expected = draws as f64 / 2.0;
        let chi2 = (swaps as f64 - expected).powi(2) / expected * 2.0;
        assert!(chi2 < 10.83, "chi2 {chi2}");
    }

    #[test]
    fn all_permutations_of_three_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = std::collections::HashMap::new();
        let draws = 60_000;
        for _ in 0..draws {
            *counts.entry(sample_permutation(&mut rng, 3)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // five degrees of freedom, 99.9% critical value 20.52
        assert!(chi2 < 20.52, "chi2 {chi2}");
    }

    #[test]
    fn permute_examples() {
        let x = wb(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(permute_batch(&x, &BatchPermutation::identity(2)).unwrap(), x);
        let swap = BatchPermutation::new(vec![1, 0]).unwrap();
        assert_eq!(permute_batch(&x, &swap).unwrap(), wb(&[&[3.0, 4.0], &[1.0, 2.0]]));
        assert!(permute_batch(&x, &BatchPermutation::identity(3)).is_err());
    }

    #[test]
    fn invalid_permutations_rejected() {
        assert!(BatchPermutation::new(vec![0, 0]).is_err());
        assert!(BatchPermutation::new(vec![0, 2]).is_err());
        assert!(BatchPermutation::new(vec![]).is_err());
    }

    #[test]
    fn consistency_splits_residual_evenly() {
        // est slots sum to 1.0 at t=0; mixture is 3.0, so each slot receives +1.0
        let est = SourceEstimates::new(vec![0.25, 0.0, 0.75, 0.0], 2, 1, 2, 8000).unwrap();
        let mixture = wb(&[&[3.0, 0.0]]);
        let out = mixture_consistency(&est, &mixture).unwrap();
        assert_eq!(out.as_slice(), &[1.25, 0.0, 1.75, 0.0]);
        assert!(out.consistent_with().is_some());
    }

    #[test]
    fn consistent_estimates_are_unchanged() {
        let est = SourceEstimates::new(vec![0.3, -0.2, 0.7, 1.2], 2, 1, 2, 8000).unwrap();
        let mixture = wb(&[&[1.0, 1.0]]);
        let out = mixture_consistency(&est, &mixture).unwrap();
        for (a, b) in out.as_slice().iter().zip(est.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn consistency_shape_mismatch() {
        let est = SourceEstimates::new(vec![0.0; 4], 2, 1, 2, 8000).unwrap();
        assert!(mixture_consistency(&est, &wb(&[&[1.0, 1.0, 1.0]])).is_err());
    }

    #[test]
    fn snr_examples() {
        let s = wb(&[&[1.0, 1.0]]);
        let n = wb(&[&[1.0, -1.0]]);
        assert!(snr_db(&s, &n).unwrap()[0].abs() < 1e-12);
        let v = snr_db(&wb(&[&[2.0, 0.0]]), &wb(&[&[1.0, 0.0]])).unwrap()[0];
        assert!((v - 6.020599913279624).abs() < 1e-12);
    }

    #[test]
    fn rescale_hits_target() {
        let s = wb(&[&[0.3, -0.1, 0.8], &[1.0, 0.5, 0.0]]);
        let n = wb(&[&[0.05, 0.2, -0.4], &[0.1, 0.1, 0.3]]);
        let scaled = rescale_noise_to_snr(&s, &n, &[5.0, -3.0]).unwrap();
        let got = snr_db(&s, &scaled).unwrap();
        assert!((got[0] - 5.0).abs() < 1e-6);
        assert!((got[1] + 3.0).abs() < 1e-6);
    }

    #[test]
    fn zero_noise_is_an_error() {
        let s = wb(&[&[1.0, 1.0]]);
        let z = WaveBatch::zeros(1, 2, 8000);
        assert!(matches!(snr_db(&s, &z), Err(Error::ZeroNoise { item: 0 })));
        assert!(rescale_noise_to_snr(&s, &z, &[0.0]).is_err());
    }
}
