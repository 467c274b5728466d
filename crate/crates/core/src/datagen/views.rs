use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::WaveBatch;

use super::{gen_pair, DomainSpec, PROBE_INDEX_BASE, TEST_INDEX_BASE};

/// Fractions of a generated set assigned to each role.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub paired: f64,
    pub mixtures: f64,
    pub noise: f64,
}

impl Split {
    pub const PAIRED: Split = Split { paired: 1.0, mixtures: 0.0, noise: 0.0 };
    pub const MIXTURES: Split = Split { paired: 0.0, mixtures: 1.0, noise: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.paired, self.mixtures, self.noise];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Invalid(format!("split fractions must lie in [0, 1]: {self:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("split fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Per-role counts by largest remainder, so they always add up to `count`.
    pub fn counts(&self, count: usize) -> [usize; 3] {
        let parts = [self.paired, self.mixtures, self.noise];
        let exact: Vec<f64> = parts.iter().map(|f| f * count as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut left = count - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if parts[i] > 0.0 {
                counts[i] += 1;
                left -= 1;
            }
        }
        [counts[0], counts[1], counts[2]]
    }
}

#[derive(Debug)]
struct Rows {
    indices: Vec<u64>,
    data: Vec<f64>,
    len: usize,
    sample_rate: u32,
}

impl Rows {
    fn new(len: usize, sample_rate: u32) -> Self {
        Self { indices: Vec::new(), data: Vec::new(), len, sample_rate }
    }

    fn push(&mut self, index: u64, row: &[f64]) {
        debug_assert_eq!(row.len(), self.len);
        self.indices.push(index);
        self.data.extend_from_slice(row);
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.len..(i + 1) * self.len]
    }

    fn gather<S: Scalar>(&self, items: &[usize]) -> Result<WaveBatch<S>> {
        if items.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let mut out = Vec::with_capacity(items.len() * self.len);
        for &i in items {
            if i >= self.indices.len() {
                return Err(Error::Invalid(format!("item {i} out of range for view of {}", self.indices.len())));
            }
            out.extend(self.row(i).iter().map(|&v| S::of(v)));
        }
        Ok(WaveBatch::from_raw(out, items.len(), self.len, self.sample_rate))
    }
}

/// Items with ground-truth components: `(speech, noise, mixture)`.
///
/// Every batch read is counted, so unsupervised pipelines can prove they
/// never touched ground truth.
#[derive(Debug)]
pub struct PairedView {
    speech: Rows,
    noise: Rows,
    mixture: Rows,
    seed: u64,
    accesses: AtomicUsize,
}

/// A batch of paired items.
#[derive(Clone, Debug)]
pub struct PairedBatch<S> {
    pub speech: WaveBatch<S>,
    pub noise: WaveBatch<S>,
    pub mixture: WaveBatch<S>,
}

impl PairedView {
    pub fn len(&self) -> usize {
        self.mixture.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> &[u64] {
        &self.mixture.indices
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clip_len(&self) -> usize {
        self.mixture.len
    }

    pub fn batch<S: Scalar>(&self, items: &[usize]) -> Result<PairedBatch<S>> {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        Ok(PairedBatch {
            speech: self.speech.gather(items)?,
            noise: self.noise.gather(items)?,
            mixture: self.mixture.gather(items)?,
        })
    }

    /// Number of batch reads since construction.
    pub fn access_count(&self) -> usize {
        self.accesses.load(Ordering::Relaxed)
    }

    /// Builds a view from externally loaded rows (e.g. WAV files).
    pub fn from_rows(
        indices: Vec<u64>,
        speech: Vec<Vec<f64>>,
        noise: Vec<Vec<f64>>,
        mixture: Vec<Vec<f64>>,
        sample_rate: u32,
    ) -> Result<Self> {
        let len = mixture.first().map_or(0, Vec::len);
        if indices.len() != mixture.len() || speech.len() != mixture.len() || noise.len() != mixture.len() {
            return Err(Error::Invalid("paired view components differ in item count".into()));
        }
        let mut view = Self::empty(len, sample_rate, 0);
        for (((i, s), n), m) in indices.iter().zip(&speech).zip(&noise).zip(&mixture) {
            if s.len() != len || n.len() != len || m.len() != len {
                return Err(Error::Invalid(format!("item {i}: component lengths differ from {len}")));
            }
            view.speech.push(*i, s);
            view.noise.push(*i, n);
            view.mixture.push(*i, m);
        }
        Ok(view)
    }

    fn empty(len: usize, sample_rate: u32, seed: u64) -> Self {
        Self {
            speech: Rows::new(len, sample_rate),
            noise: Rows::new(len, sample_rate),
            mixture: Rows::new(len, sample_rate),
            seed,
            accesses: AtomicUsize::new(0),
        }
    }
}

/// Noisy mixtures only; the components are discarded at construction.
#[derive(Debug)]
pub struct MixturesOnlyView {
    mixture: Rows,
    seed: u64,
}

impl MixturesOnlyView {
    pub fn len(&self) -> usize {
        self.mixture.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> &[u64] {
        &self.mixture.indices
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clip_len(&self) -> usize {
        self.mixture.len
    }

    pub fn batch<S: Scalar>(&self, items: &[usize]) -> Result<WaveBatch<S>> {
        self.mixture.gather(items)
    }

    pub fn from_rows(indices: Vec<u64>, rows: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        Ok(Self { mixture: rows_from(indices, rows, sample_rate)?, seed: 0 })
    }

    /// The first `count` items.
    pub fn take(&self, count: usize) -> Self {
        let count = count.min(self.len());
        let mut rows = Rows::new(self.mixture.len, self.mixture.sample_rate);
        for i in 0..count {
            rows.push(self.mixture.indices[i], self.mixture.row(i));
        }
        Self { mixture: rows, seed: self.seed }
    }
}

/// Isolated noise recordings.
#[derive(Debug)]
pub struct NoiseOnlyView {
    noise: Rows,
    seed: u64,
}

impl NoiseOnlyView {
    pub fn len(&self) -> usize {
        self.noise.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> &[u64] {
        &self.noise.indices
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn batch<S: Scalar>(&self, items: &[usize]) -> Result<WaveBatch<S>> {
        self.noise.gather(items)
    }

    pub fn from_rows(indices: Vec<u64>, rows: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        Ok(Self { noise: rows_from(indices, rows, sample_rate)?, seed: 0 })
    }
}

fn rows_from(indices: Vec<u64>, rows: Vec<Vec<f64>>, sample_rate: u32) -> Result<Rows> {
    let len = rows.first().map_or(0, Vec::len);
    if indices.len() != rows.len() {
        return Err(Error::Invalid("index and row counts differ".into()));
    }
    let mut out = Rows::new(len, sample_rate);
    for (i, r) in indices.into_iter().zip(&rows) {
        if r.len() != len {
            return Err(Error::Invalid(format!("item {i}: length {} differs from {len}", r.len())));
        }
        out.push(i, r);
    }
    Ok(out)
}

/// The role-tagged views of one generated set; roles absent from the split
/// are `None`.
#[derive(Debug)]
pub struct DatasetViews {
    pub paired: Option<PairedView>,
    pub mixtures: Option<MixturesOnlyView>,
    pub noise: Option<NoiseOnlyView>,
}

/// Generates `count` items and assigns consecutive index ranges to the
/// paired, mixtures-only and noise-only roles, in that order.
pub fn gen_views(spec: &DomainSpec, count: usize, split: Split) -> Result<DatasetViews> {
    gen_views_from(spec, 0, count, split)
}

pub(crate) fn gen_views_from(spec: &DomainSpec, start: u64, count: usize, split: Split) -> Result<DatasetViews> {
    split.validate()?;
    if count == 0 {
        return Err(Error::Invalid("empty split: count is zero".into()));
    }
    let [np, nm, nn] = split.counts(count);
    let (len, fs) = (spec.clip_len, spec.sample_rate);
    let mut paired = (np > 0).then(|| PairedView::empty(len, fs, spec.seed));
    let mut mixtures = (nm > 0).then(|| MixturesOnlyView { mixture: Rows::new(len, fs), seed: spec.seed });
    let mut noise = (nn > 0).then(|| NoiseOnlyView { noise: Rows::new(len, fs), seed: spec.seed });
    for k in 0..count as u64 {
        let index = start + k;
        let pair = gen_pair(spec, index)?;
        let k = k as usize;
        if k < np {
            let v = paired.as_mut().expect("paired view");
            v.speech.push(index, pair.speech.as_slice());
            v.noise.push(index, pair.noise.as_slice());
            v.mixture.push(index, pair.mixture.as_slice());
        } else if k < np + nm {
            mixtures.as_mut().expect("mixtures view").mixture.push(index, pair.mixture.as_slice());
        } else {
            noise.as_mut().expect("noise view").noise.push(index, pair.noise.as_slice());
        }
    }
    Ok(DatasetViews { paired, mixtures, noise })
}

/// A paired held-out set drawn from the reserved test index range.
pub fn gen_test_set(spec: &DomainSpec, count: usize) -> Result<PairedView> {
    Ok(gen_views_from(spec, TEST_INDEX_BASE, count, Split::PAIRED)?.paired.expect("paired split"))
}

/// A small paired set for error analysis, disjoint from training and test
/// indices.
pub fn gen_probe_set(spec: &DomainSpec, count: usize) -> Result<PairedView> {
    Ok(gen_views_from(spec, PROBE_INDEX_BASE, count, Split::PAIRED)?.paired.expect("paired split"))
}
