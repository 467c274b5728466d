//! Time-domain masking separator with exact reverse-mode gradients.
//!
//! The network is a learned analysis filterbank, a per-frame mask network
//! and a learned synthesis filterbank (overlap-add), followed by the
//! mixture-consistency projection:
//!
//! ```text
//! frames   X[b,n,:] = xpad[b, n*hop .. n*hop+L]
//! encode   E = X enc^T                                  [B*N, F]
//! features z = E / (rms(x_b) + 1e-8)
//! hidden   h1 = tanh(z W_in^T + b_in)                   [B*N, H]
//!          h_{k+1} = h_k + tanh(h_k W_k^T + b_k)        k = 1..D-1
//! masks    G = sigmoid(h_D W_out^T + b_out)             [B*N, M*F]
//! decode   y_i = overlap_add((G_i * E) dec)             [B, T] per slot
//! project  y_i += (x - sum_j y_j) / M
//! ```
//!
//! The input is zero-padded by `L - hop` samples at the front and up to a
//! whole number of hops at the back so every sample is covered by the same
//! number of frames; padding is cropped after synthesis.
//!
//! Flat parameter layout, in order: `enc [F, L]`, `dec [F, L]`,
//! `W_in [H, F]`, `b_in [H]`, then `D - 1` residual blocks `W_k [H, H]`,
//! `b_k [H]`, then `W_out [M*F, H]`, `b_out [M*F]`. The total is
//! `2FL + HF + H + (D-1)(H^2 + H) + MFH + MF`.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{matmul, matmul_nt, matmul_tn, Scalar};
use crate::signal::{attach_mixture, project_adjoint_in_place, project_in_place, SourceEstimates, WaveBatch};

const RMS_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Output slots: 2 for speech/noise separators, 3 for MixIT models.
    pub num_slots: usize,
    pub num_filters: usize,
    pub filter_len: usize,
    pub hop: usize,
    pub hidden_width: usize,
    /// Number of hidden layers in the mask network (the first one plus
    /// `depth - 1` residual blocks).
    pub depth: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { num_slots: 2, num_filters: 32, filter_len: 16, hop: 8, hidden_width: 64, depth: 2, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(2..=3).contains(&self.num_slots) {
            return bad(format!("num_slots must be 2 or 3, got {}", self.num_slots));
        }
        if self.num_filters == 0 || self.hidden_width == 0 || self.depth == 0 {
            return bad(format!(
                "num_filters, hidden_width and depth must be positive ({}, {}, {})",
                self.num_filters, self.hidden_width, self.depth
            ));
        }
        if self.hop == 0 || self.filter_len == 0 || self.hop > self.filter_len {
            return bad(format!("need 0 < hop <= filter_len, got hop {} filter_len {}", self.hop, self.filter_len));
        }
        Ok(())
    }

    /// Closed-form parameter count (see module docs).
    pub fn param_count(&self) -> usize {
        let (m, f, l, h, d) = (self.num_slots, self.num_filters, self.filter_len, self.hidden_width, self.depth);
        2 * f * l + h * f + h + (d - 1) * (h * h + h) + m * f * h + m * f
    }

    fn layout(&self) -> Layout {
        let (m, f, l, h) = (self.num_slots, self.num_filters, self.filter_len, self.hidden_width);
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let enc = take(f * l);
        let dec = take(f * l);
        let in_w = take(h * f);
        let in_b = take(h);
        let residual = (1..self.depth).map(|_| (take(h * h), take(h))).collect();
        let out_w = take(m * f * h);
        let out_b = take(m * f);
        Layout { enc, dec, in_w, in_b, residual, out_w, out_b }
    }

    /// Frames and padding used for a signal of `len` samples.
    pub fn framing(&self, len: usize) -> Framing {
        let front = self.filter_len - self.hop;
        let frames = (len + front).div_ceil(self.hop);
        let padded = (frames - 1) * self.hop + self.filter_len;
        Framing { front, frames, padded }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Framing {
    pub front: usize,
    pub frames: usize,
    pub padded: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    enc: Range<usize>,
    dec: Range<usize>,
    in_w: Range<usize>,
    in_b: Range<usize>,
    residual: Vec<(Range<usize>, Range<usize>)>,
    out_w: Range<usize>,
    out_b: Range<usize>,
}

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

fn fresh_token() -> u64 {
    NEXT_TOKEN.fetch_add(1, Ordering::Relaxed)
}

/// Parameters of a separator. Immutable: every update yields a new state.
#[derive(Debug)]
pub struct ModelState<S> {
    params: Vec<S>,
    config: ModelConfig,
    version: u64,
    token: u64,
}

impl<S: Clone> Clone for ModelState<S> {
    fn clone(&self) -> Self {
        Self { params: self.params.clone(), config: self.config, version: self.version, token: self.token }
    }
}

impl<S: PartialEq> PartialEq for ModelState<S> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.version == other.version && self.params == other.params
    }
}

fn sample_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * std
}

/// Deterministic initialization: weights `N(0, 1/fan_in)`, biases zero.
pub fn init_model<S: Scalar>(config: ModelConfig) -> Result<ModelState<S>> {
    config.validate()?;
    let layout = config.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = vec![S::zero(); config.param_count()];
    let (f, l, h) = (config.num_filters, config.filter_len, config.hidden_width);
    let mut fill = |range: Range<usize>, fan_in: usize, params: &mut [S]| {
        let std = 1.0 / (fan_in as f64).sqrt();
        for p in &mut params[range] {
            *p = S::of(sample_normal(&mut rng, std));
        }
    };
    fill(layout.enc.clone(), l, &mut params);
    fill(layout.dec.clone(), f, &mut params);
    fill(layout.in_w.clone(), f, &mut params);
    for (w, _) in &layout.residual {
        fill(w.clone(), h, &mut params);
    }
    fill(layout.out_w.clone(), h, &mut params);
    Ok(ModelState { params, config, version: 0, token: fresh_token() })
}

impl<S: Scalar> ModelState<S> {
    pub fn from_parts(params: Vec<S>, config: ModelConfig, version: u64) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::shape(
                format!("{} parameters for {config:?}", config.param_count()),
                format!("{} given", params.len()),
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { what: "model parameters".into() });
        }
        Ok(Self { params, config, version, token: fresh_token() })
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// New state with replaced parameters and the version advanced by one.
    pub fn with_params(&self, params: Vec<S>) -> Result<Self> {
        let mut next = Self::from_parts(params, self.config, self.version)?;
        next.version = self.version + 1;
        Ok(next)
    }

    #[cfg(test)]
    pub(crate) fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            params: self.params.iter().map(|p| U::of(p.to_f64_lossy())).collect(),
            config: self.config,
            version: self.version,
            token: fresh_token(),
        }
    }

    /// Adds zero-initialized residual blocks until the mask network has
    /// `depth` hidden layers. A zero block is the identity map, so the grown
    /// model computes exactly the same outputs.
    pub fn grow_depth(&self, depth: usize) -> Result<Self> {
        if depth < self.config.depth {
            return Err(Error::Invalid(format!("cannot shrink depth {} to {depth}", self.config.depth)));
        }
        let old = self.config.layout();
        let config = ModelConfig { depth, ..self.config };
        let new = config.layout();
        let mut params = vec![S::zero(); config.param_count()];
        params[..old.out_w.start].copy_from_slice(&self.params[..old.out_w.start]);
        params[new.out_w.clone()].copy_from_slice(&self.params[old.out_w.clone()]);
        params[new.out_b.clone()].copy_from_slice(&self.params[old.out_b.clone()]);
        Ok(Self { params, config, version: self.version, token: fresh_token() })
    }

    /// Separates `mixture` into `M` mixture-consistent sources.
    pub fn forward(&self, mixture: &WaveBatch<S>) -> Result<(SourceEstimates<S>, ForwardCache<S>)> {
        let cfg = &self.config;
        let lay = cfg.layout();
        let (m, f, l, h, hop) = (cfg.num_slots, cfg.num_filters, cfg.filter_len, cfg.hidden_width, cfg.hop);
        let (batch, len) = (mixture.batch(), mixture.len());
        let framing = cfg.framing(len);
        let nf = framing.frames;
        let rows = batch * nf;
        let p = &self.params;

        let mut frames = vec![S::zero(); rows * l];
        for b in 0..batch {
            let x = mixture.row(b);
            for n in 0..nf {
                let dst = &mut frames[(b * nf + n) * l..(b * nf + n + 1) * l];
                for (k, d) in dst.iter_mut().enumerate() {
                    let pos = n * hop + k;
                    if pos >= framing.front && pos - framing.front < len {
                        *d = x[pos - framing.front];
                    }
                }
            }
        }

        let mut encoded = vec![S::zero(); rows * f];
        matmul_nt(rows, l, f, &frames, &p[lay.enc.clone()], S::zero(), &mut encoded);

        let inv_rms: Vec<S> = mixture
            .rows()
            .map(|x| {
                let ms = x.iter().map(|&v| v * v).sum::<S>() / S::of(len as f64);
                S::one() / (ms.sqrt() + S::of(RMS_FLOOR))
            })
            .collect();
        let mut features = encoded.clone();
        for (r, row) in features.chunks_exact_mut(f).enumerate() {
            let s = inv_rms[r / nf];
            row.iter_mut().for_each(|v| *v *= s);
        }

        let mut hiddens = Vec::with_capacity(cfg.depth);
        let mut act = vec![S::zero(); rows * h];
        dense_into(rows, f, h, &features, &p[lay.in_w.clone()], &p[lay.in_b.clone()], &mut act);
        act.iter_mut().for_each(|v| *v = v.tanh());
        hiddens.push(act);
        let mut branches = Vec::with_capacity(cfg.depth - 1);
        for (w, bias) in &lay.residual {
            let prev = hiddens.last().expect("first hidden layer");
            let mut branch = vec![S::zero(); rows * h];
            dense_into(rows, h, h, prev, &p[w.clone()], &p[bias.clone()], &mut branch);
            branch.iter_mut().for_each(|v| *v = v.tanh());
            let next: Vec<S> = prev.iter().zip(&branch).map(|(&a, &t)| a + t).collect();
            branches.push(branch);
            hiddens.push(next);
        }

        let mut masks = vec![S::zero(); rows * m * f];
        dense_into(rows, h, m * f, hiddens.last().expect("hidden"), &p[lay.out_w.clone()], &p[lay.out_b.clone()], &mut masks);
        masks.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut masked = vec![S::zero(); m * rows * f];
        for i in 0..m {
            let dst = &mut masked[i * rows * f..(i + 1) * rows * f];
            for r in 0..rows {
                let g = &masks[(r * m + i) * f..(r * m + i + 1) * f];
                let e = &encoded[r * f..(r + 1) * f];
                for k in 0..f {
                    dst[r * f + k] = g[k] * e[k];
                }
            }
        }

        let n_out = batch * len;
        let mut sources = vec![S::zero(); m * n_out];
        let mut decoded = vec![S::zero(); rows * l];
        let mut padded = vec![S::zero(); framing.padded];
        for i in 0..m {
            matmul(rows, f, l, &masked[i * rows * f..(i + 1) * rows * f], &p[lay.dec.clone()], S::zero(), &mut decoded);
            for b in 0..batch {
                padded.iter_mut().for_each(|v| *v = S::zero());
                for n in 0..nf {
                    let src = &decoded[(b * nf + n) * l..(b * nf + n + 1) * l];
                    for (k, &v) in src.iter().enumerate() {
                        padded[n * hop + k] += v;
                    }
                }
                let out = &mut sources[i * n_out + b * len..i * n_out + (b + 1) * len];
                out.copy_from_slice(&padded[framing.front..framing.front + len]);
            }
        }
        project_in_place(&mut sources, m, mixture.as_slice());
        if sources.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "separator output".into() });
        }

        let est = attach_mixture(sources, m, mixture);
        let cache = ForwardCache {
            token: self.token,
            batch,
            len,
            framing,
            frames,
            encoded,
            features,
            inv_rms,
            hiddens,
            branches,
            masks,
            masked,
        };
        Ok((est, cache))
    }

    /// Separation without keeping activations.
    pub fn separate(&self, mixture: &WaveBatch<S>) -> Result<SourceEstimates<S>> {
        self.forward(mixture).map(|(est, _)| est)
    }

    /// Gradient of `sum(grad_out * forward(x))` with respect to the flat
    /// parameters, through the consistency projection.
    pub fn backward(&self, cache: &ForwardCache<S>, grad_out: &[S]) -> Result<Vec<S>> {
        if cache.token != self.token {
            return Err(Error::StaleCache);
        }
        let cfg = &self.config;
        let lay = cfg.layout();
        let (m, f, l, h, hop) = (cfg.num_slots, cfg.num_filters, cfg.filter_len, cfg.hidden_width, cfg.hop);
        let (batch, len) = (cache.batch, cache.len);
        let nf = cache.framing.frames;
        let rows = batch * nf;
        let n_out = batch * len;
        if grad_out.len() != m * n_out {
            return Err(Error::shape(format!("[{m}, {batch}, {len}]"), format!("gradient of {}", grad_out.len())));
        }
        let p = &self.params;
        let mut grad = vec![S::zero(); p.len()];

        let mut g = grad_out.to_vec();
        project_adjoint_in_place(&mut g, m, n_out);

        let mut d_encoded = vec![S::zero(); rows * f];
        let mut d_masks = vec![S::zero(); rows * m * f];
        let mut g_frames = vec![S::zero(); rows * l];
        let mut d_masked = vec![S::zero(); rows * f];
        for i in 0..m {
            for b in 0..batch {
                let src = &g[i * n_out + b * len..i * n_out + (b + 1) * len];
                for n in 0..nf {
                    let dst = &mut g_frames[(b * nf + n) * l..(b * nf + n + 1) * l];
                    for (k, d) in dst.iter_mut().enumerate() {
                        let pos = n * hop + k;
                        *d = if pos >= cache.framing.front && pos - cache.framing.front < len {
                            src[pos - cache.framing.front]
                        } else {
                            S::zero()
                        };
                    }
                }
            }
            let masked_i = &cache.masked[i * rows * f..(i + 1) * rows * f];
            matmul_tn(f, rows, l, masked_i, &g_frames, S::one(), &mut grad[lay.dec.clone()]);
            matmul_nt(rows, l, f, &g_frames, &p[lay.dec.clone()], S::zero(), &mut d_masked);
            for r in 0..rows {
                for k in 0..f {
                    let dy = d_masked[r * f + k];
                    let gi = (r * m + i) * f + k;
                    d_masks[gi] = dy * cache.encoded[r * f + k];
                    d_encoded[r * f + k] += dy * cache.masks[gi];
                }
            }
        }

        for (d, &s) in d_masks.iter_mut().zip(&cache.masks) {
            *d *= s * (S::one() - s);
        }
        let last = cache.hiddens.last().expect("hidden");
        let mut d_hidden = vec![S::zero(); rows * h];
        dense_backward(
            rows,
            h,
            m * f,
            last,
            &p[lay.out_w.clone()],
            &d_masks,
            &mut grad,
            lay.out_w.clone(),
            lay.out_b.clone(),
            &mut d_hidden,
        );

        for (k, (w, bias)) in lay.residual.iter().enumerate().rev() {
            let branch = &cache.branches[k];
            let prev = &cache.hiddens[k];
            let d_branch: Vec<S> = d_hidden.iter().zip(branch).map(|(&d, &t)| d * (S::one() - t * t)).collect();
            let mut d_prev = vec![S::zero(); rows * h];
            dense_backward(rows, h, h, prev, &p[w.clone()], &d_branch, &mut grad, w.clone(), bias.clone(), &mut d_prev);
            for (a, &b) in d_hidden.iter_mut().zip(&d_prev) {
                *a += b;
            }
        }

        let first = &cache.hiddens[0];
        let d_pre: Vec<S> = d_hidden.iter().zip(first).map(|(&d, &t)| d * (S::one() - t * t)).collect();
        let mut d_features = vec![S::zero(); rows * f];
        dense_backward(
            rows,
            f,
            h,
            &cache.features,
            &p[lay.in_w.clone()],
            &d_pre,
            &mut grad,
            lay.in_w.clone(),
            lay.in_b.clone(),
            &mut d_features,
        );
        for r in 0..rows {
            let s = cache.inv_rms[r / nf];
            for k in 0..f {
                d_encoded[r * f + k] += d_features[r * f + k] * s;
            }
        }
        matmul_tn(f, rows, l, &d_encoded, &cache.frames, S::one(), &mut grad[lay.enc.clone()]);
        Ok(grad)
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `out = x W^T + b` with `x [rows, fan_in]`, `W [fan_out, fan_in]`.
fn dense_into<S: Scalar>(rows: usize, fan_in: usize, fan_out: usize, x: &[S], w: &[S], b: &[S], out: &mut [S]) {
    for row in out.chunks_exact_mut(fan_out) {
        row.copy_from_slice(b);
    }
    matmul_nt(rows, fan_in, fan_out, x, w, S::one(), out);
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<S: Scalar>(
    rows: usize,
    fan_in: usize,
    fan_out: usize,
    x: &[S],
    w: &[S],
    d_out: &[S],
    grad: &mut [S],
    w_range: Range<usize>,
    b_range: Range<usize>,
    d_in: &mut [S],
) {
    matmul_tn(fan_out, rows, fan_in, d_out, x, S::one(), &mut grad[w_range]);
    let gb = &mut grad[b_range];
    for row in d_out.chunks_exact(fan_out) {
        for (a, &v) in gb.iter_mut().zip(row) {
            *a += v;
        }
    }
    matmul(rows, fan_out, fan_in, d_out, w, S::zero(), d_in);
}

/// Activations retained by [`ModelState::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<S> {
    token: u64,
    batch: usize,
    len: usize,
    framing: Framing,
    frames: Vec<S>,
    encoded: Vec<S>,
    features: Vec<S>,
    inv_rms: Vec<S>,
    hiddens: Vec<Vec<S>>,
    branches: Vec<Vec<S>>,
    masks: Vec<S>,
    masked: Vec<S>,
}

/// `gamma * student + (1 - gamma) * teacher`, with the teacher's version
/// advanced by one.
pub fn blend_params<S: Scalar>(student: &ModelState<S>, teacher: &ModelState<S>, gamma: S) -> Result<ModelState<S>> {
    if (ModelConfig { seed: 0, ..student.config }) != (ModelConfig { seed: 0, ..teacher.config }) {
        return Err(Error::ConfigMismatch(format!("{:?} vs {:?}", student.config, teacher.config)));
    }
    if !(S::zero()..=S::one()).contains(&gamma) {
        return Err(Error::Invalid(format!("blend weight {gamma} outside [0, 1]")));
    }
    let keep = S::one() - gamma;
    let params = student.params.iter().zip(&teacher.params).map(|(&s, &t)| gamma * s + keep * t).collect();
    Ok(ModelState { params, config: teacher.config, version: teacher.version + 1, token: fresh_token() })
}

/// A loss over separator outputs returning `(loss, d loss / d sources)`.
pub trait SourceLoss<S> {
    fn eval(&self, est: &SourceEstimates<S>) -> Result<(S, Vec<S>)>;
}

impl<S, F> SourceLoss<S> for F
where
    F: Fn(&SourceEstimates<S>) -> Result<(S, Vec<S>)>,
{
    fn eval(&self, est: &SourceEstimates<S>) -> Result<(S, Vec<S>)> {
        self(est)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { samples: 50, step: 1e-6, seed: 0, floor: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares analytic and central-difference gradients of `loss(forward(x))`
/// on a random subset of parameters.
///
/// Relative error per parameter is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<S: Scalar, L: SourceLoss<S>>(
    state: &ModelState<S>,
    mixture: &WaveBatch<S>,
    loss: &L,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let (est, cache) = state.forward(mixture)?;
    let (_, g) = loss.eval(&est)?;
    let analytic_all = state.backward(&cache, &g)?;

    let total = state.params.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let checked: Vec<usize> = rand::seq::index::sample(&mut rng, total, opts.samples.min(total)).into_vec();

    let h = S::of(opts.step);
    let mut analytic = Vec::with_capacity(checked.len());
    let mut numeric = Vec::with_capacity(checked.len());
    let mut worst = 0.0f64;
    for &j in &checked {
        let mut up = state.params.clone();
        up[j] += h;
        let mut down = state.params.clone();
        down[j] -= h;
        let plus = loss.eval(&ModelState::from_parts(up, state.config, 0)?.separate(mixture)?)?.0;
        let minus = loss.eval(&ModelState::from_parts(down, state.config, 0)?.separate(mixture)?)?.0;
        let fd = (plus - minus).to_f64_lossy() / (2.0 * opts.step);
        let a = analytic_all[j].to_f64_lossy();
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(opts.floor);
        worst = worst.max(rel);
        analytic.push(a);
        numeric.push(fd);
    }
    Ok(GradCheckReport { max_rel_error: worst, checked, analytic, numeric })
}
