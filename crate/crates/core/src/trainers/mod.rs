//! Supervised, MixIT, RemixIT and zero-shot training loops.
//!
//! Every loop is deterministic in its seed: epoch `e` draws its batch
//! order, permutations and noise picks from ChaCha8 keyed by the seed on
//! stream `e`.

pub mod config;
mod losses;
mod optim;
mod protocol;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::ProbeLog;
use crate::datagen::{
    gen_probe_set, gen_test_set, gen_views, DatasetViews, DomainSpec, Manifest, MixturesOnlyView, NoiseOnlyView,
    PairedBatch, PairedView,
};
use crate::error::{Error, Result};
use crate::metrics::si_sdr;
use crate::net::{init_model, ModelState};
use crate::scalar::Scalar;
use crate::signal::{sample_permutation, BatchPermutation, WaveBatch};

pub use config::{DataSource, Mode, PermuteMode, TrainConfig};
pub use losses::{
    mixit_enumerate, mixit_loss, mixit_make_mom, remix, supervised_loss, Assignment, MixitLoss, RemixTargets,
};
pub use optim::{lr_at_epoch, Adam};
pub use protocol::{update_teacher, TeacherProtocol};

pub const METRICS_CSV_HEADER: &str = "epoch,mode,si_sdr,si_sdri,loss,teacher_version,lr";

/// Mean training loss over the steps of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub steps: usize,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Shuffled item order cut into batches; the last batch may be short.
fn batches<R: Rng + ?Sized>(count: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

fn with_step<T>(r: Result<T>, epoch: usize, step: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { what } => Error::NonFinite { what: format!("{what} at epoch {epoch} step {step}") },
        other => other,
    })
}

fn apply<S: Scalar>(model: &ModelState<S>, opt: &mut Adam<S>, grads: &[S]) -> Result<ModelState<S>> {
    let params = opt.step(model.params(), grads)?;
    model.with_params(params)
}

/// One optimizer step on `mean_b [L(s_hat, s) + L(n_hat, n)]` given `m`.
pub fn supervised_step<S: Scalar>(
    model: &ModelState<S>,
    opt: &mut Adam<S>,
    speech: &WaveBatch<S>,
    noise: &WaveBatch<S>,
    mixture: &WaveBatch<S>,
) -> Result<(ModelState<S>, S)> {
    let (est, cache) = model.forward(mixture)?;
    let (loss, g) = supervised_loss(&est, speech, noise)?;
    let grads = model.backward(&cache, &g)?;
    Ok((apply(model, opt, &grads)?, loss))
}

pub fn supervised_epoch<S: Scalar>(
    model: &ModelState<S>,
    opt: &mut Adam<S>,
    data: &PairedView,
    batch: usize,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<(ModelState<S>, EpochStats)> {
    let mut model = model.clone();
    let mut total = 0.0;
    let plan = batches(data.len(), batch, rng);
    for (step, items) in plan.iter().enumerate() {
        let PairedBatch { speech, noise, mixture } = data.batch::<S>(items)?;
        let (next, loss) = with_step(supervised_step(&model, opt, &speech, &noise, &mixture), epoch, step)?;
        model = next;
        total += loss.to_f64_lossy();
    }
    Ok((model, EpochStats { loss: total / plan.len() as f64, steps: plan.len() }))
}

/// One MixIT step on the mixture of mixtures `m + n2`.
pub fn mixit_step<S: Scalar>(
    model: &ModelState<S>,
    opt: &mut Adam<S>,
    m: &WaveBatch<S>,
    n2: &WaveBatch<S>,
) -> Result<(ModelState<S>, S)> {
    let x = mixit_make_mom(m, n2)?;
    let (est, cache) = model.forward(&x)?;
    let out = mixit_loss(&est, m, n2)?;
    let grads = model.backward(&cache, &out.grad)?;
    Ok((apply(model, opt, &grads)?, out.loss))
}

/// Each batch of mixtures is paired with noise recordings drawn uniformly
/// with replacement from `noise`.
pub fn mixit_epoch<S: Scalar>(
    model: &ModelState<S>,
    opt: &mut Adam<S>,
    mixtures: &MixturesOnlyView,
    noise: &NoiseOnlyView,
    batch: usize,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<(ModelState<S>, EpochStats)> {
    if noise.is_empty() {
        return Err(Error::Invalid("MixIT needs a non-empty noise_only view".into()));
    }
    let mut model = model.clone();
    let mut total = 0.0;
    let plan = batches(mixtures.len(), batch, rng);
    for (step, items) in plan.iter().enumerate() {
        let picks: Vec<usize> = (0..items.len()).map(|_| rng.random_range(0..noise.len())).collect();
        let m = mixtures.batch::<S>(items)?;
        let n2 = noise.batch::<S>(&picks)?;
        let (next, loss) = with_step(mixit_step(&model, opt, &m, &n2), epoch, step)?;
        model = next;
        total += loss.to_f64_lossy();
    }
    Ok((model, EpochStats { loss: total / plan.len() as f64, steps: plan.len() }))
}

/// One RemixIT step: the teacher separates `m`, its noise estimates are
/// permuted by `perm` and remixed, and the student is trained on the result.
pub fn remixit_step<S: Scalar>(
    teacher: &ModelState<S>,
    student: &ModelState<S>,
    opt: &mut Adam<S>,
    m: &WaveBatch<S>,
    perm: &BatchPermutation,
) -> Result<(ModelState<S>, S)> {
    let targets = remix(&teacher.separate(m)?, perm)?;
    supervised_step(student, opt, &targets.speech, &targets.noise, &targets.mixture)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RemixOptions {
    pub batch: usize,
    pub permute: PermuteMode,
}

/// A RemixIT epoch over `data` with a fixed teacher; one permutation is
/// drawn per step.
pub fn remixit_epoch<S: Scalar>(
    teacher: &ModelState<S>,
    student: &ModelState<S>,
    opt: &mut Adam<S>,
    data: &MixturesOnlyView,
    opts: RemixOptions,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<(ModelState<S>, EpochStats)> {
    if !(2..=3).contains(&teacher.config().num_slots) || student.config().num_slots != 2 {
        return Err(Error::ConfigMismatch(format!(
            "teacher must have 2 or 3 slots and student 2, got {} and {}",
            teacher.config().num_slots,
            student.config().num_slots
        )));
    }
    let mut student = student.clone();
    let mut total = 0.0;
    let plan = batches(data.len(), opts.batch, rng);
    for (step, items) in plan.iter().enumerate() {
        let perm = match opts.permute {
            PermuteMode::Shuffle => sample_permutation(rng, items.len()),
            PermuteMode::Identity => BatchPermutation::identity(items.len()),
        };
        let m = data.batch::<S>(items)?;
        let (next, loss) = with_step(remixit_step(teacher, &student, opt, &m, &perm), epoch, step)?;
        student = next;
        total += loss.to_f64_lossy();
    }
    Ok((student, EpochStats { loss: total / plan.len() as f64, steps: plan.len() }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    pub lr_halving_period: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self { epochs: 10, batch: 8, lr0: 1e-3, lr_halving_period: 6, gamma: 0.01, seed: 0 }
    }
}

/// RemixIT with the student initialized as a copy of `pretrained` and an
/// exponential-moving-average teacher.
pub fn zero_shot_adapt<S: Scalar>(
    pretrained: &ModelState<S>,
    adapt_set: &MixturesOnlyView,
    cfg: &AdaptConfig,
) -> Result<ModelState<S>> {
    if adapt_set.is_empty() {
        return Err(Error::Invalid("zero-shot adaptation needs a non-empty mixtures_only view".into()));
    }
    let protocol = TeacherProtocol::Ema(cfg.gamma);
    protocol.validate()?;
    let mut teacher = pretrained.clone();
    let mut student = pretrained.clone();
    let mut opt = Adam::new(student.params().len(), cfg.lr0);
    let opts = RemixOptions { batch: cfg.batch, permute: PermuteMode::Shuffle };
    for e in 0..cfg.epochs {
        opt.lr = lr_at_epoch(cfg.lr0, cfg.lr_halving_period, e);
        let mut rng = epoch_rng(cfg.seed, e + 1);
        student = remixit_epoch(&teacher, &student, &mut opt, adapt_set, opts, &mut rng, e + 1)?.0;
        teacher = update_teacher(protocol, &teacher, &student, e + 1)?;
    }
    Ok(student)
}

/// Mean speech-slot SI-SDR and improvement over the mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub si_sdr: f64,
    pub si_sdri: f64,
    pub items: usize,
}

const EVAL_BATCH: usize = 16;

/// Evaluates any separator given as `mixture -> speech estimate` on a
/// paired set.
pub fn evaluate_with(
    test: &PairedView,
    mut speech_of: impl FnMut(&WaveBatch<f64>) -> Result<WaveBatch<f64>>,
) -> Result<EvalResult> {
    let (mut sdr, mut sdri) = (0.0, 0.0);
    let all: Vec<usize> = (0..test.len()).collect();
    for items in all.chunks(EVAL_BATCH) {
        let b = test.batch::<f64>(items)?;
        let est = speech_of(&b.mixture)?;
        for i in 0..items.len() {
            let out = si_sdr(est.row(i), b.speech.row(i))?.value_db;
            let base = si_sdr(b.mixture.row(i), b.speech.row(i))?.value_db;
            sdr += out;
            sdri += out - base;
        }
    }
    let n = test.len().max(1) as f64;
    Ok(EvalResult { si_sdr: sdr / n, si_sdri: sdri / n, items: test.len() })
}

pub fn evaluate<S: Scalar>(model: &ModelState<S>, test: &PairedView) -> Result<EvalResult> {
    evaluate_with(test, |m| Ok(model.separate(&m.cast::<S>())?.slot(0).cast::<f64>()))
}

/// One row of the per-epoch metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub mode: Mode,
    pub si_sdr: f64,
    pub si_sdri: f64,
    pub loss: f64,
    /// Update counter of the teacher used during the epoch; 0 without one.
    pub teacher_version: u64,
    pub lr: f64,
}

impl EpochRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.mode, self.si_sdr, self.si_sdri, self.loss, self.teacher_version, self.lr
        )
    }
}

pub fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Materialized training, test and probe data for a config.
#[derive(Debug)]
pub struct TrainInputs {
    pub train: DatasetViews,
    pub test: PairedView,
    /// Held-out paired items for the error decomposition; analysis only.
    pub probe: Option<PairedView>,
}

fn load_spec(source: &str, data_seed: Option<u64>) -> Result<DomainSpec> {
    let spec = DomainSpec::load(source)?;
    Ok(match data_seed {
        Some(s) => spec.with_seed(s),
        None => spec,
    })
}

impl TrainInputs {
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let train = match &cfg.train_data {
            DataSource::Spec(s) => gen_views(&load_spec(s, cfg.data_seed)?, cfg.train_count, cfg.split)?,
            DataSource::Manifest(p) => Manifest::load(p)?.views()?,
        };
        let test_source = match (&cfg.test_data, &cfg.train_data) {
            (Some(t), _) => t.clone(),
            (None, train) => train.clone(),
        };
        let (test, probe) = match &test_source {
            DataSource::Spec(s) => {
                let spec = load_spec(s, cfg.data_seed)?;
                let probe = if cfg.probe_count > 0 { Some(gen_probe_set(&spec, cfg.probe_count)?) } else { None };
                (gen_test_set(&spec, cfg.test_count)?, probe)
            }
            DataSource::Manifest(p) => {
                if cfg.test_data.is_none() {
                    return Err(Error::Invalid("test_data is required when train_data is a manifest".into()));
                }
                let views = Manifest::load(p)?.views()?;
                let test = views.paired.ok_or(Error::Role {
                    expected: "paired",
                    found: if views.mixtures.is_some() { "mixtures_only" } else { "noise_only" },
                })?;
                (test, None)
            }
        };
        Ok(Self { train, test, probe })
    }
}

#[derive(Debug)]
pub struct RunOutcome<S> {
    pub model: ModelState<S>,
    pub teacher: Option<ModelState<S>>,
    pub rows: Vec<EpochRow>,
    pub probe: Option<ProbeLog>,
    /// The teacher (or, for zero-shot, the pretrained model) on the test set
    /// before any training.
    pub initial: Option<EvalResult>,
}

impl<S> RunOutcome<S> {
    pub fn final_si_sdri(&self) -> Option<f64> {
        self.rows.last().map(|r| r.si_sdri)
    }
}

fn probe_speech<S: Scalar>(model: &ModelState<S>, mixture: &WaveBatch<f64>) -> Result<WaveBatch<f64>> {
    Ok(model.separate(&mixture.cast::<S>())?.slot(0).cast::<f64>())
}

/// Runs the configured trainer end to end.
///
/// `on_epoch` sees each metrics row as soon as its epoch completes.
pub fn run<S: Scalar>(
    cfg: &TrainConfig,
    inputs: &TrainInputs,
    teacher: Option<&ModelState<S>>,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<RunOutcome<S>> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    let paired_reads = inputs.train.paired.as_ref().map(PairedView::access_count);
    let outcome = match cfg.mode {
        Mode::Supervised | Mode::Mixit => {
            let data_err = |what: &str| Error::Invalid(format!("{} mode needs a {what} view", cfg.mode));
            let model_cfg = crate::net::ModelConfig { seed: cfg.model.seed ^ cfg.seed, ..cfg.model };
            let mut model = init_model::<S>(model_cfg)?;
            let mut opt = Adam::new(model.params().len(), cfg.lr0);
            for e in 1..=cfg.epochs {
                let lr = lr_at_epoch(cfg.lr0, cfg.lr_halving_period, e - 1);
                opt.lr = lr;
                let mut rng = epoch_rng(cfg.seed, e);
                let (next, stats) = if cfg.mode == Mode::Supervised {
                    let data = inputs.train.paired.as_ref().ok_or_else(|| data_err("paired"))?;
                    supervised_epoch(&model, &mut opt, data, cfg.batch, &mut rng, e)?
                } else {
                    let m = inputs.train.mixtures.as_ref().ok_or_else(|| data_err("mixtures_only"))?;
                    let n = inputs.train.noise.as_ref().ok_or_else(|| data_err("noise_only"))?;
                    mixit_epoch(&model, &mut opt, m, n, cfg.batch, &mut rng, e)?
                };
                model = next;
                let eval = evaluate(&model, &inputs.test)?;
                let row = EpochRow {
                    epoch: e,
                    mode: cfg.mode,
                    si_sdr: eval.si_sdr,
                    si_sdri: eval.si_sdri,
                    loss: stats.loss,
                    teacher_version: 0,
                    lr,
                };
                on_epoch(&row);
                rows.push(row);
            }
            RunOutcome { model, teacher: None, rows, probe: None, initial: None }
        }
        Mode::Remixit | Mode::ZeroShot => {
            let pretrained = teacher.ok_or_else(|| Error::Invalid(format!("{} mode needs a teacher checkpoint", cfg.mode)))?;
            let data = inputs
                .train
                .mixtures
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("{} mode needs a mixtures_only view", cfg.mode)))?;
            let initial = evaluate(pretrained, &inputs.test)?;
            let mut teacher = pretrained.clone();
            let mut student = if cfg.mode == Mode::ZeroShot {
                if pretrained.config().num_slots != 2 {
                    return Err(Error::ConfigMismatch("zero-shot adaptation needs a 2-slot pretrained model".into()));
                }
                pretrained.clone()
            } else {
                let s = cfg.student();
                init_model::<S>(crate::net::ModelConfig { seed: s.seed ^ cfg.seed, ..s })?
            };
            let mut opt = Adam::new(student.params().len(), cfg.lr0);
            let mut probe = inputs
                .probe
                .as_ref()
                .map(|p| -> Result<_> {
                    let all: Vec<usize> = (0..p.len()).collect();
                    let b = p.batch::<f64>(&all)?;
                    Ok((ProbeLog::new(b.speech), b.mixture))
                })
                .transpose()?;
            let mut stage = 0;
            let opts = RemixOptions { batch: cfg.batch, permute: cfg.permute };
            for e in 1..=cfg.epochs {
                let lr = lr_at_epoch(cfg.lr0, cfg.lr_halving_period, e - 1);
                opt.lr = lr;
                let mut rng = epoch_rng(cfg.seed, e);
                let (next, stats) = remixit_epoch(&teacher, &student, &mut opt, data, opts, &mut rng, e)?;
                student = next;
                if let Some((log, mixture)) = probe.as_mut() {
                    log.push(e, probe_speech(&student, mixture)?, probe_speech(&teacher, mixture)?)?;
                }
                let eval = evaluate(&student, &inputs.test)?;
                let row = EpochRow {
                    epoch: e,
                    mode: cfg.mode,
                    si_sdr: eval.si_sdr,
                    si_sdri: eval.si_sdri,
                    loss: stats.loss,
                    teacher_version: teacher.version(),
                    lr,
                };
                on_epoch(&row);
                rows.push(row);
                teacher = update_teacher(cfg.protocol, &teacher, &student, e)?;
                if cfg.protocol.swaps_at(e) && stage + 1 < cfg.depth_schedule.len() {
                    stage += 1;
                    student = student.grow_depth(cfg.depth_schedule[stage])?;
                    opt = Adam::new(student.params().len(), cfg.lr0);
                }
            }
            RunOutcome { model: student, teacher: Some(teacher), rows, probe: probe.map(|(log, _)| log), initial: Some(initial) }
        }
    };
    if cfg.mode != Mode::Supervised {
        let now = inputs.train.paired.as_ref().map(PairedView::access_count);
        if now != paired_reads {
            return Err(Error::Invalid("unsupervised trainer read a paired view".into()));
        }
    }
    Ok(outcome)
}
