//! Flat `key = value` training configuration.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `mode` | required | `supervised`, `mixit`, `remixit` or `zeroshot` |
//! | `batch` | 8 | items per step |
//! | `epochs` | 40 | training epochs |
//! | `lr0` | 1e-3 | initial Adam step size |
//! | `lr_halving_period` | 6 | epochs between halvings |
//! | `protocol` | `sequential` (remixit), `ema` (zeroshot) | `static`, `sequential` or `ema` |
//! | `teacher_k` | 10 | sequential swap period |
//! | `ema_gamma` | 0.01 | ema blend weight |
//! | `model.<field>` | see `ModelConfig` | separator trained by supervised/mixit |
//! | `student.<field>` | `model.*` with 2 slots | remixit student |
//! | `depth_schedule` | empty | remixit student depth per sequential stage, e.g. `2 3 4` |
//! | `permute` | `shuffle` | `identity` disables remixing (ablation) |
//! | `train_data` | `A` | built-in domain, domain spec file or dataset manifest |
//! | `train_count` | 2000 | items generated from a domain spec |
//! | `split` | by mode | `paired mixtures noise` fractions |
//! | `test_data` | train domain | built-in, spec file or paired manifest |
//! | `test_count` | 200 | held-out items generated from a domain spec |
//! | `probe_count` | 8 | held-out items tracked by the error decomposition |
//! | `seed` | 0 | model init, shuffling and permutation seed |
//! | `data_seed` | domain's own | overrides the seed of generated domains |
//!
//! Relative paths are resolved against the config file's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::datagen::Split;
use crate::error::{Error, Result};
use crate::net::ModelConfig;

use super::protocol::TeacherProtocol;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Supervised,
    Mixit,
    Remixit,
    ZeroShot,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Supervised => "supervised",
            Mode::Mixit => "mixit",
            Mode::Remixit => "remixit",
            Mode::ZeroShot => "zeroshot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "supervised" => Some(Mode::Supervised),
            "mixit" => Some(Mode::Mixit),
            "remixit" => Some(Mode::Remixit),
            "zeroshot" => Some(Mode::ZeroShot),
            _ => None,
        }
    }

    pub fn needs_teacher(self) -> bool {
        matches!(self, Mode::Remixit | Mode::ZeroShot)
    }

    pub fn default_split(self) -> Split {
        match self {
            Mode::Supervised => Split::PAIRED,
            Mode::Mixit => Split { paired: 0.0, mixtures: 0.8, noise: 0.2 },
            Mode::Remixit | Mode::ZeroShot => Split::MIXTURES,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PermuteMode {
    Shuffle,
    Identity,
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    /// Built-in domain name or domain spec file; items are generated.
    Spec(String),
    /// Dataset manifest file.
    Manifest(PathBuf),
}

impl DataSource {
    fn resolve(value: &str, base: &Path) -> Self {
        if crate::datagen::builtin(value).is_some() {
            return DataSource::Spec(value.to_string());
        }
        let path = base.join(value);
        let is_manifest = matches!(path.extension().and_then(|e| e.to_str()), Some("tsv" | "manifest"));
        if is_manifest {
            DataSource::Manifest(path)
        } else {
            DataSource::Spec(path.display().to_string())
        }
    }

    fn describe(&self) -> String {
        match self {
            DataSource::Spec(s) => s.clone(),
            DataSource::Manifest(p) => p.display().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_halving_period: usize,
    pub protocol: TeacherProtocol,
    pub model: ModelConfig,
    pub student_model: Option<ModelConfig>,
    pub depth_schedule: Vec<usize>,
    pub permute: PermuteMode,
    pub train_data: DataSource,
    pub train_count: usize,
    pub split: Split,
    pub test_data: Option<DataSource>,
    pub test_count: usize,
    pub probe_count: usize,
    pub seed: u64,
    pub data_seed: Option<u64>,
}

impl TrainConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            batch: 8,
            epochs: 40,
            lr0: 1e-3,
            lr_halving_period: 6,
            protocol: match mode {
                Mode::ZeroShot => TeacherProtocol::Ema(0.01),
                Mode::Remixit => TeacherProtocol::Sequential(10),
                _ => TeacherProtocol::Static,
            },
            model: ModelConfig { num_slots: if mode == Mode::Mixit { 3 } else { 2 }, ..Default::default() },
            student_model: None,
            depth_schedule: Vec::new(),
            permute: PermuteMode::Shuffle,
            train_data: DataSource::Spec("A".into()),
            train_count: 2000,
            split: mode.default_split(),
            test_data: None,
            test_count: 200,
            probe_count: 8,
            seed: 0,
            data_seed: None,
        }
    }

    /// Student architecture for teacher-driven modes.
    pub fn student(&self) -> ModelConfig {
        let mut cfg = self.student_model.unwrap_or(ModelConfig { num_slots: 2, ..self.model });
        if let Some(&d) = self.depth_schedule.first() {
            cfg.depth = d;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if self.lr_halving_period == 0 {
            return bad("lr_halving_period must be >= 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        self.protocol.validate()?;
        self.split.validate()?;
        self.model.validate()?;
        self.student().validate()?;
        match self.mode {
            Mode::Supervised if self.split.paired == 0.0 => bad("supervised mode needs a paired split".into()),
            Mode::Mixit if self.split.noise == 0.0 || self.split.mixtures == 0.0 => {
                bad("mixit mode needs mixtures_only and noise_only splits".into())
            }
            Mode::Mixit if self.model.num_slots != 3 => bad("mixit mode needs model.num_slots = 3".into()),
            Mode::Remixit | Mode::ZeroShot if self.split.mixtures == 0.0 => {
                bad(format!("{} mode needs a mixtures_only split", self.mode))
            }
            Mode::Remixit if self.student().num_slots != 2 => bad("remixit student needs 2 slots".into()),
            _ => Ok(()),
        }?;
        if self.depth_schedule.windows(2).any(|w| w[1] < w[0]) {
            return bad("depth_schedule must be non-decreasing".into());
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let err = |line: usize, m: String| Error::Parse { path: format!("{origin}:{line}"), message: m };
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(n + 1, format!("expected key = value, got {line:?}")))?;
            entries.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mode = entries
            .iter()
            .find(|(_, k, _)| k == "mode")
            .ok_or_else(|| err(0, "missing key `mode`".into()))
            .and_then(|(n, _, v)| Mode::parse(v).ok_or_else(|| err(*n, format!("mode: unknown mode {v:?}"))))?;
        let mut cfg = TrainConfig::new(mode);
        let mut protocol_kind: Option<String> = None;
        let (mut k, mut gamma) = (10usize, 0.01f64);
        let mut student = None::<ModelConfig>;
        for (n, key, value) in &entries {
            let n = *n;
            let int = |v: &str| v.parse::<u64>().map_err(|_| err(n, format!("{key}: {v:?} is not an integer")));
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(n, format!("{key}: {v:?} is not a number")));
            match key.as_str() {
                "mode" => {}
                "batch" => cfg.batch = int(value)? as usize,
                "epochs" => cfg.epochs = int(value)? as usize,
                "lr0" => cfg.lr0 = num(value)?,
                "lr_halving_period" => cfg.lr_halving_period = int(value)? as usize,
                "protocol" => protocol_kind = Some(value.clone()),
                "teacher_k" => k = int(value)? as usize,
                "ema_gamma" => gamma = num(value)?,
                "depth_schedule" => {
                    cfg.depth_schedule =
                        value.split_whitespace().map(|v| int(v).map(|d| d as usize)).collect::<Result<_>>()?
                }
                "permute" => {
                    cfg.permute = match value.as_str() {
                        "shuffle" => PermuteMode::Shuffle,
                        "identity" => PermuteMode::Identity,
                        v => return Err(err(n, format!("permute: expected shuffle or identity, got {v:?}"))),
                    }
                }
                "train_data" => cfg.train_data = DataSource::resolve(value, base),
                "train_count" => cfg.train_count = int(value)? as usize,
                "split" => {
                    let f: Vec<f64> = value.split_whitespace().map(num).collect::<Result<_>>()?;
                    let [p, m, z] = f.as_slice() else {
                        return Err(err(n, format!("split: expected 3 fractions, got {}", f.len())));
                    };
                    cfg.split = Split { paired: *p, mixtures: *m, noise: *z };
                    cfg.split.validate().map_err(|e| err(n, format!("split: {e}")))?;
                }
                "test_data" => cfg.test_data = Some(DataSource::resolve(value, base)),
                "test_count" => cfg.test_count = int(value)? as usize,
                "probe_count" => cfg.probe_count = int(value)? as usize,
                "seed" => cfg.seed = int(value)?,
                "data_seed" => cfg.data_seed = Some(int(value)?),
                other => {
                    if let Some(field) = other.strip_prefix("model.") {
                        set_model_field(&mut cfg.model, field, int(value)?).map_err(|m| err(n, m))?;
                    } else if let Some(field) = other.strip_prefix("student.") {
                        let s = student.get_or_insert(ModelConfig { num_slots: 2, ..cfg.model });
                        set_model_field(s, field, int(value)?).map_err(|m| err(n, m))?;
                    } else {
                        return Err(err(n, format!("unknown key {other:?}")));
                    }
                }
            }
        }
        cfg.student_model = student;
        if let Some(kind) = protocol_kind {
            cfg.protocol = match kind.as_str() {
                "static" => TeacherProtocol::Static,
                "sequential" => TeacherProtocol::Sequential(k),
                "ema" => TeacherProtocol::Ema(gamma),
                v => return Err(err(0, format!("protocol: unknown protocol {v:?}"))),
            };
        } else {
            cfg.protocol = match cfg.protocol {
                TeacherProtocol::Sequential(_) => TeacherProtocol::Sequential(k),
                TeacherProtocol::Ema(_) => TeacherProtocol::Ema(gamma),
                p => p,
            };
        }
        cfg.validate().map_err(|e| Error::Parse { path: origin.to_string(), message: e.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), path.parent().unwrap_or(Path::new("")))
    }

    /// Canonical text listing every resolved field; parsing it yields the
    /// same config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("mode", self.mode.to_string());
        kv("batch", self.batch.to_string());
        kv("epochs", self.epochs.to_string());
        kv("lr0", self.lr0.to_string());
        kv("lr_halving_period", self.lr_halving_period.to_string());
        let (kind, k, gamma) = match self.protocol {
            TeacherProtocol::Static => ("static", 10, 0.01),
            TeacherProtocol::Sequential(k) => ("sequential", k, 0.01),
            TeacherProtocol::Ema(g) => ("ema", 10, g),
        };
        kv("protocol", kind.into());
        kv("teacher_k", k.to_string());
        kv("ema_gamma", gamma.to_string());
        for (prefix, m) in std::iter::once(("model", self.model)).chain(self.student_model.map(|s| ("student", s))) {
            kv(&format!("{prefix}.num_slots"), m.num_slots.to_string());
            kv(&format!("{prefix}.num_filters"), m.num_filters.to_string());
            kv(&format!("{prefix}.filter_len"), m.filter_len.to_string());
            kv(&format!("{prefix}.hop"), m.hop.to_string());
            kv(&format!("{prefix}.hidden_width"), m.hidden_width.to_string());
            kv(&format!("{prefix}.depth"), m.depth.to_string());
            kv(&format!("{prefix}.seed"), m.seed.to_string());
        }
        if !self.depth_schedule.is_empty() {
            kv("depth_schedule", self.depth_schedule.iter().map(usize::to_string).collect::<Vec<_>>().join(" "));
        }
        kv("permute", if self.permute == PermuteMode::Identity { "identity" } else { "shuffle" }.into());
        kv("train_data", self.train_data.describe());
        kv("train_count", self.train_count.to_string());
        kv("split", format!("{} {} {}", self.split.paired, self.split.mixtures, self.split.noise));
        if let Some(t) = &self.test_data {
            kv("test_data", t.describe());
        }
        kv("test_count", self.test_count.to_string());
        kv("probe_count", self.probe_count.to_string());
        kv("seed", self.seed.to_string());
        if let Some(s) = self.data_seed {
            kv("data_seed", s.to_string());
        }
        out
    }
}

fn set_model_field(cfg: &mut ModelConfig, field: &str, value: u64) -> std::result::Result<(), String> {
    let v = value as usize;
    match field {
        "num_slots" => cfg.num_slots = v,
        "num_filters" => cfg.num_filters = v,
        "filter_len" => cfg.filter_len = v,
        "hop" => cfg.hop = v,
        "hidden_width" => cfg.hidden_width = v,
        "depth" => cfg.depth = v,
        "seed" => cfg.seed = value,
        f => return Err(format!("unknown model field {f:?}")),
    }
    Ok(())
}
