//! Dataset manifests: one `index<TAB>role<TAB>source` row per item.
//!
//! `source` is either the literal `synthetic` (regenerate from the domain
//! spec named by the `# spec = <path>` directive) or a WAV path relative to
//! the manifest. For paired rows the path names the mixture file
//! `<stem>.mix.wav`; its components live next to it as `<stem>.speech.wav`
//! and `<stem>.noise.wav`.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::views::{DatasetViews, MixturesOnlyView, NoiseOnlyView, PairedView};
use super::wav::read_wav;
use super::{gen_pair, DomainSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Paired,
    MixturesOnly,
    NoiseOnly,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Paired => "paired",
            Role::MixturesOnly => "mixtures_only",
            Role::NoiseOnly => "noise_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paired" => Some(Role::Paired),
            "mixtures_only" => Some(Role::MixturesOnly),
            "noise_only" => Some(Role::NoiseOnly),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SourceRef {
    Synthetic,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub index: u64,
    pub role: Role,
    pub source: SourceRef,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    /// `# key = value` header lines, in order.
    pub directives: Vec<(String, String)>,
    pub rows: Vec<ManifestRow>,
    /// Directory relative paths are resolved against.
    pub base: PathBuf,
}

impl Manifest {
    pub fn synthetic(spec_path: &str, views: &DatasetViews) -> Self {
        let mut rows = Vec::new();
        let mut add = |indices: &[u64], role| {
            rows.extend(indices.iter().map(|&index| ManifestRow { index, role, source: SourceRef::Synthetic }));
        };
        if let Some(v) = &views.paired {
            add(v.indices(), Role::Paired);
        }
        if let Some(v) = &views.mixtures {
            add(v.indices(), Role::MixturesOnly);
        }
        if let Some(v) = &views.noise {
            add(v.indices(), Role::NoiseOnly);
        }
        Self { directives: vec![("spec".into(), spec_path.into())], rows, base: PathBuf::new() }
    }

    pub fn directive(&self, key: &str) -> Option<&str> {
        self.directives.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn count(&self, role: Role) -> usize {
        self.rows.iter().filter(|r| r.role == role).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.directives {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        for r in &self.rows {
            let src = match &r.source {
                SourceRef::Synthetic => "synthetic".to_string(),
                SourceRef::File(p) => p.display().to_string(),
            };
            out.push_str(&format!("{}\t{}\t{}\n", r.index, r.role, src));
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, m: String| Error::Parse { path: format!("{origin}:{line}"), message: m };
        let mut m = Manifest::default();
        for (n, line) in text.lines().enumerate() {
            if let Some(d) = line.strip_prefix('#') {
                if let Some((k, v)) = d.split_once('=') {
                    m.directives.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [index, role, source] = fields.as_slice() else {
                return Err(err(n + 1, format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let index = index.parse().map_err(|_| err(n + 1, format!("bad index {index:?}")))?;
            let role = Role::parse(role).ok_or_else(|| err(n + 1, format!("unknown role {role:?}")))?;
            let source = match *source {
                "synthetic" => SourceRef::Synthetic,
                "" => return Err(err(n + 1, "empty source".into())),
                p => SourceRef::File(PathBuf::from(p)),
            };
            m.rows.push(ManifestRow { index, role, source });
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text, &path.display().to_string())?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// The domain spec synthetic rows are generated from.
    pub fn spec(&self) -> Result<DomainSpec> {
        let s = self
            .directive("spec")
            .ok_or_else(|| Error::Invalid("manifest has synthetic rows but no `# spec` directive".into()))?;
        if let Some(b) = super::builtin(s) {
            return Ok(b);
        }
        let path = self.base.join(s);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        DomainSpec::parse(&text, &path.display().to_string())
    }

    /// Materializes the rows into role-tagged views.
    pub fn views(&self) -> Result<DatasetViews> {
        let spec = if self.rows.iter().any(|r| r.source == SourceRef::Synthetic) { Some(self.spec()?) } else { None };
        let mut rate = spec.as_ref().map(|s| s.sample_rate);
        let mut load = |p: &Path| -> Result<Vec<f64>> {
            let path = self.base.join(p);
            let wav = read_wav(&path)?;
            match rate {
                Some(r) if r != wav.sample_rate => {
                    return Err(Error::Invalid(format!("{}: sample rate {} != {r}", path.display(), wav.sample_rate)))
                }
                _ => rate = Some(wav.sample_rate),
            }
            Ok(wav.to_f64())
        };
        let mut paired = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut mixtures = (Vec::new(), Vec::new());
        let mut noise = (Vec::new(), Vec::new());
        for r in &self.rows {
            match (&r.source, r.role) {
                (SourceRef::Synthetic, role) => {
                    let p = gen_pair(spec.as_ref().expect("spec loaded"), r.index)?;
                    match role {
                        Role::Paired => {
                            paired.0.push(r.index);
                            paired.1.push(p.speech.into_vec());
                            paired.2.push(p.noise.into_vec());
                            paired.3.push(p.mixture.into_vec());
                        }
                        Role::MixturesOnly => {
                            mixtures.0.push(r.index);
                            mixtures.1.push(p.mixture.into_vec());
                        }
                        Role::NoiseOnly => {
                            noise.0.push(r.index);
                            noise.1.push(p.noise.into_vec());
                        }
                    }
                }
                (SourceRef::File(path), Role::Paired) => {
                    let (speech_path, noise_path) = companions(path)?;
                    paired.0.push(r.index);
                    paired.1.push(load(&speech_path)?);
                    paired.2.push(load(&noise_path)?);
                    paired.3.push(load(path)?);
                }
                (SourceRef::File(path), Role::MixturesOnly) => {
                    mixtures.0.push(r.index);
                    mixtures.1.push(load(path)?);
                }
                (SourceRef::File(path), Role::NoiseOnly) => {
                    noise.0.push(r.index);
                    noise.1.push(load(path)?);
                }
            }
        }
        let rate = rate.unwrap_or(crate::signal::DEFAULT_SAMPLE_RATE);
        Ok(DatasetViews {
            paired: if paired.0.is_empty() {
                None
            } else {
                Some(PairedView::from_rows(paired.0, paired.1, paired.2, paired.3, rate)?)
            },
            mixtures: if mixtures.0.is_empty() {
                None
            } else {
                Some(MixturesOnlyView::from_rows(mixtures.0, mixtures.1, rate)?)
            },
            noise: if noise.0.is_empty() { None } else { Some(NoiseOnlyView::from_rows(noise.0, noise.1, rate)?) },
        })
    }
}

/// `<stem>.mix.wav` -> (`<stem>.speech.wav`, `<stem>.noise.wav`).
pub(crate) fn companions(mix: &Path) -> Result<(PathBuf, PathBuf)> {
    let name = mix.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let stem = name
        .strip_suffix(".mix.wav")
        .ok_or_else(|| Error::Invalid(format!("paired source {} must end in .mix.wav", mix.display())))?;
    Ok((mix.with_file_name(format!("{stem}.speech.wav")), mix.with_file_name(format!("{stem}.noise.wav"))))
}
