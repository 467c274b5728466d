//! Student/teacher error decomposition on a probe set with ground truth.
//!
//! With student error `R_S = s_hat - s` and teacher error `R_T = s~ - s`,
//!
//! ```text
//! ||s_hat - s~||^2 = ||R_S||^2 + ||R_T||^2 - 2 <R_S, R_T>
//! ```
//!
//! so the distillation objective equals the supervised one up to the
//! teacher term and the error correlation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::WaveBatch;

pub const CSV_HEADER: &str = "epoch,sup_term,teacher_term,corr_term,total";

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorDecomposition {
    /// Mean `||R_S||^2`.
    pub sup_term: f64,
    /// Mean `||R_T||^2`.
    pub teacher_term: f64,
    /// Mean `<R_S, R_T>`.
    pub corr_term: f64,
    /// Mean `||s_hat - s~||^2`.
    pub total: f64,
    /// Standard error of `corr_term` over items.
    pub corr_std_err: f64,
    pub items: usize,
    /// Items dropped because some signal had zero norm.
    pub skipped: usize,
}

impl ErrorDecomposition {
    /// `|total - (sup + teacher - 2 corr)|`.
    pub fn identity_residual(&self) -> f64 {
        (self.total - (self.sup_term + self.teacher_term - 2.0 * self.corr_term)).abs()
    }
}

/// Terms for a single item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ItemTerms {
    pub sup: f64,
    pub teacher: f64,
    pub corr: f64,
    pub total: f64,
}

pub fn item_terms(student: &[f64], teacher: &[f64], clean: &[f64]) -> ItemTerms {
    let (mut sup, mut tea, mut corr, mut total) = (0.0, 0.0, 0.0, 0.0);
    for ((&a, &t), &s) in student.iter().zip(teacher).zip(clean) {
        let rs = a - s;
        let rt = t - s;
        sup += rs * rs;
        tea += rt * rt;
        corr += rs * rt;
        total += (a - t) * (a - t);
    }
    ItemTerms { sup, teacher: tea, corr, total }
}

fn unit(x: &[f64]) -> Option<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 0.0).then(|| x.iter().map(|v| v / norm).collect())
}

fn check<S: Scalar>(a: &WaveBatch<S>, b: &WaveBatch<S>, c: &WaveBatch<S>) -> Result<()> {
    if a.shape() != b.shape() || a.shape() != c.shape() {
        return Err(Error::shape(format!("{:?} / {:?}", a.shape(), b.shape()), format!("{:?}", c.shape())));
    }
    Ok(())
}

fn decompose<S: Scalar>(
    student: &WaveBatch<S>,
    teacher: &WaveBatch<S>,
    clean: &WaveBatch<S>,
    normalize: bool,
) -> Result<ErrorDecomposition> {
    check(student, teacher, clean)?;
    let to64 = |x: &[S]| x.iter().map(|v| v.to_f64_lossy()).collect::<Vec<f64>>();
    let mut terms = Vec::with_capacity(student.batch());
    let mut skipped = 0;
    for b in 0..student.batch() {
        let (a, t, s) = (to64(student.row(b)), to64(teacher.row(b)), to64(clean.row(b)));
        if normalize {
            match (unit(&a), unit(&t), unit(&s)) {
                (Some(a), Some(t), Some(s)) => terms.push(item_terms(&a, &t, &s)),
                _ => skipped += 1,
            }
        } else {
            terms.push(item_terms(&a, &t, &s));
        }
    }
    let n = terms.len();
    if n == 0 {
        return Ok(ErrorDecomposition { skipped, ..Default::default() });
    }
    let mean = |f: fn(&ItemTerms) -> f64| terms.iter().map(f).sum::<f64>() / n as f64;
    let corr = mean(|t| t.corr);
    let var = if n > 1 { terms.iter().map(|t| (t.corr - corr).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    Ok(ErrorDecomposition {
        sup_term: mean(|t| t.sup),
        teacher_term: mean(|t| t.teacher),
        corr_term: corr,
        total: mean(|t| t.total),
        corr_std_err: (var / n as f64).sqrt(),
        items: n,
        skipped,
    })
}

/// Decomposition with every signal scaled to unit norm per item.
pub fn decompose_errors<S: Scalar>(
    student: &WaveBatch<S>,
    teacher: &WaveBatch<S>,
    clean: &WaveBatch<S>,
) -> Result<ErrorDecomposition> {
    decompose(student, teacher, clean, true)
}

/// Decomposition on the raw signals.
pub fn decompose_errors_unnormalized<S: Scalar>(
    student: &WaveBatch<S>,
    teacher: &WaveBatch<S>,
    clean: &WaveBatch<S>,
) -> Result<ErrorDecomposition> {
    decompose(student, teacher, clean, false)
}

/// Per-epoch speech-slot outputs of student and teacher on a fixed probe
/// set, with its clean speech.
///
/// Binary layout (little-endian): magic `RMXP`, u32 version 1, u64 batch,
/// u64 len, u32 sample rate, `batch*len` f64 clean samples, then records of
/// u64 epoch followed by `batch*len` f64 student and `batch*len` f64 teacher
/// samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeLog {
    pub clean: WaveBatch<f64>,
    pub records: Vec<ProbeRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRecord {
    pub epoch: usize,
    pub student: WaveBatch<f64>,
    pub teacher: WaveBatch<f64>,
}

const PROBE_MAGIC: [u8; 4] = *b"RMXP";

impl ProbeLog {
    pub fn new(clean: WaveBatch<f64>) -> Self {
        Self { clean, records: Vec::new() }
    }

    pub fn push(&mut self, epoch: usize, student: WaveBatch<f64>, teacher: WaveBatch<f64>) -> Result<()> {
        check(&student, &teacher, &self.clean)?;
        self.records.push(ProbeRecord { epoch, student, teacher });
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&PROBE_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.clean.batch() as u64).to_le_bytes());
        out.extend_from_slice(&(self.clean.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.clean.sample_rate().to_le_bytes());
        let put = |out: &mut Vec<u8>, x: &WaveBatch<f64>| x.as_slice().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        put(&mut out, &self.clean);
        for r in &self.records {
            out.extend_from_slice(&(r.epoch as u64).to_le_bytes());
            put(&mut out, &r.student);
            put(&mut out, &r.teacher);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        const HEAD: usize = 28;
        if bytes.len() < HEAD {
            return Err(Error::Truncated { what: "probe header", needed: HEAD, available: bytes.len() });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != PROBE_MAGIC {
            return Err(Error::BadMagic { expected: PROBE_MAGIC, found: magic });
        }
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
        let batch = u64_at(8);
        let len = u64_at(16);
        let rate = u32::from_le_bytes(bytes[24..28].try_into().expect("4 bytes"));
        let n = batch * len;
        let wave = |at: usize| -> Result<WaveBatch<f64>> {
            let needed = at + 8 * n;
            if bytes.len() < needed {
                return Err(Error::Truncated { what: "probe samples", needed, available: bytes.len() });
            }
            let data = bytes[at..needed].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            WaveBatch::new(data, batch, len, rate)
        };
        let clean = wave(HEAD)?;
        let mut at = HEAD + 8 * n;
        let mut records = Vec::new();
        while at < bytes.len() {
            if bytes.len() < at + 8 {
                return Err(Error::Truncated { what: "probe record", needed: at + 8, available: bytes.len() });
            }
            let epoch = u64_at(at);
            let student = wave(at + 8)?;
            let teacher = wave(at + 8 + 8 * n)?;
            records.push(ProbeRecord { epoch, student, teacher });
            at += 8 + 16 * n;
        }
        Ok(Self { clean, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// One decomposition per recorded epoch.
pub fn track_decomposition(log: &ProbeLog) -> Result<Vec<(usize, ErrorDecomposition)>> {
    log.records.iter().map(|r| Ok((r.epoch, decompose_errors(&r.student, &r.teacher, &log.clean)?))).collect()
}

pub fn decomposition_csv(rows: &[(usize, ErrorDecomposition)]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for (epoch, d) in rows {
        out.push_str(&format!("{epoch},{},{},{},{}\n", d.sup_term, d.teacher_term, d.corr_term, d.total));
    }
    out
}

/// Mean of `|corr_term|` over the rows.
pub fn mean_abs_corr(rows: &[(usize, ErrorDecomposition)]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|(_, d)| d.corr_term.abs()).sum::<f64>() / rows.len() as f64
}
