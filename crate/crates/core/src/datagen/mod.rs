//! Synthetic two-domain speech/noise data.
//!
//! Every item is a pure function of `(spec.seed, index)`: the generator is
//! ChaCha8 keyed by the spec seed with the item index as its 64-bit stream
//! id, so items can be produced in any order or in parallel.
//!
//! * speech: `env(t) * sum_h a_h sin(2 pi h f0 t / fs + phi_h)` with `f0`
//!   uniform in the family range, `a_h = u_h / h`, `u_h ~ U(0.6, 1)`, and an
//!   amplitude-modulation envelope `env(t) = 1 - d (1 - sin(2 pi r t / fs + psi)) / 2`
//!   with rate `r` uniform in the family range and depth `d ~ U(0.3, 0.9)`;
//!   scaled to RMS [`SPEECH_RMS`].
//! * noise: white Gaussian noise shaped in the DFT domain by
//!   `(f / f_lo)^(-color / 2)` inside the passband and zero outside, then
//!   rescaled so the mixture SNR is uniform in `snr_range_db`.

mod manifest;
pub mod spectrum;
mod views;
pub mod wav;

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::signal::{rescale_noise_to_snr, DEFAULT_SAMPLE_RATE};
use crate::WaveBatch;

pub use manifest::{Manifest, ManifestRow, Role, SourceRef};
pub use views::{gen_probe_set, gen_test_set, gen_views, DatasetViews, MixturesOnlyView, NoiseOnlyView, PairedBatch, PairedView, Split};

pub const SPEECH_RMS: f64 = 0.1;

/// Item indices at or above this are reserved for held-out test sets.
pub const TEST_INDEX_BASE: u64 = 1 << 40;

/// Start of the index range used for analysis probe sets.
pub const PROBE_INDEX_BASE: u64 = 3 << 39;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeechFamily {
    pub f0_hz: (f64, f64),
    pub harmonics: usize,
    pub am_rate_hz: (f64, f64),
}

impl SpeechFamily {
    /// Highest frequency any harmonic can reach.
    pub fn top_hz(&self) -> f64 {
        self.f0_hz.1 * self.harmonics as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseFamily {
    pub passband_hz: (f64, f64),
    /// Power-law exponent: 0 white, 1 pink, 2 brown.
    pub color: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    pub speech: SpeechFamily,
    pub noise: NoiseFamily,
    pub snr_range_db: (f64, f64),
    pub sample_rate: u32,
    pub clip_len: usize,
    pub seed: u64,
}

/// Out-of-domain source domain: low speech band, high white-ish noise.
pub fn domain_a() -> DomainSpec {
    DomainSpec {
        name: "domain_a".into(),
        speech: SpeechFamily { f0_hz: (100.0, 200.0), harmonics: 4, am_rate_hz: (2.0, 6.0) },
        noise: NoiseFamily { passband_hz: (1500.0, 3500.0), color: 0.0 },
        snr_range_db: (0.0, 10.0),
        sample_rate: DEFAULT_SAMPLE_RATE,
        clip_len: 4096,
        seed: 0xA,
    }
}

/// In-domain target: wider speech band, differently placed and colored
/// noise, lower SNRs.
pub fn domain_b() -> DomainSpec {
    DomainSpec {
        name: "domain_b".into(),
        speech: SpeechFamily { f0_hz: (120.0, 250.0), harmonics: 5, am_rate_hz: (3.0, 8.0) },
        noise: NoiseFamily { passband_hz: (1400.0, 3000.0), color: 1.0 },
        snr_range_db: (-5.0, 5.0),
        sample_rate: DEFAULT_SAMPLE_RATE,
        clip_len: 4096,
        seed: 0xB,
    }
}

pub fn builtin(name: &str) -> Option<DomainSpec> {
    match name.to_ascii_lowercase().as_str() {
        "a" | "domain_a" => Some(domain_a()),
        "b" | "domain_b" => Some(domain_b()),
        _ => None,
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(self.sample_rate) / 2.0;
        let bad = |m: String| Err(Error::Invalid(format!("domain {}: {m}", self.name)));
        let (lo, hi) = self.snr_range_db;
        if !(lo <= hi) {
            return bad(format!("snr range [{lo}, {hi}] is inverted"));
        }
        let (plo, phi) = self.noise.passband_hz;
        if !(0.0 <= plo && plo < phi && phi <= nyquist) {
            return bad(format!("noise passband [{plo}, {phi}] outside [0, {nyquist}]"));
        }
        let (flo, fhi) = self.speech.f0_hz;
        if !(0.0 < flo && flo <= fhi) || self.speech.harmonics == 0 || self.speech.top_hz() >= nyquist {
            return bad(format!("speech f0 [{flo}, {fhi}] x {} harmonics exceeds {nyquist}", self.speech.harmonics));
        }
        let (alo, ahi) = self.speech.am_rate_hz;
        if !(0.0 <= alo && alo <= ahi) {
            return bad(format!("am rate [{alo}, {ahi}] invalid"));
        }
        if self.clip_len < 2 || self.sample_rate == 0 {
            return bad("clip_len must be >= 2 and sample_rate positive".into());
        }
        let bin = f64::from(self.sample_rate) / self.clip_len as f64;
        if phi - plo < 2.0 * bin {
            return bad(format!("noise passband narrower than two DFT bins ({bin} Hz)"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Whether the noise passband lies entirely above the speech band.
    pub fn band_disjoint(&self) -> bool {
        self.noise.passband_hz.0 > self.speech.top_hz()
    }

    /// Parses a flat `key = value` spec. `builtin = A|B` seeds defaults
    /// from a built-in domain; all other keys override.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, m: String| Error::Parse { path: format!("{origin}:{line}"), message: m };
        let mut spec = domain_a();
        let mut named = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(n + 1, format!("expected key = value, got {line:?}")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(n + 1, format!("{key}: {v:?} is not a number")));
            let pair = |v: &str| -> Result<(f64, f64)> {
                let parts: Vec<&str> = v.split_whitespace().collect();
                match parts.as_slice() {
                    [a, b] => Ok((num(a)?, num(b)?)),
                    _ => Err(err(n + 1, format!("{key}: expected two numbers, got {v:?}"))),
                }
            };
            let int = |v: &str| v.parse::<u64>().map_err(|_| err(n + 1, format!("{key}: {v:?} is not an integer")));
            match key {
                "builtin" => {
                    let base = builtin(value).ok_or_else(|| err(n + 1, format!("unknown builtin domain {value:?}")))?;
                    spec = base;
                }
                "name" => {
                    spec.name = value.to_string();
                    named = true;
                }
                "sample_rate" => spec.sample_rate = int(value)? as u32,
                "clip_len" => spec.clip_len = int(value)? as usize,
                "seed" => spec.seed = int(value)?,
                "snr_db" => spec.snr_range_db = pair(value)?,
                "speech.f0_hz" => spec.speech.f0_hz = pair(value)?,
                "speech.harmonics" => spec.speech.harmonics = int(value)? as usize,
                "speech.am_rate_hz" => spec.speech.am_rate_hz = pair(value)?,
                "noise.passband_hz" => spec.noise.passband_hz = pair(value)?,
                "noise.color" => spec.noise.color = num(value)?,
                other => return Err(err(n + 1, format!("unknown key {other:?}"))),
            }
        }
        if !named && origin != "<builtin>" {
            spec.name = Path::new(origin).file_stem().and_then(|s| s.to_str()).unwrap_or(&spec.name).to_string();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        format!(
            "name = {}\nsample_rate = {}\nclip_len = {}\nseed = {}\nsnr_db = {} {}\nspeech.f0_hz = {} {}\nspeech.harmonics = {}\nspeech.am_rate_hz = {} {}\nnoise.passband_hz = {} {}\nnoise.color = {}\n",
            self.name,
            self.sample_rate,
            self.clip_len,
            self.seed,
            self.snr_range_db.0,
            self.snr_range_db.1,
            self.speech.f0_hz.0,
            self.speech.f0_hz.1,
            self.speech.harmonics,
            self.speech.am_rate_hz.0,
            self.speech.am_rate_hz.1,
            self.noise.passband_hz.0,
            self.noise.passband_hz.1,
            self.noise.color,
        )
    }

    /// A built-in name (`A`, `B`) or a spec file path.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(b) = builtin(spec) {
            return Ok(b);
        }
        let text = std::fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
        Self::parse(&text, spec)
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// One generated item: clean speech, noise and their sum, each `[1, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub speech: WaveBatch,
    pub noise: WaveBatch,
    pub mixture: WaveBatch,
    pub snr_db: f64,
}

pub fn gen_pair(spec: &DomainSpec, index: u64) -> Result<Pair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let fs = f64::from(spec.sample_rate);
    let len = spec.clip_len;
    let tau = std::f64::consts::TAU;

    let f0 = uniform(&mut rng, spec.speech.f0_hz);
    let partials: Vec<(f64, f64, f64)> = (1..=spec.speech.harmonics)
        .map(|h| {
            let amp = rng.random_range(0.6..1.0) / h as f64;
            let phase = rng.random_range(0.0..tau);
            (h as f64 * f0, amp, phase)
        })
        .collect();
    let am_rate = uniform(&mut rng, spec.speech.am_rate_hz);
    let am_depth = rng.random_range(0.3..0.9);
    let am_phase = rng.random_range(0.0..tau);
    let mut speech: Vec<f64> = (0..len)
        .map(|t| {
            let t = t as f64;
            let env = 1.0 - am_depth * (1.0 - (tau * am_rate * t / fs + am_phase).sin()) / 2.0;
            env * partials.iter().map(|&(f, a, p)| a * (tau * f * t / fs + p).sin()).sum::<f64>()
        })
        .collect();
    let rms = (speech.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    speech.iter_mut().for_each(|v| *v *= SPEECH_RMS / rms);

    let white: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let (lo, hi) = spec.noise.passband_hz;
    let color = spec.noise.color;
    let noise = spectrum::shape(&white, spec.sample_rate, |f| {
        if (lo..=hi).contains(&f) && f > 0.0 {
            (f / lo.max(1.0)).powf(-color / 2.0)
        } else {
            0.0
        }
    });
    let snr = uniform(&mut rng, spec.snr_range_db);

    let speech = WaveBatch::new(speech, 1, len, spec.sample_rate)?;
    let noise = WaveBatch::new(noise, 1, len, spec.sample_rate)?;
    let noise = rescale_noise_to_snr(&speech, &noise, &[snr])?;
    let mixture = crate::signal::mix(&speech, &noise)?;
    Ok(Pair { speech, noise, mixture, snr_db: snr })
}

/// Cutoff between speech and noise bands of a band-disjoint domain.
pub fn oracle_cutoff_hz(spec: &DomainSpec) -> Result<f64> {
    if !spec.band_disjoint() {
        return Err(Error::Invalid(format!(
            "domain {} is not band-disjoint (speech up to {} Hz, noise from {} Hz)",
            spec.name,
            spec.speech.top_hz(),
            spec.noise.passband_hz.0
        )));
    }
    Ok((spec.speech.top_hz() + spec.noise.passband_hz.0) / 2.0)
}

/// Ideal DFT-domain low-pass separation: speech = bins below the cutoff of
/// a band-disjoint domain, noise = the rest of the mixture.
pub fn bandpass_oracle(spec: &DomainSpec, mixture: &WaveBatch) -> Result<crate::SourceEstimates> {
    let cutoff = oracle_cutoff_hz(spec)?;
    let mut speech = Vec::with_capacity(mixture.as_slice().len());
    let mut noise = Vec::with_capacity(mixture.as_slice().len());
    for row in mixture.rows() {
        let low = spectrum::band_filter(row, mixture.sample_rate(), 0.0, cutoff);
        noise.extend(row.iter().zip(&low).map(|(m, s)| m - s));
        speech.extend(low);
    }
    let mut sources = speech;
    sources.extend(noise);
    crate::SourceEstimates::new(sources, 2, mixture.batch(), mixture.len(), mixture.sample_rate())
}
