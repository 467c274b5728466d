//! 16-bit PCM mono RIFF/WAVE reading and writing.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WavFile {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl WavFile {
    /// Samples as floats in `[-1, 1)`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| f64::from(s) / 32768.0).collect()
    }

    /// Quantizes with round-half-away-from-zero, clamping to the i16 range.
    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Self {
        let samples = samples
            .iter()
            .map(|&x| (x * 32768.0).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16)
            .collect();
        Self { sample_rate, samples }
    }

    pub fn encode(&self) -> Vec<u8> {
        let data_len = 2 * self.samples.len() as u32;
        let mut out = Vec::with_capacity(44 + data_len as usize);
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.sample_rate * 2).to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&data_len.to_le_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    /// Parses a RIFF/WAVE byte stream. Chunks other than `fmt ` and `data`
    /// are skipped.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        need(bytes, 12, "riff header")?;
        let riff: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if &riff != b"RIFF" {
            return Err(Error::BadMagic { expected: *b"RIFF", found: riff });
        }
        let wave: [u8; 4] = bytes[8..12].try_into().expect("4 bytes");
        if &wave != b"WAVE" {
            return Err(Error::BadMagic { expected: *b"WAVE", found: wave });
        }
        let mut at = 12;
        let mut format: Option<u32> = None;
        while at < bytes.len() {
            need(&bytes[at..], 8, "chunk header")?;
            let id: [u8; 4] = bytes[at..at + 4].try_into().expect("4 bytes");
            let size = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().expect("4 bytes")) as usize;
            let body = &bytes[at + 8..];
            match &id {
                b"fmt " => {
                    need(body, size.max(16), "fmt chunk")?;
                    let code = u16::from_le_bytes([body[0], body[1]]);
                    let channels = u16::from_le_bytes([body[2], body[3]]);
                    let rate = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
                    let byte_rate = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
                    let align = u16::from_le_bytes([body[12], body[13]]);
                    let bits = u16::from_le_bytes([body[14], body[15]]);
                    if code != 1 {
                        return Err(Error::UnsupportedFormat(format!("format code {code}, expected PCM (1)")));
                    }
                    if channels != 1 {
                        return Err(Error::Multichannel { channels });
                    }
                    if bits != 16 {
                        return Err(Error::UnsupportedFormat(format!("{bits} bits per sample, expected 16")));
                    }
                    if align != 2 || byte_rate != rate * 2 {
                        return Err(Error::UnsupportedFormat("inconsistent byte rate or block align".into()));
                    }
                    format = Some(rate);
                }
                b"data" => {
                    let rate = format.ok_or_else(|| Error::UnsupportedFormat("data chunk before fmt chunk".into()))?;
                    need(body, size, "data chunk")?;
                    if !size.is_multiple_of(2) {
                        return Err(Error::UnsupportedFormat(format!("odd data chunk size {size}")));
                    }
                    let samples = body[..size].chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
                    return Ok(Self { sample_rate: rate, samples });
                }
                _ => need(body, size, "chunk")?,
            }
            at += 8 + size + (size & 1);
        }
        Err(Error::Truncated { what: "data chunk", needed: 8, available: 0 })
    }
}

fn need(bytes: &[u8], needed: usize, what: &'static str) -> Result<()> {
    if bytes.len() < needed {
        Err(Error::Truncated { what, needed, available: bytes.len() })
    } else {
        Ok(())
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WavFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    WavFile::decode(&bytes)
}

pub fn write_wav(path: impl AsRef<Path>, wav: &WavFile) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, wav.encode()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hand_built(samples: &[i16]) -> Vec<u8> {
        let mut b = Vec::new();
        let data = (samples.len() * 2) as u32;
        b.extend(b"RIFF");
        b.extend((36 + data).to_le_bytes());
        b.extend(b"WAVE");
        b.extend(b"fmt ");
        b.extend(16u32.to_le_bytes());
        b.extend([1, 0, 1, 0]);
        b.extend(8000u32.to_le_bytes());
        b.extend(16000u32.to_le_bytes());
        b.extend([2, 0, 16, 0]);
        b.extend(b"data");
        b.extend(data.to_le_bytes());
        for s in samples {
            b.extend(s.to_le_bytes());
        }
        b
    }

    #[test]
    fn parses_minimal_file() {
        let wav = WavFile::decode(&hand_built(&[0, 1, -1, i16::MIN])).unwrap();
        assert_eq!(wav.sample_rate, 8000);
        assert_eq!(wav.samples, vec![0, 1, -1, i16::MIN]);
        assert_eq!(wav.to_f64(), vec![0.0, 1.0 / 32768.0, -1.0 / 32768.0, -1.0]);
    }

    #[test]
    fn distinct_errors() {
        let good = hand_built(&[1, 2, 3, 4]);
        let mut rifx = good.clone();
        rifx[3] = b'X';
        assert!(matches!(WavFile::decode(&rifx), Err(Error::BadMagic { .. })));

        let mut float = good.clone();
        float[20] = 3;
        assert!(matches!(WavFile::decode(&float), Err(Error::UnsupportedFormat(_))));

        let mut stereo = good.clone();
        stereo[22] = 2;
        assert!(matches!(WavFile::decode(&stereo), Err(Error::Multichannel { channels: 2 })));

        assert!(matches!(WavFile::decode(&good[..good.len() - 1]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut b = hand_built(&[7, 8]);
        let list = [b"LIST".as_slice(), &3u32.to_le_bytes(), b"abc\0"].concat();
        b.splice(12..12, list);
        assert_eq!(WavFile::decode(&b).unwrap().samples, vec![7, 8]);
    }

    #[test]
    fn quantization_rounds_half_away_and_clamps() {
        let w = WavFile::from_f64(&[0.5 / 32768.0, -0.5 / 32768.0, 1.5, -2.0, 0.25], 8000);
        assert_eq!(w.samples, vec![1, -1, i16::MAX, i16::MIN, 8192]);
    }

    proptest! {
        #[test]
        fn round_trip_is_byte_identical(samples in proptest::collection::vec(any::<i16>(), 0..200)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.wav");
            let bytes = hand_built(&samples);
            std::fs::write(&path, &bytes).unwrap();
            let wav = read_wav(&path).unwrap();
            write_wav(&path, &wav).unwrap();
            prop_assert_eq!(std::fs::read(&path).unwrap(), bytes);
            let requantized = WavFile::from_f64(&wav.to_f64(), wav.sample_rate);
            prop_assert_eq!(requantized, wav);
        }
    }
}
