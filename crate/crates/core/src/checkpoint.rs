//! Little-endian model checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RMXM"
//! 4       4     format version (u32) = 1
//! 8       32    config words (u32 x 8): num_slots, num_filters, filter_len,
//!               hop, hidden_width, depth, seed low 32 bits, seed high 32 bits
//! 40      8     model update counter (u64)
//! 48      8     parameter count (u64)
//! 56      8*n   parameters (f64)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{ModelConfig, ModelState};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"RMXM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 56;

pub fn encode<S: Scalar>(state: &ModelState<S>) -> Vec<u8> {
    let c = state.config();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * state.params().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let words = [
        c.num_slots as u32,
        c.num_filters as u32,
        c.filter_len as u32,
        c.hop as u32,
        c.hidden_width as u32,
        c.depth as u32,
        c.seed as u32,
        (c.seed >> 32) as u32,
    ];
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&state.version().to_le_bytes());
    out.extend_from_slice(&(state.params().len() as u64).to_le_bytes());
    for p in state.params() {
        out.extend_from_slice(&p.to_f64_lossy().to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<ModelState<S>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { what: "checkpoint header", needed: HEADER_LEN, available: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found: magic });
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!("checkpoint format version {version}")));
    }
    let w: Vec<u32> = (0..8).map(|i| u32_at(bytes, 8 + 4 * i)).collect();
    let config = ModelConfig {
        num_slots: w[0] as usize,
        num_filters: w[1] as usize,
        filter_len: w[2] as usize,
        hop: w[3] as usize,
        hidden_width: w[4] as usize,
        depth: w[5] as usize,
        seed: u64::from(w[6]) | (u64::from(w[7]) << 32),
    };
    config.validate()?;
    let updates = u64_at(bytes, 40);
    let count = u64_at(bytes, 48) as usize;
    let needed = HEADER_LEN + 8 * count;
    if bytes.len() < needed {
        return Err(Error::Truncated { what: "checkpoint parameters", needed, available: bytes.len() });
    }
    let params = bytes[HEADER_LEN..needed]
        .chunks_exact(8)
        .map(|c| S::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    ModelState::from_parts(params, config, updates)
}

pub fn save<S: Scalar>(state: &ModelState<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(state)).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<ModelState<S>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_model;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_as_documented() {
        let cfg = ModelConfig { seed: 0x1_0000_0002, ..Default::default() };
        let state = init_model::<f64>(cfg).unwrap();
        let bytes = encode(&state);
        assert_eq!(&bytes[..4], b"RMXM");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(u32_at(&bytes, 8), 2);
        assert_eq!(u32_at(&bytes, 12), 32);
        assert_eq!(u32_at(&bytes, 32), 2);
        assert_eq!(u32_at(&bytes, 36), 1);
        assert_eq!(u64_at(&bytes, 48) as usize, cfg.param_count());
        assert_eq!(bytes.len(), 56 + 8 * cfg.param_count());
        assert_eq!(f64::from_le_bytes(bytes[56..64].try_into().unwrap()), state.params()[0]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let state = init_model::<f64>(ModelConfig::default()).unwrap();
        let mut bytes = encode(&state);
        assert!(matches!(decode::<f64>(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        assert!(matches!(decode::<f64>(&bytes[..10]), Err(Error::Truncated { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode::<f64>(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rmxm");
        let state = init_model::<f64>(ModelConfig { num_slots: 3, depth: 4, ..Default::default() }).unwrap();
        save(&state, &path).unwrap();
        let back: ModelState<f64> = load(&path).unwrap();
        assert_eq!(back, state);
        assert_eq!(std::fs::read(&path).unwrap(), encode(&back));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), slots in 2usize..=3, depth in 1usize..4, updates in any::<u64>()) {
            let cfg = ModelConfig { num_slots: slots, num_filters: 4, filter_len: 6, hop: 3, hidden_width: 5, depth, seed };
            let state = init_model::<f64>(cfg).unwrap().with_version(updates);
            let bytes = encode(&state);
            let back: ModelState<f64> = decode(&bytes).unwrap();
            prop_assert_eq!(back.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
                            state.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.config(), state.config());
            prop_assert_eq!(back.version(), updates);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
