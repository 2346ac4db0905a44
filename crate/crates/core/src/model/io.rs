//! Binary weights file.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `MTVW` |
//! | 4     | format version (`u32`, currently 1) |
//! | 32    | config words: n_layers, n_heads, embed_dim, vocab_size, max_context, mlp_hidden, activation code, positional code |
//! | 4·P   | every tensor as `f32`, row-major, in [`Weights::tensors`] order |
//! | 4     | CRC32 of the config words and tensor bytes |

use std::fs;
use std::path::Path;

use super::{Activation, Model, ModelConfig, PositionalEncoding, Weights};
use crate::error::{Error, Result};
use crate::numerics::Scalar;

pub const MAGIC: &[u8; 4] = b"MTVW";
pub const FORMAT_VERSION: u32 = 1;
const CONFIG_WORDS: usize = 8;

pub(crate) fn config_words(cfg: &ModelConfig) -> [u32; CONFIG_WORDS] {
    [
        cfg.n_layers as u32,
        cfg.n_heads as u32,
        cfg.embed_dim as u32,
        cfg.vocab_size as u32,
        cfg.max_context as u32,
        cfg.mlp_hidden as u32,
        cfg.activation.code(),
        match cfg.positional {
            PositionalEncoding::LearnedAbsolute => 0,
        },
    ]
}

pub fn encode_weights<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let n = model.weights().n_params();
    let mut out = Vec::with_capacity(8 + 4 * CONFIG_WORDS + 4 * n + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for w in config_words(model.config()) {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for t in model.weights().tensors() {
        for &x in t.as_slice() {
            out.extend_from_slice(&(x.f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[8..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_weights<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("missing magic".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let word = |i: usize| -> Result<u32> {
        let at = 4 + 4 * i;
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4-byte slice")))
            .ok_or_else(|| Error::Truncated("header ends early".into()))
    };
    let version = word(0)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let w: Vec<u32> = (1..=CONFIG_WORDS).map(word).collect::<Result<_>>()?;
    if w[7] != 0 {
        return Err(Error::Config(format!("unknown positional encoding code {}", w[7])));
    }
    let config = ModelConfig {
        n_layers: w[0] as usize,
        n_heads: w[1] as usize,
        embed_dim: w[2] as usize,
        vocab_size: w[3] as usize,
        max_context: w[4] as usize,
        mlp_hidden: w[5] as usize,
        activation: Activation::from_code(w[6])?,
        positional: PositionalEncoding::LearnedAbsolute,
    };
    config.validate()?;

    let header = 8 + 4 * CONFIG_WORDS;
    let mut weights = Weights::<T>::zeros(&config);
    let n = weights.n_params();
    let need = header + 4 * n + 4;
    if bytes.len() < need {
        return Err(Error::Truncated(format!("expected {need} bytes, found {}", bytes.len())));
    }
    if bytes.len() > need {
        return Err(Error::Shape(format!(
            "{} trailing bytes after checksum",
            bytes.len() - need
        )));
    }
    let stored = u32::from_le_bytes(bytes[need - 4..].try_into().expect("4-byte slice"));
    let computed = crc32fast::hash(&bytes[8..need - 4]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut at = header;
    for t in weights.tensors_mut() {
        for x in t.as_mut_slice() {
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"));
            *x = T::of(v as f64);
            at += 4;
        }
    }
    Model::new(config, weights)
}

pub fn save_weights<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(model)).map_err(|e| Error::io(path, e))
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn sample_model() -> Model<f32> {
        let cfg = ModelConfig::new(2, 2, 8, 11, 6);
        let mut w = Weights::<f32>::zeros(&cfg);
        let mut k = 0u32;
        for t in w.tensors_mut() {
            let (r, c) = t.shape();
            *t = Matrix::from_fn(r, c, |_, _| {
                k += 1;
                (k.wrapping_mul(2654435761) % 1000) as f32 / 997.0 - 0.5
            });
        }
        Model::new(cfg, w).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample_model();
        let bytes = encode_weights(&m);
        let back: Model<f32> = decode_weights(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_weights(&back), bytes);
        assert_eq!(back.fingerprint(), m.fingerprint());
    }

    #[test]
    fn distinct_errors() {
        let m = sample_model();
        let good = encode_weights(&m);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_weights::<f32>(&bad), Err(Error::BadMagic)));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decode_weights::<f32>(&bad), Err(Error::VersionMismatch { found: 9, .. })));

        assert!(matches!(decode_weights::<f32>(&good[..good.len() - 10]), Err(Error::Truncated(_))));

        let mut bad = good.clone();
        bad[100] ^= 0x55;
        assert!(matches!(decode_weights::<f32>(&bad), Err(Error::Checksum { .. })));

        // embed_dim = 65 with 4 heads.
        let mut bad = good.clone();
        bad[8 + 4..8 + 8].copy_from_slice(&4u32.to_le_bytes());
        bad[8 + 8..8 + 12].copy_from_slice(&65u32.to_le_bytes());
        match decode_weights::<f32>(&bad) {
            Err(Error::Config(msg)) => assert!(msg.contains("divisible"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtvw");
        let m = sample_model();
        save_weights(&m, &path).unwrap();
        let back: Model<f64> = load_weights(&path).unwrap();
        assert_eq!(back.fingerprint(), m.fingerprint());
        assert_eq!(back.cast::<f32>(), m);
    }
}
