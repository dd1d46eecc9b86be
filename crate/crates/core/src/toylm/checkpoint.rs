//! `TLM1` checkpoint format.
//!
//! ```text
//! "TLM1" | vocab u32 | d_model u32 | n_layers u32 | ffn_width u32 | max_seq u32 | seed u64
//! f32 LE weights: embed, pos, per layer (gate, up, down), unembed; row-major
//! ```

use std::fs;
use std::path::Path;

use super::{ToyLM, ToyLMConfig, Weights};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TLM1";

impl ToyLM {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut buf = Vec::with_capacity(40 + self.weights.n_params() * 4);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [c.vocab, c.d_model, c.n_layers, c.ffn_width, c.max_seq] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&c.seed.to_le_bytes());
        for t in self.weights.tensors() {
            for &x in t.iter() {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        buf
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 5 * 4 + 8;
        if bytes.len() < HEADER {
            return Err(Error::Format("checkpoint header truncated".into()));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let config = ToyLMConfig {
            vocab: u32_at(4),
            d_model: u32_at(8),
            n_layers: u32_at(12),
            ffn_width: u32_at(16),
            max_seq: u32_at(20),
            seed: u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes")),
        };
        config.validate().map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let mut weights = Weights::zeros(&config);
        let expected = weights.n_params() * 4;
        let payload = &bytes[HEADER..];
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint payload is {} bytes, config implies {expected}",
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        for t in weights.tensors_mut() {
            for x in t.iter_mut() {
                *x = values.next().expect("length checked");
            }
        }
        if !weights.all_finite() {
            return Err(Error::validation("weights", "non-finite value in checkpoint"));
        }
        Ok(Self { config, weights })
    }
}

pub fn save_checkpoint(model: &ToyLM, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_checkpoint_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ToyLM> {
    ToyLM::from_checkpoint_bytes(&fs::read(path)?)
}
