//! Small causal language model with SiLU-gated feed-forward blocks.
//!
//! Each block mixes context with a parameter-free causal prefix mean and
//! then applies a gated FFN:
//!
//! ```text
//! u  = h + prefix_mean(h)
//! a  = u W_gate              (gate pre-activations: the observable neurons)
//! g  = SiLU(a)               (masked neurons forced to 0)
//! h' = u + (g * (u W_up)) W_down
//! ```
//!
//! Logits are `h_last U`. There are no biases anywhere.

mod checkpoint;
mod dpo;
mod eval;
mod forward;
mod train;

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::snapshot::NeuronId;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use dpo::{
    build_preference_pairs, dpo_finetune, dpo_loss, sequence_logprob, token_match_score, DpoConfig, DpoReport,
    DpoTerms, PairReport, PreferencePair,
};
pub use eval::{collect_probs, perplexity, perplexity_from_nll};
pub use forward::{silu, ForwardOutput};
pub use train::{lm_loss, train, Adam, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyLMConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub ffn_width: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ToyLMConfig {
    fn default() -> Self {
        Self {
            vocab: 512,
            d_model: 64,
            n_layers: 8,
            ffn_width: 256,
            max_seq: 64,
            seed: 0,
        }
    }
}

impl ToyLMConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab", self.vocab),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("ffn_width", self.ffn_width),
            ("max_seq", self.max_seq),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
            if u32::try_from(v).is_err() {
                return Err(Error::Config(format!("{name} exceeds u32")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// `[d_model x ffn_width]`
    pub gate: Array2<f64>,
    /// `[d_model x ffn_width]`
    pub up: Array2<f64>,
    /// `[ffn_width x d_model]`
    pub down: Array2<f64>,
}

/// All trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `[vocab x d_model]`
    pub embed: Array2<f64>,
    /// `[max_seq x d_model]`
    pub pos: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    /// `[d_model x vocab]`
    pub unembed: Array2<f64>,
}

impl Weights {
    pub fn zeros(cfg: &ToyLMConfig) -> Self {
        let (d, m) = (cfg.d_model, cfg.ffn_width);
        Self {
            embed: Array2::zeros((cfg.vocab, d)),
            pos: Array2::zeros((cfg.max_seq, d)),
            layers: (0..cfg.n_layers)
                .map(|_| LayerWeights {
                    gate: Array2::zeros((d, m)),
                    up: Array2::zeros((d, m)),
                    down: Array2::zeros((m, d)),
                })
                .collect(),
            unembed: Array2::zeros((d, cfg.vocab)),
        }
    }

    /// Tensors in declaration order: embed, pos, per layer (gate, up, down), unembed.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.embed, &self.pos];
        for l in &self.layers {
            out.extend([&l.gate, &l.up, &l.down]);
        }
        out.push(&self.unembed);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.embed, &mut self.pos];
        for l in &mut self.layers {
            out.extend([&mut l.gate, &mut l.up, &mut l.down]);
        }
        out.push(&mut self.unembed);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLM {
    pub config: ToyLMConfig,
    pub weights: Weights,
}

impl ToyLM {
    /// Randomly initialized model, deterministic in `config.seed`.
    pub fn new(config: ToyLMConfig) -> Result<Self> {
        config.validate()?;
        let mut weights = Weights::zeros(&config);
        let (d, m) = (config.d_model as f64, config.ffn_width as f64);
        let n_layers = config.n_layers as f64;
        let seed = config.seed;
        let fill = |t: &mut Array2<f64>, tag: &str, idx: u64, std: f64| {
            let mut rng = SplitMix64::keyed(seed, tag, &[idx]);
            t.iter_mut().for_each(|x| *x = std * rng.normal());
        };
        fill(&mut weights.embed, "init-embed", 0, 0.1 / d.sqrt());
        fill(&mut weights.pos, "init-pos", 0, 0.01 / d.sqrt());
        for (i, layer) in weights.layers.iter_mut().enumerate() {
            let i = i as u64;
            fill(&mut layer.gate, "init-gate", i, 1.0 / d.sqrt());
            fill(&mut layer.up, "init-up", i, 1.0 / d.sqrt());
            fill(&mut layer.down, "init-down", i, 1.0 / (m.sqrt() * n_layers));
        }
        fill(&mut weights.unembed, "init-unembed", 0, 0.01 / d.sqrt());
        Ok(Self { config, weights })
    }

    /// Model with all-zero weights (uniform logits).
    pub fn zeros(config: ToyLMConfig) -> Result<Self> {
        config.validate()?;
        let weights = Weights::zeros(&config);
        Ok(Self { config, weights })
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn ffn_width(&self) -> usize {
        self.config.ffn_width
    }

    /// Short identifier recorded in snapshots.
    pub fn model_id(&self) -> String {
        let c = &self.config;
        format!(
            "toylm-v{}-d{}-l{}-m{}-s{}",
            c.vocab, c.d_model, c.n_layers, c.ffn_width, c.seed
        )
    }
}

/// A set of neurons whose post-SiLU output is forced to zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeactivationMask(BTreeSet<NeuronId>);

impl DeactivationMask {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every neuron of a `n_layers x n_neurons` model.
    pub fn all(n_layers: usize, n_neurons: usize) -> Self {
        (0..n_layers)
            .flat_map(|l| (0..n_neurons).map(move |j| NeuronId::new(l, j)))
            .collect()
    }

    pub fn insert(&mut self, id: NeuronId) -> bool {
        self.0.insert(id)
    }

    pub fn contains(&self, id: &NeuronId) -> bool {
        self.0.contains(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeuronId> {
        self.0.iter()
    }

    pub fn is_superset(&self, other: &Self) -> bool {
        self.0.is_superset(&other.0)
    }

    pub fn as_set(&self) -> &BTreeSet<NeuronId> {
        &self.0
    }

    /// Per-layer 0/1 keep factors. Errors if any id lies outside the dims.
    pub(crate) fn keep_factors(&self, n_layers: usize, n_neurons: usize) -> Result<Vec<Vec<f64>>> {
        let mut keep = vec![vec![1.0; n_neurons]; n_layers];
        for id in &self.0 {
            if id.layer >= n_layers || id.index >= n_neurons {
                return Err(Error::Mask(format!(
                    "neuron ({}, {}) outside model dims {n_layers}x{n_neurons}",
                    id.layer, id.index
                )));
            }
            keep[id.layer][id.index] = 0.0;
        }
        Ok(keep)
    }
}

impl FromIterator<NeuronId> for DeactivationMask {
    fn from_iter<I: IntoIterator<Item = NeuronId>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}
