//! Next-token cross-entropy training with Adam.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::forward::{add_nll_grad, log_prob};
use super::{ToyLM, Weights};
use crate::corpus::{Sentence, Token};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub log_every: usize,
    /// Keys the minibatch sampling stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            log_every: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(step, mean loss over the preceding logging window)`
    pub logged: Vec<(usize, f64)>,
    pub final_loss: Option<f64>,
}

/// Adam state over every tensor of a [`Weights`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Weights,
    v: Weights,
    t: i32,
}

impl Adam {
    pub fn new(model: &ToyLM, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: Weights::zeros(&model.config),
            v: Weights::zeros(&model.config),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Weights, grads: &Weights) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = self.lr / c1;
        let eps = self.eps;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Mean next-token NLL over all target positions of `seqs` and its gradient.
pub fn lm_loss(model: &ToyLM, seqs: &[&[Token]]) -> Result<(f64, Weights)> {
    let trace = model.forward_batch(seqs, None)?;
    let rows = trace.tokens.len();
    let n_targets: usize = trace.segments.iter().map(|s| s.len().saturating_sub(1)).sum();
    if n_targets == 0 {
        return Err(Error::EmptyInput("no next-token targets in batch".into()));
    }
    let weight = 1.0 / n_targets as f64;
    let mut dlogits = Array2::zeros(trace.logits.raw_dim());
    let mut loss = 0.0;
    for seg in &trace.segments {
        for r in seg.start..seg.end - 1 {
            let target = trace.tokens[r + 1];
            loss -= log_prob(trace.logits.row(r), target);
            add_nll_grad(&mut dlogits, &trace.logits, r, target, weight);
        }
    }
    debug_assert_eq!(rows, trace.logits.nrows());
    Ok((loss * weight, model.backward(&trace, &dlogits)))
}

/// Trains `model` in place. With `steps = 0` the model is untouched.
pub fn train(model: &mut ToyLM, sentences: &[Sentence], cfg: &TrainConfig) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    if cfg.steps == 0 {
        return Ok(report);
    }
    if sentences.is_empty() {
        return Err(Error::EmptyInput("training corpus is empty".into()));
    }
    for s in sentences {
        model.check_tokens(&s.tokens)?;
    }
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch_size must be >= 1".into()));
    }
    let mut opt = Adam::new(model, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut window = 0.0;
    let mut window_n = 0usize;
    for step in 0..cfg.steps {
        let mut rng = SplitMix64::keyed(cfg.seed, "train-batch", &[step as u64]);
        let batch: Vec<&[Token]> = (0..cfg.batch_size)
            .map(|_| sentences[rng.below(sentences.len())].tokens.as_slice())
            .collect();
        let (loss, grads) = lm_loss(model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("loss is {loss}"),
            });
        }
        opt.step(&mut model.weights, &grads);
        window += loss;
        window_n += 1;
        report.final_loss = Some(loss);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            let mean = window / window_n as f64;
            log::info!("train step {}: loss {mean:.4}", step + 1);
            report.logged.push((step + 1, mean));
            window = 0.0;
            window_n = 0;
        }
    }
    if !model.weights.all_finite() {
        return Err(Error::Training {
            step: cfg.steps,
            reason: "non-finite parameters".into(),
        });
    }
    Ok(report)
}
