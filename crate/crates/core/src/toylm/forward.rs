//! Batched forward pass with cached intermediates, and its backward pass.
//!
//! Sequences are stacked row-wise into one `[rows x d_model]` matrix so each
//! projection is a single GEMM; the prefix mean runs per segment.

use std::ops::Range;

use ndarray::{Array2, Zip};

use super::{DeactivationMask, ToyLM, Weights};
use crate::corpus::Token;
use crate::error::{Error, Result};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Result of a single-sequence forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[seq_len x vocab]`
    pub logits: Array2<f64>,
    /// Per layer, `[seq_len x ffn_width]` gate pre-activations.
    pub gate_preacts: Vec<Array2<f64>>,
}

pub(crate) struct LayerCache {
    pub u: Array2<f64>,
    pub a: Array2<f64>,
    pub g: Array2<f64>,
    pub v: Array2<f64>,
}

/// Everything the backward pass needs.
pub(crate) struct Trace {
    pub tokens: Vec<Token>,
    pub segments: Vec<Range<usize>>,
    pub layers: Vec<LayerCache>,
    pub h_final: Array2<f64>,
    pub logits: Array2<f64>,
    keep: Option<Vec<Vec<f64>>>,
}

impl Trace {
    #[cfg(test)]
    /// Row predicting token `r + 1` of its segment, if any.
    pub fn target(&self, row: usize) -> Option<Token> {
        let seg = self.segments.iter().find(|s| s.contains(&row))?;
        (row + 1 < seg.end).then(|| self.tokens[row + 1])
    }
}

fn prefix_mean(h: &Array2<f64>, segments: &[Range<usize>]) -> Array2<f64> {
    let d = h.ncols();
    let mut out = Array2::zeros(h.raw_dim());
    let mut acc = vec![0.0; d];
    for seg in segments {
        acc.iter_mut().for_each(|x| *x = 0.0);
        for (k, r) in seg.clone().enumerate() {
            let inv = 1.0 / (k + 1) as f64;
            let src = h.row(r);
            let mut dst = out.row_mut(r);
            for c in 0..d {
                acc[c] += src[c];
                dst[c] = acc[c] * inv;
            }
        }
    }
    out
}

/// Adjoint of `h -> h + prefix_mean(h)`.
fn residual_prefix_mean_backward(du: &Array2<f64>, segments: &[Range<usize>]) -> Array2<f64> {
    let d = du.ncols();
    let mut dh = du.clone();
    let mut acc = vec![0.0; d];
    for seg in segments {
        acc.iter_mut().for_each(|x| *x = 0.0);
        for (k, r) in seg.clone().enumerate().rev() {
            let inv = 1.0 / (k + 1) as f64;
            let src = du.row(r);
            let mut dst = dh.row_mut(r);
            for c in 0..d {
                acc[c] += src[c] * inv;
                dst[c] += acc[c];
            }
        }
    }
    dh
}

impl ToyLM {
    pub(crate) fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        if tokens.len() > self.config.max_seq {
            return Err(Error::Length {
                len: tokens.len(),
                max: self.config.max_seq,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab) {
            return Err(Error::Parameter(format!(
                "token id {t} outside vocab of {}",
                self.config.vocab
            )));
        }
        Ok(())
    }

    pub(crate) fn keep_factors(&self, mask: Option<&DeactivationMask>) -> Result<Option<Vec<Vec<f64>>>> {
        match mask {
            Some(m) if !m.is_empty() => Ok(Some(m.keep_factors(self.n_layers(), self.ffn_width())?)),
            _ => Ok(None),
        }
    }

    /// Forward pass over several sequences at once.
    pub(crate) fn forward_batch(&self, seqs: &[&[Token]], mask: Option<&DeactivationMask>) -> Result<Trace> {
        for s in seqs {
            self.check_tokens(s)?;
        }
        let keep = self.keep_factors(mask)?;
        let w = &self.weights;
        let d = self.config.d_model;
        let mut segments = Vec::with_capacity(seqs.len());
        let mut tokens = Vec::new();
        for s in seqs {
            let start = tokens.len();
            tokens.extend_from_slice(s);
            segments.push(start..tokens.len());
        }
        let rows = tokens.len();
        let mut h = Array2::zeros((rows, d));
        for seg in &segments {
            for (p, r) in seg.clone().enumerate() {
                let mut row = h.row_mut(r);
                row += &w.embed.row(tokens[r] as usize);
                row += &w.pos.row(p);
            }
        }
        let mut layers = Vec::with_capacity(w.layers.len());
        for (i, lw) in w.layers.iter().enumerate() {
            let u = &h + &prefix_mean(&h, &segments);
            let a = u.dot(&lw.gate);
            let mut g = a.mapv(silu);
            if let Some(keep) = &keep {
                for mut row in g.rows_mut() {
                    row *= &ndarray::ArrayView1::from(&keep[i][..]);
                }
            }
            let v = u.dot(&lw.up);
            let z = &g * &v;
            h = &u + &z.dot(&lw.down);
            layers.push(LayerCache { u, a, g, v });
        }
        let logits = h.dot(&w.unembed);
        Ok(Trace {
            tokens,
            segments,
            layers,
            h_final: h,
            logits,
            keep,
        })
    }

    /// Forward pass over one sequence, optionally with neurons deactivated.
    pub fn forward(&self, tokens: &[Token], mask: Option<&DeactivationMask>) -> Result<ForwardOutput> {
        let trace = self.forward_batch(&[tokens], mask)?;
        Ok(ForwardOutput {
            logits: trace.logits,
            gate_preacts: trace.layers.into_iter().map(|l| l.a).collect(),
        })
    }

    /// Gradient of `sum_r weight[r] * (-log p(target_r))` given the logits
    /// gradient already formed by the caller.
    pub(crate) fn backward(&self, trace: &Trace, dlogits: &Array2<f64>) -> Weights {
        let w = &self.weights;
        let mut grads = Weights::zeros(&self.config);
        grads.unembed = trace.h_final.t().dot(dlogits);
        let mut dh = dlogits.dot(&w.unembed.t());
        for (i, (lw, cache)) in w.layers.iter().zip(&trace.layers).enumerate().rev() {
            let gl = &mut grads.layers[i];
            let z = &cache.g * &cache.v;
            gl.down = z.t().dot(&dh);
            let dz = dh.dot(&lw.down.t());
            let dv = &dz * &cache.g;
            let mut da = dz;
            Zip::from(&mut da).and(&cache.v).and(&cache.a).for_each(|da, &v, &a| {
                *da *= v * silu_grad(a);
            });
            if let Some(keep) = &trace.keep {
                for mut row in da.rows_mut() {
                    row *= &ndarray::ArrayView1::from(&keep[i][..]);
                }
            }
            gl.gate = cache.u.t().dot(&da);
            gl.up = cache.u.t().dot(&dv);
            let du = dh + da.dot(&lw.gate.t()) + dv.dot(&lw.up.t());
            dh = residual_prefix_mean_backward(&du, &trace.segments);
        }
        for seg in &trace.segments {
            for (p, r) in seg.clone().enumerate() {
                let src = dh.row(r);
                let mut e = grads.embed.row_mut(trace.tokens[r] as usize);
                e += &src;
                let mut pr = grads.pos.row_mut(p);
                pr += &src;
            }
        }
        grads
    }
}

/// Row-wise `log_softmax(logits)[target]`, computed stably.
pub(crate) fn log_prob(logits: ndarray::ArrayView1<f64>, target: Token) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits[target as usize] - lse
}

/// Fills `dlogits[row] = weight * (softmax(logits[row]) - onehot(target))`.
pub(crate) fn add_nll_grad(
    dlogits: &mut Array2<f64>,
    logits: &Array2<f64>,
    row: usize,
    target: Token,
    weight: f64,
) {
    let l = logits.row(row);
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = l.iter().map(|&x| (x - max).exp()).sum();
    let mut out = dlogits.row_mut(row);
    for (o, &x) in out.iter_mut().zip(l.iter()) {
        *o += weight * (x - max).exp() / sum;
    }
    out[target as usize] -= weight;
}
