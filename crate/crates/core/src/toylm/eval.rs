//! Forced-decoding evaluation: perplexity and activation probabilities.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::forward::log_prob;
use super::{DeactivationMask, ToyLM};
use crate::corpus::{Sentence, Token};
use crate::error::{Error, Result};
use crate::snapshot::{default_languages, ActivationSnapshot};

const CHUNK: usize = 64;

pub fn perplexity_from_nll(total_nll: f64, count: usize) -> f64 {
    (total_nll / count as f64).exp()
}

/// Per-language `(sum of -log p, number of predicted tokens)`.
fn nll_by_language(
    model: &ToyLM,
    sentences: &[Sentence],
    mask: Option<&DeactivationMask>,
) -> Result<BTreeMap<usize, (f64, usize)>> {
    let parts: Vec<Result<Vec<(usize, f64, usize)>>> = sentences
        .par_chunks(CHUNK)
        .map(|chunk| {
            let seqs: Vec<&[Token]> = chunk.iter().map(|s| s.tokens.as_slice()).collect();
            let trace = model.forward_batch(&seqs, mask)?;
            Ok(chunk
                .iter()
                .zip(&trace.segments)
                .map(|(s, seg)| {
                    let nll: f64 = (seg.start..seg.end.saturating_sub(1))
                        .map(|r| -log_prob(trace.logits.row(r), trace.tokens[r + 1]))
                        .sum();
                    (s.language, nll, seg.len().saturating_sub(1))
                })
                .collect())
        })
        .collect();
    let mut out = BTreeMap::new();
    for part in parts {
        for (lang, nll, n) in part? {
            let e = out.entry(lang).or_insert((0.0, 0));
            e.0 += nll;
            e.1 += n;
        }
    }
    Ok(out)
}

/// Perplexity per language over every position after the tag token.
/// Languages without any predicted token are absent from the map.
pub fn perplexity(
    model: &ToyLM,
    sentences: &[Sentence],
    mask: Option<&DeactivationMask>,
) -> Result<BTreeMap<usize, f64>> {
    Ok(nll_by_language(model, sentences, mask)?
        .into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(k, (nll, n))| (k, perplexity_from_nll(nll, n)))
        .collect())
}

/// Fraction of non-tag positions of each language at which each gate
/// pre-activation is strictly positive.
pub fn collect_probs(model: &ToyLM, sentences: &[Sentence], n_langs: usize) -> Result<ActivationSnapshot> {
    let (n_layers, m) = (model.n_layers(), model.ffn_width());
    if let Some(s) = sentences.iter().find(|s| s.language >= n_langs) {
        return Err(Error::Parameter(format!(
            "sentence language {} outside 0..{n_langs}",
            s.language
        )));
    }
    let cell = |layer: usize, j: usize, k: usize| (layer * m + j) * n_langs + k;
    let parts: Vec<Result<(Vec<u64>, Vec<u64>)>> = sentences
        .par_chunks(CHUNK)
        .map(|chunk| {
            let seqs: Vec<&[Token]> = chunk.iter().map(|s| s.tokens.as_slice()).collect();
            let trace = model.forward_batch(&seqs, None)?;
            let mut active = vec![0u64; n_layers * m * n_langs];
            let mut positions = vec![0u64; n_langs];
            for (s, seg) in chunk.iter().zip(&trace.segments) {
                let k = s.language;
                positions[k] += seg.len().saturating_sub(1) as u64;
                for (layer, cache) in trace.layers.iter().enumerate() {
                    for r in seg.start + 1..seg.end {
                        for (j, &a) in cache.a.row(r).iter().enumerate() {
                            if a > 0.0 {
                                active[cell(layer, j, k)] += 1;
                            }
                        }
                    }
                }
            }
            Ok((active, positions))
        })
        .collect();
    let mut active = vec![0u64; n_layers * m * n_langs];
    let mut positions = vec![0u64; n_langs];
    for part in parts {
        let (a, p) = part?;
        active.iter_mut().zip(a).for_each(|(x, y)| *x += y);
        positions.iter_mut().zip(p).for_each(|(x, y)| *x += y);
    }
    if let Some(k) = positions.iter().position(|&c| c == 0) {
        return Err(Error::EmptyInput(format!("no non-tag positions for language {k}")));
    }
    let probs = active
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / positions[i % n_langs] as f64)
        .collect();
    ActivationSnapshot::new(
        model.model_id(),
        "toy",
        default_languages(n_langs),
        n_layers,
        m,
        probs,
        positions,
    )
}
