//! Preference optimization with a token-match alignment score.
//!
//! Pairs are built by sampling two continuations of a target-language
//! prompt and scoring each against the reference continuation obtained by
//! mapping the pivot-language (language 0) realization of the same template
//! into the target language.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::forward::{add_nll_grad, log_prob};
use super::train::Adam;
use super::ToyLM;
use crate::corpus::{parallel_reference, Corpus, Token};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const PAIR_ATTEMPTS: usize = 10;
const PIVOT: usize = 0;

/// Policy and reference log-probabilities of one preference pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpoTerms {
    pub policy_chosen: f64,
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl DpoTerms {
    /// `(chosen log-ratio) - (rejected log-ratio)`
    pub fn margin(&self) -> f64 {
        (self.policy_chosen - self.ref_chosen) - (self.policy_rejected - self.ref_rejected)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean over the batch of `-log sigmoid(beta * margin)`.
pub fn dpo_loss(batch: &[DpoTerms], beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Parameter(format!("beta must be > 0, got {beta}")));
    }
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty DPO batch".into()));
    }
    let mut total = 0.0;
    for t in batch {
        let m = t.margin();
        if !m.is_finite() {
            return Err(Error::Domain(format!("non-finite log-probabilities in {t:?}")));
        }
        total += softplus(-beta * m);
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub language: usize,
    pub prompt: Vec<Token>,
    pub chosen: Vec<Token>,
    pub rejected: Vec<Token>,
    pub score_chosen: f64,
    pub score_rejected: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pairs: Vec<PreferencePair>,
    /// `(language, pairs formed)` for every target language.
    pub achieved: Vec<(usize, usize)>,
    pub requested_per_language: usize,
}

impl PairReport {
    pub fn shortfall(&self) -> bool {
        self.achieved.iter().any(|&(_, n)| n < self.requested_per_language)
    }
}

/// Fraction of reference positions where the continuation has the same token.
pub fn token_match_score(continuation: &[Token], reference: &[Token]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let hits = continuation.iter().zip(reference).filter(|(a, b)| a == b).count();
    hits as f64 / reference.len() as f64
}

/// Sum of `log p(continuation_t | prompt, continuation_<t)`.
pub fn sequence_logprob(model: &ToyLM, prompt: &[Token], continuation: &[Token]) -> Result<f64> {
    if prompt.is_empty() {
        return Err(Error::Parameter("prompt must hold at least the tag token".into()));
    }
    let seq: Vec<Token> = prompt.iter().chain(continuation).copied().collect();
    let trace = model.forward_batch(&[&seq], None)?;
    Ok((prompt.len() - 1..seq.len() - 1)
        .map(|r| log_prob(trace.logits.row(r), seq[r + 1]))
        .sum())
}

fn sample_continuation(model: &ToyLM, prompt: &[Token], len: usize, rng: &mut SplitMix64) -> Result<Vec<Token>> {
    let mut seq = prompt.to_vec();
    for _ in 0..len {
        let out = model.forward(&seq, None)?;
        let last = out.logits.row(seq.len() - 1);
        let max = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = last.iter().map(|&x| (x - max).exp()).collect();
        seq.push(rng.categorical(&weights) as Token);
    }
    Ok(seq.split_off(prompt.len()))
}

/// Samples preference pairs for every non-pivot language.
///
/// The prompt is the tag plus the first half of a training sentence's
/// content. Ties in score are discarded and resampled up to ten times per
/// pair; a shortfall is logged and visible in the report.
pub fn build_preference_pairs(model: &ToyLM, corpus: &Corpus, n_pairs: usize, seed: u64) -> Result<PairReport> {
    let n_langs = corpus.config.n_langs;
    let mut report = PairReport {
        requested_per_language: n_pairs,
        ..PairReport::default()
    };
    for lang in (0..n_langs).filter(|&k| k != PIVOT) {
        let sources: Vec<_> = corpus.train.iter().filter(|s| s.language == lang).collect();
        if sources.is_empty() {
            return Err(Error::EmptyInput(format!("no training sentences for language {lang}")));
        }
        let mut formed = 0;
        for i in 0..n_pairs {
            for attempt in 0..PAIR_ATTEMPTS {
                let mut rng = SplitMix64::keyed(seed, "preference-pair", &[lang as u64, i as u64, attempt as u64]);
                let src = sources[rng.below(sources.len())];
                let half = (src.tokens.len() - 1) / 2;
                let prompt = &src.tokens[..1 + half];
                let pivot = corpus.slot_table.canonical_sentence(src.template_id, PIVOT)?;
                let reference = parallel_reference(&corpus.slot_table, &pivot, lang)?;
                let ref_cont = &reference.tokens[1 + half..];
                let a = sample_continuation(model, prompt, ref_cont.len(), &mut rng)?;
                let b = sample_continuation(model, prompt, ref_cont.len(), &mut rng)?;
                let (ra, rb) = (token_match_score(&a, ref_cont), token_match_score(&b, ref_cont));
                if ra == rb {
                    continue;
                }
                let ((chosen, rc), (rejected, rr)) = if ra > rb { ((a, ra), (b, rb)) } else { ((b, rb), (a, ra)) };
                report.pairs.push(PreferencePair {
                    language: lang,
                    prompt: prompt.to_vec(),
                    chosen,
                    rejected,
                    score_chosen: rc,
                    score_rejected: rr,
                });
                formed += 1;
                break;
            }
        }
        if formed < n_pairs {
            log::warn!("preference pairs for language {lang}: formed {formed} of {n_pairs}");
        }
        report.achieved.push((lang, formed));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    pub beta: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            steps: 500,
            lr: 3e-6,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DpoReport {
    /// Batch loss before each update.
    pub losses: Vec<f64>,
}

impl DpoReport {
    /// Trailing moving average of the loss curve.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        if window == 0 || self.losses.len() < window {
            return Vec::new();
        }
        self.losses.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
    }
}

struct PairSeqs {
    prompt_len: usize,
    chosen: Vec<Token>,
    rejected: Vec<Token>,
}

/// Continuation log-probabilities for each sequence of a traced batch.
fn batch_logprobs(trace: &super::forward::Trace, prompt_lens: &[usize]) -> Vec<f64> {
    trace
        .segments
        .iter()
        .zip(prompt_lens)
        .map(|(seg, &p)| {
            (seg.start + p - 1..seg.end - 1)
                .map(|r| log_prob(trace.logits.row(r), trace.tokens[r + 1]))
                .sum()
        })
        .collect()
}

/// Fine-tunes a copy of `model` on `pairs`, using the input as the frozen
/// reference policy.
pub fn dpo_finetune(model: &ToyLM, pairs: &[PreferencePair], cfg: &DpoConfig) -> Result<(ToyLM, DpoReport)> {
    if !(cfg.beta > 0.0) {
        return Err(Error::Parameter(format!("beta must be > 0, got {}", cfg.beta)));
    }
    let mut policy = model.clone();
    let mut report = DpoReport::default();
    if cfg.steps == 0 {
        return Ok((policy, report));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no preference pairs".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch_size must be >= 1".into()));
    }
    let seqs: Vec<PairSeqs> = pairs
        .iter()
        .map(|p| {
            if p.prompt.is_empty() || p.chosen.is_empty() || p.rejected.is_empty() {
                return Err(Error::Parameter("pair with empty prompt or continuation".into()));
            }
            let join = |c: &[Token]| p.prompt.iter().chain(c).copied().collect::<Vec<_>>();
            Ok(PairSeqs {
                prompt_len: p.prompt.len(),
                chosen: join(&p.chosen),
                rejected: join(&p.rejected),
            })
        })
        .collect::<Result<_>>()?;
    let reference: Vec<(f64, f64)> = seqs
        .iter()
        .map(|s| {
            let trace = model.forward_batch(&[&s.chosen, &s.rejected], None)?;
            let lp = batch_logprobs(&trace, &[s.prompt_len, s.prompt_len]);
            Ok((lp[0], lp[1]))
        })
        .collect::<Result<_>>()?;

    let mut opt = Adam::new(&policy, cfg.lr, 0.9, 0.999, 1e-8);
    let full_batch = pairs.len() <= cfg.batch_size;
    for step in 0..cfg.steps {
        let idx: Vec<usize> = if full_batch {
            (0..pairs.len()).collect()
        } else {
            let mut rng = SplitMix64::keyed(cfg.seed, "dpo-batch", &[step as u64]);
            (0..cfg.batch_size).map(|_| rng.below(pairs.len())).collect()
        };
        let mut batch: Vec<&[Token]> = Vec::with_capacity(2 * idx.len());
        let mut prompt_lens = Vec::with_capacity(2 * idx.len());
        for &i in &idx {
            batch.push(&seqs[i].chosen);
            batch.push(&seqs[i].rejected);
            prompt_lens.extend([seqs[i].prompt_len; 2]);
        }
        let trace = policy.forward_batch(&batch, None)?;
        let lp = batch_logprobs(&trace, &prompt_lens);
        let terms: Vec<DpoTerms> = idx
            .iter()
            .enumerate()
            .map(|(b, &i)| DpoTerms {
                policy_chosen: lp[2 * b],
                policy_rejected: lp[2 * b + 1],
                ref_chosen: reference[i].0,
                ref_rejected: reference[i].1,
            })
            .collect();
        let loss = dpo_loss(&terms, cfg.beta).map_err(|e| Error::Training {
            step,
            reason: e.to_string(),
        })?;
        report.losses.push(loss);

        // dL/dlogp_chosen = -beta * sigmoid(-beta * margin) / B; the backward
        // pass takes weights on -log p, hence the sign flip.
        let n = terms.len() as f64;
        let mut dlogits = Array2::zeros(trace.logits.raw_dim());
        for (b, t) in terms.iter().enumerate() {
            let coeff = cfg.beta * super::forward::sigmoid(-cfg.beta * t.margin()) / n;
            for (which, sign) in [(2 * b, 1.0), (2 * b + 1, -1.0)] {
                let seg = &trace.segments[which];
                for r in seg.start + prompt_lens[which] - 1..seg.end - 1 {
                    add_nll_grad(&mut dlogits, &trace.logits, r, trace.tokens[r + 1], sign * coeff);
                }
            }
        }
        let grads = policy.backward(&trace, &dlogits);
        opt.step(&mut policy.weights, &grads);
        if !policy.weights.all_finite() {
            return Err(Error::Training {
                step,
                reason: "non-finite parameters".into(),
            });
        }
    }
    Ok((policy, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylm::ToyLMConfig;
    use std::f64::consts::LN_2;

    fn terms(pc: f64, pr: f64, rc: f64, rr: f64) -> DpoTerms {
        DpoTerms {
            policy_chosen: pc,
            policy_rejected: pr,
            ref_chosen: rc,
            ref_rejected: rr,
        }
    }

    #[test]
    fn equal_logprobs_give_ln2() {
        let l = dpo_loss(&[terms(-3.0, -3.0, -3.0, -3.0), terms(-1.0, -1.0, -1.0, -1.0)], 0.1).unwrap();
        assert!((l - LN_2).abs() < 1e-12);
    }

    #[test]
    fn closed_form_margin() {
        let l = dpo_loss(&[terms(3f64.ln(), 0.0, 0.0, 0.0)], 1.0).unwrap();
        assert!((l - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_with_chosen_margin() {
        let mut prev = f64::INFINITY;
        for i in 0..10 {
            let l = dpo_loss(&[terms(i as f64 * 0.5, 0.0, 0.0, 0.0)], 0.5).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn extreme_margins_stay_finite() {
        assert!(dpo_loss(&[terms(1e6, -1e6, 0.0, 0.0)], 1.0).unwrap() >= 0.0);
        let big = dpo_loss(&[terms(-1e6, 1e6, 0.0, 0.0)], 1.0).unwrap();
        assert!((big - 2e6).abs() < 1e-6);
    }

    #[test]
    fn nonpositive_beta_rejected() {
        assert!(matches!(dpo_loss(&[terms(0.0, 0.0, 0.0, 0.0)], 0.0), Err(Error::Parameter(_))));
        assert!(matches!(dpo_loss(&[terms(0.0, 0.0, 0.0, 0.0)], -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn match_score_extremes() {
        assert_eq!(token_match_score(&[4, 5, 6], &[4, 5, 6]), 1.0);
        assert_eq!(token_match_score(&[1, 2, 3], &[4, 5, 6]), 0.0);
        assert!((token_match_score(&[4, 0, 6, 0, 0], &[4, 5, 6, 7, 8]) - 0.4).abs() < 1e-15);
    }

    fn small_model() -> ToyLM {
        ToyLM::new(ToyLMConfig {
            vocab: 12,
            d_model: 8,
            n_layers: 2,
            ffn_width: 16,
            max_seq: 12,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn zero_steps_returns_unchanged_model() {
        let m = small_model();
        let pair = PreferencePair {
            language: 1,
            prompt: vec![2, 5],
            chosen: vec![6, 7],
            rejected: vec![8, 9],
            score_chosen: 1.0,
            score_rejected: 0.0,
        };
        let cfg = DpoConfig {
            steps: 0,
            ..DpoConfig::default()
        };
        let (out, report) = dpo_finetune(&m, &[pair], &cfg).unwrap();
        assert_eq!(out, m);
        assert!(report.losses.is_empty());
    }

    #[test]
    fn repeated_pair_raises_policy_margin() {
        let m = small_model();
        let pair = PreferencePair {
            language: 1,
            prompt: vec![2, 5],
            chosen: vec![6, 7, 3],
            rejected: vec![8, 9, 10],
            score_chosen: 1.0,
            score_rejected: 0.0,
        };
        let cfg = DpoConfig {
            steps: 100,
            lr: 1e-2,
            ..DpoConfig::default()
        };
        let (aligned, report) = dpo_finetune(&m, std::slice::from_ref(&pair), &cfg).unwrap();
        let margin = |model: &ToyLM| {
            sequence_logprob(model, &pair.prompt, &pair.chosen).unwrap()
                - sequence_logprob(model, &pair.prompt, &pair.rejected).unwrap()
        };
        assert!(margin(&aligned) > margin(&m));
        assert!((report.losses[0] - LN_2).abs() < 1e-12);
        assert!(report.losses.last().unwrap() < &report.losses[0]);
    }
}
