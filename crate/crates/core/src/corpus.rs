//! Deterministic synthetic parallel corpus.
//!
//! Token ids are laid out as: `0` padding, `1..=n_langs` language tags, then
//! the shared block, then one private block per language. A template fixes,
//! for every slot, whether it is shared (same token in every language) or
//! private (a per-language canonical token plus three synonyms, one of which
//! replaces the canonical token 10% of the time).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub type Token = u32;

pub const PAD_TOKEN: Token = 0;
const SYNONYMS_PER_SLOT: usize = 3;
const SYNONYM_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_langs: usize,
    pub private_vocab_per_lang: usize,
    pub shared_vocab: usize,
    pub n_templates: usize,
    pub template_len_range: [usize; 2],
    pub shared_slot_rate: f64,
    pub n_train_per_lang: usize,
    pub n_eval_per_lang: usize,
    pub seed: u64,
    /// Vocabulary size of the model that will consume the corpus.
    pub model_vocab: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_langs: 10,
            private_vocab_per_lang: 40,
            shared_vocab: 40,
            n_templates: 20,
            template_len_range: [8, 16],
            shared_slot_rate: 0.4,
            n_train_per_lang: 2000,
            n_eval_per_lang: 250,
            seed: 0,
            model_vocab: 512,
        }
    }
}

impl CorpusConfig {
    /// The 4-language preset used by the ablation experiments.
    pub fn ablation_preset(seed: u64) -> Self {
        Self {
            n_langs: 4,
            seed,
            ..Self::default()
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.n_langs * self.private_vocab_per_lang + self.shared_vocab + self.n_langs + 1
    }

    pub fn tag_token(&self, lang: usize) -> Token {
        (1 + lang) as Token
    }

    pub fn shared_block(&self) -> std::ops::Range<Token> {
        let start = (1 + self.n_langs) as Token;
        start..start + self.shared_vocab as Token
    }

    pub fn private_block(&self, lang: usize) -> std::ops::Range<Token> {
        let start = (1 + self.n_langs + self.shared_vocab + lang * self.private_vocab_per_lang) as Token;
        start..start + self.private_vocab_per_lang as Token
    }

    pub fn n_eval_templates(&self) -> usize {
        (self.n_templates as f64 * 0.2).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_langs == 0 {
            return Err(Error::Config("n_langs must be >= 1".into()));
        }
        if self.n_templates < 2 {
            return Err(Error::Config("n_templates must be >= 2 to hold out eval templates".into()));
        }
        let [lo, hi] = self.template_len_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid template_len_range [{lo}, {hi}]")));
        }
        if !(0.0..=1.0).contains(&self.shared_slot_rate) {
            return Err(Error::Config(format!(
                "shared_slot_rate {} outside [0, 1]",
                self.shared_slot_rate
            )));
        }
        if self.private_vocab_per_lang < SYNONYMS_PER_SLOT + 1 {
            return Err(Error::Config(format!(
                "private_vocab_per_lang must be >= {}",
                SYNONYMS_PER_SLOT + 1
            )));
        }
        if self.shared_slot_rate > 0.0 && self.shared_vocab == 0 {
            return Err(Error::Config("shared slots requested but shared_vocab = 0".into()));
        }
        if self.vocab_size() > self.model_vocab {
            return Err(Error::Config(format!(
                "vocab overflow: corpus needs {} ids, model vocab is {}",
                self.vocab_size(),
                self.model_vocab
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    #[serde(rename = "lang")]
    pub language: usize,
    #[serde(rename = "template")]
    pub template_id: usize,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Slot {
    Shared(Token),
    /// `options[lang]` = canonical token followed by its synonyms.
    Private(Vec<[Token; SYNONYMS_PER_SLOT + 1]>),
}

/// Realization table `(template, position, language) -> token`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotTable {
    n_langs: usize,
    templates: Vec<Vec<Slot>>,
}

impl SlotTable {
    pub fn n_templates(&self) -> usize {
        self.templates.len()
    }

    pub fn template_len(&self, template: usize) -> Option<usize> {
        self.templates.get(template).map(Vec::len)
    }

    /// Canonical token at a content position (0-based, tag excluded).
    pub fn canonical(&self, template: usize, position: usize, lang: usize) -> Option<Token> {
        match self.templates.get(template)?.get(position)? {
            Slot::Shared(t) => Some(*t),
            Slot::Private(opts) => opts.get(lang).map(|o| o[0]),
        }
    }

    pub fn is_shared(&self, template: usize, position: usize) -> Option<bool> {
        Some(matches!(self.templates.get(template)?.get(position)?, Slot::Shared(_)))
    }

    /// Canonical realization of a template in one language.
    pub fn canonical_sentence(&self, template: usize, lang: usize) -> Result<Sentence> {
        let slots = self
            .templates
            .get(template)
            .ok_or_else(|| Error::Lookup(format!("unknown template {template}")))?;
        if lang >= self.n_langs {
            return Err(Error::Lookup(format!("unknown language {lang}")));
        }
        let mut tokens = vec![(1 + lang) as Token];
        tokens.extend((0..slots.len()).map(|p| self.canonical(template, p, lang).expect("in range")));
        Ok(Sentence {
            language: lang,
            template_id: template,
            tokens,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<Sentence>,
    pub eval: Vec<Sentence>,
    pub slot_table: SlotTable,
}

fn build_slot_table(cfg: &CorpusConfig) -> SlotTable {
    let [lo, hi] = cfg.template_len_range;
    let shared = cfg.shared_block();
    let templates = (0..cfg.n_templates)
        .map(|t| {
            let len = lo + SplitMix64::keyed(cfg.seed, "template-len", &[t as u64]).below(hi - lo + 1);
            (0..len)
                .map(|pos| {
                    let key = [t as u64, pos as u64];
                    // Both draws happen regardless of rate so that slot
                    // identities stay fixed as the rate varies.
                    let u = SplitMix64::keyed(cfg.seed, "slot-kind", &key).next_f64();
                    let shared_tok = if cfg.shared_vocab > 0 {
                        shared.start
                            + SplitMix64::keyed(cfg.seed, "shared-token", &key).below(cfg.shared_vocab) as Token
                    } else {
                        PAD_TOKEN
                    };
                    if u < cfg.shared_slot_rate {
                        Slot::Shared(shared_tok)
                    } else {
                        let opts = (0..cfg.n_langs)
                            .map(|lang| {
                                let block = cfg.private_block(lang);
                                let mut rng =
                                    SplitMix64::keyed(cfg.seed, "private-token", &[t as u64, pos as u64, lang as u64]);
                                let mut picked = [0 as Token; SYNONYMS_PER_SLOT + 1];
                                let mut n = 0;
                                while n < picked.len() {
                                    let tok = block.start + rng.below(cfg.private_vocab_per_lang) as Token;
                                    if !picked[..n].contains(&tok) {
                                        picked[n] = tok;
                                        n += 1;
                                    }
                                }
                                picked
                            })
                            .collect();
                        Slot::Private(opts)
                    }
                })
                .collect()
        })
        .collect();
    SlotTable {
        n_langs: cfg.n_langs,
        templates,
    }
}

fn realize(cfg: &CorpusConfig, table: &SlotTable, template: usize, lang: usize, rng: &mut SplitMix64) -> Sentence {
    let mut tokens = vec![cfg.tag_token(lang)];
    for slot in &table.templates[template] {
        let u = rng.next_f64();
        let pick = rng.below(SYNONYMS_PER_SLOT);
        tokens.push(match slot {
            Slot::Shared(t) => *t,
            Slot::Private(opts) if u < SYNONYM_RATE => opts[lang][1 + pick],
            Slot::Private(opts) => opts[lang][0],
        });
    }
    Sentence {
        language: lang,
        template_id: template,
        tokens,
    }
}

fn draw_split(
    cfg: &CorpusConfig,
    table: &SlotTable,
    templates: &[usize],
    n_draws: usize,
    split: &str,
) -> Vec<Sentence> {
    let mut out = Vec::with_capacity(n_draws * cfg.n_langs);
    for draw in 0..n_draws {
        let pick = SplitMix64::keyed(cfg.seed, split, &[draw as u64]).below(templates.len());
        let template = templates[pick];
        for lang in 0..cfg.n_langs {
            let mut rng = SplitMix64::keyed(cfg.seed, &format!("{split}-realize"), &[draw as u64, lang as u64]);
            out.push(realize(cfg, table, template, lang, &mut rng));
        }
    }
    out
}

/// Generates train and eval splits. The last `ceil(20%)` templates are held
/// out for eval; every draw realizes one template in every language.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let table = build_slot_table(config);
    let n_eval = config.n_eval_templates();
    let split_at = config.n_templates - n_eval;
    let train_templates: Vec<usize> = (0..split_at).collect();
    let eval_templates: Vec<usize> = (split_at..config.n_templates).collect();
    let train = draw_split(config, &table, &train_templates, config.n_train_per_lang, "train");
    let eval = draw_split(config, &table, &eval_templates, config.n_eval_per_lang, "eval");
    Ok(Corpus {
        config: config.clone(),
        train,
        eval,
        slot_table: table,
    })
}

/// Fresh realizations of the train templates under their own random stream,
/// `n_per_lang` per language. Used as in-distribution text that was not
/// part of training or activation collection.
pub fn draw_probe(config: &CorpusConfig, n_per_lang: usize) -> Result<Vec<Sentence>> {
    config.validate()?;
    let table = build_slot_table(config);
    let train_templates: Vec<usize> = (0..config.n_templates - config.n_eval_templates()).collect();
    Ok(draw_split(config, &table, &train_templates, n_per_lang, "probe"))
}

/// Maps a sentence into another language slot by slot. Shared slots are
/// kept; a private token that is the canonical token (or synonym `s`) maps
/// to the target's canonical token (or synonym `s`), which makes the map a
/// bijection between languages.
pub fn parallel_reference(table: &SlotTable, sentence: &Sentence, target: usize) -> Result<Sentence> {
    let slots = table
        .templates
        .get(sentence.template_id)
        .ok_or_else(|| Error::Lookup(format!("unknown template {}", sentence.template_id)))?;
    if target >= table.n_langs || sentence.language >= table.n_langs {
        return Err(Error::Lookup(format!("unknown language {target}")));
    }
    if sentence.tokens.len() != slots.len() + 1 {
        return Err(Error::Lookup(format!(
            "sentence has {} content tokens, template {} has {}",
            sentence.tokens.len().saturating_sub(1),
            sentence.template_id,
            slots.len()
        )));
    }
    let mut tokens = vec![(1 + target) as Token];
    for (pos, (slot, &tok)) in slots.iter().zip(&sentence.tokens[1..]).enumerate() {
        tokens.push(match slot {
            Slot::Shared(t) => *t,
            Slot::Private(opts) => {
                let which = opts[sentence.language].iter().position(|&o| o == tok).ok_or_else(|| {
                    Error::Lookup(format!(
                        "token {tok} at position {pos} is not a realization of template {}",
                        sentence.template_id
                    ))
                })?;
                opts[target][which]
            }
        });
    }
    Ok(Sentence {
        language: target,
        template_id: sentence.template_id,
        tokens,
    })
}

/// Mean pairwise Jaccard overlap of the languages' non-tag token sets.
pub fn token_overlap_fraction(sentences: &[Sentence], n_langs: usize) -> f64 {
    let mut sets = vec![BTreeSet::new(); n_langs];
    for s in sentences {
        sets[s.language].extend(s.tokens.iter().skip(1).copied());
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..n_langs {
        for b in a + 1..n_langs {
            let inter = sets[a].intersection(&sets[b]).count();
            let union = sets[a].union(&sets[b]).count();
            total += if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    lang: usize,
    template: usize,
    split: String,
    tokens: Vec<Token>,
}

pub fn write_jsonl(corpus: &Corpus, mut w: impl Write) -> Result<()> {
    write_split_jsonl("train", &corpus.train, &mut w)?;
    write_split_jsonl("eval", &corpus.eval, &mut w)
}

/// Appends `sentences` as JSON-lines rows tagged with `split`.
pub fn write_split_jsonl(split: &str, sentences: &[Sentence], mut w: impl Write) -> Result<()> {
    for s in sentences {
        let row = JsonlRow {
            lang: s.language,
            template: s.template_id,
            split: split.to_string(),
            tokens: s.tokens.clone(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads JSON-lines into sentence lists keyed by split name.
pub fn read_jsonl(r: impl BufRead) -> Result<BTreeMap<String, Vec<Sentence>>> {
    let mut out: BTreeMap<String, Vec<Sentence>> = BTreeMap::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        out.entry(row.split).or_default().push(Sentence {
            language: row.lang,
            template_id: row.template,
            tokens: row.tokens,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, rate: f64) -> CorpusConfig {
        CorpusConfig {
            n_langs: 4,
            n_train_per_lang: 200,
            n_eval_per_lang: 40,
            shared_slot_rate: rate,
            seed,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small(7, 0.4)).unwrap();
        let b = generate_corpus(&small(7, 0.4)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.eval, b.eval);
        assert_eq!(a.slot_table, b.slot_table);
        let c = generate_corpus(&small(8, 0.4)).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn zero_rate_has_no_cross_language_overlap() {
        let c = generate_corpus(&small(7, 0.0)).unwrap();
        assert_eq!(token_overlap_fraction(&c.train, 4), 0.0);
        for s in &c.train {
            let block = c.config.private_block(s.language);
            assert!(s.tokens[1..].iter().all(|t| block.contains(t)));
        }
    }

    #[test]
    fn full_rate_makes_parallel_sentences_identical_but_for_tag() {
        let c = generate_corpus(&small(7, 1.0)).unwrap();
        let shared = c.config.shared_block();
        for group in c.train.chunks(4) {
            for s in group {
                assert!(s.tokens[1..].iter().all(|t| shared.contains(t)));
                assert_eq!(s.tokens[1..], group[0].tokens[1..]);
            }
        }
    }

    #[test]
    fn overlap_is_monotone_in_rate() {
        let f: Vec<f64> = [0.0, 0.4, 1.0]
            .iter()
            .map(|&r| token_overlap_fraction(&generate_corpus(&small(7, r)).unwrap().train, 4))
            .collect();
        assert!(f[0] <= f[1] && f[1] <= f[2], "{f:?}");
    }

    #[test]
    fn languages_are_balanced_and_tagged() {
        let c = generate_corpus(&small(3, 0.4)).unwrap();
        let mut counts = [0usize; 4];
        for s in &c.train {
            counts[s.language] += 1;
            assert_eq!(s.tokens[0], c.config.tag_token(s.language));
        }
        assert!(counts.iter().all(|&n| n == 200));
    }

    #[test]
    fn eval_templates_are_held_out() {
        let c = generate_corpus(&small(3, 0.4)).unwrap();
        let train: BTreeSet<_> = c.train.iter().map(|s| s.template_id).collect();
        let eval: BTreeSet<_> = c.eval.iter().map(|s| s.template_id).collect();
        assert!(train.is_disjoint(&eval));
        let probe = draw_probe(&c.config, 30).unwrap();
        assert_eq!(probe.len(), 30 * 4);
        assert!(probe.iter().all(|s| train.contains(&s.template_id)));
        assert_ne!(probe[..8], c.train[..8]);
        assert!(eval.iter().all(|&t| t >= 16));
    }

    #[test]
    fn vocab_overflow_is_config_error() {
        let cfg = CorpusConfig {
            model_vocab: 100,
            ..CorpusConfig::default()
        };
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn parallel_reference_identity_and_involution() {
        let c = generate_corpus(&small(5, 0.4)).unwrap();
        for s in c.train.iter().take(80) {
            assert_eq!(&parallel_reference(&c.slot_table, s, s.language).unwrap(), s);
            let other = (s.language + 1) % 4;
            let there = parallel_reference(&c.slot_table, s, other).unwrap();
            assert_eq!(&parallel_reference(&c.slot_table, &there, s.language).unwrap(), s);
            for p in 0..s.tokens.len() - 1 {
                if c.slot_table.is_shared(s.template_id, p).unwrap() {
                    assert_eq!(there.tokens[p + 1], s.tokens[p + 1]);
                }
            }
        }
    }

    #[test]
    fn unknown_template_is_lookup_error() {
        let c = generate_corpus(&small(5, 0.4)).unwrap();
        let mut s = c.train[0].clone();
        s.template_id = 999;
        assert!(matches!(parallel_reference(&c.slot_table, &s, 1), Err(Error::Lookup(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let c = generate_corpus(&small(5, 0.4)).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&c, &mut buf).unwrap();
        let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
        assert!(first.starts_with("{\"lang\":0,\"template\":"));
        let probe = draw_probe(&c.config, 3).unwrap();
        write_split_jsonl("probe", &probe, &mut buf).unwrap();
        let splits = read_jsonl(&buf[..]).unwrap();
        assert_eq!(splits["train"], c.train);
        assert_eq!(splits["eval"], c.eval);
        assert_eq!(splits["probe"], probe);
        assert!(matches!(read_jsonl(&b"{\"lang\":0}\n"[..]), Err(Error::Format(_))));
    }
}
