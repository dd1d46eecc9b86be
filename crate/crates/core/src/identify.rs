//! Neuron identification: entropy/max-probability scoring, global
//! bottom-percentile selection and the threshold-count taxonomy.
//!
//! For a neuron with per-language activation probabilities `p`, the score is
//! the natural-log entropy of `p / sum(p)` minus `lambda * max(p)`. The lowest
//! `floor(percentile * total)` scores across all layers are selected. Among
//! selected neurons, `N = |{k : p_k > tau}|` decides Specific (`N = 1`) or
//! Related (`1 < N < l`). Agnostic (`N = l`) is decided over every neuron,
//! selected or not.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snapshot::{ActivationSnapshot, LanguageId, NeuronId};

/// Maximum number of languages representable in the per-neuron bitmask.
pub const MAX_LANGUAGES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyConfig {
    pub lambda: f64,
    pub tau: f64,
    pub percentile: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            lambda: 0.04,
            tau: 0.5,
            percentile: 0.05,
        }
    }
}

impl IdentifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Parameter(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(Error::Parameter(format!(
                "percentile must lie in (0, 1), got {}",
                self.percentile
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Specific,
    Related,
    Agnostic,
    Unselected,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Specific, Label::Related, Label::Agnostic, Label::Unselected];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Specific => "specific",
            Label::Related => "related",
            Label::Agnostic => "agnostic",
            Label::Unselected => "unselected",
        }
    }
}

/// Entropy of the normalized distribution minus `lambda * max(p)`.
///
/// Returns `+inf` for an all-zero vector so dead neurons are never selected.
pub fn score_neuron(p: &[f64], lambda: f64) -> Result<f64> {
    if let Some(&bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain(format!("activation probability {bad} outside [0, 1]")));
    }
    let sum: f64 = p.iter().sum();
    if sum == 0.0 {
        return Ok(f64::INFINITY);
    }
    let entropy: f64 = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| {
            let q = x / sum;
            -q * q.ln()
        })
        .sum();
    let max = p.iter().copied().fold(0.0, f64::max);
    Ok(entropy - lambda * max)
}

fn cmp_score(a: &(NeuronId, f64), b: &(NeuronId, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Global bottom-percentile selection. Ties at the cut go to the lower
/// `(layer, index)`; infinite scores are never selected.
pub fn select_bottom(scores: &[(NeuronId, f64)], percentile: f64) -> Result<BTreeSet<NeuronId>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no neurons to select from".into()));
    }
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::Parameter(format!("percentile must lie in (0, 1), got {percentile}")));
    }
    let k = (percentile * scores.len() as f64 + 1e-9).floor() as usize;
    let mut sorted: Vec<(NeuronId, f64)> = scores.to_vec();
    sorted.sort_by(cmp_score);
    Ok(sorted
        .into_iter()
        .take(k)
        .filter(|(_, s)| s.is_finite())
        .map(|(id, _)| id)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronRecord {
    pub layer: usize,
    pub index: usize,
    /// `None` encodes the dead-neuron `+inf` sentinel.
    #[serde(with = "score_serde")]
    pub score: f64,
    #[serde(rename = "N")]
    pub n_active: usize,
    /// Bit `k` set iff `p_k > tau`.
    pub langs: u64,
    pub selected: bool,
    pub label: Label,
}

impl NeuronRecord {
    pub fn id(&self) -> NeuronId {
        NeuronId::new(self.layer, self.index)
    }

    pub fn is_active_for(&self, lang: usize) -> bool {
        lang < 64 && self.langs & (1u64 << lang) != 0
    }

    pub fn active_languages(&self) -> impl Iterator<Item = usize> + '_ {
        (0..64).filter(move |&k| self.is_active_for(k))
    }
}

mod score_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTotals {
    pub specific: usize,
    pub related: usize,
    pub agnostic: usize,
    pub unselected: usize,
}

impl LabelTotals {
    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Specific => self.specific,
            Label::Related => self.related,
            Label::Agnostic => self.agnostic,
            Label::Unselected => self.unselected,
        }
    }

    pub(crate) fn bump(&mut self, label: Label) {
        match label {
            Label::Specific => self.specific += 1,
            Label::Related => self.related += 1,
            Label::Agnostic => self.agnostic += 1,
            Label::Unselected => self.unselected += 1,
        }
    }

    pub fn sum(&self) -> usize {
        self.specific + self.related + self.agnostic + self.unselected
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub selected: usize,
    /// Selected neurons with no language above `tau`.
    pub selected_with_zero_active: usize,
    /// Selected neurons active in every language (labelled Agnostic).
    pub agnostic_and_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronClassification {
    pub config: IdentifyConfig,
    pub model_id: String,
    pub languages: Vec<LanguageId>,
    pub n_layers: usize,
    pub n_neurons_per_layer: usize,
    pub totals: LabelTotals,
    pub diagnostics: Diagnostics,
    /// One record per neuron in `(layer, index)` order.
    pub neurons: Vec<NeuronRecord>,
}

impl NeuronClassification {
    pub fn n_langs(&self) -> usize {
        self.languages.len()
    }

    pub fn record(&self, id: NeuronId) -> &NeuronRecord {
        &self.neurons[id.layer * self.n_neurons_per_layer + id.index]
    }

    pub fn with_label(&self, label: Label) -> impl Iterator<Item = &NeuronRecord> + '_ {
        self.neurons.iter().filter(move |r| r.label == label)
    }

    pub fn ids_with_label(&self, label: Label) -> BTreeSet<NeuronId> {
        self.with_label(label).map(NeuronRecord::id).collect()
    }

    /// Specific and Related neurons.
    pub fn language_neurons(&self) -> BTreeSet<NeuronId> {
        self.neurons
            .iter()
            .filter(|r| matches!(r.label, Label::Specific | Label::Related))
            .map(NeuronRecord::id)
            .collect()
    }

    /// Checks labels against `N` and recomputes totals and diagnostics.
    pub fn validate(&self) -> Result<()> {
        let l = self.n_langs();
        if self.neurons.len() != self.n_layers * self.n_neurons_per_layer {
            return Err(Error::validation("neurons", "record count does not match dims"));
        }
        let mut totals = LabelTotals::default();
        let mut diag = Diagnostics::default();
        for (i, r) in self.neurons.iter().enumerate() {
            if r.layer * self.n_neurons_per_layer + r.index != i || r.index >= self.n_neurons_per_layer {
                return Err(Error::validation("neurons", format!("record {i} out of order")));
            }
            if r.langs.count_ones() as usize != r.n_active || (l < 64 && r.langs >> l != 0) {
                return Err(Error::validation("neurons", format!("record {i}: langs bitmask disagrees with N")));
            }
            let ok = match r.label {
                Label::Specific => r.selected && r.n_active == 1,
                Label::Related => r.selected && r.n_active > 1 && r.n_active < l,
                Label::Agnostic => r.n_active == l,
                Label::Unselected => r.n_active != l && (!r.selected || r.n_active == 0),
            };
            if !ok {
                return Err(Error::validation(
                    "neurons",
                    format!("record {i}: label {:?} inconsistent with N={} selected={}", r.label, r.n_active, r.selected),
                ));
            }
            totals.bump(r.label);
            if r.selected {
                diag.selected += 1;
                if r.n_active == 0 {
                    diag.selected_with_zero_active += 1;
                }
                if r.n_active == l {
                    diag.agnostic_and_selected += 1;
                }
            }
        }
        if totals != self.totals || diag != self.diagnostics {
            return Err(Error::validation("totals", "totals or diagnostics disagree with records"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.config.validate()?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn label_for(selected: bool, n_active: usize, n_langs: usize) -> Label {
    if n_active == n_langs {
        Label::Agnostic
    } else if selected && n_active == 1 {
        Label::Specific
    } else if selected && n_active > 1 {
        Label::Related
    } else {
        Label::Unselected
    }
}

/// Scores, selects and labels every neuron of a snapshot.
pub fn classify(snapshot: &ActivationSnapshot, config: &IdentifyConfig) -> Result<NeuronClassification> {
    config.validate()?;
    let l = snapshot.n_langs();
    if l > MAX_LANGUAGES {
        return Err(Error::Parameter(format!(
            "at most {MAX_LANGUAGES} languages supported, snapshot has {l}"
        )));
    }
    if l < 2 {
        return Err(Error::Parameter("classification needs at least two languages".into()));
    }
    let ids: Vec<NeuronId> = snapshot.neurons().map(|(id, _)| id).collect();
    let scores: Vec<(NeuronId, f64)> = ids
        .par_iter()
        .map(|&id| Ok((id, score_neuron(snapshot.neuron_probs(id), config.lambda)?)))
        .collect::<Result<_>>()?;
    let selected = select_bottom(&scores, config.percentile)?;
    let mut totals = LabelTotals::default();
    let mut diagnostics = Diagnostics::default();
    let neurons: Vec<NeuronRecord> = scores
        .iter()
        .map(|&(id, score)| {
            let p = snapshot.neuron_probs(id);
            let langs = p
                .iter()
                .enumerate()
                .filter(|(_, &x)| x > config.tau)
                .fold(0u64, |m, (k, _)| m | (1u64 << k));
            let n_active = langs.count_ones() as usize;
            let is_selected = selected.contains(&id);
            let label = label_for(is_selected, n_active, l);
            totals.bump(label);
            if is_selected {
                diagnostics.selected += 1;
                if n_active == 0 {
                    diagnostics.selected_with_zero_active += 1;
                }
                if n_active == l {
                    diagnostics.agnostic_and_selected += 1;
                }
            }
            NeuronRecord {
                layer: id.layer,
                index: id.index,
                score,
                n_active,
                langs,
                selected: is_selected,
                label,
            }
        })
        .collect();
    Ok(NeuronClassification {
        config: *config,
        model_id: snapshot.model_id().to_string(),
        languages: snapshot.languages().to_vec(),
        n_layers: snapshot.n_layers(),
        n_neurons_per_layer: snapshot.n_neurons_per_layer(),
        totals,
        diagnostics,
        neurons,
    })
}

/// Entropy-only baseline: `classify` with `lambda = 0`.
pub fn classify_baseline(snapshot: &ActivationSnapshot, config: &IdentifyConfig) -> Result<NeuronClassification> {
    classify(snapshot, &IdentifyConfig { lambda: 0.0, ..*config })
}
