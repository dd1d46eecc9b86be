//! Aggregate views over a classification: layer histograms, shared-count
//! histograms, per-language counts, base-vs-aligned deltas, overlap ratios
//! and the four-stage layer segmentation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::{Label, LabelTotals, NeuronClassification};
use crate::snapshot::NeuronId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerHistogram {
    pub layers: Vec<LabelTotals>,
}

impl LayerHistogram {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,specific,related,agnostic,unselected\n");
        for (i, c) in self.layers.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{},{}", c.specific, c.related, c.agnostic, c.unselected);
        }
        out
    }
}

pub fn layer_histogram(c: &NeuronClassification) -> LayerHistogram {
    let mut layers = vec![LabelTotals::default(); c.n_layers];
    for r in &c.neurons {
        layers[r.layer].bump(r.label);
    }
    LayerHistogram { layers }
}

/// Counts of labelled neurons by the number of languages they are active
/// in; entry `N - 1` holds `N = 1..=l`.
pub fn shared_count_histogram(c: &NeuronClassification) -> Vec<usize> {
    let mut out = vec![0; c.n_langs()];
    for r in &c.neurons {
        if r.label != Label::Unselected && r.n_active > 0 {
            out[r.n_active - 1] += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageCounts {
    pub specific: usize,
    pub related: usize,
}

/// A Related neuron counts once toward every language it is active in.
pub fn per_language_counts(c: &NeuronClassification) -> Vec<LanguageCounts> {
    let mut out = vec![LanguageCounts::default(); c.n_langs()];
    for r in &c.neurons {
        let slot = match r.label {
            Label::Specific => |lc: &mut LanguageCounts| lc.specific += 1,
            Label::Related => |lc: &mut LanguageCounts| lc.related += 1,
            _ => continue,
        };
        for k in r.active_languages() {
            slot(&mut out[k]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDelta {
    pub specific: i64,
    pub related: i64,
    pub agnostic: i64,
    pub unselected: i64,
}

impl LabelDelta {
    fn between(base: &LabelTotals, aligned: &LabelTotals) -> Self {
        let d = |l: Label| aligned.get(l) as i64 - base.get(l) as i64;
        Self {
            specific: d(Label::Specific),
            related: d(Label::Related),
            agnostic: d(Label::Agnostic),
            unselected: d(Label::Unselected),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageDelta {
    pub specific: i64,
    pub related: i64,
}

/// Element-wise `aligned - base`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffReport {
    pub layers: Vec<LabelDelta>,
    pub totals: LabelDelta,
    /// Entry `N - 1` for `N = 1..=l`.
    pub shared: Vec<i64>,
    pub per_language: Vec<LanguageDelta>,
}

impl DiffReport {
    pub fn negated(&self) -> Self {
        let neg = |d: &LabelDelta| LabelDelta {
            specific: -d.specific,
            related: -d.related,
            agnostic: -d.agnostic,
            unselected: -d.unselected,
        };
        Self {
            layers: self.layers.iter().map(neg).collect(),
            totals: neg(&self.totals),
            shared: self.shared.iter().map(|x| -x).collect(),
            per_language: self
                .per_language
                .iter()
                .map(|d| LanguageDelta {
                    specific: -d.specific,
                    related: -d.related,
                })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == self.negated()
    }

    pub fn layers_csv(&self) -> String {
        let mut out = String::from("layer,d_specific,d_related,d_agnostic,d_unselected\n");
        for (i, d) in self.layers.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{},{}", d.specific, d.related, d.agnostic, d.unselected);
        }
        out
    }
}

pub fn diff(base: &NeuronClassification, aligned: &NeuronClassification) -> Result<DiffReport> {
    if base.n_layers != aligned.n_layers || base.n_neurons_per_layer != aligned.n_neurons_per_layer {
        return Err(Error::Comparability(format!(
            "dims {}x{} vs {}x{}",
            base.n_layers, base.n_neurons_per_layer, aligned.n_layers, aligned.n_neurons_per_layer
        )));
    }
    if base.languages != aligned.languages {
        return Err(Error::Comparability("language lists differ".into()));
    }
    let (hb, ha) = (layer_histogram(base), layer_histogram(aligned));
    let layers = hb
        .layers
        .iter()
        .zip(&ha.layers)
        .map(|(b, a)| LabelDelta::between(b, a))
        .collect();
    let shared = shared_count_histogram(base)
        .into_iter()
        .zip(shared_count_histogram(aligned))
        .map(|(b, a)| a as i64 - b as i64)
        .collect();
    let per_language = per_language_counts(base)
        .into_iter()
        .zip(per_language_counts(aligned))
        .map(|(b, a)| LanguageDelta {
            specific: a.specific as i64 - b.specific as i64,
            related: a.related as i64 - b.related as i64,
        })
        .collect();
    Ok(DiffReport {
        layers,
        totals: LabelDelta::between(&base.totals, &aligned.totals),
        shared,
        per_language,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fiducial {
    A,
    B,
}

/// `|a ∩ b| / |fiducial|`.
pub fn overlap_ratio(a: &BTreeSet<NeuronId>, b: &BTreeSet<NeuronId>, fiducial: Fiducial) -> Result<f64> {
    let denom = match fiducial {
        Fiducial::A => a.len(),
        Fiducial::B => b.len(),
    };
    if denom == 0 {
        return Err(Error::UndefinedRatio("fiducial set is empty".into()));
    }
    Ok(a.intersection(b).count() as f64 / denom as f64)
}

/// Inclusive layer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSegmentation {
    pub understanding: LayerRange,
    pub shared_reasoning: LayerRange,
    pub output_transformation: LayerRange,
    pub vocab_output: LayerRange,
    /// Set when the profile has no dip-and-rise shape and fallback ranges were used.
    pub degenerate: bool,
    /// Per-layer `(Specific + Related) / (Specific + Related + Agnostic + 1)`.
    pub dominance: Vec<f64>,
    pub threshold: f64,
}

impl StageSegmentation {
    pub fn stages(&self) -> [(&'static str, LayerRange); 4] {
        [
            ("understanding", self.understanding),
            ("shared_reasoning", self.shared_reasoning),
            ("output_transformation", self.output_transformation),
            ("vocab_output", self.vocab_output),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,start,end\n");
        for (name, r) in self.stages() {
            let _ = writeln!(out, "{name},{},{}", r.start, r.end);
        }
        out
    }
}

/// Splits layers into understanding / shared reasoning / output
/// transformation / vocabulary output from the language-dominance profile.
///
/// The last layer is always the vocabulary stage. With `theta` half the
/// largest dominance among the other layers, understanding is the longest
/// prefix with dominance `>= theta`, output transformation the longest
/// suffix of the remaining layers with dominance `>= theta`, and shared
/// reasoning what lies between. If either flank is empty or nothing is
/// left between them, understanding and output transformation get one
/// layer each and the result is flagged degenerate.
pub fn stage_segmentation(hist: &LayerHistogram) -> Result<StageSegmentation> {
    let n = hist.n_layers();
    if n < 4 {
        return Err(Error::Shape(format!("stage segmentation needs >= 4 layers, got {n}")));
    }
    let dominance: Vec<f64> = hist
        .layers
        .iter()
        .map(|c| {
            let lang = (c.specific + c.related) as f64;
            lang / (lang + c.agnostic as f64 + 1.0)
        })
        .collect();
    let last = n - 1;
    let max = dominance[..last].iter().copied().fold(0.0, f64::max);
    let threshold = 0.5 * max;
    let above = |i: usize| max > 0.0 && dominance[i] >= threshold;
    let prefix = (0..last).take_while(|&i| above(i)).count();
    let suffix = (prefix..last).rev().take_while(|&i| above(i)).count();
    let middle = last - prefix - suffix;
    let (understanding, output, degenerate) = if prefix == 0 || suffix == 0 || middle == 0 {
        (LayerRange::new(0, 0), LayerRange::new(last - 1, last - 1), true)
    } else {
        (LayerRange::new(0, prefix - 1), LayerRange::new(last - suffix, last - 1), false)
    };
    Ok(StageSegmentation {
        understanding,
        shared_reasoning: LayerRange::new(understanding.end + 1, output.start - 1),
        output_transformation: output,
        vocab_output: LayerRange::new(last, last),
        degenerate,
        dominance,
        threshold,
    })
}
