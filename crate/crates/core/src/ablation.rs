//! Deactivation ablation: per-language masks built from a classification
//! and the mask-language x eval-language perplexity-ratio matrix.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::identify::{Label, NeuronClassification};
use crate::snapshot::LanguageId;
use crate::toylm::{perplexity, DeactivationMask, ToyLM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    /// Specific neurons of the language.
    SpecificOnly,
    /// Specific neurons plus every Related neuron active for the language.
    LanguageNeurons,
    /// Every Agnostic neuron; the language is ignored.
    AgnosticOnly,
}

impl MaskScope {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskScope::SpecificOnly => "specific",
            MaskScope::LanguageNeurons => "language",
            MaskScope::AgnosticOnly => "agnostic",
        }
    }
}

impl std::str::FromStr for MaskScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "specific" => Ok(MaskScope::SpecificOnly),
            "language" => Ok(MaskScope::LanguageNeurons),
            "agnostic" => Ok(MaskScope::AgnosticOnly),
            other => Err(Error::Parameter(format!(
                "unknown scope {other:?} (expected specific|language|agnostic)"
            ))),
        }
    }
}

pub fn build_mask(c: &NeuronClassification, language: usize, scope: MaskScope) -> Result<DeactivationMask> {
    if language >= c.n_langs() {
        return Err(Error::Parameter(format!(
            "language {language} outside 0..{}",
            c.n_langs()
        )));
    }
    let keep = |label: Label, active: bool| match scope {
        MaskScope::SpecificOnly => label == Label::Specific && active,
        MaskScope::LanguageNeurons => matches!(label, Label::Specific | Label::Related) && active,
        MaskScope::AgnosticOnly => label == Label::Agnostic,
    };
    Ok(c.neurons
        .iter()
        .filter(|r| keep(r.label, r.is_active_for(language)))
        .map(|r| r.id())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplMatrix {
    pub scope: MaskScope,
    pub languages: Vec<LanguageId>,
    pub base_ppl: Vec<f64>,
    /// `[mask language][eval language]`
    pub masked_ppl: Vec<Vec<f64>>,
    /// `masked / base`, same indexing.
    pub ratio: Vec<Vec<f64>>,
    pub mask_sizes: Vec<usize>,
}

impl PplMatrix {
    pub fn from_parts(
        scope: MaskScope,
        languages: Vec<LanguageId>,
        base_ppl: Vec<f64>,
        masked_ppl: Vec<Vec<f64>>,
        mask_sizes: Vec<usize>,
    ) -> Self {
        let ratio = masked_ppl
            .iter()
            .map(|row| row.iter().zip(&base_ppl).map(|(m, b)| m / b).collect())
            .collect();
        Self {
            scope,
            languages,
            base_ppl,
            masked_ppl,
            ratio,
            mask_sizes,
        }
    }

    pub fn dominance(&self) -> Result<DominanceMetrics> {
        dominance_metrics(&self.ratio)
    }

    /// Ratio table: header row of eval languages, first column the mask language.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mask");
        for l in &self.languages {
            let _ = write!(out, ",{}", l.code);
        }
        out.push('\n');
        for (l, row) in self.languages.iter().zip(&self.ratio) {
            out.push_str(&l.code);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?;
        let cols: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let vals = line
                .split(',')
                .skip(1)
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("row {}: bad number {v:?}", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != cols.len() {
                return Err(Error::Format(format!("row {} has {} values, header has {}", i + 1, vals.len(), cols.len())));
            }
            rows.push(vals);
        }
        Ok((cols, rows))
    }
}

/// Base and per-mask-language perplexities on `eval`.
pub fn ppl_matrix(model: &ToyLM, c: &NeuronClassification, eval: &[Sentence], scope: MaskScope) -> Result<PplMatrix> {
    if c.n_layers != model.n_layers() || c.n_neurons_per_layer != model.ffn_width() {
        return Err(Error::Parameter(format!(
            "classification dims {}x{} do not match model {}x{}",
            c.n_layers,
            c.n_neurons_per_layer,
            model.n_layers(),
            model.ffn_width()
        )));
    }
    let l = c.n_langs();
    let per_lang = |ppl: std::collections::BTreeMap<usize, f64>| -> Result<Vec<f64>> {
        (0..l)
            .map(|k| {
                ppl.get(&k)
                    .copied()
                    .ok_or_else(|| Error::EmptyInput(format!("no eval sentences for language {k}")))
            })
            .collect()
    };
    let base = per_lang(perplexity(model, eval, None)?)?;
    let mut masked = Vec::with_capacity(l);
    let mut sizes = Vec::with_capacity(l);
    for k in 0..l {
        let mask = build_mask(c, k, scope)?;
        sizes.push(mask.len());
        log::debug!("ablation {}: language {k}, {} neurons masked", scope.as_str(), mask.len());
        masked.push(per_lang(perplexity(model, eval, Some(&mask))?)?);
    }
    Ok(PplMatrix::from_parts(scope, c.languages.clone(), base, masked, sizes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceMetrics {
    /// Rows whose diagonal is strictly the largest entry.
    pub diag_argmax_hits: usize,
    pub mean_diag_ratio: f64,
    pub mean_offdiag_ratio: f64,
    /// Some row's maximum is shared by several columns.
    pub degenerate: bool,
}

/// A row counts as a hit only when its diagonal strictly exceeds every
/// off-diagonal entry; ties are misses.
pub fn dominance_metrics(ratio: &[Vec<f64>]) -> Result<DominanceMetrics> {
    let n = ratio.len();
    if n == 0 || ratio.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("ratio matrix must be square and non-empty, got {n} rows")));
    }
    let mut hits = 0;
    let mut degenerate = false;
    let mut diag = 0.0;
    let mut off = 0.0;
    for (k, row) in ratio.iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if row.iter().filter(|&&v| v == max).count() > 1 {
            degenerate = true;
        }
        if row.iter().enumerate().all(|(j, &v)| j == k || row[k] > v) {
            hits += 1;
        }
        diag += row[k];
        off += row.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, v)| v).sum::<f64>();
    }
    let mean_offdiag_ratio = if n > 1 { off / (n * (n - 1)) as f64 } else { f64::NAN };
    Ok(DominanceMetrics {
        diag_argmax_hits: hits,
        mean_diag_ratio: diag / n as f64,
        mean_offdiag_ratio,
        degenerate,
    })
}
