//! Python bindings: snapshots, classification, analysis, ablation and the toy
//! model pipeline. Structured results are returned as plain dicts and lists.

use std::collections::BTreeSet;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use langneuron_core::ablation::{ppl_matrix, MaskScope};
use langneuron_core::analysis::{self, Fiducial};
use langneuron_core::corpus::{draw_probe, generate_corpus, Corpus, CorpusConfig, Sentence};
use langneuron_core::heatmap::render_heatmap;
use langneuron_core::identify::{self, IdentifyConfig, NeuronClassification};
use langneuron_core::snapshot::{self, default_languages, ActivationSnapshot, LanguageId, NeuronId};
use langneuron_core::toylm::{self, DeactivationMask, DpoConfig, DpoTerms, ToyLMConfig, TrainConfig};
use langneuron_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for langneuron_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Converts any serializable value into Python objects via JSON.
fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_json<T: serde::de::DeserializeOwned>(text: Option<&str>) -> PyResult<Option<T>> {
    text.map(|t| serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())))
        .transpose()
}

/// Per-language activation probabilities of one model on one dataset.
#[pyclass(name = "Snapshot", module = "langneuron", frozen, from_py_object)]
#[derive(Clone)]
struct PySnapshot {
    inner: ActivationSnapshot,
}

#[pymethods]
impl PySnapshot {
    #[new]
    #[pyo3(signature = (probs, n_layers, n_neurons, token_counts, languages=None, model_id="model", dataset_id="dataset"))]
    fn new(
        probs: Vec<f64>,
        n_layers: usize,
        n_neurons: usize,
        token_counts: Vec<u64>,
        languages: Option<Vec<String>>,
        model_id: &str,
        dataset_id: &str,
    ) -> PyResult<Self> {
        let langs = match languages {
            Some(codes) => codes.into_iter().enumerate().map(|(i, c)| LanguageId::new(i, c)).collect(),
            None => default_languages(token_counts.len()),
        };
        let inner = ActivationSnapshot::new(model_id, dataset_id, langs, n_layers, n_neurons, probs, token_counts).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: snapshot::read_snapshot(path).py()?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        snapshot::write_snapshot(&self.inner, path).py()
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: ActivationSnapshot::from_naps_bytes(data).py()?,
        })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &self.inner.to_naps_bytes().py()?))
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.n_layers()
    }

    #[getter]
    fn n_neurons(&self) -> usize {
        self.inner.n_neurons_per_layer()
    }

    #[getter]
    fn languages(&self) -> Vec<String> {
        self.inner.languages().iter().map(|l| l.code.clone()).collect()
    }

    #[getter]
    fn token_counts(&self) -> Vec<u64> {
        self.inner.token_counts().to_vec()
    }

    #[getter]
    fn model_id(&self) -> String {
        self.inner.model_id().to_string()
    }

    #[getter]
    fn dataset_id(&self) -> String {
        self.inner.dataset_id().to_string()
    }

    /// Flat probabilities, layer-major with language contiguous.
    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    fn prob(&self, layer: usize, neuron: usize, language: usize) -> PyResult<f64> {
        let s = &self.inner;
        if layer >= s.n_layers() || neuron >= s.n_neurons_per_layer() || language >= s.n_langs() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(s.prob(layer, neuron, language))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Snapshot(model_id={:?}, layers={}, neurons={}, languages={:?})",
            self.inner.model_id(),
            self.inner.n_layers(),
            self.inner.n_neurons_per_layer(),
            self.languages()
        )
    }
}

#[pyfunction]
fn merge_snapshots(parts: Vec<PySnapshot>) -> PyResult<PySnapshot> {
    let parts: Vec<ActivationSnapshot> = parts.into_iter().map(|p| p.inner).collect();
    Ok(PySnapshot {
        inner: snapshot::merge_snapshots(&parts).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (p, lambda_=0.04))]
fn score_neuron(p: Vec<f64>, lambda_: f64) -> PyResult<f64> {
    identify::score_neuron(&p, lambda_).py()
}

/// Per-neuron labels of one snapshot.
#[pyclass(name = "Classification", module = "langneuron", frozen)]
struct PyClassification {
    inner: NeuronClassification,
}

#[pymethods]
impl PyClassification {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: NeuronClassification::load(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).py()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: NeuronClassification::from_json(text).py()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    /// Label counts keyed by label name.
    fn totals(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.totals)
    }

    fn diagnostics(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.diagnostics)
    }

    /// `(layer, index)` of neurons with the given label.
    fn neurons_with_label(&self, label: &str) -> PyResult<Vec<(usize, usize)>> {
        let label: identify::Label =
            serde_json::from_value(serde_json::Value::String(label.to_string())).map_err(|_| {
                PyValueError::new_err(format!("unknown label {label:?}; expected specific, related, agnostic or unselected"))
            })?;
        Ok(self.inner.ids_with_label(label).into_iter().map(|id| (id.layer, id.index)).collect())
    }

    /// Specific and related neurons.
    fn language_neurons(&self) -> Vec<(usize, usize)> {
        self.inner.language_neurons().into_iter().map(|id| (id.layer, id.index)).collect()
    }

    #[getter]
    fn languages(&self) -> Vec<String> {
        self.inner.languages.iter().map(|l| l.code.clone()).collect()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let t = &self.inner.totals;
        format!(
            "Classification(specific={}, related={}, agnostic={}, unselected={})",
            t.specific, t.related, t.agnostic, t.unselected
        )
    }
}

#[pyfunction]
#[pyo3(signature = (snapshot, lambda_=0.04, tau=0.5, pct=0.05))]
fn classify(snapshot: &PySnapshot, lambda_: f64, tau: f64, pct: f64) -> PyResult<PyClassification> {
    let cfg = IdentifyConfig {
        lambda: lambda_,
        tau,
        percentile: pct,
    };
    Ok(PyClassification {
        inner: identify::classify(&snapshot.inner, &cfg).py()?,
    })
}

#[pyfunction]
fn layer_histogram(py: Python<'_>, c: &PyClassification) -> PyResult<Py<PyAny>> {
    to_py(py, &analysis::layer_histogram(&c.inner).layers)
}

#[pyfunction]
fn shared_count_histogram(c: &PyClassification) -> Vec<usize> {
    analysis::shared_count_histogram(&c.inner)
}

#[pyfunction]
fn per_language_counts(py: Python<'_>, c: &PyClassification) -> PyResult<Py<PyAny>> {
    to_py(py, &analysis::per_language_counts(&c.inner))
}

#[pyfunction]
fn diff(py: Python<'_>, base: &PyClassification, aligned: &PyClassification) -> PyResult<Py<PyAny>> {
    to_py(py, &analysis::diff(&base.inner, &aligned.inner).py()?)
}

#[pyfunction]
fn stage_segmentation(py: Python<'_>, c: &PyClassification) -> PyResult<Py<PyAny>> {
    to_py(py, &analysis::stage_segmentation(&analysis::layer_histogram(&c.inner)).py()?)
}

#[pyfunction]
#[pyo3(signature = (a, b, fiducial="a"))]
fn overlap_ratio(a: Vec<(usize, usize)>, b: Vec<(usize, usize)>, fiducial: &str) -> PyResult<f64> {
    let fiducial = match fiducial {
        "a" => Fiducial::A,
        "b" => Fiducial::B,
        other => return Err(PyValueError::new_err(format!("fiducial must be 'a' or 'b', got {other:?}"))),
    };
    let set = |v: Vec<(usize, usize)>| -> BTreeSet<NeuronId> { v.into_iter().map(|(l, i)| NeuronId::new(l, i)).collect() };
    analysis::overlap_ratio(&set(a), &set(b), fiducial).py()
}

/// Mean DPO loss over `(policy_chosen, policy_rejected, ref_chosen, ref_rejected)` rows.
#[pyfunction]
#[pyo3(signature = (batch, beta=0.1))]
fn dpo_loss(batch: Vec<(f64, f64, f64, f64)>, beta: f64) -> PyResult<f64> {
    let terms: Vec<DpoTerms> = batch
        .into_iter()
        .map(|(pc, pr, rc, rr)| DpoTerms {
            policy_chosen: pc,
            policy_rejected: pr,
            ref_chosen: rc,
            ref_rejected: rr,
        })
        .collect();
    toylm::dpo_loss(&terms, beta).py()
}

#[pyfunction]
#[pyo3(signature = (values, row_labels, col_labels, title="PPL ratio"))]
fn heatmap_svg(values: Vec<Vec<f64>>, row_labels: Vec<String>, col_labels: Vec<String>, title: &str) -> PyResult<String> {
    render_heatmap(title, &row_labels, &col_labels, &values).py()
}

/// Synthetic parallel corpus with train, eval and probe splits.
#[pyclass(name = "Corpus", module = "langneuron", frozen)]
struct PyCorpus {
    inner: Corpus,
    probe: Vec<Sentence>,
}

#[pymethods]
impl PyCorpus {
    /// `config_json` overrides fields of the default (or 4-language preset) config.
    #[new]
    #[pyo3(signature = (seed=42, preset="ablation", config_json=None))]
    fn new(seed: u64, preset: &str, config_json: Option<&str>) -> PyResult<Self> {
        let mut cfg = match from_json::<CorpusConfig>(config_json)? {
            Some(c) => c,
            None => match preset {
                "ablation" => CorpusConfig::ablation_preset(seed),
                "default" => CorpusConfig::default(),
                other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
            },
        };
        cfg.seed = seed;
        let inner = generate_corpus(&cfg).py()?;
        let probe = draw_probe(&cfg, cfg.n_eval_per_lang).py()?;
        Ok(Self { inner, probe })
    }

    #[getter]
    fn n_langs(&self) -> usize {
        self.inner.config.n_langs
    }

    #[getter]
    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// `(language, template, tokens)` rows of one split.
    fn sentences(&self, split: &str) -> PyResult<Vec<(usize, usize, Vec<u32>)>> {
        Ok(self
            .split(split)?
            .iter()
            .map(|s| (s.language, s.template_id, s.tokens.clone()))
            .collect())
    }
}

impl PyCorpus {
    fn split(&self, name: &str) -> PyResult<&[Sentence]> {
        match name {
            "train" => Ok(&self.inner.train),
            "eval" => Ok(&self.inner.eval),
            "probe" => Ok(&self.probe),
            other => Err(PyValueError::new_err(format!(
                "unknown split {other:?}; expected train, eval or probe"
            ))),
        }
    }
}

/// The toy SiLU-gated language model.
#[pyclass(name = "ToyLM", module = "langneuron")]
struct PyToyLM {
    inner: toylm::ToyLM,
}

fn parse_mask(mask: Option<Vec<(usize, usize)>>) -> Option<DeactivationMask> {
    mask.map(|ids| ids.into_iter().map(|(l, i)| NeuronId::new(l, i)).collect())
}

#[pymethods]
impl PyToyLM {
    #[new]
    #[pyo3(signature = (seed=42, config_json=None))]
    fn new(seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let mut cfg = from_json::<ToyLMConfig>(config_json)?.unwrap_or_default();
        cfg.seed = seed;
        Ok(Self {
            inner: toylm::ToyLM::new(cfg).py()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: toylm::load_checkpoint(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        toylm::save_checkpoint(&self.inner, path).py()
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.n_layers()
    }

    #[getter]
    fn ffn_width(&self) -> usize {
        self.inner.ffn_width()
    }

    /// Trains in place on the corpus train split; returns the logged
    /// `(step, mean loss)` pairs.
    #[pyo3(signature = (corpus, steps=3000, seed=42, batch_size=32))]
    fn train(
        &mut self,
        py: Python<'_>,
        corpus: &PyCorpus,
        steps: usize,
        seed: u64,
        batch_size: usize,
    ) -> PyResult<Vec<(usize, f64)>> {
        let cfg = TrainConfig {
            steps,
            seed,
            batch_size,
            ..TrainConfig::default()
        };
        let model = &mut self.inner;
        let report = py.detach(|| toylm::train(model, &corpus.inner.train, &cfg)).py()?;
        Ok(report.logged)
    }

    /// Per-language perplexity on a corpus split, optionally with neurons
    /// `(layer, index)` deactivated.
    #[pyo3(signature = (corpus, split="probe", mask=None))]
    fn perplexity(
        &self,
        py: Python<'_>,
        corpus: &PyCorpus,
        split: &str,
        mask: Option<Vec<(usize, usize)>>,
    ) -> PyResult<std::collections::BTreeMap<usize, f64>> {
        let sentences = corpus.split(split)?;
        let mask = parse_mask(mask);
        py.detach(|| toylm::perplexity(&self.inner, sentences, mask.as_ref())).py()
    }

    #[pyo3(signature = (corpus, split="train"))]
    fn collect(&self, py: Python<'_>, corpus: &PyCorpus, split: &str) -> PyResult<PySnapshot> {
        let sentences = corpus.split(split)?;
        let n = corpus.inner.config.n_langs;
        let inner = py.detach(|| toylm::collect_probs(&self.inner, sentences, n)).py()?;
        Ok(PySnapshot { inner })
    }

    /// Ablation matrix as a dict with base/masked PPL, ratios and dominance metrics.
    #[pyo3(signature = (classification, corpus, split="probe", scope="language"))]
    fn ablate(
        &self,
        py: Python<'_>,
        classification: &PyClassification,
        corpus: &PyCorpus,
        split: &str,
        scope: &str,
    ) -> PyResult<Py<PyAny>> {
        let scope: MaskScope = scope.parse().py()?;
        let sentences = corpus.split(split)?;
        let m = py
            .detach(|| ppl_matrix(&self.inner, &classification.inner, sentences, scope))
            .py()?;
        let dominance = m.dominance().py()?;
        to_py(
            py,
            &serde_json::json!({ "matrix": m, "dominance": dominance }),
        )
    }

    /// DPO fine-tunes a copy on sampled preference pairs; returns
    /// `(aligned_model, losses)`.
    #[pyo3(signature = (corpus, pairs_per_language=64, steps=None, seed=42))]
    fn align(
        &self,
        py: Python<'_>,
        corpus: &PyCorpus,
        pairs_per_language: usize,
        steps: Option<usize>,
        seed: u64,
    ) -> PyResult<(PyToyLM, Vec<f64>)> {
        let mut cfg = DpoConfig {
            seed,
            ..DpoConfig::default()
        };
        if let Some(s) = steps {
            cfg.steps = s;
        }
        let (aligned, report) = py
            .detach(|| {
                let pairs = toylm::build_preference_pairs(&self.inner, &corpus.inner, pairs_per_language, seed)?;
                toylm::dpo_finetune(&self.inner, &pairs.pairs, &cfg)
            })
            .py()?;
        Ok((PyToyLM { inner: aligned }, report.losses))
    }
}

#[pymodule]
fn langneuron(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySnapshot>()?;
    m.add_class::<PyClassification>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyToyLM>()?;
    m.add_function(wrap_pyfunction!(merge_snapshots, m)?)?;
    m.add_function(wrap_pyfunction!(score_neuron, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(layer_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(shared_count_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(per_language_counts, m)?)?;
    m.add_function(wrap_pyfunction!(diff, m)?)?;
    m.add_function(wrap_pyfunction!(stage_segmentation, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(dpo_loss, m)?)?;
    m.add_function(wrap_pyfunction!(heatmap_svg, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
