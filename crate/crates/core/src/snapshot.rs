//! Activation-probability snapshots and the NAPS v1 file format.
//!
//! A snapshot holds `p[layer][neuron][language]`: the fraction of token
//! positions of a language at which a gate neuron's pre-activation was
//! positive. The tensor is stored layer-major with the language axis
//! contiguous, so a neuron's per-language vector is one slice.
//!
//! NAPS v1 layout (all integers little-endian, no padding):
//!
//! ```text
//! "NAPS" | version u32 = 1 | n_layers u32 | n_neurons u32 | n_langs u32
//! n_langs x (u16 len + utf8 code)
//! model_id (u16 len + utf8) | dataset_id (u16 len + utf8)
//! n_langs x u64 token count
//! n_layers * n_neurons * n_langs x f32 probability
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NAPS_MAGIC: &[u8; 4] = b"NAPS";
pub const NAPS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LanguageId {
    pub index: usize,
    pub code: String,
}

impl LanguageId {
    pub fn new(index: usize, code: impl Into<String>) -> Self {
        Self {
            index,
            code: code.into(),
        }
    }
}

/// Dense language list `L0, L1, ...`.
pub fn default_languages(n: usize) -> Vec<LanguageId> {
    (0..n).map(|i| LanguageId::new(i, format!("L{i}"))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

impl NeuronId {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSnapshot {
    model_id: String,
    dataset_id: String,
    languages: Vec<LanguageId>,
    n_layers: usize,
    n_neurons_per_layer: usize,
    probs: Vec<f64>,
    token_counts: Vec<u64>,
}

impl ActivationSnapshot {
    /// Builds a snapshot, checking every invariant.
    pub fn new(
        model_id: impl Into<String>,
        dataset_id: impl Into<String>,
        languages: Vec<LanguageId>,
        n_layers: usize,
        n_neurons_per_layer: usize,
        probs: Vec<f64>,
        token_counts: Vec<u64>,
    ) -> Result<Self> {
        let snap = Self {
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            languages,
            n_layers,
            n_neurons_per_layer,
            probs,
            token_counts,
        };
        snap.validate()?;
        Ok(snap)
    }

    pub fn validate(&self) -> Result<()> {
        let n_langs = self.languages.len();
        if n_langs == 0 {
            return Err(Error::validation("languages", "at least one language required"));
        }
        let mut codes = HashSet::new();
        for (i, lang) in self.languages.iter().enumerate() {
            if lang.index != i {
                return Err(Error::validation(
                    "languages",
                    format!("language indices must be dense, found {} at position {i}", lang.index),
                ));
            }
            if !codes.insert(lang.code.as_str()) {
                return Err(Error::validation(
                    "languages",
                    format!("duplicate language code {:?}", lang.code),
                ));
            }
            if lang.code.len() > u16::MAX as usize {
                return Err(Error::validation("languages", "language code too long"));
            }
        }
        for (field, s) in [("model_id", &self.model_id), ("dataset_id", &self.dataset_id)] {
            if s.len() > u16::MAX as usize {
                return Err(Error::validation(field, "string longer than 65535 bytes"));
            }
        }
        if self.token_counts.len() != n_langs {
            return Err(Error::validation(
                "token_counts",
                format!("expected {n_langs} entries, got {}", self.token_counts.len()),
            ));
        }
        if let Some(k) = self.token_counts.iter().position(|&c| c == 0) {
            return Err(Error::validation(
                "token_counts",
                format!("token count for language {k} must be > 0"),
            ));
        }
        let expected = self.n_layers * self.n_neurons_per_layer * n_langs;
        if self.probs.len() != expected {
            return Err(Error::validation(
                "probs",
                format!("tensor has {} values, dims imply {expected}", self.probs.len()),
            ));
        }
        for (i, &p) in self.probs.iter().enumerate() {
            if p.is_nan() {
                return Err(Error::validation("probs", format!("NaN at flat index {i}")));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(
                    "probs",
                    format!("probability out of range: {p} at flat index {i}"),
                ));
            }
        }
        Ok(())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn languages(&self) -> &[LanguageId] {
        &self.languages
    }

    pub fn n_langs(&self) -> usize {
        self.languages.len()
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_neurons_per_layer(&self) -> usize {
        self.n_neurons_per_layer
    }

    pub fn n_neurons(&self) -> usize {
        self.n_layers * self.n_neurons_per_layer
    }

    pub fn token_counts(&self) -> &[u64] {
        &self.token_counts
    }

    /// Flat tensor, layer-major then neuron then language.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Per-language probabilities of one neuron.
    pub fn neuron_probs(&self, id: NeuronId) -> &[f64] {
        let l = self.n_langs();
        let start = (id.layer * self.n_neurons_per_layer + id.index) * l;
        &self.probs[start..start + l]
    }

    pub fn prob(&self, layer: usize, neuron: usize, lang: usize) -> f64 {
        self.neuron_probs(NeuronId::new(layer, neuron))[lang]
    }

    /// Iterates `(id, probs)` in (layer, index) order.
    pub fn neurons(&self) -> impl Iterator<Item = (NeuronId, &[f64])> + '_ {
        let per = self.n_neurons_per_layer;
        self.probs
            .chunks_exact(self.n_langs())
            .enumerate()
            .map(move |(flat, p)| (NeuronId::new(flat / per, flat % per), p))
    }

    /// Copy with every probability rounded to the on-disk f32 precision.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.probs {
            *p = f64::from(*p as f32);
        }
        out
    }

    pub fn to_naps_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut buf = Vec::with_capacity(64 + self.probs.len() * 4);
        buf.extend_from_slice(NAPS_MAGIC);
        buf.extend_from_slice(&NAPS_VERSION.to_le_bytes());
        for dim in [self.n_layers, self.n_neurons_per_layer, self.n_langs()] {
            let dim = u32::try_from(dim)
                .map_err(|_| Error::validation("dims", format!("dimension {dim} exceeds u32")))?;
            buf.extend_from_slice(&dim.to_le_bytes());
        }
        for lang in &self.languages {
            put_str(&mut buf, &lang.code);
        }
        put_str(&mut buf, &self.model_id);
        put_str(&mut buf, &self.dataset_id);
        for c in &self.token_counts {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        for &p in &self.probs {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
        Ok(buf)
    }

    pub fn from_naps_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != NAPS_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
        }
        let version = r.u32("version")?;
        if version != NAPS_VERSION {
            return Err(Error::Format(format!("unsupported NAPS version {version}")));
        }
        let n_layers = r.u32("n_layers")? as usize;
        let n_neurons = r.u32("n_neurons_per_layer")? as usize;
        let n_langs = r.u32("n_langs")? as usize;
        let mut languages = Vec::with_capacity(n_langs.min(1024));
        for i in 0..n_langs {
            languages.push(LanguageId::new(i, r.string("language code")?));
        }
        let model_id = r.string("model_id")?;
        let dataset_id = r.string("dataset_id")?;
        let mut token_counts = Vec::with_capacity(n_langs.min(1024));
        for _ in 0..n_langs {
            token_counts.push(r.u64("token_counts")?);
        }
        let n_values = n_layers
            .checked_mul(n_neurons)
            .and_then(|x| x.checked_mul(n_langs))
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        let remaining = bytes.len() - r.pos;
        if remaining < n_values.saturating_mul(4) {
            return Err(Error::Format(format!(
                "truncated payload: expected {} bytes, found {remaining}",
                n_values * 4
            )));
        }
        if remaining > n_values * 4 {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                remaining - n_values * 4
            )));
        }
        let probs = bytes[r.pos..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Self::new(model_id, dataset_id, languages, n_layers, n_neurons, probs, token_counts)
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!("truncated header while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))
    }
}

pub fn write_snapshot(snapshot: &ActivationSnapshot, path: impl AsRef<Path>) -> Result<()> {
    let bytes = snapshot.to_naps_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<ActivationSnapshot> {
    ActivationSnapshot::from_naps_bytes(&fs::read(path)?)
}

/// Token-count-weighted merge of snapshot shards.
///
/// All parts must share model id, dimensions and language list. Each cell of
/// the result is `sum_s c_s[k] p_s / sum_s c_s[k]` for its language `k`.
pub fn merge_snapshots(parts: &[ActivationSnapshot]) -> Result<ActivationSnapshot> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::Merge("no snapshots to merge".into()))?;
    if rest.is_empty() {
        return Ok(first.clone());
    }
    for (i, s) in rest.iter().enumerate() {
        let i = i + 1;
        if s.model_id != first.model_id {
            return Err(Error::Merge(format!(
                "part {i} model_id {:?} differs from {:?}",
                s.model_id, first.model_id
            )));
        }
        if s.n_layers != first.n_layers || s.n_neurons_per_layer != first.n_neurons_per_layer {
            return Err(Error::Merge(format!(
                "part {i} dims {}x{} differ from {}x{} (n_layers x n_neurons)",
                s.n_layers, s.n_neurons_per_layer, first.n_layers, first.n_neurons_per_layer
            )));
        }
        if s.languages != first.languages {
            return Err(Error::Merge(format!("part {i} language list differs")));
        }
    }
    let n_langs = first.n_langs();
    let totals: Vec<u64> = (0..n_langs)
        .map(|k| parts.iter().map(|s| s.token_counts[k]).sum())
        .collect();
    let mut probs = vec![0.0; first.probs.len()];
    for s in parts {
        for (cell, (out, &p)) in probs.iter_mut().zip(&s.probs).enumerate() {
            *out += s.token_counts[cell % n_langs] as f64 * p;
        }
    }
    for (cell, out) in probs.iter_mut().enumerate() {
        *out = (*out / totals[cell % n_langs] as f64).clamp(0.0, 1.0);
    }
    let mut ids: Vec<&str> = Vec::new();
    for s in parts {
        if !ids.contains(&s.dataset_id.as_str()) {
            ids.push(&s.dataset_id);
        }
    }
    ActivationSnapshot::new(
        first.model_id.clone(),
        ids.join("+"),
        first.languages.clone(),
        first.n_layers,
        first.n_neurons_per_layer,
        probs,
        totals,
    )
}
