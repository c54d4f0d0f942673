//! Built-in baseline classifier and prediction tables.
//!
//! The classifier is logistic regression over hashed word unigrams and
//! bigrams, trained by seeded SGD. Feature values are sublinear term
//! frequencies (`1 + ln count`) scaled to unit L2 norm per document.
//!
//! [`PredictionTable`] is the common currency downstream: predictions from
//! the built-in model and predictions imported from CSV files are
//! interchangeable.

use std::collections::BTreeMap;
use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::tokenize;
use crate::corpus::{Corpus, Document, Label, Split};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

pub const DEFAULT_BITS: u8 = 18;

/// Sparse hashed n-gram counts, sorted by bucket index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub bits: u8,
    pub entries: Vec<(u32, u32)>,
}

impl FeatureVector {
    pub fn count(&self, index: u32) -> u32 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0, |pos| self.entries[pos].1)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(index, value)` pairs with sublinear tf and unit L2 norm.
    fn weighted(&self) -> Vec<(u32, f64)> {
        let raw: Vec<(u32, f64)> = self
            .entries
            .iter()
            .map(|&(i, c)| (i, 1.0 + (c as f64).ln()))
            .collect();
        let norm = raw.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return raw;
        }
        raw.into_iter().map(|(i, v)| (i, v / norm)).collect()
    }
}

/// 64-bit FNV-1a of `bytes`, masked to `bits`.
pub fn bucket(bytes: &[u8], bits: u8) -> u32 {
    let mut hasher = FnvHasher::default();
    hasher.write(bytes);
    (hasher.finish() & ((1u64 << bits) - 1)) as u32
}

/// Lowercased unigrams and space-joined bigrams, hashed into `2^bits` buckets.
pub fn featurize(text: &str, bits: u8) -> FeatureVector {
    assert!((1..=31).contains(&bits), "hashing bits must be in 1..=31");
    let tokens: Vec<String> = tokenize(text).into_vec().into_iter().map(|t| t.to_lowercase()).collect();
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    for token in &tokens {
        *counts.entry(bucket(token.as_bytes(), bits)).or_default() += 1;
    }
    for pair in tokens.windows(2) {
        let bigram = format!("{} {}", pair[0], pair[1]);
        *counts.entry(bucket(bigram.as_bytes(), bits)).or_default() += 1;
    }
    FeatureVector {
        bits,
        entries: counts.into_iter().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LearningRateSchedule {
    Constant,
    /// Decays linearly from the initial rate towards zero over all steps.
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub bits: u8,
    pub epochs: usize,
    pub learning_rate: f64,
    pub schedule: LearningRateSchedule,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bits: DEFAULT_BITS,
            epochs: 5,
            learning_rate: 0.1,
            schedule: LearningRateSchedule::Linear,
            l2: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> Result<()> {
        if !(1..=31).contains(&self.bits) {
            return Err(Error::InvalidConfig(format!("bits {} not in 1..=31", self.bits)));
        }
        if self.epochs == 0 || !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::InvalidConfig(
                "epochs and learning rate must be positive, l2 nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Anything that maps text to a probability of the positive class.
pub trait Classifier: Sync {
    fn predict_proba(&self, text: &str) -> f64;
}

impl<F: Fn(&str) -> f64 + Sync> Classifier for F {
    fn predict_proba(&self, text: &str) -> f64 {
        self(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub bits: u8,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    bits: u8,
    bias: f64,
    config: TrainConfig,
    /// Nonzero weights as `[index, value]`, ascending by index.
    weights: Vec<(u32, f64)>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearModel {
    pub fn zeros(config: TrainConfig) -> Self {
        LinearModel {
            bits: config.bits,
            weights: vec![0.0; 1 << config.bits],
            bias: 0.0,
            config,
        }
    }

    pub fn score(&self, features: &FeatureVector) -> f64 {
        features
            .weighted()
            .iter()
            .map(|&(i, v)| self.weights[i as usize] * v)
            .sum::<f64>()
            + self.bias
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = ModelFile {
            bits: self.bits,
            bias: self.bias,
            config: self.config.clone(),
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, &w)| (i as u32, w))
                .collect(),
        };
        let json = serde_json::to_vec(&file)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_slice(&bytes)?;
        let mut weights = vec![0.0; 1usize << file.bits];
        for (i, w) in file.weights {
            *weights
                .get_mut(i as usize)
                .ok_or_else(|| Error::InvalidArgument(format!("weight index {i} out of range")))? = w;
        }
        Ok(LinearModel {
            bits: file.bits,
            weights,
            bias: file.bias,
            config: file.config,
        })
    }
}

impl Classifier for LinearModel {
    fn predict_proba(&self, text: &str) -> f64 {
        predict(self, text)
    }
}

pub fn predict(model: &LinearModel, text: &str) -> f64 {
    sigmoid(model.score(&featurize(text, model.bits)))
}

/// Fits logistic regression on the labeled training documents of `corpus`.
///
/// Single-threaded SGD; each epoch visits the documents in an order drawn
/// from `config.seed`, so identical inputs give bit-identical weights.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<LinearModel> {
    config.validate()?;
    let docs: Vec<&Document> = corpus
        .in_split(Split::Train)
        .filter(|d| d.label != Label::Unlabeled)
        .collect();
    let positives = docs.iter().filter(|d| d.label == Label::Positive).count();
    let negatives = docs.len() - positives;
    if positives == 0 || negatives == 0 || docs.len() < 2 {
        return Err(Error::SingleClass { positives, negatives });
    }

    let examples: Vec<(Vec<(u32, f64)>, f64)> = docs
        .par_iter()
        .map(|d| {
            let target = if d.label == Label::Positive { 1.0 } else { 0.0 };
            (featurize(&d.text, config.bits).weighted(), target)
        })
        .collect();

    let mut v = vec![0.0f64; 1 << config.bits];
    let mut scale = 1.0f64;
    let mut bias = 0.0f64;
    let total_steps = (config.epochs * examples.len()) as f64;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng(derive_seed(config.seed, &[b"epoch", &(epoch as u64).to_le_bytes()])));
        for &i in &order {
            let lr = match config.schedule {
                LearningRateSchedule::Constant => config.learning_rate,
                LearningRateSchedule::Linear => config.learning_rate * (1.0 - step as f64 / total_steps),
            };
            step += 1;
            let (features, target) = &examples[i];
            let z = scale * features.iter().map(|&(j, x)| v[j as usize] * x).sum::<f64>() + bias;
            let gradient = sigmoid(z) - target;

            scale *= 1.0 - lr * config.l2;
            for &(j, x) in features {
                v[j as usize] -= lr * gradient * x / scale;
            }
            bias -= lr * gradient;

            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
    }
    v.iter_mut().for_each(|w| *w *= scale);
    Ok(LinearModel {
        bits: config.bits,
        weights: v,
        bias,
        config: config.clone(),
    })
}

/// Probabilities of the positive class per `(source, document)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    by_source: BTreeMap<String, BTreeMap<String, f64>>,
}

fn check_probability(p: f64) -> std::result::Result<(), String> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(format!("probability {p} outside [0, 1]"))
    }
}

impl PredictionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, source_id: &str, p: f64) -> Result<()> {
        let doc_id = doc_id.into();
        check_probability(p).map_err(|message| Error::InvalidArgument(format!("{doc_id}: {message}")))?;
        let source = self.by_source.entry(source_id.to_string()).or_default();
        if source.contains_key(&doc_id) {
            return Err(Error::DuplicatePrediction {
                doc_id,
                source_id: source_id.to_string(),
            });
        }
        source.insert(doc_id, p);
        Ok(())
    }

    pub fn get(&self, doc_id: &str, source_id: &str) -> Option<f64> {
        self.by_source.get(source_id)?.get(doc_id).copied()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.by_source.keys().map(String::as_str)
    }

    pub fn has_source(&self, source_id: &str) -> bool {
        self.by_source.contains_key(source_id)
    }

    /// Predictions of one source, ordered by document id.
    pub fn source(&self, source_id: &str) -> Option<&BTreeMap<String, f64>> {
        self.by_source.get(source_id)
    }

    pub fn len(&self) -> usize {
        self.by_source.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds every entry of `other`; overlapping `(doc, source)` pairs are an error.
    pub fn merge(&mut self, other: PredictionTable) -> Result<()> {
        for (source, rows) in other.by_source {
            for (doc, p) in rows {
                self.insert(doc, &source, p)?;
            }
        }
        Ok(())
    }

    /// Copy of one source under a new name.
    pub fn renamed(&self, source_id: &str, new_id: &str) -> Result<PredictionTable> {
        let rows = self
            .by_source
            .get(source_id)
            .ok_or_else(|| Error::UnknownSource(source_id.to_string()))?;
        let mut table = PredictionTable::new();
        table.by_source.insert(new_id.to_string(), rows.clone());
        Ok(table)
    }

    /// Writes one source as `doc_id,p_positive` CSV.
    pub fn write_csv(&self, source_id: &str, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let rows = self
            .by_source
            .get(source_id)
            .ok_or_else(|| Error::UnknownSource(source_id.to_string()))?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        writer.write_record(["doc_id", "p_positive"])?;
        for (doc, p) in rows {
            writer.write_record([doc.as_str(), &p.to_string()])?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a `doc_id,p_positive` CSV as the predictions of `source_id`.
///
/// Rows are numbered from 1 after the header. Unknown document ids are
/// accepted here and reported when tables are joined.
pub fn import_predictions(path: impl AsRef<Path>, source_id: &str) -> Result<PredictionTable> {
    let path = path.as_ref();
    let row_err = |row: usize, message: String| Error::InvalidPrediction {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["doc_id", "p_positive"] {
        return Err(row_err(0, "expected header `doc_id,p_positive`".into()));
    }
    let mut table = PredictionTable::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| row_err(row, e.to_string()))?;
        let (doc_id, raw) = (&record[0], record[1].trim());
        let p: f64 = raw.parse().map_err(|_| row_err(row, format!("unparseable probability `{raw}`")))?;
        check_probability(p).map_err(|m| row_err(row, m))?;
        table.insert(doc_id, source_id, p)?;
    }
    Ok(table)
}

/// Runs `classifier` over `docs` in parallel, recording them under `source_id`.
pub fn predict_documents<'a>(
    classifier: &dyn Classifier,
    docs: impl IntoIterator<Item = &'a Document>,
    source_id: &str,
) -> Result<PredictionTable> {
    let docs: Vec<&Document> = docs.into_iter().collect();
    let probabilities: Vec<f64> = docs.par_iter().map(|d| classifier.predict_proba(&d.text)).collect();
    let mut table = PredictionTable::new();
    for (doc, p) in docs.iter().zip(probabilities) {
        table.insert(doc.id.clone(), source_id, p)?;
    }
    Ok(table)
}

/// Fraction of labeled documents in `docs` classified correctly (`p > 0.5` is positive).
pub fn accuracy(classifier: &dyn Classifier, docs: &[&Document]) -> f64 {
    let labeled: Vec<(&Document, bool)> = docs.iter().filter_map(|d| d.label.as_bool().map(|l| (*d, l))).collect();
    if labeled.is_empty() {
        return 0.0;
    }
    let correct = labeled
        .par_iter()
        .filter(|(d, label)| (classifier.predict_proba(&d.text) > 0.5) == *label)
        .count();
    correct as f64 / labeled.len() as f64
}
