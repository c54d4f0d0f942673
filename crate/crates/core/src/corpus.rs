//! Canonical document model, dataset ingestion and balanced subsampling.
//!
//! A [`Corpus`] is an ordered, validated collection of [`Document`]s. Two
//! on-disk inputs are supported: the aclImdb directory layout and the JSONL
//! interchange format written by [`export_jsonl`].

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugTechnique;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
    #[serde(rename = "unsup")]
    Unlabeled,
}

impl Label {
    /// `Some(true)` for positive, `Some(false)` for negative.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Label::Positive => Some(true),
            Label::Negative => Some(false),
            Label::Unlabeled => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "pos",
            Label::Negative => "neg",
            Label::Unlabeled => "unsup",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
    Unsup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Original,
    Synthetic {
        technique: AugTechnique,
        lang: Option<String>,
        parent: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub split: Split,
    #[serde(default)]
    pub origin: Origin,
}

impl Document {
    pub fn original(id: impl Into<String>, text: impl Into<String>, label: Label, split: Split) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            label,
            split,
            origin: Origin::Original,
        }
    }

    pub fn is_original(&self) -> bool {
        matches!(self.origin, Origin::Original)
    }

    pub fn parent_id(&self) -> Option<&str> {
        match &self.origin {
            Origin::Original => None,
            Origin::Synthetic { parent, .. } => Some(parent),
        }
    }
}

/// An ordered collection of documents with unique ids.
///
/// Construction validates the document invariants: labels agree with
/// splits, every synthetic document points at an original in the same
/// corpus and carries its parent's label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(documents.len());
        for (position, doc) in documents.iter().enumerate() {
            if index.insert(doc.id.clone(), position).is_some() {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
        }
        let corpus = Corpus { documents, index };
        for doc in &corpus.documents {
            corpus.validate(doc)?;
        }
        Ok(corpus)
    }

    fn validate(&self, doc: &Document) -> Result<()> {
        let invalid = |reason: String| Error::InvalidDocument {
            id: doc.id.clone(),
            reason,
        };
        match (doc.split, doc.label) {
            (Split::Unsup, Label::Unlabeled) => {}
            (Split::Unsup, label) => {
                return Err(invalid(format!("unsup split requires label unsup, got {}", label.as_str())))
            }
            (_, Label::Unlabeled) => return Err(invalid("labeled split with label unsup".into())),
            _ => {}
        }
        if let Origin::Synthetic {
            technique,
            lang,
            parent,
        } = &doc.origin
        {
            if technique.requires_language() != lang.is_some() {
                return Err(invalid(format!(
                    "technique {} {} a pivot language",
                    technique.name(),
                    if technique.requires_language() { "requires" } else { "forbids" }
                )));
            }
            let parent_doc = self
                .get(parent)
                .ok_or_else(|| invalid(format!("parent `{parent}` not in corpus")))?;
            if !parent_doc.is_original() {
                return Err(invalid(format!("parent `{parent}` is itself synthetic")));
            }
            if parent_doc.label != doc.label {
                return Err(invalid(format!("label differs from parent `{parent}`")));
            }
        }
        Ok(())
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.documents[i])
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(move |d| d.split == split)
    }

    /// Returns a new corpus with `extra` appended after the existing documents.
    pub fn extended(&self, extra: Vec<Document>) -> Result<Corpus> {
        let mut documents = self.documents.clone();
        documents.extend(extra);
        Corpus::from_documents(documents)
    }

    /// Keeps documents matching `keep`, dropping synthetics whose parent was removed.
    pub fn filtered(&self, keep: impl Fn(&Document) -> bool) -> Corpus {
        let kept: HashSet<&str> = self
            .documents
            .iter()
            .filter(|d| keep(d))
            .map(|d| d.id.as_str())
            .collect();
        let documents = self
            .documents
            .iter()
            .filter(|d| kept.contains(d.id.as_str()))
            .filter(|d| d.parent_id().map_or(true, |p| kept.contains(p)))
            .cloned()
            .collect();
        Corpus::from_documents(documents).expect("subset of a valid corpus is valid")
    }

    /// Labels of every labeled document, keyed by id.
    pub fn labels(&self) -> HashMap<String, bool> {
        self.documents
            .iter()
            .filter_map(|d| d.label.as_bool().map(|l| (d.id.clone(), l)))
            .collect()
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

const IMDB_REQUIRED: [(&str, Split, Label); 4] = [
    ("train/pos", Split::Train, Label::Positive),
    ("train/neg", Split::Train, Label::Negative),
    ("test/pos", Split::Test, Label::Positive),
    ("test/neg", Split::Test, Label::Negative),
];

/// Reads an aclImdb-style directory tree.
///
/// Document ids are forward-slash relative paths (`train/pos/0_9.txt`);
/// documents are ordered by id.
pub fn ingest_imdb_dir(root: impl AsRef<Path>) -> Result<Corpus> {
    let root = root.as_ref();
    let mut dirs: Vec<(&str, Split, Label)> = IMDB_REQUIRED.to_vec();
    for (rel, _, _) in &dirs {
        if !root.join(rel).is_dir() {
            return Err(Error::MissingDirectory((*rel).to_string()));
        }
    }
    if root.join("train/unsup").is_dir() {
        dirs.push(("train/unsup", Split::Unsup, Label::Unlabeled));
    }

    let mut files: Vec<(String, PathBuf, Split, Label)> = Vec::new();
    for (rel, split, label) in dirs {
        let dir = root.join(rel);
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let file_type = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
            if !file_type.is_file() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            files.push((format!("{rel}/{name}"), entry.path(), split, label));
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let documents = files
        .into_par_iter()
        .map(|(id, path, split, label)| {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let text = String::from_utf8(bytes).map_err(|_| Error::Undecodable { path: path.clone() })?;
            Ok(Document::original(id, text, label, split))
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::from_documents(documents)
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file), path)
}

/// Parses JSONL documents from any reader; `path` is only used in errors.
pub fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId(doc.id));
        }
        documents.push(doc);
    }
    Corpus::from_documents(documents)
}

pub fn export_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_jsonl(corpus, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl(corpus: &Corpus, out: &mut impl Write) -> std::io::Result<()> {
    for doc in corpus {
        serde_json::to_writer(&mut *out, doc)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn shuffled_ids<'a>(docs: impl Iterator<Item = &'a Document>, seed: u64, stream: &str) -> Vec<&'a str> {
    let mut ids: Vec<&str> = docs.map(|d| d.id.as_str()).collect();
    ids.shuffle(&mut rng(derive_seed(seed, &[stream.as_bytes()])));
    ids
}

/// Draws `n` original training documents, balanced by label.
///
/// Positives get `ceil(n/2)` slots and negatives `floor(n/2)`. All other
/// splits pass through untouched; synthetic training documents are dropped.
pub fn subsample_balanced(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::InvalidArgument("subsample size must be positive".into()));
    }
    let eligible = |label: Label| {
        corpus
            .in_split(Split::Train)
            .filter(move |d| d.is_original() && d.label == label)
    };
    let mut chosen: HashSet<&str> = HashSet::with_capacity(n);
    for (label, name, need) in [
        (Label::Positive, "positive", n.div_ceil(2)),
        (Label::Negative, "negative", n / 2),
    ] {
        let ids = shuffled_ids(eligible(label), seed, name);
        if ids.len() < need {
            return Err(Error::InsufficientDocuments {
                label: name,
                required: need,
                available: ids.len(),
            });
        }
        chosen.extend(&ids[..need]);
    }
    Ok(corpus.filtered(|d| d.split != Split::Train || chosen.contains(d.id.as_str())))
}

/// Moves a balanced, seeded fraction of the original training documents into
/// the validation split.
pub fn split_validation(corpus: &Corpus, frac: f64, seed: u64) -> Result<Corpus> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::InvalidArgument(format!("validation fraction {frac} not in [0, 1)")));
    }
    if corpus.in_split(Split::Train).any(|d| !d.is_original()) {
        return Err(Error::InvalidArgument(
            "carve the validation split before adding synthetic training documents".into(),
        ));
    }
    let mut moved: HashSet<&str> = HashSet::new();
    for (label, name) in [(Label::Positive, "valid-positive"), (Label::Negative, "valid-negative")] {
        let ids = shuffled_ids(corpus.in_split(Split::Train).filter(|d| d.label == label), seed, name);
        let take = (frac * ids.len() as f64).round() as usize;
        moved.extend(&ids[..take]);
    }
    let documents = corpus
        .iter()
        .map(|d| {
            let mut d = d.clone();
            if moved.contains(d.id.as_str()) {
                d.split = Split::Valid;
            }
            d
        })
        .collect();
    Corpus::from_documents(documents)
}
