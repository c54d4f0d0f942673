//! Tokenization and the four random token perturbations, plus the
//! dataset-level augmentation driver.
//!
//! Every perturbation is a pure function of its arguments and a `u64` seed.
//! The replace/insert/swap ops perform `max(1, round(alpha * len))` edits;
//! deletion drops each token independently with probability `p`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Origin, Split};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};
use crate::translate::Backtranslator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugTechnique {
    SynonymReplace,
    RandomInsert,
    RandomSwap,
    RandomDelete,
    Backtranslate,
}

impl AugTechnique {
    pub const ALL: [AugTechnique; 5] = [
        AugTechnique::SynonymReplace,
        AugTechnique::RandomInsert,
        AugTechnique::RandomSwap,
        AugTechnique::RandomDelete,
        AugTechnique::Backtranslate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugTechnique::SynonymReplace => "synonym_replace",
            AugTechnique::RandomInsert => "random_insert",
            AugTechnique::RandomSwap => "random_swap",
            AugTechnique::RandomDelete => "random_delete",
            AugTechnique::Backtranslate => "backtranslate",
        }
    }

    /// Short command-line code (`sr`, `ri`, `rs`, `rd`, `bt`).
    pub fn code(self) -> &'static str {
        match self {
            AugTechnique::SynonymReplace => "sr",
            AugTechnique::RandomInsert => "ri",
            AugTechnique::RandomSwap => "rs",
            AugTechnique::RandomDelete => "rd",
            AugTechnique::Backtranslate => "bt",
        }
    }

    pub fn requires_language(self) -> bool {
        self == AugTechnique::Backtranslate
    }
}

impl fmt::Display for AugTechnique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugTechnique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugTechnique::ALL
            .into_iter()
            .find(|t| t.code() == s || t.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown technique `{s}`")))
    }
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'..='\u{201F}' | '\u{2010}'..='\u{2015}' | '\u{2026}' | '\u{00A1}' | '\u{00BF}' | '\u{00AB}' | '\u{00BB}'
        )
}

fn is_punct_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punctuation)
}

/// Words and punctuation runs, in text order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Wraps already-split tokens. Tokens must be nonempty and whitespace-free.
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if let Some(bad) = tokens.iter().find(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(Error::InvalidArgument(format!("invalid token {bad:?}")));
        }
        Ok(TokenSeq(tokens))
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        let mut current_punct = false;
        for c in chunk.chars() {
            let punct = is_punctuation(c);
            if !current.is_empty() && punct != current_punct {
                tokens.push(std::mem::take(&mut current));
            }
            current_punct = punct;
            current.push(c);
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    TokenSeq(tokens)
}

pub fn detokenize(tokens: &TokenSeq) -> String {
    let mut out = String::new();
    for (i, token) in tokens.0.iter().enumerate() {
        if i > 0 && !is_punct_token(token) {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Lowercase word to synonym list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Thesaurus {
    entries: HashMap<String, Vec<String>>,
}

impl Thesaurus {
    /// Parses `word<TAB>syn1,syn2,...` lines. Blank lines and `#` comments are skipped.
    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut thesaurus = Thesaurus::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (word, synonyms) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected word<TAB>synonyms".into()))?;
            let synonyms: Vec<&str> = synonyms.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if let Some(bad) = synonyms.iter().chain([&word.trim()]).find(|s| s.chars().any(char::is_whitespace)) {
                return Err(parse_err(format!("entry {bad:?} contains whitespace")));
            }
            thesaurus.insert(word.trim(), synonyms);
        }
        Ok(thesaurus)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Thesaurus::from_tsv(&text, path)
    }

    /// The WordNet-derived thesaurus shipped with the crate (~5k entries).
    pub fn bundled() -> &'static Thesaurus {
        static BUNDLED: OnceLock<Thesaurus> = OnceLock::new();
        BUNDLED.get_or_init(|| {
            Thesaurus::from_tsv(include_str!("../data/thesaurus.tsv"), Path::new("data/thesaurus.tsv"))
                .expect("bundled thesaurus parses")
        })
    }

    /// Adds synonyms for `word`, lowercasing and dropping duplicates and self-references.
    pub fn insert<S: AsRef<str>>(&mut self, word: &str, synonyms: impl IntoIterator<Item = S>) {
        let word = word.to_lowercase();
        let list = self.entries.entry(word.clone()).or_default();
        for synonym in synonyms {
            let synonym = synonym.as_ref().to_lowercase();
            if synonym != word && !synonym.is_empty() && !list.contains(&synonym) {
                list.push(synonym);
            }
        }
        if list.is_empty() {
            self.entries.remove(&word);
        }
    }

    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A set of lowercase words excluded from synonym-based edits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn from_words<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        Stopwords(
            words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        )
    }

    /// One word per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Stopwords::from_words(text.lines()))
    }

    pub fn bundled() -> Self {
        Stopwords::from_words(include_str!("../data/stopwords.txt").lines())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }
}

/// Output of a perturbation. `modified` is false when the op found nothing to edit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perturbed {
    pub tokens: TokenSeq,
    pub modified: bool,
}

impl Perturbed {
    fn unchanged(tokens: &TokenSeq) -> Self {
        Perturbed {
            tokens: tokens.clone(),
            modified: false,
        }
    }
}

pub fn edit_count(alpha: f64, len: usize) -> usize {
    ((alpha * len as f64).round() as usize).max(1)
}

fn eligible_positions(tokens: &TokenSeq, thesaurus: &Thesaurus, stopwords: &Stopwords) -> Vec<usize> {
    tokens
        .0
        .iter()
        .enumerate()
        .filter(|(_, t)| !is_punct_token(t) && !stopwords.contains(t) && thesaurus.synonyms(t).is_some())
        .map(|(i, _)| i)
        .collect()
}

fn is_title_case(token: &str) -> bool {
    let mut chars = token.chars();
    matches!(chars.next(), Some(c) if c.is_uppercase()) && chars.all(|c| !c.is_uppercase())
}

fn starts_sentence(tokens: &[String], position: usize) -> bool {
    position == 0 || tokens[position - 1].ends_with(['.', '!', '?'])
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn synonym_replace(
    tokens: &TokenSeq,
    alpha: f64,
    thesaurus: &Thesaurus,
    stopwords: &Stopwords,
    rng_seed: u64,
) -> Perturbed {
    if tokens.is_empty() {
        return Perturbed::unchanged(tokens);
    }
    let mut candidates = eligible_positions(tokens, thesaurus, stopwords);
    if candidates.is_empty() {
        return Perturbed::unchanged(tokens);
    }
    let mut rng = rng(rng_seed);
    candidates.shuffle(&mut rng);
    candidates.truncate(edit_count(alpha, tokens.len()));

    let mut out = tokens.0.clone();
    for position in candidates {
        let original = &tokens.0[position];
        let synonyms = thesaurus.synonyms(original).expect("eligible token has synonyms");
        let synonym = &synonyms[rng.gen_range(0..synonyms.len())];
        out[position] = if is_title_case(original) && starts_sentence(&tokens.0, position) {
            title_case(synonym)
        } else {
            synonym.clone()
        };
    }
    Perturbed {
        tokens: TokenSeq(out),
        modified: true,
    }
}

pub fn random_insert(
    tokens: &TokenSeq,
    alpha: f64,
    thesaurus: &Thesaurus,
    stopwords: &Stopwords,
    rng_seed: u64,
) -> Perturbed {
    let sources = eligible_positions(tokens, thesaurus, stopwords);
    if sources.is_empty() {
        return Perturbed::unchanged(tokens);
    }
    let mut rng = rng(rng_seed);
    let mut out = tokens.0.clone();
    for _ in 0..edit_count(alpha, tokens.len()) {
        let source = &tokens.0[sources[rng.gen_range(0..sources.len())]];
        let synonyms = thesaurus.synonyms(source).expect("eligible token has synonyms");
        let synonym = synonyms[rng.gen_range(0..synonyms.len())].clone();
        let gap = rng.gen_range(0..=out.len());
        out.insert(gap, synonym);
    }
    Perturbed {
        tokens: TokenSeq(out),
        modified: true,
    }
}

pub fn random_swap(tokens: &TokenSeq, alpha: f64, rng_seed: u64) -> Perturbed {
    let len = tokens.len();
    if len < 2 {
        return Perturbed::unchanged(tokens);
    }
    let mut rng = rng(rng_seed);
    let mut out = tokens.0.clone();
    for _ in 0..edit_count(alpha, len) {
        let i = rng.gen_range(0..len);
        let mut j = rng.gen_range(0..len - 1);
        if j >= i {
            j += 1;
        }
        out.swap(i, j);
    }
    Perturbed {
        tokens: TokenSeq(out),
        modified: true,
    }
}

pub fn random_delete(tokens: &TokenSeq, p: f64, rng_seed: u64) -> Perturbed {
    if tokens.is_empty() {
        return Perturbed::unchanged(tokens);
    }
    let mut rng = rng(rng_seed);
    let mut out: Vec<String> = tokens.0.iter().filter(|_| rng.gen::<f64>() >= p).cloned().collect();
    if out.is_empty() {
        out.push(tokens.0[rng.gen_range(0..tokens.len())].clone());
    }
    let modified = out.len() < tokens.len();
    Perturbed {
        tokens: TokenSeq(out),
        modified,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageStrategy {
    /// One copy per pivot language for every document.
    #[default]
    AllLanguages,
    /// Documents take pivot languages cyclically in corpus order.
    RoundRobin,
}

impl FromStr for LanguageStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all_languages" => Ok(LanguageStrategy::AllLanguages),
            "roundrobin" | "round_robin" => Ok(LanguageStrategy::RoundRobin),
            other => Err(Error::InvalidSpec(format!("unknown language strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub technique: AugTechnique,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_copies")]
    pub copies_per_original: usize,
    #[serde(default)]
    pub languages: Vec<String>,
    #[serde(default)]
    pub language_strategy: LanguageStrategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip, default = "Stopwords::bundled")]
    pub stopwords: Stopwords,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_copies() -> usize {
    1
}

impl AugmentSpec {
    pub fn new(technique: AugTechnique) -> Self {
        AugmentSpec {
            technique,
            alpha: default_alpha(),
            copies_per_original: default_copies(),
            languages: Vec::new(),
            language_strategy: LanguageStrategy::AllLanguages,
            seed: 0,
            stopwords: Stopwords::bundled(),
        }
    }

    pub fn backtranslate<S: Into<String>>(languages: impl IntoIterator<Item = S>) -> Self {
        AugmentSpec {
            languages: languages.into_iter().map(Into::into).collect(),
            ..AugmentSpec::new(AugTechnique::Backtranslate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidSpec(format!("alpha {} not in [0, 1]", self.alpha)));
        }
        if self.copies_per_original == 0 {
            return Err(Error::InvalidSpec("copies per original must be positive".into()));
        }
        if self.technique.requires_language() == self.languages.is_empty() {
            return Err(Error::InvalidSpec(
                "languages must be given for backtranslation and only for backtranslation".into(),
            ));
        }
        if let Some(lang) = self.languages.iter().find(|l| l.as_str() == "en") {
            return Err(Error::InvalidSpec(format!("pivot language `{lang}` must differ from en")));
        }
        Ok(())
    }

    /// Pivot languages and copy indices for the `ordinal`-th original training document.
    fn jobs_for(&self, ordinal: usize) -> Vec<(Option<&str>, usize)> {
        match (self.technique, self.language_strategy) {
            (AugTechnique::Backtranslate, LanguageStrategy::AllLanguages) => {
                self.languages.iter().map(|l| (Some(l.as_str()), 0)).collect()
            }
            (AugTechnique::Backtranslate, LanguageStrategy::RoundRobin) => {
                let lang = self.languages[ordinal % self.languages.len()].as_str();
                (0..self.copies_per_original).map(|k| (Some(lang), k)).collect()
            }
            _ => (0..self.copies_per_original).map(|k| (None, k)).collect(),
        }
    }
}

pub fn synthetic_id(parent: &str, technique: AugTechnique, lang: Option<&str>, copy: usize) -> String {
    match lang {
        Some(lang) => format!("{parent}#{}:{lang}:{copy}", technique.code()),
        None => format!("{parent}#{}:{copy}", technique.code()),
    }
}

/// Applies one token perturbation to raw text.
pub fn perturb_text(
    text: &str,
    technique: AugTechnique,
    alpha: f64,
    thesaurus: &Thesaurus,
    stopwords: &Stopwords,
    seed: u64,
) -> Result<Perturbed> {
    let tokens = tokenize(text);
    Ok(match technique {
        AugTechnique::SynonymReplace => synonym_replace(&tokens, alpha, thesaurus, stopwords, seed),
        AugTechnique::RandomInsert => random_insert(&tokens, alpha, thesaurus, stopwords, seed),
        AugTechnique::RandomSwap => random_swap(&tokens, alpha, seed),
        AugTechnique::RandomDelete => random_delete(&tokens, alpha, seed),
        AugTechnique::Backtranslate => {
            return Err(Error::InvalidSpec("backtranslation is not a token perturbation".into()))
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AugmentFailure {
    pub doc_id: String,
    pub lang: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AugmentReport {
    pub originals: usize,
    pub synthetics: usize,
    /// Synthetics identical to their parent because the op had nothing to edit.
    pub unmodified: usize,
    pub failures: Vec<AugmentFailure>,
}

/// Appends synthetic copies of every original training document.
///
/// Each (document, copy) pair draws from its own random stream derived from
/// `spec.seed`, the document id and the copy index, so the output does not
/// depend on scheduling or on which other documents are present.
/// Translation failures skip the affected copy and are listed in the report.
pub fn augment_dataset(
    corpus: &Corpus,
    spec: &AugmentSpec,
    thesaurus: &Thesaurus,
    translator: Option<&Backtranslator>,
) -> Result<(Corpus, AugmentReport)> {
    spec.validate()?;
    if spec.technique.requires_language() != translator.is_some() {
        return Err(Error::InvalidSpec(
            "a translator must be supplied for backtranslation and only for backtranslation".into(),
        ));
    }

    let originals: Vec<&Document> = corpus
        .in_split(Split::Train)
        .filter(|d| d.is_original())
        .collect();
    let jobs: Vec<(&Document, Option<&str>, usize)> = originals
        .iter()
        .enumerate()
        .flat_map(|(ordinal, doc)| {
            spec.jobs_for(ordinal)
                .into_iter()
                .map(move |(lang, copy)| (*doc, lang, copy))
        })
        .collect();

    let outcomes: Vec<std::result::Result<(Document, bool), AugmentFailure>> = jobs
        .par_iter()
        .map(|&(doc, lang, copy)| {
            let id = synthetic_id(&doc.id, spec.technique, lang, copy);
            let (text, modified) = match (lang, translator) {
                (Some(lang), Some(translator)) => {
                    let record = translator.backtranslate(&doc.text, lang).map_err(|e| AugmentFailure {
                        doc_id: doc.id.clone(),
                        lang: Some(lang.to_string()),
                        message: e.to_string(),
                    })?;
                    let modified = record.final_text != doc.text;
                    (record.final_text, modified)
                }
                _ => {
                    let seed = derive_seed(
                        spec.seed,
                        &[spec.technique.name().as_bytes(), doc.id.as_bytes(), &(copy as u64).to_le_bytes()],
                    );
                    let perturbed = perturb_text(&doc.text, spec.technique, spec.alpha, thesaurus, &spec.stopwords, seed)
                        .expect("token technique");
                    (detokenize(&perturbed.tokens), perturbed.modified)
                }
            };
            Ok((
                Document {
                    id,
                    text,
                    label: doc.label,
                    split: doc.split,
                    origin: Origin::Synthetic {
                        technique: spec.technique,
                        lang: lang.map(str::to_string),
                        parent: doc.id.clone(),
                    },
                },
                modified,
            ))
        })
        .collect();

    let mut report = AugmentReport {
        originals: originals.len(),
        ..AugmentReport::default()
    };
    let mut synthetics = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        match outcome {
            Ok((doc, modified)) => {
                if !modified {
                    report.unmodified += 1;
                }
                synthetics.push(doc);
            }
            Err(failure) => {
                log::warn!(
                    "skipping {} via {}: {}",
                    failure.doc_id,
                    failure.lang.as_deref().unwrap_or("-"),
                    failure.message
                );
                report.failures.push(failure);
            }
        }
    }
    report.synthetics = synthetics.len();
    Ok((corpus.extended(synthetics)?, report))
}
