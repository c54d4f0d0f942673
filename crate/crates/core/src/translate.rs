//! Backtranslation through pluggable translation providers.
//!
//! Every provider call goes through a [`TranslationCache`]: a JSONL file keyed
//! by a content hash of `(provider_id, source, target, text)`. New entries are
//! appended as they arrive and the file is sorted by key when the cache closes.
//! A warm cache makes backtranslation a pure function with no provider calls.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentFailure, Stopwords, Thesaurus};
use crate::corpus::{Corpus, Document};
use crate::seed::{derive_seed, sha256_hex};

pub const SOURCE_LANGUAGE: &str = "en";

/// Pivot languages used when none are given: the nine named languages of the
/// ten-language study plus `it` standing in for the unnamed tenth.
pub const DEFAULT_LANGUAGES: [&str; 10] = ["es", "fr", "de", "af", "ru", "cs", "et", "ht", "bn", "it"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transient failure after {attempts} attempt(s): {message}")]
    Transient { attempts: usize, message: String },
    #[error("permanent failure (status {status}): {message}")]
    Permanent { status: u16, message: String },
    #[error("{0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Leg {
    Forward,
    Backward,
}

impl std::fmt::Display for Leg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Leg::Forward => "forward",
            Leg::Backward => "backward",
        })
    }
}

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("pivot language must differ from `{0}`")]
    SamePivot(String),
    #[error("{leg} leg via `{pivot}` failed: {source}")]
    Provider {
        pivot: String,
        leg: Leg,
        #[source]
        source: ProviderError,
    },
    #[error("translation cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

/// A machine translation backend.
///
/// `provider_id` keys the cache, so it must change whenever the provider's
/// output for a given input could change.
pub trait TranslationProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub source: String,
    pub target: String,
    pub provider: String,
    pub text_hash: String,
    pub result: String,
}

impl CacheEntry {
    pub fn new(provider: &str, source: &str, target: &str, text: &str, result: impl Into<String>) -> Self {
        CacheEntry {
            key: cache_key(provider, source, target, text),
            source: source.to_string(),
            target: target.to_string(),
            provider: provider.to_string(),
            text_hash: sha256_hex(text.as_bytes()),
            result: result.into(),
        }
    }
}

/// Hex SHA-256 over the length-prefixed `(provider, source, target, text)`.
pub fn cache_key(provider: &str, source: &str, target: &str, text: &str) -> String {
    let mut buf = Vec::with_capacity(provider.len() + source.len() + target.len() + text.len() + 32);
    for part in [provider, source, target, text] {
        buf.extend_from_slice(&(part.len() as u64).to_le_bytes());
        buf.extend_from_slice(part.as_bytes());
    }
    sha256_hex(&buf)
}

/// Persistent translation memo.
///
/// Reads are concurrent; appends are serialized. The first stored result for
/// a key wins, both in memory and when the file is reloaded.
#[derive(Debug)]
pub struct TranslationCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
    dirty: AtomicBool,
}

impl Drop for TranslationCache {
    fn drop(&mut self) {
        if *self.dirty.get_mut() {
            if let Err(e) = self.compact() {
                log::warn!("{e}");
            }
        }
    }
}

impl TranslationCache {
    pub fn in_memory() -> Self {
        TranslationCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            dirty: AtomicBool::new(false),
        }
    }

    /// An in-memory cache holding the bundled published backtranslations.
    pub fn published() -> Self {
        let cache = TranslationCache::in_memory();
        cache.extend_from_jsonl(PUBLISHED_CACHE).expect("bundled cache is well formed");
        cache
    }

    /// Inserts every entry of a cache-format JSONL string; returns how many lines were read.
    pub fn extend_from_jsonl(&self, text: &str) -> Result<usize, TranslateError> {
        let mut n = 0;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: CacheEntry = serde_json::from_str(line).map_err(|e| TranslateError::Cache {
                path: self.path.clone().unwrap_or_default(),
                message: format!("line {}: {e}", i + 1),
            })?;
            self.insert(entry)?;
            n += 1;
        }
        Ok(n)
    }

    /// Opens (or creates) a cache file, compacting duplicate keys and a torn
    /// trailing line if present.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TranslateError> {
        let path = path.as_ref().to_path_buf();
        let cache_err = |message: String| TranslateError::Cache {
            path: path.clone(),
            message,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| cache_err(e.to_string()))?;
        }
        let (ordered, needs_compaction) = load_entries(&path).map_err(cache_err)?;
        if needs_compaction {
            rewrite(&path, &ordered).map_err(|e| cache_err(e.to_string()))?;
        }
        let entries = ordered.into_iter().map(|e| (e.key, e.result)).collect();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| cache_err(e.to_string()))?;
        Ok(TranslationCache {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
            dirty: AtomicBool::new(false),
        })
    }

    /// Rewrites the backing file sorted by key, so its bytes do not depend on
    /// the order in which concurrent inserts finished. Runs on drop as well.
    pub fn compact(&self) -> Result<(), TranslateError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let cache_err = |message: String| TranslateError::Cache {
            path: path.clone(),
            message,
        };
        let mut writer = self.writer.lock().expect("cache writer lock");
        *writer = None;
        let (mut entries, _) = load_entries(path).map_err(cache_err)?;
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        rewrite(path, &entries).map_err(|e| cache_err(e.to_string()))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| cache_err(e.to_string()))?;
        *writer = Some(file);
        self.dirty.store(false, Ordering::Relaxed);
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    /// Stores an entry unless its key is already present; returns the stored result.
    pub fn insert(&self, entry: CacheEntry) -> Result<String, TranslateError> {
        let mut entries = self.entries.write().expect("cache lock");
        if let Some(existing) = entries.get(&entry.key) {
            return Ok(existing.clone());
        }
        if let Some(file) = self.writer.lock().expect("cache writer lock").as_mut() {
            let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| TranslateError::Cache {
                    path: self.path.clone().unwrap_or_default(),
                    message: e.to_string(),
                })?;
            self.dirty.store(true, Ordering::Relaxed);
        }
        entries.insert(entry.key, entry.result.clone());
        Ok(entry.result)
    }

    /// Seeds the cache with externally produced backtranslations.
    ///
    /// Both legs are stored under `provider_id`. When a record has no
    /// intermediate text, an opaque placeholder links the two legs.
    pub fn import_published(&self, provider_id: &str, records: &[PublishedBacktranslation]) -> Result<usize, TranslateError> {
        for record in records {
            let intermediate = record
                .intermediate
                .clone()
                .unwrap_or_else(|| format!("\u{27e6}published:{}:{}\u{27e7}", record.lang, sha256_hex(record.text.as_bytes())));
            self.insert(CacheEntry::new(provider_id, SOURCE_LANGUAGE, &record.lang, &record.text, intermediate.clone()))?;
            self.insert(CacheEntry::new(provider_id, &record.lang, SOURCE_LANGUAGE, &intermediate, record.backtranslation.clone()))?;
        }
        Ok(records.len())
    }
}

/// Reads a cache file, keeping the first entry per key. The flag reports
/// duplicates, blank lines or a torn final line.
fn load_entries(path: &Path) -> Result<(Vec<CacheEntry>, bool), String> {
    let mut seen = std::collections::HashSet::new();
    let mut ordered = Vec::new();
    let mut needs_compaction = false;
    if !path.exists() {
        return Ok((ordered, false));
    }
    let file = File::open(path).map_err(|e| e.to_string())?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            needs_compaction = true;
            continue;
        }
        match serde_json::from_str::<CacheEntry>(line) {
            Ok(entry) => {
                if seen.insert(entry.key.clone()) {
                    ordered.push(entry);
                } else {
                    needs_compaction = true;
                }
            }
            Err(e) if i == last => {
                log::warn!("{}: dropping torn final line: {e}", path.display());
                needs_compaction = true;
            }
            Err(e) => return Err(format!("line {}: {e}", i + 1)),
        }
    }
    Ok((ordered, needs_compaction))
}

fn rewrite(path: &Path, entries: &[CacheEntry]) -> std::io::Result<()> {
    let tmp = path.with_extension("jsonl.compact");
    {
        let mut out = std::io::BufWriter::new(File::create(&tmp)?);
        for entry in entries {
            serde_json::to_writer(&mut out, entry)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    fs::rename(tmp, path)
}

/// One externally produced round trip, e.g. from a published dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedBacktranslation {
    pub text: String,
    pub lang: String,
    pub backtranslation: String,
    #[serde(default)]
    pub intermediate: Option<String>,
}

pub fn read_published(path: impl AsRef<Path>) -> Result<Vec<PublishedBacktranslation>, crate::Error> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| crate::Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Provider id under which the bundled published backtranslations are stored.
pub const PUBLISHED_PROVIDER_ID: &str = "published:google-translate-textblob";

/// Cache-format JSONL of the bundled published backtranslations.
pub const PUBLISHED_CACHE: &str = include_str!("../data/published_cache.jsonl");

/// The records `PUBLISHED_CACHE` was generated from.
pub const PUBLISHED_RECORDS: &str = include_str!("../data/published_backtranslations.jsonl");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BacktranslationRecord {
    pub pivot_language: String,
    pub intermediate_text: String,
    pub final_text: String,
    /// How many of the two legs were served from the cache.
    pub cache_hits: u8,
}

/// Round-trips `text` through `pivot` and back to English.
pub fn backtranslate(
    text: &str,
    pivot: &str,
    provider: &dyn TranslationProvider,
    cache: &TranslationCache,
) -> Result<BacktranslationRecord, TranslateError> {
    if pivot == SOURCE_LANGUAGE {
        return Err(TranslateError::SamePivot(SOURCE_LANGUAGE.into()));
    }
    let mut cache_hits = 0;
    let mut leg = |leg: Leg, input: &str, source: &str, target: &str| -> Result<String, TranslateError> {
        let key = cache_key(provider.provider_id(), source, target, input);
        if let Some(hit) = cache.get(&key) {
            cache_hits += 1;
            return Ok(hit);
        }
        let result = provider
            .translate(input, source, target)
            .map_err(|source| TranslateError::Provider {
                pivot: pivot.to_string(),
                leg,
                source,
            })?;
        cache.insert(CacheEntry::new(provider.provider_id(), source, target, input, result))
    };
    let intermediate_text = leg(Leg::Forward, text, SOURCE_LANGUAGE, pivot)?;
    let final_text = leg(Leg::Backward, &intermediate_text, pivot, SOURCE_LANGUAGE)?;
    Ok(BacktranslationRecord {
        pivot_language: pivot.to_string(),
        intermediate_text,
        final_text,
        cache_hits,
    })
}

/// A provider paired with its cache.
#[derive(Clone)]
pub struct Backtranslator {
    pub provider: Arc<dyn TranslationProvider>,
    pub cache: Arc<TranslationCache>,
}

impl Backtranslator {
    pub fn new(provider: Arc<dyn TranslationProvider>, cache: Arc<TranslationCache>) -> Self {
        Backtranslator { provider, cache }
    }

    pub fn backtranslate(&self, text: &str, pivot: &str) -> Result<BacktranslationRecord, TranslateError> {
        backtranslate(text, pivot, self.provider.as_ref(), &self.cache)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DocumentBacktranslation {
    pub parent_id: String,
    #[serde(flatten)]
    pub record: BacktranslationRecord,
}

/// Backtranslates each selected document through each language.
///
/// Output is ordered by document, then language, regardless of scheduling.
/// Failed round trips are skipped and returned separately.
pub fn backtranslate_documents<'a>(
    documents: impl IntoIterator<Item = &'a Document>,
    languages: &[String],
    translator: &Backtranslator,
) -> (Vec<DocumentBacktranslation>, Vec<AugmentFailure>) {
    let jobs: Vec<(&Document, &String)> = documents
        .into_iter()
        .flat_map(|d| languages.iter().map(move |l| (d, l)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(doc, lang)| {
            translator
                .backtranslate(&doc.text, lang)
                .map(|record| DocumentBacktranslation {
                    parent_id: doc.id.clone(),
                    record,
                })
                .map_err(|e| AugmentFailure {
                    doc_id: doc.id.clone(),
                    lang: Some((*lang).clone()),
                    message: e.to_string(),
                })
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for result in results {
        match result {
            Ok(r) => ok.push(r),
            Err(f) => {
                log::warn!("backtranslation of {} via {:?} failed: {}", f.doc_id, f.lang, f.message);
                failed.push(f)
            }
        }
    }
    (ok, failed)
}

pub fn backtranslate_corpus(
    corpus: &Corpus,
    languages: &[String],
    translator: &Backtranslator,
) -> (Vec<DocumentBacktranslation>, Vec<AugmentFailure>) {
    backtranslate_documents(corpus.iter().filter(|d| d.is_original()), languages, translator)
}

/// Serves only what is already cached; every call fails.
#[derive(Debug, Clone)]
pub struct CacheOnlyProvider {
    id: String,
}

impl CacheOnlyProvider {
    pub fn new(provider_id: impl Into<String>) -> Self {
        CacheOnlyProvider { id: provider_id.into() }
    }
}

impl TranslationProvider for CacheOnlyProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn translate(&self, _text: &str, source: &str, target: &str) -> Result<String, ProviderError> {
        Err(ProviderError::Unavailable(format!(
            "no cached translation {source}->{target} for provider `{}`",
            self.id
        )))
    }
}

/// Deterministic offline stand-in for a translation service.
///
/// The forward leg swaps a fraction of content words for thesaurus synonyms
/// (the "lexical drift" of a real round trip), never more than a quarter of
/// the words in the text, and then applies a language-keyed letter rotation.
/// The backward leg undoes the rotation. With zero noise the round trip is
/// the identity.
#[derive(Debug, Clone)]
pub struct MockProvider {
    id: String,
    seed: u64,
    noise: f64,
    thesaurus: Thesaurus,
    stopwords: Stopwords,
}

pub const MOCK_DEFAULT_NOISE: f64 = 0.1;

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        MockProvider::with_noise(seed, MOCK_DEFAULT_NOISE)
    }

    pub fn with_noise(seed: u64, noise: f64) -> Self {
        MockProvider {
            id: format!("mock:v2:seed={seed}:noise={noise}"),
            seed,
            noise,
            thesaurus: Thesaurus::bundled().clone(),
            stopwords: Stopwords::bundled(),
        }
    }

    fn shift(&self, lang: &str) -> u8 {
        1 + (derive_seed(self.seed, &[b"shift", lang.as_bytes()]) % 25) as u8
    }

    fn add_noise(&self, text: &str, lang: &str) -> String {
        let words = text.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()).count();
        let mut budget = words / 4;
        let mut out = String::with_capacity(text.len());
        let mut ordinal = 0u64;
        let mut rest = text;
        while let Some(start) = rest.find(char::is_alphabetic) {
            out.push_str(&rest[..start]);
            let word_len = rest[start..]
                .find(|c: char| !c.is_alphabetic())
                .unwrap_or(rest.len() - start);
            let word = &rest[start..start + word_len];
            match self.substitute(word, lang, ordinal).filter(|_| budget > 0) {
                Some(synonym) => {
                    out.push_str(&synonym);
                    budget -= 1;
                }
                None => out.push_str(word),
            }
            ordinal += 1;
            rest = &rest[start + word_len..];
        }
        out.push_str(rest);
        out
    }

    fn substitute(&self, word: &str, lang: &str, ordinal: u64) -> Option<String> {
        if self.noise <= 0.0 || self.stopwords.contains(word) {
            return None;
        }
        let synonyms = self.thesaurus.synonyms(word)?;
        let lower = word.to_lowercase();
        let draw = derive_seed(self.seed, &[b"noise", lang.as_bytes(), &ordinal.to_le_bytes(), lower.as_bytes()]);
        if (draw >> 11) as f64 / (1u64 << 53) as f64 >= self.noise {
            return None;
        }
        let synonym = &synonyms[(draw % synonyms.len() as u64) as usize];
        Some(if word.chars().all(|c| !c.is_lowercase()) && word.chars().count() > 1 {
            synonym.to_uppercase()
        } else if word.starts_with(char::is_uppercase) {
            let mut chars = synonym.chars();
            chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default()
        } else {
            synonym.clone()
        })
    }
}

fn rotate(text: &str, shift: u8) -> String {
    text.chars()
        .map(|c| match c {
            'a'..='z' => (b'a' + (c as u8 - b'a' + shift) % 26) as char,
            'A'..='Z' => (b'A' + (c as u8 - b'A' + shift) % 26) as char,
            _ => c,
        })
        .collect()
}

impl TranslationProvider for MockProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError> {
        let plain = if source == SOURCE_LANGUAGE {
            self.add_noise(text, target)
        } else {
            rotate(text, 26 - self.shift(source))
        };
        Ok(if target == SOURCE_LANGUAGE {
            plain
        } else {
            rotate(&plain, self.shift(target))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay after the `attempt`-th failure (1-based): `base * 2^(attempt-1)`, capped.
    pub fn backoff(&self, attempt: usize) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1) as u32).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Token bucket holding up to one second of burst.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(requests_per_second: f64) -> Self {
        let capacity = requests_per_second.max(1.0);
        TokenBucket {
            rate: requests_per_second,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("bucket lock");
                let now = Instant::now();
                let (tokens, last) = &mut *state;
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate).min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                (1.0 - *tokens) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug)]
struct InFlight {
    limit: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn enter(&self) -> InFlightGuard<'_> {
        let mut count = self.count.lock().expect("in-flight lock");
        while *count >= self.limit {
            count = self.freed.wait(count).expect("in-flight lock");
        }
        *count += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub requests_per_second: f64,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            api_key: None,
            requests_per_second: 5.0,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(30),
            max_in_flight: 8,
        }
    }
}

/// Environment variable read for the translation API key.
pub const API_KEY_ENV: &str = "AUGBENCH_API_KEY";

#[derive(Serialize)]
struct TranslateRequest<'a> {
    q: &'a str,
    source: &'a str,
    target: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    api_key: Option<&'a str>,
}

#[derive(Deserialize)]
struct TranslateResponse {
    #[serde(rename = "translatedText")]
    translated_text: String,
}

/// JSON-over-HTTP translation client (LibreTranslate-compatible request and
/// response bodies) with rate limiting and retries.
///
/// Timeouts, connection errors, 429 and 5xx are retried with exponential
/// backoff; any other 4xx fails immediately.
#[derive(Debug)]
pub struct HttpProvider {
    id: String,
    config: HttpConfig,
    client: reqwest::blocking::Client,
    bucket: TokenBucket,
    in_flight: InFlight,
    requests: AtomicUsize,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Result<Self, ProviderError> {
        if config.requests_per_second <= 0.0 || config.max_in_flight == 0 || config.retry.max_attempts == 0 {
            return Err(ProviderError::Unavailable(
                "rate limit, in-flight limit and attempt budget must be positive".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(HttpProvider {
            id: format!("http:{}", config.endpoint),
            bucket: TokenBucket::new(config.requests_per_second),
            in_flight: InFlight {
                limit: config.max_in_flight,
                count: Mutex::new(0),
                freed: Condvar::new(),
            },
            config,
            client,
            requests: AtomicUsize::new(0),
        })
    }

    /// Total HTTP requests issued, including retries.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn attempt(&self, text: &str, source: &str, target: &str) -> Result<String, Attempt> {
        self.bucket.acquire();
        let _slot = self.in_flight.enter();
        self.requests.fetch_add(1, Ordering::SeqCst);
        let response = self
            .client
            .post(&self.config.endpoint)
            .json(&TranslateRequest {
                q: text,
                source,
                target,
                api_key: self.config.api_key.as_deref(),
            })
            .send()
            .map_err(|e| Attempt::Retry(e.to_string(), None))?;
        let status = response.status();
        if status.is_success() {
            return response
                .json::<TranslateResponse>()
                .map(|r| r.translated_text)
                .map_err(|e| Attempt::Retry(format!("bad response body: {e}"), None));
        }
        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = response.text().unwrap_or_default();
        let message = format!("HTTP {}: {}", status.as_u16(), body.chars().take(200).collect::<String>());
        if status.as_u16() == 429 || status.is_server_error() {
            Err(Attempt::Retry(message, retry_after))
        } else {
            Err(Attempt::Fail(ProviderError::Permanent {
                status: status.as_u16(),
                message,
            }))
        }
    }
}

enum Attempt {
    Retry(String, Option<Duration>),
    Fail(ProviderError),
}

impl TranslationProvider for HttpProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError> {
        let policy = &self.config.retry;
        let mut attempt = 1;
        loop {
            match self.attempt(text, source, target) {
                Ok(translated) => return Ok(translated),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(message, _)) if attempt >= policy.max_attempts => {
                    return Err(ProviderError::Transient {
                        attempts: attempt,
                        message,
                    })
                }
                Err(Attempt::Retry(message, retry_after)) => {
                    let delay = retry_after.map_or_else(|| policy.backoff(attempt), |d| d.min(policy.max_delay));
                    log::debug!("attempt {attempt} failed ({message}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity(AtomicUsize);

    impl TranslationProvider for Identity {
        fn provider_id(&self) -> &str {
            "identity"
        }

        fn translate(&self, text: &str, _: &str, _: &str) -> Result<String, ProviderError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(text.to_string())
        }
    }

    #[test]
    fn identity_round_trip_and_warm_cache() {
        let provider = Identity(AtomicUsize::new(0));
        let cache = TranslationCache::in_memory();
        let first = backtranslate("Some text.", "es", &provider, &cache).unwrap();
        assert_eq!(first.final_text, "Some text.");
        assert_eq!(first.cache_hits, 0);
        assert_eq!(provider.0.load(Ordering::SeqCst), 2);

        let second = backtranslate("Some text.", "es", &provider, &cache).unwrap();
        assert_eq!(second.final_text, first.final_text);
        assert_eq!(second.cache_hits, 2);
        assert_eq!(provider.0.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn english_pivot_rejected() {
        let err = backtranslate("x", "en", &Identity(AtomicUsize::new(0)), &TranslationCache::in_memory()).unwrap_err();
        assert!(matches!(err, TranslateError::SamePivot(_)));
    }

    #[test]
    fn provider_failure_names_leg() {
        struct FailBack;
        impl TranslationProvider for FailBack {
            fn provider_id(&self) -> &str {
                "failback"
            }
            fn translate(&self, text: &str, _: &str, target: &str) -> Result<String, ProviderError> {
                if target == "en" {
                    Err(ProviderError::Permanent {
                        status: 403,
                        message: "nope".into(),
                    })
                } else {
                    Ok(text.into())
                }
            }
        }
        let err = backtranslate("x", "de", &FailBack, &TranslationCache::in_memory()).unwrap_err();
        match err {
            TranslateError::Provider { pivot, leg, .. } => assert_eq!((pivot.as_str(), leg), ("de", Leg::Backward)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn cache_key_separates_providers() {
        assert_ne!(cache_key("a", "en", "es", "x"), cache_key("b", "en", "es", "x"));
        assert_ne!(cache_key("ab", "en", "es", "x"), cache_key("a", "ben", "es", "x"));
    }

    #[test]
    fn cache_file_survives_reopen_and_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = TranslationCache::open(&path).unwrap();
            cache.insert(CacheEntry::new("p", "en", "es", "hola?", "hola")).unwrap();
            // first write wins
            let kept = cache.insert(CacheEntry::new("p", "en", "es", "hola?", "other")).unwrap();
            assert_eq!(kept, "hola");
        }
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str(&text.clone());
        text.push_str("{\"key\":\"trunc");
        fs::write(&path, text).unwrap();

        let cache = TranslationCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get(&cache_key("p", "en", "es", "hola?")).unwrap(), "hola");
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        fs::write(&path, "garbage\n{}\n").unwrap();
        let err = TranslationCache::open(&path).unwrap_err();
        assert!(err.to_string().contains("cache.jsonl"), "{err}");
    }

    #[test]
    fn mock_round_trip_without_noise_is_identity() {
        let mock = MockProvider::with_noise(3, 0.0);
        let text = "A sad human comedy played out on the back roads of life.<br />Ünïcode stays!";
        let cache = TranslationCache::in_memory();
        let record = backtranslate(text, "es", &mock, &cache).unwrap();
        assert_eq!(record.final_text, text);
        assert_ne!(record.intermediate_text, text);
    }

    #[test]
    fn mock_is_language_keyed_and_deterministic() {
        let mock = MockProvider::new(1);
        let a = mock.translate("good movie", "en", "es").unwrap();
        let b = mock.translate("good movie", "en", "fr").unwrap();
        assert_ne!(a, b);
        assert_eq!(a, MockProvider::new(1).translate("good movie", "en", "es").unwrap());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let policy = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        let delays: Vec<_> = (1..=4).map(|a| policy.backoff(a).as_millis()).collect();
        assert_eq!(delays, [100, 200, 350, 350]);
    }

    #[test]
    fn published_import_links_legs() {
        let cache = TranslationCache::in_memory();
        let record = PublishedBacktranslation {
            text: "Hello.".into(),
            lang: "bn".into(),
            backtranslation: "Hi.".into(),
            intermediate: None,
        };
        cache.import_published("pub", &[record]).unwrap();
        let out = backtranslate("Hello.", "bn", &CacheOnlyProvider::new("pub"), &cache).unwrap();
        assert_eq!((out.final_text.as_str(), out.cache_hits), ("Hi.", 2));
        assert!(backtranslate("Other.", "bn", &CacheOnlyProvider::new("pub"), &cache).is_err());
    }

    #[test]
    fn dropped_cache_is_sorted_by_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let cache = TranslationCache::open(&path).unwrap();
        for text in ["zeta", "alpha", "mid", "beta"] {
            cache.insert(CacheEntry::new("p", "en", "es", text, text.to_uppercase())).unwrap();
        }
        drop(cache);
        let keys: Vec<String> = fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<CacheEntry>(l).unwrap().key)
            .collect();
        assert_eq!(keys.len(), 4);
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let reopened = TranslationCache::open(&path).unwrap();
        assert_eq!(reopened.get(&cache_key("p", "en", "es", "mid")).as_deref(), Some("MID"));
    }

    #[test]
    fn bundled_cache_matches_its_records() {
        let records: Vec<PublishedBacktranslation> =
            PUBLISHED_RECORDS.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        TranslationCache::open(&path).unwrap().import_published(PUBLISHED_PROVIDER_ID, &records).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), PUBLISHED_CACHE);

        let cache = TranslationCache::published();
        let provider = CacheOnlyProvider::new(PUBLISHED_PROVIDER_ID);
        let text = "A sad human comedy played out on the back roads of life.";
        let es = backtranslate(text, "es", &provider, &cache).unwrap();
        assert_eq!(es.final_text, "A sad human comedy that develops in the secondary roads of life.");
        let bn = backtranslate(text, "bn", &provider, &cache).unwrap();
        assert_eq!(bn.final_text, "A sad man played the street behind comedy life.");
    }
}
