//! Experiment orchestration: low-resource sweeps, pivot-language studies and
//! the test-time augmentation pipeline, with deterministic CSV reports.
//!
//! Every `(train size, seed)` pair draws one balanced subsample that all
//! augmentation arms share, so arms are compared on identical originals.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::augment::{augment_dataset, AugTechnique, AugmentFailure, AugmentSpec, LanguageStrategy, Thesaurus};
use crate::classify::{predict_documents, train, Classifier, PredictionTable, TrainConfig};
use crate::corpus::{ingest_imdb_dir, ingest_jsonl, split_validation, subsample_balanced, Corpus, Split};
use crate::ensemble::{
    calibration_report, combine, fit_weights, source_log_loss, tta_generate, tta_source_name, tta_sources,
    variance_accuracy_table, CalibrationReport, SimplexWeights, VarianceRow, WeightFit, ENSEMBLE_SOURCE,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::translate::{
    Backtranslator, CacheOnlyProvider, HttpConfig, HttpProvider, MockProvider, RetryPolicy, TranslationCache,
    TranslationProvider, API_KEY_ENV, DEFAULT_LANGUAGES,
};

/// A training-set size: a document count or the whole training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TrainSize {
    Count(usize),
    Full,
}

impl fmt::Display for TrainSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainSize::Count(n) => write!(f, "{n}"),
            TrainSize::Full => f.write_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for TrainSize {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Count(0) => Err(serde::de::Error::custom("train size must be positive")),
            Raw::Count(n) => Ok(TrainSize::Count(n)),
            Raw::Word(w) if w == "full" => Ok(TrainSize::Full),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("unknown train size `{w}`"))),
        }
    }
}

/// One augmentation configuration compared within a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    /// Technique code or name; absent means no augmentation.
    #[serde(default)]
    pub technique: Option<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_copies")]
    pub copies: usize,
    #[serde(default)]
    pub languages: Vec<String>,
    #[serde(default)]
    pub language_strategy: Option<String>,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_copies() -> usize {
    1
}

impl Arm {
    pub fn baseline(name: impl Into<String>) -> Self {
        Arm {
            name: name.into(),
            technique: None,
            alpha: default_alpha(),
            copies: default_copies(),
            languages: Vec::new(),
            language_strategy: None,
        }
    }

    pub fn backtranslation<S: Into<String>>(name: impl Into<String>, languages: impl IntoIterator<Item = S>) -> Self {
        Arm {
            technique: Some("bt".into()),
            languages: languages.into_iter().map(Into::into).collect(),
            ..Arm::baseline(name)
        }
    }

    pub fn perturbation(name: impl Into<String>, technique: AugTechnique, alpha: f64, copies: usize) -> Self {
        Arm {
            technique: Some(technique.code().into()),
            alpha,
            copies,
            ..Arm::baseline(name)
        }
    }

    pub fn technique(&self) -> Result<Option<AugTechnique>> {
        self.technique.as_deref().map(str::parse).transpose()
    }

    /// The augmentation this arm applies, seeded for one run.
    pub fn spec(&self, seed: u64) -> Result<Option<AugmentSpec>> {
        let Some(technique) = self.technique()? else {
            return Ok(None);
        };
        let spec = AugmentSpec {
            alpha: self.alpha,
            copies_per_original: self.copies,
            languages: self.languages.clone(),
            language_strategy: match &self.language_strategy {
                Some(s) => s.parse()?,
                None => LanguageStrategy::AllLanguages,
            },
            seed,
            ..AugmentSpec::new(technique)
        };
        spec.validate()?;
        Ok(Some(spec))
    }

    /// Synthetic copies per original document.
    pub fn copies_per_original(&self) -> Result<usize> {
        Ok(match self.technique()? {
            None => 0,
            Some(AugTechnique::Backtranslate)
                if self.language_strategy.as_deref().map_or(true, |s| s.starts_with("all")) =>
            {
                self.languages.len()
            }
            Some(_) => self.copies,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default)]
    pub imdb_dir: Option<PathBuf>,
    #[serde(default)]
    pub jsonl: Option<PathBuf>,
}

impl DataSource {
    pub fn load(&self) -> Result<Corpus> {
        match (&self.imdb_dir, &self.jsonl) {
            (Some(dir), None) => ingest_imdb_dir(dir),
            (None, Some(path)) => ingest_jsonl(path),
            _ => Err(Error::InvalidConfig("data: set exactly one of imdb_dir or jsonl".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslationSettings {
    /// `mock`, `http` or `cache-only`.
    pub provider: String,
    pub mock_seed: u64,
    pub mock_noise: f64,
    pub endpoint: Option<String>,
    pub requests_per_second: f64,
    pub max_retries: usize,
    /// Provider id served by `cache-only`.
    pub provider_id: Option<String>,
    pub cache: Option<PathBuf>,
}

impl Default for TranslationSettings {
    fn default() -> Self {
        TranslationSettings {
            provider: "mock".into(),
            mock_seed: 0,
            mock_noise: crate::translate::MOCK_DEFAULT_NOISE,
            endpoint: None,
            requests_per_second: 5.0,
            max_retries: 5,
            provider_id: None,
            cache: None,
        }
    }
}

impl TranslationSettings {
    /// Builds the provider and opens the cache (in memory when no path is set).
    /// The HTTP API key is read from the environment.
    pub fn backtranslator(&self) -> Result<Backtranslator> {
        let provider: Arc<dyn TranslationProvider> = match self.provider.as_str() {
            "mock" => Arc::new(MockProvider::with_noise(self.mock_seed, self.mock_noise)),
            "http" => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("http provider needs an endpoint".into()))?;
                let mut config = HttpConfig::new(endpoint);
                config.api_key = std::env::var(API_KEY_ENV).ok();
                config.requests_per_second = self.requests_per_second;
                config.retry = RetryPolicy {
                    max_attempts: self.max_retries + 1,
                    ..RetryPolicy::default()
                };
                Arc::new(HttpProvider::new(config).map_err(|e| Error::InvalidConfig(e.to_string()))?)
            }
            "cache-only" => Arc::new(CacheOnlyProvider::new(
                self.provider_id
                    .clone()
                    .unwrap_or_else(|| crate::translate::PUBLISHED_PROVIDER_ID.to_string()),
            )),
            other => return Err(Error::InvalidConfig(format!("unknown provider `{other}`"))),
        };
        let cache = match &self.cache {
            Some(path) => TranslationCache::open(path)?,
            None => TranslationCache::in_memory(),
        };
        Ok(Backtranslator::new(provider, Arc::new(cache)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_train_sizes")]
    pub train_sizes: Vec<TrainSize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_arms")]
    pub arms: Vec<Arm>,
    #[serde(default)]
    pub classifier: TrainConfig,
    #[serde(default = "default_valid_frac")]
    pub valid_frac: f64,
    /// Seed of the validation carve, shared by all runs.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub translation: Option<TranslationSettings>,
    #[serde(default)]
    pub thesaurus: Option<PathBuf>,
    #[serde(default)]
    pub report_dir: Option<PathBuf>,
}

fn default_train_sizes() -> Vec<TrainSize> {
    [50, 500, 1000, 2000, 5000, 10000]
        .into_iter()
        .map(TrainSize::Count)
        .chain([TrainSize::Full])
        .collect()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_arms() -> Vec<Arm> {
    vec![Arm::baseline("None")]
}

fn default_valid_frac() -> f64 {
    0.1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: String::new(),
            train_sizes: default_train_sizes(),
            seeds: default_seeds(),
            arms: default_arms(),
            classifier: TrainConfig::default(),
            valid_frac: default_valid_frac(),
            split_seed: 0,
            data: None,
            translation: None,
            thesaurus: None,
            report_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        if self.train_sizes.is_empty() || self.arms.is_empty() {
            return Err(Error::InvalidConfig("train_sizes and arms must not be empty".into()));
        }
        let mut names: Vec<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.arms.len() {
            return Err(Error::InvalidConfig("arm names must be unique".into()));
        }
        for arm in &self.arms {
            arm.spec(0)?;
        }
        Ok(())
    }

    fn needs_translator(&self) -> Result<bool> {
        for arm in &self.arms {
            if arm.technique()? == Some(AugTechnique::Backtranslate) {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub n: TrainSize,
    pub arm: String,
    pub technique: String,
    pub languages: String,
    pub k: usize,
    pub seed: u64,
    pub status: String,
    pub accuracy: Option<f64>,
    pub error: Option<f64>,
    pub frac_confident: Option<f64>,
    pub pred_std: Option<f64>,
    pub train_docs: usize,
    pub synthetic_docs: usize,
    pub skipped: usize,
    /// Training subsample ids, kept for paired-comparison checks.
    #[serde(skip)]
    pub original_ids: Vec<String>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianRow {
    pub n: TrainSize,
    pub arm: String,
    pub technique: String,
    pub languages: String,
    pub k: usize,
    pub runs: usize,
    pub accuracy: Option<f64>,
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// Ordered by train size, then arm (config order), then seed (config order).
    pub runs: Vec<RunRow>,
    pub medians: Vec<MedianRow>,
    pub train_sizes: Vec<TrainSize>,
    pub arms: Vec<String>,
}

/// Median of a nonempty slice; mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

fn describe_arm(arm: &Arm) -> Result<(String, String, usize)> {
    let technique = arm.technique()?.map_or_else(|| "none".to_string(), |t| t.name().to_string());
    Ok((technique, arm.languages.join("+"), arm.copies_per_original()?))
}

struct RunContext<'a> {
    pool: &'a Corpus,
    config: &'a ExperimentConfig,
    thesaurus: &'a Thesaurus,
    translator: Option<&'a Backtranslator>,
    full_size: usize,
}

fn execute_run(ctx: &RunContext<'_>, size: TrainSize, arm: &Arm, seed: u64) -> RunRow {
    let started = Instant::now();
    let (technique, languages, k) = describe_arm(arm).unwrap_or_else(|e| ("invalid".into(), e.to_string(), 0));
    let mut row = RunRow {
        n: size,
        arm: arm.name.clone(),
        technique,
        languages,
        k,
        seed,
        status: "ok".into(),
        accuracy: None,
        error: None,
        frac_confident: None,
        pred_std: None,
        train_docs: 0,
        synthetic_docs: 0,
        skipped: 0,
        original_ids: Vec::new(),
        wall_time: Duration::ZERO,
    };
    if let Err(e) = fill_run(ctx, size, arm, seed, &mut row) {
        log::warn!("run n={size} arm={} seed={seed} failed: {e}", arm.name);
        row.status = format!("failed: {e}");
    }
    row.wall_time = started.elapsed();
    row
}

fn fill_run(ctx: &RunContext<'_>, size: TrainSize, arm: &Arm, seed: u64, row: &mut RunRow) -> Result<()> {
    let n = match size {
        TrainSize::Count(n) => n,
        TrainSize::Full => ctx.full_size,
    };
    let sample = match size {
        TrainSize::Full => ctx.pool.clone(),
        TrainSize::Count(_) => subsample_balanced(ctx.pool, n, seed)?,
    };
    row.original_ids = sample.in_split(Split::Train).map(|d| d.id.clone()).collect();
    let augmented = match arm.spec(seed)? {
        None => sample,
        Some(spec) => {
            let translator = if spec.technique == AugTechnique::Backtranslate {
                Some(ctx.translator.ok_or_else(|| Error::InvalidConfig("backtranslation arm without a translator".into()))?)
            } else {
                None
            };
            let (augmented, report) = augment_dataset(&sample, &spec, ctx.thesaurus, translator)?;
            row.synthetic_docs = report.synthetics;
            row.skipped = report.failures.len();
            augmented
        }
    };
    row.train_docs = augmented.in_split(Split::Train).count();
    let train_config = TrainConfig {
        seed: derive_seed(ctx.config.classifier.seed, &[b"run", &seed.to_le_bytes()]),
        ..ctx.config.classifier.clone()
    };
    let model = train(&augmented, &train_config)?;
    let test: Vec<_> = ctx.pool.in_split(Split::Test).filter(|d| d.is_original()).collect();
    let preds = predict_documents(&model, test.iter().copied(), "model")?;
    let labels = ctx.pool.labels();
    let report = calibration_report(&preds, "model", Some(&labels))?;
    let accuracy = report.accuracy.ok_or_else(|| Error::EmptyInput("test split has no labels".into()))?;
    row.accuracy = Some(accuracy);
    row.error = Some(1.0 - accuracy);
    row.frac_confident = Some(report.frac_confident);
    row.pred_std = Some(report.pred_std);
    Ok(())
}

/// Runs every `(train size, seed, arm)` combination and aggregates medians over seeds.
///
/// A failing run is recorded with a `failed: ...` status and left out of the
/// medians; it does not abort the sweep.
pub fn run_low_resource_sweep(
    config: &ExperimentConfig,
    corpus: &Corpus,
    thesaurus: &Thesaurus,
    translator: Option<&Backtranslator>,
) -> Result<ExperimentReport> {
    config.validate()?;
    if config.needs_translator()? && translator.is_none() {
        return Err(Error::InvalidConfig("backtranslation arms need a translator".into()));
    }
    if corpus.in_split(Split::Test).next().is_none() {
        return Err(Error::InvalidConfig("corpus has no test split".into()));
    }
    let originals_only = corpus.filtered(|d| d.is_original());
    let pool = if config.valid_frac > 0.0 {
        split_validation(&originals_only, config.valid_frac, config.split_seed)?
    } else {
        originals_only
    };
    let ctx = RunContext {
        full_size: pool.in_split(Split::Train).count(),
        pool: &pool,
        config,
        thesaurus,
        translator,
    };

    let jobs: Vec<(TrainSize, &Arm, u64)> = config
        .train_sizes
        .iter()
        .flat_map(|&size| {
            config
                .arms
                .iter()
                .flat_map(move |arm| config.seeds.iter().map(move |&seed| (size, arm, seed)))
        })
        .collect();
    let runs: Vec<RunRow> = jobs
        .par_iter()
        .map(|&(size, arm, seed)| execute_run(&ctx, size, arm, seed))
        .collect();

    let mut medians = Vec::new();
    for size in &config.train_sizes {
        for arm in &config.arms {
            let group: Vec<&RunRow> = runs.iter().filter(|r| r.n == *size && r.arm == arm.name).collect();
            let ok: Vec<&&RunRow> = group.iter().filter(|r| r.ok()).collect();
            let accuracies: Vec<f64> = ok.iter().filter_map(|r| r.accuracy).collect();
            let errors: Vec<f64> = ok.iter().filter_map(|r| r.error).collect();
            let (technique, languages, k) = describe_arm(arm)?;
            medians.push(MedianRow {
                n: *size,
                arm: arm.name.clone(),
                technique,
                languages,
                k,
                runs: ok.len(),
                accuracy: median(&accuracies),
                error: median(&errors),
            });
        }
    }
    Ok(ExperimentReport {
        runs,
        medians,
        train_sizes: config.train_sizes.clone(),
        arms: config.arms.iter().map(|a| a.name.clone()).collect(),
    })
}

/// Compares pivot-language sets at fixed training sizes.
///
/// Adds a `None` baseline arm followed by one backtranslation arm per
/// `(name, languages)` set, one copy per language.
pub fn run_language_study(
    base_sizes: &[usize],
    language_sets: &[(String, Vec<String>)],
    config: &ExperimentConfig,
    corpus: &Corpus,
    thesaurus: &Thesaurus,
    translator: &Backtranslator,
) -> Result<ExperimentReport> {
    let mut arms = vec![Arm::baseline("None")];
    arms.extend(language_sets.iter().map(|(name, langs)| Arm::backtranslation(name.clone(), langs.clone())));
    let study = ExperimentConfig {
        train_sizes: base_sizes.iter().map(|&n| TrainSize::Count(n)).collect(),
        arms,
        ..config.clone()
    };
    run_low_resource_sweep(&study, corpus, thesaurus, Some(translator))
}

/// Language sets of the pivot-language comparison table.
pub fn default_language_sets() -> Vec<(String, Vec<String>)> {
    let set = |name: &str, langs: &[&str]| (name.to_string(), langs.iter().map(|s| s.to_string()).collect());
    vec![
        set("10 Languages", &DEFAULT_LANGUAGES),
        set("Spanish", &["es"]),
        set("Spanish, French", &["es", "fr"]),
        set("Spanish, French, Bengali", &["es", "fr", "bn"]),
        set("Bengali", &["bn"]),
    ]
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

pub const REPORT_COLUMNS: [&str; 15] = [
    "kind", "n", "arm", "technique", "languages", "k", "seed", "status", "accuracy", "error", "frac_confident",
    "pred_std", "train_docs", "synthetic_docs", "skipped",
];

impl ExperimentReport {
    /// Writes `report.csv`, `table.csv` and `timings.csv` into `dir`.
    ///
    /// `report.csv` and `table.csv` are byte-stable for identical inputs;
    /// wall-clock times live only in `timings.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_report(&dir.join("report.csv"))?;
        self.write_table(&dir.join("table.csv"))?;
        self.write_timings(&dir.join("timings.csv"))
    }

    pub fn write_report(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(REPORT_COLUMNS)?;
        for r in &self.runs {
            w.write_record([
                "run".to_string(),
                r.n.to_string(),
                r.arm.clone(),
                r.technique.clone(),
                r.languages.clone(),
                r.k.to_string(),
                r.seed.to_string(),
                r.status.clone(),
                fmt_opt(r.accuracy),
                fmt_opt(r.error),
                fmt_opt(r.frac_confident),
                fmt_opt(r.pred_std),
                r.train_docs.to_string(),
                r.synthetic_docs.to_string(),
                r.skipped.to_string(),
            ])?;
        }
        for m in &self.medians {
            w.write_record([
                "median".to_string(),
                m.n.to_string(),
                m.arm.clone(),
                m.technique.clone(),
                m.languages.clone(),
                m.k.to_string(),
                String::new(),
                format!("{} runs", m.runs),
                fmt_opt(m.accuracy),
                fmt_opt(m.error),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Median error per arm (rows) and train size (columns), e.g.
    /// `Languages,Error@N=50,Error@N=1000`.
    pub fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["Languages".to_string()];
        header.extend(self.train_sizes.iter().map(|n| format!("Error@N={n}")));
        let rows = self
            .arms
            .iter()
            .map(|arm| {
                let mut row = vec![arm.clone()];
                for size in &self.train_sizes {
                    let error = self.medians.iter().find(|m| &m.arm == arm && m.n == *size).and_then(|m| m.error);
                    row.push(error.map(|e| format!("{e:.4}")).unwrap_or_default());
                }
                row
            })
            .collect();
        (header, rows)
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        let (header, rows) = self.table();
        let mut w = csv_writer(path)?;
        w.write_record(&header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_timings(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["n", "arm", "seed", "wall_time_s"])?;
        for r in &self.runs {
            w.write_record([
                r.n.to_string(),
                r.arm.clone(),
                r.seed.to_string(),
                format!("{:.3}", r.wall_time.as_secs_f64()),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn median_error(&self, size: TrainSize, arm: &str) -> Option<f64> {
        self.medians.iter().find(|m| m.n == size && m.arm == arm)?.error
    }
}

/// Where the base predictions of the TTA pipeline come from.
pub enum TtaPredictions<'a> {
    /// Score originals and variants with a classifier.
    Model { classifier: &'a dyn Classifier, source: String },
    /// Predictions produced elsewhere, covering originals and variant ids.
    Imported { table: PredictionTable, source: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtaOutcome {
    pub weights: SimplexWeights,
    pub fit: Option<WeightFit>,
    pub sources: Vec<String>,
    /// Test predictions for the base source, every `tta:<lang>` source and `ensemble`.
    pub test_predictions: PredictionTable,
    pub calibration: Vec<CalibrationReport>,
    pub variance: Vec<VarianceRow>,
    pub valid_loss_base: f64,
    pub valid_loss_ensemble: f64,
    pub translation_failures: Vec<AugmentFailure>,
    pub fallbacks: Vec<AugmentFailure>,
}

fn restrict(table: &PredictionTable, ids: &std::collections::BTreeSet<String>) -> Result<PredictionTable> {
    let mut out = PredictionTable::new();
    for source in table.sources() {
        for (doc, p) in table.source(source).into_iter().flatten() {
            if ids.contains(doc) {
                out.insert(doc.clone(), source, *p)?;
            }
        }
    }
    Ok(out)
}

/// Backtranslates validation and test documents, scores the variants, fits
/// ensemble weights on validation and applies them to test.
///
/// With `fixed_weights` the fitting step is skipped.
pub fn run_tta_pipeline(
    corpus: &Corpus,
    languages: &[String],
    translator: &Backtranslator,
    predictions: TtaPredictions<'_>,
    fixed_weights: Option<SimplexWeights>,
) -> Result<TtaOutcome> {
    let eval = corpus.filtered(|d| d.is_original() && matches!(d.split, Split::Valid | Split::Test));
    let valid_ids: std::collections::BTreeSet<String> =
        eval.in_split(Split::Valid).map(|d| d.id.clone()).collect();
    let test_ids: std::collections::BTreeSet<String> = eval.in_split(Split::Test).map(|d| d.id.clone()).collect();
    if valid_ids.is_empty() || test_ids.is_empty() {
        return Err(Error::InvalidArgument("TTA needs validation and test documents".into()));
    }
    let (with_variants, tta_report) = tta_generate(&eval, languages, translator)?;
    let (raw, source) = match predictions {
        TtaPredictions::Model { classifier, source } => {
            (predict_documents(classifier, with_variants.iter(), &source)?, source)
        }
        TtaPredictions::Imported { table, source } => (table, source),
    };
    let (table, fallbacks) = tta_sources(&with_variants, &raw, &source, languages)?;
    let sources: Vec<String> = std::iter::once(source.clone())
        .chain(languages.iter().map(|l| tta_source_name(l)))
        .collect();
    let source_refs: Vec<&str> = sources.iter().map(String::as_str).collect();

    let labels = corpus.labels();
    let valid_labels: HashMap<String, bool> = labels
        .iter()
        .filter(|(id, _)| valid_ids.contains(*id))
        .map(|(id, l)| (id.clone(), *l))
        .collect();
    let test_labels: HashMap<String, bool> = labels
        .iter()
        .filter(|(id, _)| test_ids.contains(*id))
        .map(|(id, l)| (id.clone(), *l))
        .collect();

    let valid_table = restrict(&table, &valid_ids)?;
    let (weights, fit) = match fixed_weights {
        Some(w) => (w, None),
        None => {
            let fit = fit_weights(&valid_table, &valid_labels, &source_refs)?;
            (fit.weights.clone(), Some(fit))
        }
    };
    let valid_combined = combine(&valid_table, &weights, valid_ids.iter().map(String::as_str))?;
    let valid_loss_base = source_log_loss(&valid_table, &source, &valid_labels)?;
    let valid_loss_ensemble = source_log_loss(&valid_combined, ENSEMBLE_SOURCE, &valid_labels)?;

    let mut test_predictions = restrict(&table, &test_ids)?;
    let combined = combine(&test_predictions, &weights, test_ids.iter().map(String::as_str))?;
    test_predictions.merge(combined)?;
    let calibration = test_predictions
        .sources()
        .map(|s| calibration_report(&test_predictions, s, Some(&test_labels)))
        .collect::<Result<Vec<_>>>()?;
    let variance = variance_accuracy_table(&test_predictions, &test_labels)?;
    Ok(TtaOutcome {
        weights,
        fit,
        sources,
        test_predictions,
        calibration,
        variance,
        valid_loss_base,
        valid_loss_ensemble,
        translation_failures: tta_report.failures,
        fallbacks,
    })
}

impl TtaOutcome {
    /// Writes calibration and variance tables plus the combined test predictions.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("calibration.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["source", "n", "frac_confident", "pred_std", "accuracy"])?;
        for r in &self.calibration {
            w.write_record([
                r.source.clone(),
                r.n.to_string(),
                r.frac_confident.to_string(),
                r.pred_std.to_string(),
                fmt_opt(r.accuracy),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("variance.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["source", "pred_std", "accuracy"])?;
        for r in &self.variance {
            w.write_record([r.source.clone(), r.pred_std.to_string(), r.accuracy.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let weights: BTreeMap<String, f64> = self.weights.iter().map(|(s, w)| (s.to_string(), w)).collect();
        let file = crate::ensemble::WeightsFile {
            weights,
            objective: "logloss".into(),
            fitting_set: "valid".into(),
            loss: self.valid_loss_ensemble,
        };
        file.save(dir.join("weights.json"))?;
        self.test_predictions.write_csv(ENSEMBLE_SOURCE, dir.join("ensemble_test.csv"))
    }
}
