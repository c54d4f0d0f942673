use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use augbench::analyze::{numeracy_probe, regress_sentence_features, sentence_feature_rows, write_probe_csv, TargetKind};
use augbench::augment::{augment_dataset, AugTechnique, AugmentSpec, Stopwords, Thesaurus};
use augbench::classify::{
    import_predictions, predict, predict_documents, train, LinearModel, PredictionTable, TrainConfig,
};
use augbench::corpus::{export_jsonl, ingest_imdb_dir, ingest_jsonl, split_validation, subsample_balanced, Corpus, Split};
use augbench::ensemble::{calibration_report, combine, fit_weights, WeightsFile, ENSEMBLE_SOURCE};
use augbench::experiment::{
    default_language_sets, run_language_study, run_low_resource_sweep, run_tta_pipeline, ExperimentConfig,
    TranslationSettings, TtaPredictions,
};
use augbench::translate::{backtranslate_corpus, read_published, TranslationCache, DEFAULT_LANGUAGES};
use augbench::{Error, Result};

#[derive(Parser)]
#[command(name = "augbench", version, about = "Text augmentation and low-resource sentiment experiments")]
struct Cli {
    /// Base seed; overrides seeds from config files where one applies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Translation cache file (JSONL; appended during a run, sorted by key on close).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Output directory [default: `out`, or a config's `report_dir` for `run`].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load an aclImdb directory or JSONL corpus and write `corpus.jsonl`.
    Ingest {
        #[arg(long, conflicts_with = "jsonl", required_unless_present = "jsonl")]
        imdb_dir: Option<PathBuf>,
        #[arg(long)]
        jsonl: Option<PathBuf>,
        /// Keep a balanced subsample of this many training documents.
        #[arg(long)]
        subsample: Option<usize>,
        /// Move this fraction of training documents to a validation split.
        #[arg(long)]
        valid_frac: Option<f64>,
        /// Output JSONL; defaults to `<out-dir>/corpus.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Append synthetic training documents and write `augmented.jsonl`.
    Augment {
        #[arg(long = "in", alias = "corpus")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// sr, ri, rs, rd or bt
        #[arg(long)]
        technique: AugTechnique,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        copies: usize,
        #[arg(long, value_delimiter = ',')]
        langs: Vec<String>,
        /// all or roundrobin
        #[arg(long, default_value = "all")]
        lang_strategy: String,
        /// Thesaurus TSV (`word<TAB>syn1,syn2`); the bundled one by default.
        #[arg(long)]
        thesaurus: Option<PathBuf>,
        /// Stopword list, one word per line.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[command(flatten)]
        translation: TranslationArgs,
    },
    /// Round-trip original documents through pivot languages.
    Backtranslate {
        #[arg(long = "in", alias = "corpus")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        langs: Vec<String>,
        /// Seed the cache from published `{text, lang, backtranslation}` records first.
        #[arg(long)]
        import_published: Option<PathBuf>,
        #[command(flatten)]
        translation: TranslationArgs,
    },
    /// Train the hashed n-gram classifier and write `model.json`.
    Train {
        #[arg(long = "in", alias = "corpus")]
        input: PathBuf,
        /// Classifier TOML config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Score documents and write `predictions_<source>.csv`.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", alias = "corpus")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value = "model")]
        source: String,
    },
    /// Fit, apply and inspect prediction ensembles.
    Ensemble {
        #[command(subcommand)]
        action: EnsembleAction,
    },
    /// Sentence-level regression and rating probe for a trained model.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", alias = "corpus")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = TargetArg::Label)]
        target: TargetArg,
        /// Fixed L1 strength; cross-validated when absent.
        #[arg(long)]
        l1: Option<f64>,
        /// Probe template containing `{rating}`.
        #[arg(long)]
        probe_template: Option<String>,
    },
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = RunKind::Sweep)]
        kind: RunKind,
        /// Training sizes for `--kind languages`.
        #[arg(long, value_delimiter = ',', default_values_t = [50, 1000])]
        sizes: Vec<usize>,
        /// Pivot languages for `--kind tta`.
        #[arg(long, value_delimiter = ',')]
        langs: Vec<String>,
    },
}

#[derive(Subcommand)]
enum EnsembleAction {
    /// Fit simplex weights minimizing log-loss and write `weights.json`.
    Fit {
        /// Prediction CSVs as FILE or SOURCE=FILE; the file stem names the source by default.
        #[arg(long, num_args = 1.., required = true)]
        preds: Vec<String>,
        /// Corpus providing labels.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Valid)]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply weights and write `ensemble.csv`.
    Combine {
        #[arg(long, num_args = 1.., required = true)]
        preds: Vec<String>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write `calibration.csv` for every source.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        preds: Vec<String>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TranslationArgs {
    #[arg(long, value_enum, default_value_t = ProviderArg::Mock)]
    provider: ProviderArg,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 5.0)]
    rps: f64,
    #[arg(long, default_value_t = 5)]
    max_retries: usize,
    #[arg(long, default_value_t = augbench::translate::MOCK_DEFAULT_NOISE)]
    mock_noise: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Http,
    CacheOnly,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
    All,
}

impl SplitArg {
    fn matches(self, split: Split) -> bool {
        match self {
            SplitArg::Train => split == Split::Train,
            SplitArg::Valid => split == Split::Valid,
            SplitArg::Test => split == Split::Test,
            SplitArg::All => true,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Label,
    Prediction,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunKind {
    Sweep,
    Languages,
    Tta,
}

impl TranslationArgs {
    fn settings(&self, seed: u64, cache: Option<PathBuf>) -> TranslationSettings {
        TranslationSettings {
            provider: match self.provider {
                ProviderArg::Mock => "mock",
                ProviderArg::Http => "http",
                ProviderArg::CacheOnly => "cache-only",
            }
            .into(),
            mock_seed: seed,
            mock_noise: self.mock_noise,
            endpoint: self.endpoint.clone(),
            requests_per_second: self.rps,
            max_retries: self.max_retries,
            provider_id: None,
            cache,
        }
    }
}

fn parse_sources(specs: &[String]) -> Result<PredictionTable> {
    let mut table = PredictionTable::new();
    for spec in specs {
        let (source, path) = match spec.split_once('=') {
            Some((source, path)) => (source.to_string(), PathBuf::from(path)),
            None => {
                let path = PathBuf::from(spec);
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
                (stem.trim_start_matches("predictions_").to_string(), path)
            }
        };
        table.merge(import_predictions(&path, &source)?)?;
    }
    Ok(table)
}

fn labels_in(corpus: &Corpus, split: SplitArg) -> HashMap<String, bool> {
    corpus
        .iter()
        .filter(|d| d.is_original() && split.matches(d.split))
        .filter_map(|d| d.label.as_bool().map(|l| (d.id.clone(), l)))
        .collect()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|e| Error::InvalidArgument(format!("{}: {e}", out.display())))?;
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Ingest { imdb_dir, jsonl, subsample, valid_frac, out: out_file } => {
            let mut corpus = match (imdb_dir, jsonl) {
                (Some(dir), _) => ingest_imdb_dir(dir)?,
                (None, Some(path)) => ingest_jsonl(path)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            if let Some(n) = subsample {
                corpus = subsample_balanced(&corpus, n, seed)?;
            }
            if let Some(frac) = valid_frac {
                corpus = split_validation(&corpus, frac, seed)?;
            }
            let path = out_file.unwrap_or_else(|| out.join("corpus.jsonl"));
            export_jsonl(&corpus, &path)?;
            println!("{} documents -> {}", corpus.len(), path.display());
        }
        Command::Augment {
            input,
            out: out_file,
            technique,
            alpha,
            copies,
            langs,
            lang_strategy,
            thesaurus,
            stopwords,
            translation,
        } => {
            let corpus = ingest_jsonl(input)?;
            let thesaurus = match thesaurus {
                Some(path) => Thesaurus::load(path)?,
                None => Thesaurus::bundled().clone(),
            };
            let stopwords = match stopwords {
                Some(path) => Stopwords::load(path)?,
                None => Stopwords::bundled(),
            };
            let spec = AugmentSpec {
                alpha,
                copies_per_original: copies,
                languages: langs,
                language_strategy: lang_strategy.parse()?,
                seed,
                stopwords,
                ..AugmentSpec::new(technique)
            };
            let translator = match technique {
                AugTechnique::Backtranslate => Some(translation.settings(seed, cli.cache).backtranslator()?),
                _ => None,
            };
            let (augmented, report) = augment_dataset(&corpus, &spec, &thesaurus, translator.as_ref())?;
            export_jsonl(&augmented, out_file.unwrap_or_else(|| out.join("augmented.jsonl")))?;
            write_json(&out.join("augment_report.json"), &report)?;
            println!(
                "{} originals, {} synthetic, {} unmodified, {} failures",
                report.originals,
                report.synthetics,
                report.unmodified,
                report.failures.len()
            );
        }
        Command::Backtranslate { input, out: out_file, langs, import_published, translation } => {
            if let Some(path) = import_published {
                let records = read_published(&path)?;
                let cache_path = cli.cache.clone().ok_or_else(|| {
                    Error::InvalidArgument("--import-published needs --cache".into())
                })?;
                let n = TranslationCache::open(&cache_path)?
                    .import_published(augbench::translate::PUBLISHED_PROVIDER_ID, &records)?;
                println!("imported {n} published backtranslations into {}", cache_path.display());
            }
            let Some(corpus) = input else { return Ok(()) };
            let corpus = ingest_jsonl(corpus)?;
            let langs = if langs.is_empty() {
                DEFAULT_LANGUAGES.iter().map(|s| s.to_string()).collect()
            } else {
                langs
            };
            let translator = translation.settings(seed, cli.cache).backtranslator()?;
            let (records, failures) = backtranslate_corpus(&corpus, &langs, &translator);
            let path = out_file.unwrap_or_else(|| out.join("backtranslations.jsonl"));
            let mut file = fs::File::create(&path).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for r in &records {
                writeln!(file, "{}", serde_json::to_string(r)?).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            }
            println!("{} backtranslations, {} failures -> {}", records.len(), failures.len(), path.display());
        }
        Command::Train { input, config, model_out } => {
            let corpus = ingest_jsonl(input)?;
            let mut config = match config {
                Some(path) => TrainConfig::load(path)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let model = train(&corpus, &config)?;
            model.save(model_out.unwrap_or_else(|| out.join("model.json")))?;
            let test: Vec<_> = corpus.in_split(Split::Test).filter(|d| d.is_original()).collect();
            if !test.is_empty() {
                println!("test accuracy {:.4}", augbench::classify::accuracy(&model, &test));
            }
        }
        Command::Predict { model, input, out: out_file, split, source } => {
            let model = LinearModel::load(model)?;
            let corpus = ingest_jsonl(input)?;
            let docs = corpus.iter().filter(|d| split.matches(d.split));
            let table = predict_documents(&model, docs, &source)?;
            let path = out_file.unwrap_or_else(|| out.join(format!("predictions_{source}.csv")));
            table.write_csv(&source, &path)?;
            println!("{} predictions -> {}", table.len(), path.display());
        }
        Command::Ensemble { action } => match action {
            EnsembleAction::Fit { preds, labels, split, out: out_file } => {
                let table = parse_sources(&preds)?;
                let labels = labels_in(&ingest_jsonl(labels)?, split);
                let sources: Vec<&str> = table.sources().collect();
                let fit = fit_weights(&table, &labels, &sources)?;
                let split_name = split.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
                WeightsFile::from_fit(&fit, split_name).save(out_file.unwrap_or_else(|| out.join("weights.json")))?;
                for (source, w) in fit.weights.iter() {
                    println!("{source}\t{w}");
                }
                println!("log-loss {} over {} documents", fit.loss, fit.documents);
            }
            EnsembleAction::Combine { preds, weights, out: out_file } => {
                let table = parse_sources(&preds)?;
                let weights = WeightsFile::load(weights)?.to_weights()?;
                let first = weights.iter().next().map(|(s, _)| s.to_string()).unwrap_or_default();
                let ids: Vec<String> = table.source(&first).into_iter().flat_map(|m| m.keys().cloned()).collect();
                let combined = combine(&table, &weights, ids.iter().map(String::as_str))?;
                combined.write_csv(ENSEMBLE_SOURCE, out_file.unwrap_or_else(|| out.join("ensemble.csv")))?;
                println!("{} combined predictions", combined.len());
            }
            EnsembleAction::Report { preds, labels, out: out_file } => {
                let table = parse_sources(&preds)?;
                let labels = labels.map(|p| ingest_jsonl(p).map(|c| c.labels())).transpose()?;
                let path = out_file.unwrap_or_else(|| out.join("calibration.csv"));
                let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&path)?;
                w.write_record(["source", "n", "frac_confident", "pred_std", "accuracy"])?;
                for source in table.sources() {
                    let r = calibration_report(&table, source, labels.as_ref())?;
                    w.write_record([
                        r.source,
                        r.n.to_string(),
                        r.frac_confident.to_string(),
                        r.pred_std.to_string(),
                        r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                    ])?;
                }
                w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
                print!("{}", fs::read_to_string(&path).unwrap_or_default());
            }
        },
        Command::Analyze { model, input, split, target, l1, probe_template } => {
            let model = LinearModel::load(model)?;
            let corpus = ingest_jsonl(input)?;
            let docs: Vec<_> = corpus
                .iter()
                .filter(|d| d.is_original() && split.matches(d.split) && d.label.as_bool().is_some())
                .collect();
            let features = sentence_feature_rows(&docs, &model)?;
            let (targets, kind): (Vec<bool>, _) = match target {
                TargetArg::Label => (docs.iter().map(|d| d.label.as_bool().unwrap_or(false)).collect(), TargetKind::TrueLabel),
                TargetArg::Prediction => {
                    (docs.iter().map(|d| predict(&model, &d.text) > 0.5).collect(), TargetKind::ModelPrediction)
                }
            };
            let fit = regress_sentence_features(&features, &targets, kind, l1)?;
            fit.save(out.join("regression.json"))?;
            for (name, c) in &fit.coefficients {
                println!("{name}\t{c:.4}");
            }
            println!("l1 {}", fit.l1_strength);
            if let Some(template) = probe_template {
                let rows = numeracy_probe(&model, &template)?;
                write_probe_csv(&rows, out.join("probe.csv"))?;
            }
        }
        Command::Run { config, kind, sizes, langs } => {
            let mut config = ExperimentConfig::load(config)?;
            if let Some(seed) = cli.seed {
                config.seeds = vec![seed];
            }
            let corpus = config
                .data
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("config has no [data] section".into()))?
                .load()?;
            let thesaurus = match &config.thesaurus {
                Some(path) => Thesaurus::load(path)?,
                None => Thesaurus::bundled().clone(),
            };
            let mut settings = config.translation.clone().unwrap_or_default();
            if cli.cache.is_some() {
                settings.cache = cli.cache.clone();
            }
            let translator = settings.backtranslator()?;
            let report_dir = cli.out_dir.clone().or_else(|| config.report_dir.clone()).unwrap_or_else(|| out.clone());
            match kind {
                RunKind::Sweep => {
                    let report = run_low_resource_sweep(&config, &corpus, &thesaurus, Some(&translator))?;
                    report.write(&report_dir)?;
                    print!("{}", fs::read_to_string(report_dir.join("table.csv")).unwrap_or_default());
                }
                RunKind::Languages => {
                    let report =
                        run_language_study(&sizes, &default_language_sets(), &config, &corpus, &thesaurus, &translator)?;
                    report.write(&report_dir)?;
                    print!("{}", fs::read_to_string(report_dir.join("table.csv")).unwrap_or_default());
                }
                RunKind::Tta => {
                    let langs = if langs.is_empty() {
                        DEFAULT_LANGUAGES.iter().map(|s| s.to_string()).collect()
                    } else {
                        langs
                    };
                    let split = if corpus.in_split(Split::Valid).next().is_some() {
                        corpus
                    } else {
                        split_validation(&corpus, config.valid_frac, config.split_seed)?
                    };
                    let model = train(&split, &config.classifier)?;
                    let outcome = run_tta_pipeline(
                        &split,
                        &langs,
                        &translator,
                        TtaPredictions::Model { classifier: &model, source: "model".into() },
                        None,
                    )?;
                    outcome.write(&report_dir)?;
                    print!("{}", fs::read_to_string(report_dir.join("calibration.csv")).unwrap_or_default());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
