//! Low-resource sweep and pivot-language comparison with mock backtranslation.
//!
//! Prints the per-arm median error table and writes the CSV reports to a
//! temporary directory.

use std::sync::Arc;

use augbench::augment::{AugTechnique, Thesaurus};
use augbench::corpus::ingest_imdb_dir;
use augbench::demo::demo_corpus;
use augbench::experiment::{
    default_language_sets, run_language_study, run_low_resource_sweep, Arm, ExperimentConfig, TrainSize,
};
use augbench::translate::{Backtranslator, MockProvider, TranslationCache};

fn print_table(title: &str, report: &augbench::experiment::ExperimentReport) {
    let (header, rows) = report.table();
    println!("{title}");
    println!("  {}", header.join(" | "));
    for row in rows {
        println!("  {}", row.join(" | "));
    }
}

fn main() -> augbench::Result<()> {
    let corpus = match std::env::var("AUGBENCH_IMDB_DIR") {
        Ok(dir) => ingest_imdb_dir(dir)?,
        Err(_) => demo_corpus(1500, 1000, 0),
    };
    let translator = Backtranslator::new(Arc::new(MockProvider::new(0)), Arc::new(TranslationCache::in_memory()));
    let thesaurus = Thesaurus::bundled();

    let config = ExperimentConfig {
        train_sizes: vec![TrainSize::Count(50), TrainSize::Count(500), TrainSize::Full],
        arms: vec![
            Arm::baseline("None"),
            Arm::backtranslation("Backtranslation (Spanish)", ["es"]),
            Arm::perturbation("Token Insertion", AugTechnique::RandomInsert, 0.1, 1),
        ],
        ..ExperimentConfig::default()
    };
    let sweep = run_low_resource_sweep(&config, &corpus, thesaurus, Some(&translator))?;
    print_table("technique sweep (median error over 3 seeds)", &sweep);

    let study = run_language_study(&[50, 1000], &default_language_sets(), &config, &corpus, thesaurus, &translator)?;
    print_table("pivot languages", &study);

    let dir = std::env::temp_dir().join("augbench-sweep");
    study.write(&dir)?;
    println!("reports written to {}", dir.display());
    Ok(())
}
