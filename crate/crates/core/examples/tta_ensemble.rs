//! Test-time augmentation: score backtranslated validation and test
//! documents, fit simplex weights on validation, apply them to test.

use std::sync::Arc;

use augbench::classify::{train, TrainConfig};
use augbench::corpus::split_validation;
use augbench::demo::demo_corpus;
use augbench::experiment::{run_tta_pipeline, TtaPredictions};
use augbench::translate::{Backtranslator, MockProvider, TranslationCache};

fn main() -> augbench::Result<()> {
    let corpus = split_validation(&demo_corpus(1000, 500, 0), 0.2, 0)?;
    let model = train(&corpus, &TrainConfig::default())?;
    let translator = Backtranslator::new(Arc::new(MockProvider::new(0)), Arc::new(TranslationCache::in_memory()));
    let languages: Vec<String> = ["es", "fr", "de", "bn"].iter().map(|s| s.to_string()).collect();

    let outcome = run_tta_pipeline(
        &corpus,
        &languages,
        &translator,
        TtaPredictions::Model { classifier: &model, source: "model".into() },
        None,
    )?;
    println!("weights fit on validation:");
    for (source, w) in outcome.weights.iter() {
        println!("  {source:<8} {w:.4}");
    }
    println!(
        "validation log-loss: model {:.5}, ensemble {:.5}",
        outcome.valid_loss_base, outcome.valid_loss_ensemble
    );
    println!("test calibration:");
    println!("  {:<9} {:>8} {:>8} {:>8}", "source", "conf", "std", "acc");
    for r in &outcome.calibration {
        println!(
            "  {:<9} {:>8.4} {:>8.4} {:>8.4}",
            r.source,
            r.frac_confident,
            r.pred_std,
            r.accuracy.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
