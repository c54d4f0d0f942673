//! Which sentences drive the classifier? Regresses the document label and the
//! model's own prediction on summary statistics of sentence scores, then
//! probes how the model reads numeric ratings.

use augbench::analyze::{numeracy_probe, regress_sentence_features, sentence_feature_rows, TargetKind, FEATURE_NAMES};
use augbench::classify::{predict, train, TrainConfig};
use augbench::corpus::Split;
use augbench::demo::demo_corpus;

fn main() -> augbench::Result<()> {
    let corpus = demo_corpus(2000, 1000, 0);
    let model = train(&corpus, &TrainConfig::default())?;
    let docs: Vec<_> = corpus.in_split(Split::Test).collect();
    let features = sentence_feature_rows(&docs, &model)?;

    let labels: Vec<bool> = docs.iter().map(|d| d.label.as_bool().unwrap_or(false)).collect();
    let predictions: Vec<bool> = docs.iter().map(|d| predict(&model, &d.text) > 0.5).collect();
    let by_label = regress_sentence_features(&features, &labels, TargetKind::TrueLabel, None)?;
    let by_prediction = regress_sentence_features(&features, &predictions, TargetKind::ModelPrediction, None)?;

    println!("{:<8}{:>10}{:>12}", "feature", "label", "prediction");
    for name in FEATURE_NAMES {
        println!(
            "{name:<8}{:>10.4}{:>12.4}",
            by_label.coefficient(name).unwrap_or(0.0),
            by_prediction.coefficient(name).unwrap_or(0.0)
        );
    }
    println!("l1 strength: {:.5} / {:.5}\n", by_label.l1_strength, by_prediction.l1_strength);

    for row in numeracy_probe(&model, "{rating}")? {
        println!("Rating {:>3}/10  {:.4}", row.rating, row.p_positive);
    }
    Ok(())
}
