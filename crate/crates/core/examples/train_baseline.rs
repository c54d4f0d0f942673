//! Trains the hashed n-gram classifier and reports test accuracy.
//!
//! Uses an aclImdb directory when `AUGBENCH_IMDB_DIR` is set, otherwise a
//! synthetic corpus.

use augbench::classify::{accuracy, train, LinearModel, TrainConfig};
use augbench::corpus::{ingest_imdb_dir, Split};
use augbench::demo::demo_corpus;

fn main() -> augbench::Result<()> {
    let corpus = match std::env::var("AUGBENCH_IMDB_DIR") {
        Ok(dir) => ingest_imdb_dir(dir)?,
        Err(_) => demo_corpus(2000, 1000, 0),
    };
    let config = TrainConfig::default();
    let model = train(&corpus, &config)?;
    let test: Vec<_> = corpus.in_split(Split::Test).collect();
    println!("train documents: {}", corpus.in_split(Split::Train).count());
    println!("test accuracy:   {:.4}", accuracy(&model, &test));

    let path = std::env::temp_dir().join("augbench-model.json");
    model.save(&path)?;
    let reloaded = LinearModel::load(&path)?;
    println!("reloaded model agrees: {}", accuracy(&reloaded, &test) == accuracy(&model, &test));
    Ok(())
}
