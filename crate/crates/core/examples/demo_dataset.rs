//! Writes a synthetic aclImdb-style tree for trying the CLI without the real data.
//!
//! cargo run --example demo_dataset -- /tmp/aclImdb-demo 500 500

use augbench::demo::{demo_corpus, write_imdb_layout};

fn main() -> augbench::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = args.next().unwrap_or_else(|| "aclImdb-demo".into());
    let train: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let test: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let corpus = demo_corpus(train, test, 0);
    write_imdb_layout(&corpus, &root)?;
    println!("wrote {} reviews under {root}", corpus.len());
    Ok(())
}
