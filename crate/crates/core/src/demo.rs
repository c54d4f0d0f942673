//! Seeded synthetic movie reviews for examples, tests and smoke runs.
//!
//! Reviews mix neutral plot sentences with opinion sentences. Most opinion
//! sentences agree with the label, some contradict it, and the closing
//! sentence is the most reliable, so a bag-of-words model learns the task
//! but does not solve it perfectly.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Corpus, Document, Label, Split};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

const POSITIVE: &[&str] = &[
    "wonderful", "excellent", "brilliant", "moving", "funny", "beautiful", "great", "superb", "charming", "clever",
    "touching", "gripping", "delightful", "fantastic", "memorable",
];
const NEGATIVE: &[&str] = &[
    "awful", "terrible", "boring", "dull", "stupid", "painful", "bad", "weak", "clumsy", "tedious", "ugly", "silly",
    "forgettable", "lame", "pointless",
];
const SUBJECTS: &[&str] = &[
    "the acting", "the script", "the story", "the direction", "the soundtrack", "the ending", "the cast",
    "the dialogue", "this movie", "the film", "the pacing", "the photography",
];
const PLOT: &[&str] = &[
    "The story follows a young detective who returns to her home town.",
    "A family moves into an old house by the sea.",
    "Two brothers travel across the country to find their father.",
    "The film opens with a long shot of a quiet street at night.",
    "A retired soldier takes one last job in the city.",
    "The plot centers on a small band trying to make it big.",
    "Most of the movie takes place on a train.",
    "It is based on a novel I read years ago.",
    "The main character works at a diner and dreams of leaving.",
    "There is a subplot about a missing painting.",
    "The second half moves to a farm in the country.",
    "A group of students spends a summer at a lake.",
];
const OPINION_TEMPLATES: &[&str] = &[
    "I thought {subject} was {adj}.",
    "Honestly, {subject} is {adj}.",
    "{Subject} felt {adj} and {adj2}.",
    "What a {adj} experience.",
    "Overall {subject} was {adj}!",
    "{Subject} is simply {adj}.",
];
const CLOSERS: &[&str] = &[
    "In the end it was {adj}.",
    "Overall, a {adj} movie.",
    "My verdict: {adj}.",
    "Bottom line, {adj} and {adj2}.",
];

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default()
}

fn fill(template: &str, rng: &mut impl Rng, positive: bool) -> String {
    let words = if positive { POSITIVE } else { NEGATIVE };
    let subject = *SUBJECTS.choose(rng).expect("nonempty");
    template
        .replace("{Subject}", &capitalize(subject))
        .replace("{subject}", subject)
        .replace("{adj2}", words.choose(rng).expect("nonempty"))
        .replace("{adj}", words.choose(rng).expect("nonempty"))
}

/// One review with a 1 to 10 `rating`, reproducible from `seed`. Ratings of 7
/// and above are positive. Some reviews state the rating in their last sentence.
pub fn review(rating: u32, seed: u64) -> String {
    let positive = rating >= 7;
    let mut rng = rng(seed);
    let mut sentences = Vec::new();
    let plot_sentences = rng.gen_range(1..=4);
    let opinions = rng.gen_range(1..=3);
    for _ in 0..plot_sentences {
        sentences.push(PLOT.choose(&mut rng).expect("nonempty").to_string());
    }
    for _ in 0..opinions {
        let agrees = rng.gen_bool(0.7);
        let template = OPINION_TEMPLATES.choose(&mut rng).expect("nonempty");
        sentences.push(fill(template, &mut rng, positive == agrees));
    }
    sentences.shuffle(&mut rng);
    let closer_agrees = rng.gen_bool(0.85);
    let closer = CLOSERS.choose(&mut rng).expect("nonempty");
    sentences.push(fill(closer, &mut rng, positive == closer_agrees));
    if rng.gen_bool(0.3) {
        sentences.push(format!("Rating {rating}/10."));
    }
    sentences.join(" ")
}

/// A balanced corpus with `per_label` positive and negative documents in each
/// of the train and test splits. Ids follow the aclImdb layout.
pub fn demo_corpus(train_per_label: usize, test_per_label: usize, seed: u64) -> Corpus {
    let mut docs = Vec::new();
    for (split, dir, count) in [(Split::Train, "train", train_per_label), (Split::Test, "test", test_per_label)] {
        for (label, name) in [(Label::Negative, "neg"), (Label::Positive, "pos")] {
            for i in 0..count {
                let doc_seed = derive_seed(seed, &[dir.as_bytes(), name.as_bytes(), &(i as u64).to_le_bytes()]);
                let rating = if label == Label::Positive { 7 + i % 4 } else { 1 + i % 4 } as u32;
                docs.push(Document::original(
                    format!("{dir}/{name}/{i}_{rating}.txt"),
                    review(rating, doc_seed),
                    label,
                    split,
                ));
            }
        }
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    Corpus::from_documents(docs).expect("generated ids are unique")
}

/// Writes the original train/test documents of `corpus` as an aclImdb tree.
pub fn write_imdb_layout(corpus: &Corpus, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for dir in ["train/pos", "train/neg", "test/pos", "test/neg"] {
        let path = root.join(dir);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
    }
    for doc in corpus.iter().filter(|d| d.is_original()) {
        let split = match doc.split {
            Split::Train | Split::Valid => "train",
            Split::Test => "test",
            Split::Unsup => continue,
        };
        let name = doc.id.rsplit('/').next().unwrap_or(&doc.id);
        let path = root.join(split).join(doc.label.as_str()).join(name);
        fs::write(&path, &doc.text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
