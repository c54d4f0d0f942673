mod common;

use std::sync::Arc;

use rand::{Rng, SeedableRng};

use augbench::augment::{detokenize, tokenize};
use augbench::demo::demo_corpus;
use augbench::translate::{
    backtranslate, backtranslate_corpus, read_published, Backtranslator, CacheOnlyProvider, MockProvider,
    TranslationCache, TranslationProvider, PUBLISHED_PROVIDER_ID,
};
use common::Counting;

const TABLE1: &str = "A sad human comedy played out on the back roads of life.";

#[test]
fn warm_cache_makes_no_provider_calls() {
    let provider = Counting::new(MockProvider::new(3));
    let cache = TranslationCache::in_memory();
    let first = backtranslate(TABLE1, "de", &provider, &cache).unwrap();
    assert_eq!((first.cache_hits, provider.calls()), (0, 2));
    let second = backtranslate(TABLE1, "de", &provider, &cache).unwrap();
    assert_eq!(second.cache_hits, 2);
    assert_eq!(provider.calls(), 2);
    assert_eq!(second.final_text, first.final_text);
    assert_eq!(second.intermediate_text, first.intermediate_text);
}

#[test]
fn providers_do_not_share_cache_entries() {
    let cache = TranslationCache::in_memory();
    let a = MockProvider::with_noise(1, 0.9);
    let b = MockProvider::with_noise(2, 0.9);
    let ra = backtranslate(TABLE1, "es", &a, &cache).unwrap();
    let rb = backtranslate(TABLE1, "es", &b, &cache).unwrap();
    assert_eq!(rb.cache_hits, 0);
    assert_eq!(ra.final_text, a.translate(&a.translate(TABLE1, "en", "es").unwrap(), "es", "en").unwrap());
    assert_eq!(rb.final_text, b.translate(&b.translate(TABLE1, "en", "es").unwrap(), "es", "en").unwrap());
}

#[test]
fn batch_output_is_independent_of_thread_count() {
    let corpus = demo_corpus(30, 0, 4);
    let langs: Vec<String> = ["es", "fr", "bn"].iter().map(|s| s.to_string()).collect();
    let run = |threads: usize| {
        let translator =
            Backtranslator::new(Arc::new(MockProvider::new(0)), Arc::new(TranslationCache::in_memory()));
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| backtranslate_corpus(&corpus, &langs, &translator))
    };
    let (serial, failures) = run(1);
    assert!(failures.is_empty());
    assert_eq!(serial.len(), 60 * 3);
    assert_eq!(run(8).0, serial);
}

#[test]
fn concurrent_appends_survive_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let corpus = demo_corpus(20, 0, 5);
    let langs: Vec<String> = ["es", "fr", "de", "it"].iter().map(|s| s.to_string()).collect();
    let translator = Backtranslator::new(Arc::new(MockProvider::new(0)), Arc::new(TranslationCache::open(&path).unwrap()));
    let (records, _) = backtranslate_corpus(&corpus, &langs, &translator);
    drop(translator);

    let provider = Counting::new(MockProvider::new(0));
    let reopened = TranslationCache::open(&path).unwrap();
    assert_eq!(reopened.len(), 40 * 4 * 2);
    for r in &records {
        let doc = corpus.get(&r.parent_id).unwrap();
        let again = backtranslate(&doc.text, &r.record.pivot_language, &provider, &reopened).unwrap();
        assert_eq!(again.final_text, r.record.final_text);
    }
    assert_eq!(provider.calls(), 0);
}

#[test]
fn published_records_import_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let records_path = dir.path().join("published.jsonl");
    std::fs::write(&records_path, augbench::translate::PUBLISHED_RECORDS).unwrap();
    let records = read_published(&records_path).unwrap();
    assert_eq!(records.len(), 2);

    let cache_path = dir.path().join("cache.jsonl");
    TranslationCache::open(&cache_path).unwrap().import_published(PUBLISHED_PROVIDER_ID, &records).unwrap();
    let cache = TranslationCache::open(&cache_path).unwrap();
    let provider = CacheOnlyProvider::new(PUBLISHED_PROVIDER_ID);
    let bn = backtranslate(TABLE1, "bn", &provider, &cache).unwrap();
    assert_eq!(bn.final_text, "A sad man played the street behind comedy life.");
    assert_eq!(bn.cache_hits, 2);
    assert!(backtranslate(TABLE1, "fr", &provider, &cache).is_err());
}

/// Token-level Levenshtein distance.
fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diagonal = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let substitution = diagonal + usize::from(x != y);
            diagonal = row[j + 1];
            row[j + 1] = substitution.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

#[test]
fn mock_round_trip_stays_within_a_quarter_of_tokens() {
    const WORDS: &[&str] = &[
        "the", "movie", "was", "good", "bad", "story", "actor", "great", "and", "of", "film", "funny", "life",
        "road", "sad", "comedy", "ending", "music", "slow", "beautiful", "a", "plot", "character", "scene",
    ];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let provider = MockProvider::new(0);
    let cache = TranslationCache::in_memory();
    let mut total_changes = 0;
    for _ in 0..100 {
        let len = rng.gen_range(5..30);
        let mut sentence: Vec<&str> = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        sentence.push(".");
        let text = detokenize(&augbench::augment::TokenSeq::new(sentence).unwrap());
        let lang = ["es", "fr", "de", "bn"][rng.gen_range(0..4)];
        let out = backtranslate(&text, lang, &provider, &cache).unwrap();
        let (before, after) = (tokenize(&text), tokenize(&out.final_text));
        let distance = edit_distance(before.as_slice(), after.as_slice());
        total_changes += distance;
        assert!(
            distance * 4 <= before.len(),
            "{distance} edits on {} tokens: {text:?} -> {:?}",
            before.len(),
            out.final_text
        );
    }
    assert!(total_changes > 0, "default noise should change some words");
}
