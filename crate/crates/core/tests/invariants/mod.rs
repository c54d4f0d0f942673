//! Module invariants checked by random testing, shared by the property and
//! acceptance targets.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::{TestCaseError, TestRunner};

use augbench::analyze::{fit_l1_logistic, l1_max, split_sentences, standardize, SentenceFeatures};
use augbench::augment::{
    augment_dataset, detokenize, edit_count, random_delete, random_insert, random_swap, synonym_replace, tokenize,
    AugTechnique, AugmentSpec, Stopwords, Thesaurus, TokenSeq,
};
use augbench::classify::{bucket, featurize, PredictionTable};
use augbench::corpus::{read_jsonl, subsample_balanced, write_jsonl, Corpus, Document, Label, Split};
use augbench::ensemble::{calibration_report, combine, fit_weights, source_log_loss, SimplexWeights, ENSEMBLE_SOURCE};
use augbench::translate::{Backtranslator, MockProvider, TranslationCache};

const VOCAB: &[&str] = &[
    "good", "bad", "movie", "film", "sad", "comedy", "life", "great", "story", "the", "of", "a", "and", "funny",
    "actor", "road", ".", ",", "!", "Good", "Movie",
];

pub const CASES: u32 = 1000;

pub type Outcome = Result<(), String>;

fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome {
    let mut runner = TestRunner::new(ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn tokens(max: usize) -> impl Strategy<Value = TokenSeq> {
    prop::collection::vec(prop::sample::select(VOCAB), 0..max).prop_map(|v| TokenSeq::new(v).unwrap())
}

fn is_subsequence(needle: &[String], haystack: &[String]) -> bool {
    let mut it = haystack.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

fn sorted(v: &[String]) -> Vec<String> {
    let mut v = v.to_vec();
    v.sort();
    v
}

fn non_whitespace(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    prop::collection::vec((tokens(12), any::<bool>(), 0u8..3), 1..24).prop_map(|docs| {
        let docs = docs
            .into_iter()
            .enumerate()
            .map(|(i, (t, pos, split))| {
                let split = [Split::Train, Split::Valid, Split::Test][split as usize];
                let label = if pos { Label::Positive } else { Label::Negative };
                let text = if t.is_empty() { "empty".to_string() } else { detokenize(&t) };
                Document::original(format!("d{i:03}"), text, label, split)
            })
            .collect();
        Corpus::from_documents(docs).unwrap()
    })
}

/// A prediction table over `docs` documents and `k` sources, plus labels.
fn table_strategy() -> impl Strategy<Value = (PredictionTable, HashMap<String, bool>, Vec<String>)> {
    (2usize..5, 4usize..40).prop_flat_map(|(k, docs)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..=1.0, docs), k),
            prop::collection::vec(any::<bool>(), docs),
        )
            .prop_map(move |(columns, labels)| {
                let sources: Vec<String> = (0..k).map(|s| format!("s{s}")).collect();
                let mut table = PredictionTable::new();
                for (s, column) in sources.iter().zip(&columns) {
                    for (d, p) in column.iter().enumerate() {
                        table.insert(format!("doc{d:02}"), s, *p).unwrap();
                    }
                }
                let labels = labels.iter().enumerate().map(|(d, l)| (format!("doc{d:02}"), *l)).collect();
                (table, labels, sources)
            })
    })
}

/// A small design matrix with both classes present.
fn design_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<bool>)> {
    (10usize..40, 1usize..4).prop_flat_map(|(n, d)| {
        (prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n), prop::collection::vec(any::<bool>(), n))
            .prop_map(|(x, mut y)| {
                y[0] = true;
                y[1] = false;
                (x, y)
            })
    })
}

pub fn swap_preserves_length_and_multiset(cases: u32) -> Outcome {
    check(cases, (
        tokens(30),
        0.0f64..=1.0,
        any::<u64>(),
    ), |(t, alpha, seed)| {
    let out = random_swap(&t, alpha, seed);
    prop_assert_eq!(out.tokens.len(), t.len());
    prop_assert_eq!(sorted(out.tokens.as_slice()), sorted(t.as_slice()));
    prop_assert_eq!(&out, &random_swap(&t, alpha, seed));
        Ok(())
    })
}

pub fn delete_is_a_nonempty_subsequence(cases: u32) -> Outcome {
    check(cases, (
        tokens(30),
        0.0f64..=1.0,
        any::<u64>(),
    ), |(t, p, seed)| {
    let out = random_delete(&t, p, seed);
    prop_assert!(is_subsequence(out.tokens.as_slice(), t.as_slice()));
    prop_assert_eq!(out.tokens.is_empty(), t.is_empty());
    prop_assert_eq!(&out, &random_delete(&t, p, seed));
        Ok(())
    })
}

pub fn insert_keeps_input_as_subsequence(cases: u32) -> Outcome {
    check(cases, (
        tokens(30),
        0.0f64..=1.0,
        any::<u64>(),
    ), |(t, alpha, seed)| {
    let thesaurus = Thesaurus::bundled();
    let stopwords = Stopwords::bundled();
    let out = random_insert(&t, alpha, thesaurus, &stopwords, seed);
    prop_assert!(is_subsequence(t.as_slice(), out.tokens.as_slice()));
    let expected = if out.modified { t.len() + edit_count(alpha, t.len()) } else { t.len() };
    prop_assert_eq!(out.tokens.len(), expected);
    prop_assert_eq!(&out, &random_insert(&t, alpha, thesaurus, &stopwords, seed));
        Ok(())
    })
}

pub fn synonym_replace_preserves_length(cases: u32) -> Outcome {
    check(cases, (
        tokens(30),
        0.0f64..=1.0,
        any::<u64>(),
    ), |(t, alpha, seed)| {
    let thesaurus = Thesaurus::bundled();
    let stopwords = Stopwords::bundled();
    let out = synonym_replace(&t, alpha, thesaurus, &stopwords, seed);
    prop_assert_eq!(out.tokens.len(), t.len());
    for (before, after) in t.as_slice().iter().zip(out.tokens.as_slice()) {
        if before != after {
            let synonyms = thesaurus.synonyms(before).unwrap();
            prop_assert!(synonyms.contains(&after.to_lowercase()), "{} -> {}", before, after);
        }
    }
    prop_assert_eq!(&out, &synonym_replace(&t, alpha, thesaurus, &stopwords, seed));
        Ok(())
    })
}

pub fn detokenize_conserves_characters(cases: u32) -> Outcome {
    check(cases, "[a-zA-Z.,!?' \\t\\n-]{0,60}", |text| {
    prop_assert_eq!(non_whitespace(&detokenize(&tokenize(&text))), non_whitespace(&text));
        Ok(())
    })
}

pub fn sentence_split_conserves_characters(cases: u32) -> Outcome {
    check(cases, "[a-zA-Z.!? ]{0,80}(<br /><br />)?[a-zA-Z.!? ]{0,40}", |text| {
    let joined: String = split_sentences(&text).concat();
    prop_assert_eq!(non_whitespace(&joined), non_whitespace(&text));
        Ok(())
    })
}

pub fn jsonl_round_trip(cases: u32) -> Outcome {
    check(cases, corpus_strategy(), |corpus| {
    let mut buf = Vec::new();
    write_jsonl(&corpus, &mut buf).unwrap();
    let back = read_jsonl(buf.as_slice(), std::path::Path::new("mem")).unwrap();
    prop_assert_eq!(back, corpus);
        Ok(())
    })
}

pub fn subsample_is_balanced_and_deterministic(cases: u32) -> Outcome {
    check(cases, (
        corpus_strategy(),
        1usize..6,
        any::<u64>(),
    ), |(corpus, n, seed)| {
    let train_pos = corpus.in_split(Split::Train).filter(|d| d.label == Label::Positive).count();
    let train_neg = corpus.in_split(Split::Train).filter(|d| d.label == Label::Negative).count();
    match subsample_balanced(&corpus, n, seed) {
        Ok(sample) => {
            let pos = sample.in_split(Split::Train).filter(|d| d.label == Label::Positive).count();
            let neg = sample.in_split(Split::Train).filter(|d| d.label == Label::Negative).count();
            prop_assert_eq!(pos + neg, n);
            prop_assert!(pos.abs_diff(neg) <= 1);
            prop_assert_eq!(sample, subsample_balanced(&corpus, n, seed).unwrap());
        }
        Err(_) => prop_assert!(train_pos < n.div_ceil(2) || train_neg < n / 2),
    }
        Ok(())
    })
}

pub fn synthetics_inherit_labels_and_resolve(cases: u32) -> Outcome {
    check(cases, (
        corpus_strategy(),
        prop::sample::select(&AugTechnique::ALL[..]),
        1usize..3,
        any::<u64>(),
    ), |(corpus, technique, copies, seed)| {
    let translator = Backtranslator::new(Arc::new(MockProvider::new(seed)), Arc::new(TranslationCache::in_memory()));
    let spec = if technique == AugTechnique::Backtranslate {
        AugmentSpec { seed, ..AugmentSpec::backtranslate(["es", "bn"]) }
    } else {
        AugmentSpec { seed, copies_per_original: copies, ..AugmentSpec::new(technique) }
    };
    let translator = (technique == AugTechnique::Backtranslate).then_some(&translator);
    let (out, _) = augment_dataset(&corpus, &spec, Thesaurus::bundled(), translator).unwrap();
    for doc in corpus.iter() {
        prop_assert_eq!(out.get(&doc.id), Some(doc));
    }
    for doc in out.iter().filter(|d| !d.is_original()) {
        let parent = out.get(doc.parent_id().unwrap()).unwrap();
        prop_assert!(parent.is_original());
        prop_assert_eq!(parent.split, Split::Train);
        prop_assert_eq!(doc.label, parent.label);
    }
        Ok(())
    })
}

pub fn fitted_weights_are_on_the_simplex_and_beat_every_vertex(cases: u32) -> Outcome {
    check(cases, table_strategy(), |(table, labels, sources)| {
    let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
    let fit = fit_weights(&table, &labels, &refs).unwrap();
    let sum: f64 = fit.weights.iter().map(|(_, w)| w).sum();
    prop_assert!((sum - 1.0).abs() <= 1e-9);
    prop_assert!(fit.weights.iter().all(|(_, w)| w >= 0.0));
    let ids: Vec<&str> = labels.keys().map(String::as_str).collect();
    let combined = combine(&table, &fit.weights, ids.iter().copied()).unwrap();
    let fitted = source_log_loss(&combined, ENSEMBLE_SOURCE, &labels).unwrap();
    for s in &sources {
        prop_assert!(fitted <= source_log_loss(&table, s, &labels).unwrap());
    }
    prop_assert_eq!(fit_weights(&table, &labels, &refs).unwrap(), fit);
        Ok(())
    })
}

pub fn combine_is_affine_and_exact_at_vertices(cases: u32) -> Outcome {
    check(cases, (
        table_strategy(),
        prop::collection::vec(0.01f64..1.0, 4),
    ), |((table, labels, sources), raw)| {
    let ids: Vec<&str> = labels.keys().map(String::as_str).collect();
    for s in &sources {
        let vertex = combine(&table, &SimplexWeights::vertex(s), ids.iter().copied()).unwrap();
        for id in &ids {
            prop_assert_eq!(vertex.get(id, ENSEMBLE_SOURCE), table.get(id, s));
        }
    }
    let raw = &raw[..sources.len()];
    let total: f64 = raw.iter().sum();
    let weights = SimplexWeights::new(sources.iter().zip(raw).map(|(s, w)| (s.clone(), w / total))).unwrap();
    let combined = combine(&table, &weights, ids.iter().copied()).unwrap();
    for id in &ids {
        let expected: f64 = weights.iter().map(|(s, w)| w * table.get(id, s).unwrap()).sum();
        prop_assert!((combined.get(id, ENSEMBLE_SOURCE).unwrap() - expected).abs() <= 1e-12);
    }
        Ok(())
    })
}

pub fn calibration_is_permutation_invariant(cases: u32) -> Outcome {
    check(cases, (
        prop::collection::vec(0.0f64..=1.0, 1..60),
        0usize..60,
    ), |(ps, shift)| {
    let mut a = PredictionTable::new();
    let mut b = PredictionTable::new();
    for (i, p) in ps.iter().enumerate() {
        a.insert(format!("{i:03}"), "s", *p).unwrap();
        b.insert(format!("{:03}", (i + shift) % ps.len()), "s", *p).unwrap();
    }
    let (ra, rb) = (calibration_report(&a, "s", None).unwrap(), calibration_report(&b, "s", None).unwrap());
    prop_assert_eq!(ra.frac_confident, rb.frac_confident);
    prop_assert!((ra.pred_std - rb.pred_std).abs() <= 1e-12);
    prop_assert!((0.0..=1.0).contains(&ra.frac_confident) && (0.0..=1.0).contains(&ra.pred_std));
        Ok(())
    })
}

pub fn standardized_columns_have_unit_moments(cases: u32) -> Outcome {
    check(cases, prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 6), 2..50), |rows| {
    let st = standardize(&rows).unwrap();
    let n = rows.len() as f64;
    for j in 0..6 {
        let mean = st.rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = st.rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() <= 1e-9);
        if st.stds[j] > 0.0 {
            prop_assert!((var - 1.0).abs() <= 1e-9, "column {} variance {}", j, var);
        } else {
            prop_assert!(st.rows.iter().all(|r| r[j] == 0.0));
        }
    }
        Ok(())
    })
}

pub fn l1_shrinks_fully_beyond_lambda_max(cases: u32) -> Outcome {
    check(cases, (
        design_strategy(),
        1.0f64..10.0,
    ), |((x, y), factor)| {
    let fit = fit_l1_logistic(&x, &y, l1_max(&x, &y).unwrap() * factor).unwrap();
    prop_assert!(fit.coefficients.iter().all(|&c| c == 0.0), "{:?}", fit.coefficients);
        Ok(())
    })
}

pub fn l1_norm_shrinks_as_penalty_grows(cases: u32) -> Outcome {
    check(cases, design_strategy(), |(x, y)| {
    let top = l1_max(&x, &y).unwrap();
    let mut previous = f64::INFINITY;
    for frac in [0.01, 0.05, 0.2, 0.5, 0.9] {
        let fit = fit_l1_logistic(&x, &y, top * frac).unwrap();
        let norm: f64 = fit.coefficients.iter().map(|c| c.abs()).sum();
        prop_assert!(norm <= previous + 1e-6, "norm {} after {}", norm, previous);
        previous = norm;
    }
        Ok(())
    })
}

pub fn sentence_feature_ordering(cases: u32) -> Outcome {
    check(cases, prop::collection::vec(0.0f64..=1.0, 1..30), |scores| {
    let f = SentenceFeatures::from_scores(&scores).unwrap();
    prop_assert!(f.min <= f.avg + 1e-15 && f.avg <= f.max + 1e-15);
    prop_assert!(f.min <= f.last && f.last <= f.max);
    prop_assert!(f.min <= f.first && f.first <= f.max);
    prop_assert!(f.len >= 1.0);
        Ok(())
    })
}

pub fn features_are_bounded_and_pure(cases: u32) -> Outcome {
    check(cases, (
        "[a-z !.]{0,80}",
        4u8..=20,
    ), |(text, bits)| {
    let v = featurize(&text, bits);
    prop_assert!(v.entries.iter().all(|&(i, c)| i < (1u32 << bits) && c >= 1));
    prop_assert_eq!(&v, &featurize(&text, bits));
    prop_assert!(bucket(text.as_bytes(), bits) < (1u32 << bits));
        Ok(())
    })
}

pub const ALL: &[(&str, fn(u32) -> Outcome)] = &[
    ("swap_preserves_length_and_multiset", swap_preserves_length_and_multiset),
    ("delete_is_a_nonempty_subsequence", delete_is_a_nonempty_subsequence),
    ("insert_keeps_input_as_subsequence", insert_keeps_input_as_subsequence),
    ("synonym_replace_preserves_length", synonym_replace_preserves_length),
    ("detokenize_conserves_characters", detokenize_conserves_characters),
    ("sentence_split_conserves_characters", sentence_split_conserves_characters),
    ("jsonl_round_trip", jsonl_round_trip),
    ("subsample_is_balanced_and_deterministic", subsample_is_balanced_and_deterministic),
    ("synthetics_inherit_labels_and_resolve", synthetics_inherit_labels_and_resolve),
    ("fitted_weights_are_on_the_simplex_and_beat_every_vertex", fitted_weights_are_on_the_simplex_and_beat_every_vertex),
    ("combine_is_affine_and_exact_at_vertices", combine_is_affine_and_exact_at_vertices),
    ("calibration_is_permutation_invariant", calibration_is_permutation_invariant),
    ("standardized_columns_have_unit_moments", standardized_columns_have_unit_moments),
    ("l1_shrinks_fully_beyond_lambda_max", l1_shrinks_fully_beyond_lambda_max),
    ("l1_norm_shrinks_as_penalty_grows", l1_norm_shrinks_as_penalty_grows),
    ("sentence_feature_ordering", sentence_feature_ordering),
    ("features_are_bounded_and_pure", features_are_bounded_and_pure),
];
