//! The four token perturbations and a published backtranslation applied to one sentence.

use augbench::augment::{
    detokenize, random_delete, random_insert, random_swap, synonym_replace, tokenize, Stopwords, Thesaurus,
};
use augbench::translate::{backtranslate, CacheOnlyProvider, TranslationCache, PUBLISHED_PROVIDER_ID};

fn main() -> augbench::Result<()> {
    let sentence = "A sad human comedy played out on the back roads of life.";
    let tokens = tokenize(sentence);
    let thesaurus = Thesaurus::bundled();
    let stopwords = Stopwords::bundled();
    let alpha = 0.1;

    println!("{:<16}{sentence}", "none");
    let cache = TranslationCache::published();
    let provider = CacheOnlyProvider::new(PUBLISHED_PROVIDER_ID);
    for lang in ["es", "bn"] {
        let record = backtranslate(sentence, lang, &provider, &cache)?;
        println!("{:<16}{}", format!("bt ({lang})"), record.final_text);
    }
    for seed in 0..3 {
        let sr = synonym_replace(&tokens, alpha, thesaurus, &stopwords, seed);
        let ri = random_insert(&tokens, alpha, thesaurus, &stopwords, seed);
        let rs = random_swap(&tokens, alpha, seed);
        let rd = random_delete(&tokens, alpha, seed);
        println!("-- seed {seed}");
        println!("{:<16}{}", "synonym replace", detokenize(&sr.tokens));
        println!("{:<16}{}", "random insert", detokenize(&ri.tokens));
        println!("{:<16}{}", "random swap", detokenize(&rs.tokens));
        println!("{:<16}{}", "random delete", detokenize(&rd.tokens));
    }
    Ok(())
}
