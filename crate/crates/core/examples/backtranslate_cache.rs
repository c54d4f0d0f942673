//! Backtranslation through the mock provider with a file-backed cache.
//!
//! The second pass is served entirely from the cache; the provider is never called.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use augbench::translate::{
    backtranslate, MockProvider, ProviderError, TranslationCache, TranslationProvider,
};

/// Counts calls to the wrapped provider.
struct Counting {
    inner: MockProvider,
    calls: AtomicUsize,
}

impl TranslationProvider for Counting {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.translate(text, source, target)
    }
}

fn main() -> augbench::Result<()> {
    let dir = std::env::temp_dir().join("augbench-example-cache");
    let path = dir.join("translations.jsonl");
    let _ = std::fs::remove_file(&path);
    let provider = Arc::new(Counting { inner: MockProvider::with_noise(7, 0.3), calls: AtomicUsize::new(0) });
    let text = "A sad human comedy played out on the back roads of life.";

    for pass in 1..=2 {
        let cache = TranslationCache::open(&path)?;
        for lang in ["es", "fr", "bn"] {
            let record = backtranslate(text, lang, provider.as_ref(), &cache)?;
            println!("pass {pass} {lang} hits={} intermediate: {}", record.cache_hits, record.intermediate_text);
            println!("             final:        {}", record.final_text);
        }
        println!("provider calls so far: {}\n", provider.calls.load(Ordering::SeqCst));
    }
    println!("cache file: {}", path.display());
    Ok(())
}
