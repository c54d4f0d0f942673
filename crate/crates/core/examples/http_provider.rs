//! Rate-limited HTTP backtranslation against a LibreTranslate-compatible API.
//!
//! Set `AUGBENCH_ENDPOINT` (and `AUGBENCH_API_KEY` if the server needs one) to
//! use a real server. Otherwise a local stub is started that fails every
//! third request with 429 and echoes the text tagged with the target language.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::time::{Duration, Instant};

use augbench::translate::{
    Backtranslator, HttpConfig, HttpProvider, RetryPolicy, TranslationCache, API_KEY_ENV,
};

fn spawn_stub() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let addr = listener.local_addr().expect("stub address");
    std::thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
            let mut length = 0;
            let mut line = String::new();
            while reader.read_line(&mut line).is_ok_and(|n| n > 0) && line != "\r\n" {
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                line.clear();
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            let response = if i % 3 == 2 {
                "HTTP/1.1 429 Too Many Requests\r\ncontent-length: 0\r\nconnection: close\r\n\r\n".to_string()
            } else {
                let request: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
                let text = request["q"].as_str().unwrap_or_default();
                let target = request["target"].as_str().unwrap_or_default();
                let out = match text.strip_prefix('[').and_then(|t| t.split_once("] ")) {
                    Some((_, rest)) => rest.to_string(),
                    None => format!("[{target}] {text}"),
                };
                let json = serde_json::json!({ "translatedText": out }).to_string();
                format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{json}",
                    json.len()
                )
            };
            let _ = stream.write_all(response.as_bytes());
        }
    });
    format!("http://{addr}/translate")
}

fn main() -> augbench::Result<()> {
    let endpoint = std::env::var("AUGBENCH_ENDPOINT").unwrap_or_else(|_| spawn_stub());
    let mut config = HttpConfig::new(endpoint.clone());
    config.api_key = std::env::var(API_KEY_ENV).ok();
    config.requests_per_second = 5.0;
    config.retry = RetryPolicy { max_attempts: 4, base_delay: Duration::from_millis(50), ..RetryPolicy::default() };
    let provider = Arc::new(HttpProvider::new(config).map_err(|e| augbench::Error::InvalidConfig(e.to_string()))?);
    let translator = Backtranslator::new(provider.clone(), Arc::new(TranslationCache::in_memory()));

    let started = Instant::now();
    for lang in ["es", "fr", "de", "bn"] {
        let record = translator.backtranslate("The ending was wonderful.", lang)?;
        println!("{lang}: {} -> {}", record.intermediate_text, record.final_text);
    }
    println!(
        "{} HTTP requests (retries included) to {endpoint} in {:.2?}",
        provider.requests_sent(),
        started.elapsed()
    );
    Ok(())
}
