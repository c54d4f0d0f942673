//! Shared test helpers: a scripted HTTP stub and a call-counting provider.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use augbench::translate::{ProviderError, TranslationProvider};

pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<serde_json::Value>>>,
}

impl StubServer {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// Serves one request per connection. `respond(i, body)` gets the zero-based
/// request index and parsed JSON body and returns `(status, body)`.
pub fn serve<F>(respond: F) -> StubServer
where
    F: Fn(usize, &serde_json::Value) -> (u16, String) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let url = format!("http://{}/translate", listener.local_addr().expect("address"));
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let respond = Arc::new(respond);
    let (hits_srv, bodies_srv) = (hits.clone(), bodies.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (hits, bodies, respond) = (hits_srv.clone(), bodies_srv.clone(), respond.clone());
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().expect("clone"));
                let mut length = 0;
                let mut line = String::new();
                loop {
                    line.clear();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut raw = vec![0; length];
                if reader.read_exact(&mut raw).is_err() {
                    return;
                }
                let body: serde_json::Value = serde_json::from_slice(&raw).unwrap_or_default();
                let index = hits.fetch_add(1, Ordering::SeqCst);
                bodies.lock().unwrap().push(body.clone());
                let (status, text) = respond(index, &body);
                let response = format!(
                    "HTTP/1.1 {status} Stub\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(response.as_bytes());
            });
        }
    });
    StubServer { url, hits, bodies }
}

/// A stub response translating `q` by tagging it with the target language,
/// and untagging on the way back.
pub fn echo(body: &serde_json::Value) -> (u16, String) {
    let q = body["q"].as_str().unwrap_or_default();
    let target = body["target"].as_str().unwrap_or_default();
    let out = match q.strip_prefix('[').and_then(|t| t.split_once("] ")) {
        Some((_, rest)) => rest.to_string(),
        None => format!("[{target}] {q}"),
    };
    (200, serde_json::json!({ "translatedText": out }).to_string())
}

/// Wraps a provider and counts `translate` calls.
pub struct Counting<P> {
    pub inner: P,
    pub calls: AtomicUsize,
}

impl<P> Counting<P> {
    pub fn new(inner: P) -> Self {
        Counting { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: TranslationProvider> TranslationProvider for Counting<P> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.translate(text, source, target)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &std::path::Path) -> String {
    augbench::seed::sha256_hex(&std::fs::read(path).expect("read artifact"))
}
