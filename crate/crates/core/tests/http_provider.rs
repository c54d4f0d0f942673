mod common;

use std::time::{Duration, Instant};

use augbench::translate::{
    backtranslate, HttpConfig, HttpProvider, ProviderError, RetryPolicy, TranslationCache, TranslationProvider,
};
use common::{echo, serve};

fn provider(url: &str, rps: f64, attempts: usize) -> HttpProvider {
    let mut config = HttpConfig::new(url);
    config.requests_per_second = rps;
    config.timeout = Duration::from_secs(5);
    config.retry = RetryPolicy {
        max_attempts: attempts,
        base_delay: Duration::from_millis(10),
        max_delay: Duration::from_millis(100),
    };
    HttpProvider::new(config).unwrap()
}

#[test]
fn retries_429_then_succeeds() {
    let stub = serve(|i, body| if i == 0 { (429, "{}".into()) } else { echo(body) });
    let p = provider(&stub.url, 100.0, 5);
    assert_eq!(p.translate("Hello.", "en", "es").unwrap(), "[es] Hello.");
    assert_eq!(stub.hits(), 2);
    assert_eq!(p.requests_sent(), 2);
}

#[test]
fn retries_server_errors_until_budget_is_spent() {
    let stub = serve(|_, _| (503, "busy".into()));
    let p = provider(&stub.url, 100.0, 3);
    match p.translate("Hello.", "en", "es") {
        Err(ProviderError::Transient { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected a transient failure, got {other:?}"),
    }
    assert_eq!(stub.hits(), 3);
}

#[test]
fn unauthorized_fails_after_one_attempt() {
    let stub = serve(|_, _| (401, r#"{"error":"bad key"}"#.into()));
    let p = provider(&stub.url, 100.0, 5);
    match p.translate("Hello.", "en", "es") {
        Err(ProviderError::Permanent { status, .. }) => assert_eq!(status, 401),
        other => panic!("expected a permanent failure, got {other:?}"),
    }
    assert_eq!(stub.hits(), 1);
}

#[test]
fn rate_limit_spaces_requests() {
    let stub = serve(|_, body| echo(body));
    let p = provider(&stub.url, 5.0, 1);
    let started = Instant::now();
    std::thread::scope(|s| {
        for t in 0..4 {
            let p = &p;
            s.spawn(move || {
                for i in 0..5 {
                    p.translate(&format!("text {t} {i}"), "en", "fr").unwrap();
                }
            });
        }
    });
    let elapsed = started.elapsed();
    assert_eq!(stub.hits(), 20);
    // A full bucket of 5 goes out at once, the other 15 at 5 per second.
    assert!(elapsed >= Duration::from_secs(3), "20 requests took {elapsed:?}");
}

#[test]
fn request_body_and_api_key() {
    let stub = serve(|_, body| echo(body));
    let mut config = HttpConfig::new(stub.url.clone());
    config.api_key = Some("secret".into());
    let p = HttpProvider::new(config).unwrap();
    p.translate("Hi", "en", "de").unwrap();
    let body = stub.bodies.lock().unwrap()[0].clone();
    assert_eq!(body, serde_json::json!({"q": "Hi", "source": "en", "target": "de", "api_key": "secret"}));
}

#[test]
fn backtranslation_over_http_is_cached() {
    let stub = serve(|_, body| echo(body));
    let p = provider(&stub.url, 100.0, 2);
    let cache = TranslationCache::in_memory();
    let first = backtranslate("The end.", "es", &p, &cache).unwrap();
    assert_eq!(first.intermediate_text, "[es] The end.");
    assert_eq!(first.final_text, "The end.");
    let second = backtranslate("The end.", "es", &p, &cache).unwrap();
    assert_eq!(second.cache_hits, 2);
    assert_eq!(stub.hits(), 2);
}

#[test]
fn invalid_configuration_is_rejected() {
    let mut config = HttpConfig::new("http://127.0.0.1:9");
    config.requests_per_second = 0.0;
    assert!(HttpProvider::new(config).is_err());
}

#[test]
fn connection_refused_is_transient() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/translate", listener.local_addr().unwrap());
    drop(listener);
    let p = provider(&url, 100.0, 2);
    assert!(matches!(p.translate("x", "en", "es"), Err(ProviderError::Transient { attempts: 2, .. })));
}
