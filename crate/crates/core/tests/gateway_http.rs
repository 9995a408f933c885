//! Remote gateway against a scripted local HTTP endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use llmrl_core::gateway::{Backend, Gateway, GatewayConfig, VerdictSource};
use llmrl_core::narrator::{DrivingStyle, Narrator, PromptBundle, StyleName};
use llmrl_core::sim::{reset, SceneState, SimConfig};
use llmrl_core::EgoAction;

type Handler = dyn Fn(usize) -> (u16, String) + Send + Sync;

struct Endpoint {
    url: String,
    hits: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<(String, String)>>>,
    peak: Arc<AtomicUsize>,
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn serve(delay: Duration, handler: Box<Handler>) -> Endpoint {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let requests = Arc::new(Mutex::new(Vec::new()));
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let handler: Arc<Handler> = Arc::from(handler);
    {
        let (hits, requests, peak) = (hits.clone(), requests.clone(), peak.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (hits, requests, active, peak, handler) =
                    (hits.clone(), requests.clone(), active.clone(), peak.clone(), handler.clone());
                thread::spawn(move || {
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    let (head, body) = read_request(&stream);
                    let n = hits.fetch_add(1, Ordering::SeqCst);
                    requests.lock().unwrap().push((head, body));
                    thread::sleep(delay);
                    let (status, reply) = handler(n);
                    active.fetch_sub(1, Ordering::SeqCst);
                    let mut s = stream;
                    let _ = write!(
                        s,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                        reply.len()
                    );
                });
            }
        });
    }
    Endpoint { url, hits, requests, peak }
}

fn read_request(stream: &TcpStream) -> (String, String) {
    let mut reader = BufReader::new(stream);
    let mut head = String::new();
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap();
        }
        head.push_str(&line);
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    (head, String::from_utf8(body).unwrap())
}

fn config(url: &str, max_retries: u32) -> GatewayConfig {
    GatewayConfig {
        endpoint_url: url.to_string(),
        backend: Backend::Remote,
        max_retries,
        backoff_ms: 1,
        timeout_ms: 5_000,
        ..GatewayConfig::default()
    }
}

fn scene(seed: u64) -> (SceneState, PromptBundle, DrivingStyle) {
    let state = reset(&SimConfig::default(), seed).unwrap();
    let style = DrivingStyle::new(StyleName::Base);
    let bundle = Narrator::default().prompt_for(&state, &style, None).unwrap();
    (state, bundle, style)
}

#[test]
fn second_identical_query_is_served_from_cache() {
    let ep = serve(Duration::ZERO, Box::new(|_| (200, completion("Keep going.\nFinal Answer: FASTER"))));
    let dir = tempfile::tempdir().unwrap();
    let cfg = GatewayConfig {
        cache_path: Some(dir.path().join("cache.jsonl")),
        ..config(&ep.url, 0)
    };
    let gw = Gateway::with_api_key(cfg.clone(), Some("k".into())).unwrap();
    let (state, bundle, style) = scene(1);
    let first = gw.query(&bundle, &state, &style);
    let second = gw.query(&bundle, &state, &style);
    assert_eq!(first.source, VerdictSource::Remote);
    assert_eq!(first.recommended_action, Some(EgoAction::Faster));
    assert_eq!(second.source, VerdictSource::Cache);
    assert_eq!(second.raw_text, first.raw_text);
    assert_eq!(ep.hits.load(Ordering::SeqCst), 1);

    // the disk cache survives a restart
    let again = Gateway::with_api_key(cfg, Some("k".into())).unwrap();
    let third = again.query(&bundle, &state, &style);
    assert_eq!(third.source, VerdictSource::Cache);
    assert_eq!(third.raw_text, first.raw_text);
    assert_eq!(ep.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn request_uses_chat_completions_shape() {
    let ep = serve(Duration::ZERO, Box::new(|_| (200, completion("Final Answer: IDLE"))));
    let gw = Gateway::with_api_key(config(&ep.url, 0), Some("secret-token".into())).unwrap();
    let (state, bundle, style) = scene(2);
    gw.query(&bundle, &state, &style);
    let (head, body) = ep.requests.lock().unwrap()[0].clone();
    assert!(head.starts_with("POST /v1/chat/completions"));
    assert!(head.to_ascii_lowercase().contains("authorization: bearer secret-token"));
    let json: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(json["model"], "gpt-3.5-turbo");
    assert_eq!(json["temperature"], 0.0);
    assert_eq!(json["messages"][0]["role"], "system");
    assert_eq!(json["messages"][0]["content"], bundle.system_message.as_str());
    assert_eq!(json["messages"][1]["role"], "user");
    assert_eq!(json["messages"][1]["content"], bundle.user_message().as_str());
}

#[test]
fn unreachable_endpoint_fails_after_all_attempts() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let gw = Gateway::with_api_key(config(&format!("http://127.0.0.1:{port}/v1/chat/completions"), 2), Some("k".into())).unwrap();
    let (state, bundle, style) = scene(3);
    let v = gw.query(&bundle, &state, &style);
    assert!(v.is_parse_failure());
    assert!(v.is_hard_failure());
    assert_eq!(v.source, VerdictSource::Remote);
    assert_eq!(v.attempts, 3);
}

#[test]
fn server_errors_are_retried_and_client_errors_are_not() {
    let ep = serve(Duration::ZERO, Box::new(|_| (503, "{}".into())));
    let gw = Gateway::with_api_key(config(&ep.url, 2), Some("k".into())).unwrap();
    let (state, bundle, style) = scene(4);
    let v = gw.query(&bundle, &state, &style);
    assert_eq!((v.attempts, ep.hits.load(Ordering::SeqCst)), (3, 3));
    assert!(v.is_parse_failure());

    let ep = serve(Duration::ZERO, Box::new(|n| if n == 0 { (429, "{}".into()) } else { (200, completion("Final Answer: SLOWER")) }));
    let gw = Gateway::with_api_key(config(&ep.url, 2), Some("k".into())).unwrap();
    let v = gw.query(&bundle, &state, &style);
    assert_eq!(v.attempts, 2);
    assert_eq!(v.recommended_action, Some(EgoAction::Slower));

    let ep = serve(Duration::ZERO, Box::new(|_| (401, "{}".into())));
    let gw = Gateway::with_api_key(config(&ep.url, 2), Some("k".into())).unwrap();
    let v = gw.query(&bundle, &state, &style);
    assert_eq!((v.attempts, ep.hits.load(Ordering::SeqCst)), (1, 1));
    assert!(v.is_hard_failure());
}

#[test]
fn malformed_and_tokenless_replies_are_parse_failures() {
    let ep = serve(Duration::ZERO, Box::new(|_| (200, "not json".into())));
    let gw = Gateway::with_api_key(config(&ep.url, 0), Some("k".into())).unwrap();
    let (state, bundle, style) = scene(5);
    assert!(gw.query(&bundle, &state, &style).is_parse_failure());

    let ep = serve(Duration::ZERO, Box::new(|_| (200, completion("I cannot decide."))));
    let gw = Gateway::with_api_key(config(&ep.url, 0), Some("k".into())).unwrap();
    let v = gw.query(&bundle, &state, &style);
    assert!(v.is_parse_failure());
    assert!(!v.is_hard_failure());
}

#[test]
fn concurrent_identical_queries_issue_one_request() {
    let ep = serve(Duration::from_millis(150), Box::new(|_| (200, completion("Final Answer: IDLE"))));
    let gw = Gateway::with_api_key(config(&ep.url, 0), Some("k".into())).unwrap();
    let (state, bundle, style) = scene(6);
    thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| assert_eq!(gw.query(&bundle, &state, &style).recommended_action, Some(EgoAction::Idle)));
        }
    });
    assert_eq!(ep.hits.load(Ordering::SeqCst), 1);
    assert_eq!(gw.remote_requests(), 1);
}

#[test]
fn in_flight_requests_are_bounded() {
    let ep = serve(Duration::from_millis(100), Box::new(|_| (200, completion("Final Answer: IDLE"))));
    let cfg = GatewayConfig {
        max_in_flight: 2,
        ..config(&ep.url, 0)
    };
    let gw = Gateway::with_api_key(cfg, Some("k".into())).unwrap();
    let scenes: Vec<_> = (10..18).map(scene).collect();
    thread::scope(|s| {
        for (state, bundle, style) in &scenes {
            let gw = &gw;
            s.spawn(move || gw.query(bundle, state, style));
        }
    });
    assert_eq!(ep.hits.load(Ordering::SeqCst), 8);
    assert!(ep.peak.load(Ordering::SeqCst) <= 2, "peak {}", ep.peak.load(Ordering::SeqCst));
}
