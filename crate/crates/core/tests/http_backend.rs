//! HttpBackend against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use kaft::probe::{EndpointConfig, GenerateRequest, HttpBackend, ModelBackend};

#[derive(Debug, Clone)]
struct Seen {
    auth: Option<String>,
    path: String,
    body: serde_json::Value,
}

/// Serves `script` (status, body) one connection each, recording requests.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                auth,
                path,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (base, seen, handle)
}

fn choices(texts: &[&str]) -> String {
    let cs: Vec<serde_json::Value> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| serde_json::json!({"index": i, "message": {"role": "assistant", "content": t}}))
        .collect();
    serde_json::json!({ "choices": cs }).to_string()
}

fn backend(base: &str, key_env: &str) -> HttpBackend {
    let mut cfg = EndpointConfig::new(base, "test-model");
    cfg.api_key_env = key_env.to_string();
    cfg.backoff_base_ms = 1;
    cfg.max_retries = 3;
    cfg.timeout_ms = 5_000;
    HttpBackend::new(cfg).unwrap()
}

fn req(n: usize) -> GenerateRequest<'static> {
    GenerateRequest {
        prompt: "Question: 2+2?\nAnswer:",
        temperature: 0.7,
        n,
        max_tokens: 16,
        seed: 0,
    }
}

#[test]
fn sends_openai_shaped_request_with_bearer_key() {
    std::env::set_var("KAFT_TEST_KEY_A", "sk-test");
    let (base, seen, h) = serve(vec![(200, choices(&["B", "The answer is C"]))]);
    let out = backend(&base, "KAFT_TEST_KEY_A").generate(&req(2)).unwrap();
    h.join().unwrap();
    assert_eq!(out, vec!["B", "The answer is C"]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sk-test"));
    let b = &seen[0].body;
    assert_eq!(b["model"], "test-model");
    assert_eq!(b["n"], 2);
    assert_eq!(b["max_tokens"], 16);
    assert_eq!(b["temperature"], 0.7);
    assert_eq!(b["messages"][0]["role"], "user");
    assert_eq!(b["messages"][0]["content"], "Question: 2+2?\nAnswer:");
}

#[test]
fn no_key_no_header() {
    let (base, seen, h) = serve(vec![(200, choices(&["A"]))]);
    backend(&base, "KAFT_TEST_KEY_UNSET_XYZ").generate(&req(1)).unwrap();
    h.join().unwrap();
    assert_eq!(seen.lock().unwrap()[0].auth, None);
}

#[test]
fn retries_429_and_5xx() {
    let (base, seen, h) = serve(vec![
        (429, "{\"error\":\"slow down\"}".into()),
        (503, "{}".into()),
        (200, choices(&["D"])),
    ]);
    let out = backend(&base, "KAFT_TEST_KEY_UNSET_XYZ").generate(&req(1)).unwrap();
    h.join().unwrap();
    assert_eq!(out, vec!["D"]);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn gives_up_after_max_retries() {
    let script = (0..4).map(|_| (500, "{}".to_string())).collect();
    let (base, seen, h) = serve(script);
    let err = backend(&base, "KAFT_TEST_KEY_UNSET_XYZ").generate(&req(1)).unwrap_err();
    h.join().unwrap();
    assert!(!err.retryable);
    assert!(err.message.contains("500"), "{}", err.message);
    assert_eq!(seen.lock().unwrap().len(), 4);
}

#[test]
fn other_4xx_is_fatal_without_retry() {
    let (base, seen, h) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let err = backend(&base, "KAFT_TEST_KEY_UNSET_XYZ").generate(&req(1)).unwrap_err();
    h.join().unwrap();
    assert!(!err.retryable);
    assert!(err.message.contains("401"));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn tops_up_when_server_ignores_n() {
    let (base, seen, h) = serve(vec![(200, choices(&["A"])), (200, choices(&["B", "C"]))]);
    let out = backend(&base, "KAFT_TEST_KEY_UNSET_XYZ").generate(&req(3)).unwrap();
    h.join().unwrap();
    assert_eq!(out, vec!["A", "B", "C"]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].body["n"], 3);
    assert_eq!(seen[1].body["n"], 2);
}

#[test]
fn malformed_body_is_fatal() {
    let (base, _, h) = serve(vec![(200, "{\"nope\": 1}".into())]);
    let err = backend(&base, "KAFT_TEST_KEY_UNSET_XYZ").generate(&req(1)).unwrap_err();
    h.join().unwrap();
    assert!(!err.retryable);
}

#[test]
fn unreachable_endpoint_is_an_error() {
    // bind then drop to get a port with nothing listening
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = backend(&format!("http://127.0.0.1:{port}"), "KAFT_TEST_KEY_UNSET_XYZ");
    assert!(b.generate(&req(1)).is_err());
    assert!(!b.is_deterministic());
    assert_eq!(b.identity(), format!("http:http://127.0.0.1:{port}:test-model"));
}
