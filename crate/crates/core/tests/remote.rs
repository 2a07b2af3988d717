use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use forge_core::embed::{Embedder, EmbedError, RemoteEmbedder};
use forge_core::gateway::{
    BackendConfig, ChatMessage, CompletionRequest, GatewayError, InFlightLimiter, LlmClient,
};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    auth: Option<String>,
    body: Value,
}

/// Serves the scripted `(status, body)` replies in order, one connection each, then stops.
fn stub(replies: Vec<(u16, Value)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut len, mut auth) = (0usize, None);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { auth, body: serde_json::from_slice(&buf).unwrap() });
            let text = body.to_string();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn chat(text: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
}

fn config(url: &str, retries: u32) -> BackendConfig {
    let mut cfg = BackendConfig::remote("m", url);
    cfg.retry_limit = retries;
    cfg.backoff_ms = 1;
    cfg.timeout_secs = 5.0;
    cfg
}

fn client(cfg: &BackendConfig) -> LlmClient {
    LlmClient::from_config(cfg, 0.0, Arc::new(InFlightLimiter::new(4))).unwrap()
}

fn request() -> CompletionRequest {
    CompletionRequest::new(vec![ChatMessage::user("hello")]).with_seed(9)
}

#[test]
fn server_errors_are_retried_until_success() {
    let err = json!({"error": "busy"});
    let (url, seen) = stub(vec![(500, err.clone()), (500, err), (200, chat("done"))]);
    let out = client(&config(&url, 2)).complete(&request()).unwrap();
    assert_eq!(out, "done");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0].body["model"], "m");
    assert_eq!(seen[0].body["seed"], 9);
    assert_eq!(seen[0].body["messages"][0]["content"], "hello");
}

#[test]
fn retries_are_bounded() {
    let err = json!({"error": "busy"});
    let (url, seen) = stub(vec![(503, err.clone()), (429, err.clone()), (500, err)]);
    match client(&config(&url, 2)).complete(&request()) {
        Err(GatewayError::RetriesExhausted { attempts, last }) => {
            assert_eq!(attempts, 3);
            assert!(last.contains("500"), "{last}");
        }
        other => panic!("expected exhaustion, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = stub(vec![(400, json!({"error": "bad"})), (200, chat("unused"))]);
    match client(&config(&url, 3)).complete(&request()) {
        Err(GatewayError::Http { status: 400, .. }) => {}
        other => panic!("expected http 400, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn sample_n_issues_one_request_per_sample() {
    let (url, seen) = stub(vec![(200, chat("a")), (200, chat("b")), (200, chat("c"))]);
    let out = client(&config(&url, 0)).sample_n(&request(), 3).unwrap();
    assert_eq!(out, ["a", "b", "c"]);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn api_key_comes_from_the_environment() {
    let (url, seen) = stub(vec![(200, chat("ok"))]);
    let mut cfg = config(&url, 0);
    cfg.api_key_env = Some("FORGE_TEST_REMOTE_KEY".into());
    std::env::set_var("FORGE_TEST_REMOTE_KEY", "sk-test");
    client(&cfg).complete(&request()).unwrap();
    assert_eq!(seen.lock().unwrap()[0].auth.as_deref(), Some("Bearer sk-test"));

    cfg.api_key_env = Some("FORGE_TEST_REMOTE_KEY_UNSET".into());
    let err = LlmClient::from_config(&cfg, 0.0, Arc::new(InFlightLimiter::new(1))).unwrap_err();
    assert!(matches!(err, GatewayError::Config(_)), "{err:?}");
}

#[test]
fn missing_content_is_a_protocol_error() {
    let (url, _) = stub(vec![(200, json!({"choices": []}))]);
    let err = client(&config(&url, 0)).complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Protocol(_)), "{err:?}");
}

#[test]
fn remote_embeddings_are_normalized_and_dimension_checked() {
    let (url, seen) = stub(vec![
        (200, json!({"data": [{"embedding": [3.0, 4.0]}]})),
        (200, json!({"data": [{"embedding": [1.0, 2.0, 3.0]}]})),
    ]);
    let emb = RemoteEmbedder::new(&config(&url, 0), 2).unwrap();
    let v = emb.embed("some tool").unwrap();
    assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    assert_eq!(seen.lock().unwrap()[0].body, json!({"model": "m", "input": "some tool"}));
    assert!(matches!(emb.embed("other"), Err(EmbedError::Dimension { expected: 2, got: 3 })));
}
