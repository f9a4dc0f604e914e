//! HttpBackend against a local stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use aspectcue::backend::{
    BackendError, Decoding, GenerationParams, HttpBackend, HttpBackendConfig, LanguageModel, TargetScoring,
};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Request {
    path: String,
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(&Request, usize) -> (u16, String) + Send + Sync;

struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<Request>>>,
}

impl Stub {
    fn start(handler: Box<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let Some(req) = read_request(&stream) else { continue };
                let n = {
                    let mut log = log.lock().unwrap();
                    log.push(req.clone());
                    log.len() - 1
                };
                let (status, body) = handler(&req, n);
                respond(stream, status, &body);
            }
        });
        Self { url, seen }
    }

    fn requests(&self) -> Vec<Request> {
        self.seen.lock().unwrap().clone()
    }
}

fn read_request(stream: &TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut len = 0usize;
    let mut auth = None;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (name, value) = h.split_once(':')?;
        match name.to_ascii_lowercase().as_str() {
            "content-length" => len = value.trim().parse().ok()?,
            "authorization" => auth = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut buf = vec![0u8; len];
    reader.read_exact(&mut buf).ok()?;
    let body = serde_json::from_slice(&buf).unwrap_or(Value::Null);
    Some(Request { path, auth, body })
}

fn respond(mut stream: TcpStream, status: u16, body: &str) {
    let head = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(body.as_bytes());
    let _ = stream.flush();
}

fn chat_reply(text: &str) -> String {
    json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 7, "completion_tokens": 3}
    })
    .to_string()
}

fn config(url: &str) -> HttpBackendConfig {
    HttpBackendConfig {
        base_url: url.to_string(),
        model: "stub-model".into(),
        max_attempts: 3,
        initial_backoff_ms: 1,
        timeout_secs: 5,
        target_scoring: TargetScoring::Disabled,
        ..Default::default()
    }
}

#[test]
fn chat_request_carries_decoding_parameters() {
    let stub = Stub::start(Box::new(|_, _| (200, chat_reply("{\"score\": 3}"))));
    let backend = HttpBackend::with_api_key(config(&stub.url), Some("sekret".into())).unwrap();
    let params = GenerationParams::default();
    let c = backend.complete("PROMPT", &params, None).unwrap();
    assert_eq!(c.text, "{\"score\": 3}");
    assert_eq!(c.usage.prompt_tokens, 7);
    assert_eq!(c.target_logprob, None);

    let reqs = stub.requests();
    assert_eq!(reqs.len(), 1);
    let r = &reqs[0];
    assert_eq!(r.path, "/v1/chat/completions");
    assert_eq!(r.auth.as_deref(), Some("Bearer sekret"));
    let b = &r.body;
    assert_eq!(b["model"], "stub-model");
    assert_eq!(b["messages"][0]["role"], "user");
    assert_eq!(b["messages"][0]["content"], "PROMPT");
    assert_eq!(b["temperature"], 0.0, "greedy decoding sends temperature 0");
    assert_eq!(b["top_p"], 0.95);
    assert_eq!(b["max_tokens"], 400);
    assert_eq!(b["repetition_penalty"], 1.2);
    assert_eq!(b["top_k"], 50);
}

#[test]
fn sample_decoding_sends_configured_temperature() {
    let stub = Stub::start(Box::new(|_, _| (200, chat_reply("ok"))));
    let mut cfg = config(&stub.url);
    cfg.decoding = Decoding::Sample;
    let backend = HttpBackend::with_api_key(cfg, None).unwrap();
    backend.complete("p", &GenerationParams::default(), None).unwrap();
    let r = &stub.requests()[0];
    assert_eq!(r.body["temperature"], 0.3);
    assert_eq!(r.auth, None);
}

#[test]
fn persistent_server_errors_become_unavailable() {
    let stub = Stub::start(Box::new(|_, _| (503, "{}".into())));
    let backend = HttpBackend::with_api_key(config(&stub.url), None).unwrap();
    let err = backend.complete("p", &GenerationParams::default(), None).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable { attempts: 3, .. }), "{err:?}");
    assert_eq!(stub.requests().len(), 3);
}

#[test]
fn transient_error_is_retried() {
    let stub = Stub::start(Box::new(|_, n| {
        if n == 0 {
            (429, "{}".into())
        } else {
            (200, chat_reply("second"))
        }
    }));
    let backend = HttpBackend::with_api_key(config(&stub.url), None).unwrap();
    let c = backend.complete("p", &GenerationParams::default(), None).unwrap();
    assert_eq!(c.text, "second");
    assert_eq!(stub.requests().len(), 2);
}

#[test]
fn rejected_credential_is_not_retried() {
    let stub = Stub::start(Box::new(|_, _| (401, "{\"error\": \"bad key\"}".into())));
    let backend = HttpBackend::with_api_key(config(&stub.url), Some("wrong".into())).unwrap();
    let err = backend.complete("p", &GenerationParams::default(), None).unwrap_err();
    assert!(matches!(err, BackendError::Credential(_)), "{err:?}");
    assert_eq!(stub.requests().len(), 1);
}

#[test]
fn extension_fields_are_dropped_after_a_400() {
    let stub = Stub::start(Box::new(|req, _| {
        if req.body.get("top_k").is_some() {
            (400, "{\"error\": \"unknown field top_k\"}".into())
        } else {
            (200, chat_reply("fine"))
        }
    }));
    let backend = HttpBackend::with_api_key(config(&stub.url), None).unwrap();
    let params = GenerationParams::default();
    assert_eq!(backend.complete("p", &params, None).unwrap().text, "fine");
    assert_eq!(backend.complete("q", &params, None).unwrap().text, "fine");
    let reqs = stub.requests();
    assert_eq!(reqs.len(), 3, "one rejected request, then two without extensions");
    assert!(reqs[1].body.get("repetition_penalty").is_none());
    assert!(reqs[2].body.get("top_k").is_none());
}

#[test]
fn strict_fields_surface_the_rejection() {
    let stub = Stub::start(Box::new(|_, _| (400, "{}".into())));
    let mut cfg = config(&stub.url);
    cfg.strict_fields = true;
    let backend = HttpBackend::with_api_key(cfg, None).unwrap();
    let err = backend.complete("p", &GenerationParams::default(), None).unwrap_err();
    assert!(matches!(err, BackendError::InvalidRequest(_)), "{err:?}");
    assert_eq!(stub.requests().len(), 1);
}

#[test]
fn target_scoring_sums_continuation_logprobs() {
    // "Hi" + " there": tokens at offsets 0, 2, 5 with the last two in the target.
    let stub = Stub::start(Box::new(|req, _| {
        if req.path.ends_with("/completions") && !req.path.ends_with("/chat/completions") {
            let body = json!({"choices": [{"text": "", "logprobs": {
                "tokens": ["Hi", " th", "ere"],
                "token_logprobs": [null, -0.5, -0.25],
                "text_offset": [0, 2, 5]
            }}]});
            (200, body.to_string())
        } else {
            (200, chat_reply("there"))
        }
    }));
    let mut cfg = config(&stub.url);
    cfg.target_scoring = TargetScoring::Enabled;
    let backend = HttpBackend::with_api_key(cfg, None).unwrap();
    assert!(backend.supports_target_scoring());
    let c = backend.complete("Hi", &GenerationParams::default(), Some(" there")).unwrap();
    assert_eq!(c.target_logprob, Some(-0.75));
    let scoring = &stub.requests()[0];
    assert_eq!(scoring.path, "/v1/completions");
    assert_eq!(scoring.body["echo"], true);
    assert_eq!(scoring.body["prompt"], "Hi there");
}

#[test]
fn endpoint_without_logprobs_lacks_scoring_capability() {
    let stub = Stub::start(Box::new(|req, _| {
        if req.path == "/v1/completions" {
            (404, "{}".into())
        } else {
            (200, chat_reply("x"))
        }
    }));
    let mut cfg = config(&stub.url);
    cfg.target_scoring = TargetScoring::Auto;
    let backend = HttpBackend::with_api_key(cfg, None).unwrap();
    assert!(!backend.supports_target_scoring());
    let err = backend.complete("p", &GenerationParams::default(), Some("t")).unwrap_err();
    assert!(matches!(err, BackendError::Capability(_)), "{err:?}");
}

#[test]
fn audit_log_records_each_request() {
    let stub = Stub::start(Box::new(|_, _| (200, chat_reply("logged"))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let backend = HttpBackend::with_api_key(config(&stub.url), Some("never-logged".into()))
        .unwrap()
        .with_audit_log(&path)
        .unwrap();
    backend.complete("first", &GenerationParams::default(), None).unwrap();
    backend.complete("second", &GenerationParams::default(), None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains("never-logged"));
    let entries: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0]["prompt"], "first");
    assert_eq!(entries[1]["completion"]["text"], "logged");
    assert_eq!(entries[0]["params"]["top_k"], 50);
}

#[test]
fn invalid_parameters_are_rejected_before_sending() {
    let stub = Stub::start(Box::new(|_, _| (200, chat_reply("x"))));
    let backend = HttpBackend::with_api_key(config(&stub.url), None).unwrap();
    let params = GenerationParams {
        top_p: 1.5,
        ..Default::default()
    };
    assert!(matches!(
        backend.complete("p", &params, None),
        Err(BackendError::InvalidRequest(_))
    ));
    assert!(stub.requests().is_empty());
}
