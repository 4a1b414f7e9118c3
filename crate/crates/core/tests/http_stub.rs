//! HTTP clients against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use cefr_cascade::backends::{
    BackendError, ChatMessage, GenerationProfile, GenerationRequest, Generator, HttpChatGenerator, HttpEstimator,
    HttpSimilarity, LevelEstimator, RetryPolicy, SimilarityBackend,
};
use cefr_cascade::ProficiencyLevel;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    authorization: Option<String>,
    body: Value,
}

type Script = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

/// Serves until the test process exits; `script(n, body)` answers the n-th
/// request (0-based).
fn serve(script: Box<Script>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/endpoint", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (n, stream) in listener.incoming().enumerate() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => length = v.trim().parse().unwrap(),
                        "authorization" => authorization = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let (status, reply) = script(n, &body);
            log.lock().unwrap().push(Seen { authorization, body });
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (url, seen)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        initial_backoff_ms: 1,
        ..RetryPolicy::default()
    }
}

fn request() -> GenerationRequest {
    GenerationRequest::new(
        vec![ChatMessage::system("be brief"), ChatMessage::user("hello there")],
        &GenerationProfile {
            model_id: "test-model".into(),
            ..GenerationProfile::default()
        },
    )
}

fn chat_reply(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn chat_echo_and_request_shape() {
    let (url, seen) = serve(Box::new(|_, body| {
        let last = body["messages"].as_array().unwrap().last().unwrap()["content"]
            .as_str()
            .unwrap()
            .to_string();
        (200, chat_reply(&last))
    }));
    let g = HttpChatGenerator::new(url, Some("secret".into()), fast_retry());
    assert_eq!(g.generate(&request()).unwrap(), "hello there");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer secret"));
    let b = &seen[0].body;
    assert_eq!(b["model"], "test-model");
    assert_eq!(b["temperature"], 0.0);
    assert_eq!(b["max_tokens"], 128);
    assert_eq!(b["top_p"], 1.0);
    assert_eq!(b["messages"][0]["role"], "system");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = serve(Box::new(|n, _| match n {
        0 => (500, "{}".into()),
        1 => (429, "{}".into()),
        _ => (200, chat_reply("ok")),
    }));
    let g = HttpChatGenerator::new(url, None, fast_retry());
    assert_eq!(g.generate(&request()).unwrap(), "ok");
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert!(seen.lock().unwrap()[0].authorization.is_none());
}

#[test]
fn gives_up_after_max_attempts() {
    let (url, seen) = serve(Box::new(|_, _| (503, "{}".into())));
    let g = HttpChatGenerator::new(url, None, fast_retry());
    assert!(matches!(g.generate(&request()), Err(BackendError::Transport(_))));
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(Box::new(|_, _| (404, "{\"error\":\"no such model\"}".into())));
    let g = HttpChatGenerator::new(url, None, fast_retry());
    match g.generate(&request()) {
        Err(BackendError::Rejected { status, body }) => {
            assert_eq!(status, 404);
            assert!(body.contains("no such model"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_responses_are_protocol_errors() {
    let (url, _) = serve(Box::new(|n, _| match n {
        0 => (200, "not json".into()),
        _ => (200, "{\"choices\": []}".into()),
    }));
    let g = HttpChatGenerator::new(url, None, fast_retry());
    assert!(matches!(g.generate(&request()), Err(BackendError::Protocol(_))));
    assert!(matches!(g.generate(&request()), Err(BackendError::Protocol(_))));
}

#[test]
fn invalid_request_never_reaches_the_server() {
    let (url, seen) = serve(Box::new(|_, _| (200, chat_reply("x"))));
    let g = HttpChatGenerator::new(url, None, fast_retry());
    let mut r = request();
    r.messages.clear();
    assert!(matches!(g.generate(&r), Err(BackendError::Precondition(_))));
    assert!(seen.lock().unwrap().is_empty());
}

#[test]
fn estimator_parses_levels() {
    let (url, seen) = serve(Box::new(|n, _| match n {
        0 => (200, "{\"level\": \"b1\", \"score\": 2.7}".into()),
        1 => (200, "{\"level\": \"Z9\"}".into()),
        _ => (200, "{\"score\": 1}".into()),
    }));
    let e = HttpEstimator::new(url, None, fast_retry());
    let v = e.estimate_level("A short sentence.", "fr").unwrap();
    assert_eq!(v.level, ProficiencyLevel::B1);
    assert_eq!(v.raw_score, Some(2.7));
    assert_eq!(
        seen.lock().unwrap()[0].body,
        json!({"text": "A short sentence.", "language": "fr"})
    );
    assert!(matches!(e.estimate_level("x", "fr"), Err(BackendError::Protocol(_))));
    assert!(matches!(e.estimate_level("x", "fr"), Err(BackendError::Protocol(_))));
}

#[test]
fn similarity_range_checked() {
    let (url, _) = serve(Box::new(|n, _| match n {
        0 => (200, "{\"score\": 0.25}".into()),
        1 => (200, "{\"score\": 1.0000004}".into()),
        _ => (200, "{\"score\": 1.5}".into()),
    }));
    let s = HttpSimilarity::new(url, None, fast_retry());
    assert_eq!(s.similarity("a", "b").unwrap(), 0.25);
    assert_eq!(s.similarity("a", "b").unwrap(), 1.0);
    assert!(matches!(s.similarity("a", "b"), Err(BackendError::Protocol(_))));
    assert!(matches!(s.similarity("", "b"), Err(BackendError::Precondition(_))));
}

#[test]
fn unreachable_server_is_transport_error() {
    // bind then drop to get a port nothing listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let g = HttpChatGenerator::new(format!("http://127.0.0.1:{port}/x"), None, fast_retry());
    assert!(matches!(g.generate(&request()), Err(BackendError::Transport(_))));
}
