#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

use cefr_cascade::backends::{
    ChatMessage, GenerationProfile, GenerationRequest, Generator, LevelEstimator, MockEstimator, MockGenerator,
    MockSimilarity, SimilarityBackend,
};
use cefr_cascade::corpus::{save_split, CorpusSplit};
use serde_json::{json, Value};

pub fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cefr-cascade"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
pub fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        stderr(&o)
    );
    o
}

/// Writes the three splits under `dir/corpus` and a `config.toml` with
/// `extra` appended; returns the config path.
pub fn write_project(dir: &Path, corpus: &CorpusSplit, extra: &str) -> PathBuf {
    let corpus_dir = dir.join("corpus");
    std::fs::create_dir_all(&corpus_dir).unwrap();
    save_split(&corpus_dir.join("train.jsonl"), &corpus.train).unwrap();
    save_split(&corpus_dir.join("dev.jsonl"), &corpus.dev).unwrap();
    save_split(&corpus_dir.join("test.jsonl"), &corpus.test).unwrap();
    let config = format!(
        "output_dir = \"out\"\n{extra}\n\n[corpus]\ntrain = \"corpus/train.jsonl\"\ndev = \"corpus/dev.jsonl\"\ntest = \"corpus/test.jsonl\"\n"
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}

pub fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// A local server speaking the three HTTP backend protocols, answering with
/// the mock rules. Routes: `/chat`, `/estimate`, `/similarity`.
pub fn mock_rule_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            thread::spawn(move || serve_one(stream));
        }
    });
    base
}

fn serve_one(mut stream: TcpStream) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (status, reply) = answer(&path, &body);
    let resp = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
    let _ = stream.write_all(resp.as_bytes());
}

fn answer(path: &str, body: &Value) -> (u16, String) {
    let text = |k: &str| body.get(k).and_then(Value::as_str).unwrap_or("").to_string();
    match path {
        "/chat" => {
            let messages: Vec<ChatMessage> = match serde_json::from_value(body["messages"].clone()) {
                Ok(m) => m,
                Err(e) => return (400, json!({"error": e.to_string()}).to_string()),
            };
            let request = GenerationRequest::new(messages, &GenerationProfile::default());
            match MockGenerator::default().generate(&request) {
                Ok(out) => (
                    200,
                    json!({"choices": [{"message": {"role": "assistant", "content": out}}]}).to_string(),
                ),
                Err(e) => (400, json!({"error": e.to_string()}).to_string()),
            }
        }
        "/estimate" => match MockEstimator.estimate_level(&text("text"), &text("language")) {
            Ok(v) => (200, json!({"level": v.level.symbol()}).to_string()),
            Err(e) => (400, json!({"error": e.to_string()}).to_string()),
        },
        "/similarity" => match MockSimilarity.similarity(&text("a"), &text("b")) {
            Ok(s) => (200, json!({"score": s}).to_string()),
            Err(e) => (400, json!({"error": e.to_string()}).to_string()),
        },
        _ => (404, "{}".into()),
    }
}
