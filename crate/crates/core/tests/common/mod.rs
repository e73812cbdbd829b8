#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use indexmap::IndexMap;
use pairsurv::cohort::{Cohort, CohortRecord, FeatureValue};
use serde_json::{json, Value};

/// Weights of the stub's ranking rule over features `x1, x2, ...`.
pub const RULE_WEIGHTS: [f64; 2] = [1.0, -0.5];

/// Score of a serialized instance (`x1 is 0.3; x2 is -1`) under the rule.
pub fn rule_score(instance: &str) -> f64 {
    instance
        .split("; ")
        .filter_map(|stmt| {
            let (name, value) = stmt.split_once(" is ")?;
            let j: usize = name.trim().strip_prefix('x')?.parse().ok()?;
            Some(RULE_WEIGHTS.get(j - 1)? * value.trim().parse::<f64>().ok()?)
        })
        .sum()
}

pub fn record_rule_score(r: &CohortRecord) -> f64 {
    (0..RULE_WEIGHTS.len())
        .map(|j| RULE_WEIGHTS[j] * r.feature(&format!("x{}", j + 1)).and_then(FeatureValue::as_number).unwrap())
        .sum()
}

fn instance_line<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.trim().strip_prefix(&format!("{label}. ")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Answer with the higher-scoring instance, probability 0.9.
    Rule,
    /// Fail the first `n` requests with `status`, then follow the rule.
    FailFirst(usize, u16),
    /// Always answer with `status`.
    Always(u16),
    /// Answer with text naming neither label.
    Garbage,
}

pub struct StubServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    /// Every request body received, in arrival order.
    pub log: Arc<Mutex<Vec<Value>>>,
    stop: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
}

impl StubServer {
    pub fn start(mode: Mode) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let log = Arc::new(Mutex::new(Vec::new()));
        let (r, s, l) = (requests.clone(), stop.clone(), log.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                if s.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let (r, l) = (r.clone(), l.clone());
                    thread::spawn(move || serve(stream, mode, &r, &l));
                }
            }
        });
        Self { url: format!("http://{addr}"), requests, log, stop, addr }
    }

    pub fn count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

fn serve(stream: TcpStream, mode: Mode, requests: &AtomicUsize, log: &Mutex<Vec<Value>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = stream;
    loop {
        let mut length = 0usize;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            let l = line.trim_end();
            if l.is_empty() {
                break;
            }
            if let Some((k, v)) = l.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let n = requests.fetch_add(1, Ordering::SeqCst);
        let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        log.lock().unwrap().push(request.clone());
        let (status, payload) = respond(mode, n, &request);
        let text = payload.to_string();
        let reason = if status == 200 { "OK" } else { "Error" };
        let head = format!(
            "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
            text.len()
        );
        if out.write_all(head.as_bytes()).and_then(|_| out.write_all(text.as_bytes())).is_err() {
            return;
        }
    }
}

fn respond(mode: Mode, n: usize, request: &Value) -> (u16, Value) {
    match mode {
        Mode::Always(status) => return (status, json!({ "error": { "message": "stub refuses" } })),
        Mode::FailFirst(k, status) if n < k => return (status, json!({ "error": { "message": "stub busy" } })),
        Mode::Garbage => return (200, completion("I cannot determine this.", None)),
        _ => {}
    }
    let prompt = request
        .pointer("/messages/0/content")
        .and_then(Value::as_str)
        .unwrap_or_default();
    let a = instance_line(prompt, "a").map(rule_score).unwrap_or(0.0);
    let b = instance_line(prompt, "b").map(rule_score).unwrap_or(0.0);
    let label = if a >= b { "a" } else { "b" };
    (200, completion(label, Some(0.9f64.ln())))
}

fn completion(content: &str, logprob: Option<f64>) -> Value {
    let logprobs = logprob.map(|lp| json!({ "content": [{ "token": content, "logprob": lp }] }));
    json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": content },
            "logprobs": logprobs,
            "finish_reason": "stop"
        }]
    })
}

/// One-feature-per-column cohort from `(id, event, time, features)` rows.
pub fn cohort(rows: &[(&str, bool, f64, &[f64])]) -> Cohort {
    let width = rows.first().map_or(0, |r| r.3.len());
    let names: Vec<String> = (1..=width).map(|j| format!("x{j}")).collect();
    let records = rows
        .iter()
        .map(|(id, e, t, x)| {
            let features: IndexMap<String, FeatureValue> =
                names.iter().cloned().zip(x.iter().map(|v| FeatureValue::Number(*v))).collect();
            CohortRecord::new(*id, features, *e, *t).unwrap()
        })
        .collect();
    Cohort::new(records, names, "days").unwrap()
}
