//! Remote comparator backed by an OpenAI-compatible chat completions endpoint.
//!
//! Each comparison is rendered as a prompt, POSTed to
//! `{base_url}/v1/chat/completions`, and the answer label is decoded back to
//! the subject through the prompt's label mapping. Responses are cached in an
//! append-only JSON-lines file keyed by SHA-256 of (model id, prompt text).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::comparator::{Comparator, ComparisonOutcome, ComparisonQuery, ComparisonScore};
use crate::error::{Error, Result};
use crate::textualize::{build_pair_prompt, render_pair, Label, PairPrompt, PromptTemplate};

pub const API_KEY_ENV: &str = "PAIRSURV_API_KEY";
pub const DEFAULT_TEMPERATURE: f64 = 0.00001;
const EXCERPT_LEN: usize = 200;

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout() -> f64 {
    60.0
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
    /// Ask both orderings and average, making the comparator antisymmetric.
    #[serde(default)]
    pub symmetrize: bool,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
            cache_path: None,
            max_attempts: default_attempts(),
            initial_backoff_ms: default_backoff(),
            symmetrize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Argument("temperature must be non-negative".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Argument("max_in_flight must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Argument("max_attempts must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Argument("timeout must be positive".into()));
        }
        Ok(())
    }

    fn endpoint_url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// A decoded endpoint answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    /// `None` when the answer names neither label.
    pub choice: Option<Label>,
    /// Probability of the chosen token, or 1.0 without log-probabilities.
    pub choice_probability: f64,
    pub raw_response: String,
    pub cached: bool,
}

fn answer_patterns() -> &'static [Regex; 2] {
    static PATTERNS: OnceLock<[Regex; 2]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            Regex::new(r"(?i)\banswer\b[^a-z0-9]*(?:is\b)?[^a-z0-9]*\b([ab])\b").unwrap(),
            Regex::new(r"(?i)\b(?:patient|option|subject|instance)\s+\(?([ab])\b").unwrap(),
        ]
    })
}

fn normalize_token(token: &str) -> String {
    token
        .trim()
        .trim_matches(|c: char| !c.is_ascii_alphanumeric())
        .to_ascii_lowercase()
}

fn label_from(s: &str) -> Option<Label> {
    match s {
        "a" => Some(Label::A),
        "b" => Some(Label::B),
        _ => None,
    }
}

/// Find the answer label in free text.
///
/// A bare label wins; then phrases like "answer is b"; then a single
/// distinct standalone `a`/`b` token. Anything else is ambiguous.
pub fn parse_answer_text(text: &str) -> Option<Label> {
    if let Some(l) = label_from(&normalize_token(text)) {
        return Some(l);
    }
    for re in answer_patterns() {
        if let Some(c) = re.captures(text) {
            return label_from(&c[1].to_ascii_lowercase());
        }
    }
    let mut found: Option<Label> = None;
    for tok in text.split(|c: char| !c.is_ascii_alphanumeric()) {
        if let Some(l) = label_from(&tok.to_ascii_lowercase()) {
            match found {
                Some(prev) if prev != l => return None,
                _ => found = Some(l),
            }
        }
    }
    found
}

/// Decode a chat completions response body.
pub fn decode_response(body: &Value) -> Result<(Option<Label>, f64, String)> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::Parse("response has no choices".into()))?;
    let content = choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();
    let label = parse_answer_text(&content);
    let mut probability = 1.0;
    if let (Some(label), Some(tokens)) = (label, choice.pointer("/logprobs/content").and_then(Value::as_array)) {
        let hit = tokens.iter().find(|t| {
            t.get("token")
                .and_then(Value::as_str)
                .is_some_and(|s| label_from(&normalize_token(s)) == Some(label))
        });
        if let Some(lp) = hit.and_then(|t| t.get("logprob")).and_then(Value::as_f64) {
            probability = lp.exp().clamp(0.0, 1.0);
        }
    }
    Ok((label, probability, content))
}

/// Probability that the prompt's subject events first.
pub fn parse_choice(result: &ComparisonResult, prompt: &PairPrompt) -> Result<ComparisonScore> {
    let choice = result.choice.ok_or_else(|| {
        let excerpt: String = result.raw_response.chars().take(EXCERPT_LEN).collect();
        Error::Parse(format!("answer names neither a nor b: {excerpt:?}"))
    })?;
    let p = result.choice_probability;
    ComparisonScore::new(if choice == prompt.subject_label { p } else { 1.0 - p })
}

pub fn cache_key(model_id: &str, prompt_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0u8]);
    h.update(prompt_text.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    request: Value,
    response: Value,
    timestamp: u64,
}

#[derive(Default)]
struct ResponseCache {
    file: Option<File>,
    entries: HashMap<String, Value>,
}

impl ResponseCache {
    fn open(path: Option<&PathBuf>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                // a torn final line from an interrupted run is skipped
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line?) {
                    entries.insert(entry.key, entry.response);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Some(file), entries })
    }

    fn insert(&mut self, key: String, request: Value, response: Value) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                request,
                response: response.clone(),
                timestamp,
            })?;
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        self.entries.insert(key, response);
        Ok(())
    }
}

/// Copy of a request error for every duplicate of a failed prompt.
fn replicate(e: &Error) -> Error {
    match e {
        Error::Endpoint { status, excerpt } => Error::Endpoint { status: *status, excerpt: excerpt.clone() },
        Error::Parse(m) => Error::Parse(m.clone()),
        Error::Transport(m) => Error::Transport(m.clone()),
        other => Error::Transport(other.to_string()),
    }
}

/// Comparator that asks a remote model.
pub struct RemoteComparator {
    config: EndpointConfig,
    template: PromptTemplate,
    http: reqwest::blocking::Client,
    api_key: Option<String>,
    cache: Mutex<ResponseCache>,
    network_calls: AtomicUsize,
    indeterminate: AtomicUsize,
}

impl RemoteComparator {
    pub fn new(config: EndpointConfig, template: PromptTemplate) -> Result<Self> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let cache = ResponseCache::open(config.cache_path.as_ref())?;
        Ok(Self {
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            config,
            template,
            http,
            cache: Mutex::new(cache),
            network_calls: AtomicUsize::new(0),
            indeterminate: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// HTTP requests actually sent (cache hits excluded).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// Answers that could not be decoded.
    pub fn indeterminate_count(&self) -> usize {
        self.indeterminate.load(Ordering::Relaxed)
    }

    fn request_body(&self, prompt_text: &str) -> Value {
        json!({
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": self.config.temperature,
            "logprobs": true,
            "max_tokens": 4,
        })
    }

    fn post_with_retry(&self, body: &Value) -> Result<Value> {
        let mut last_err = Error::Transport("no attempt made".into());
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let delay = self.config.initial_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            let mut req = self.http.post(self.config.endpoint_url()).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Err(e) => last_err = Error::Transport(e.to_string()),
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
                    if status.is_success() {
                        return serde_json::from_str(&text).map_err(|e| {
                            Error::Parse(format!("response body is not JSON: {e}"))
                        });
                    }
                    let err = Error::Endpoint {
                        status: status.as_u16(),
                        excerpt: text.chars().take(EXCERPT_LEN).collect(),
                    };
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(err);
                    }
                    last_err = err;
                }
            }
        }
        Err(last_err)
    }

    /// Send one prompt, consulting the cache first.
    pub fn query_comparison(&self, prompt: &PairPrompt) -> Result<ComparisonResult> {
        let key = cache_key(&self.config.model_id, &prompt.text);
        let hit = self.cache.lock().unwrap().entries.get(&key).cloned();
        let (response, cached) = match hit {
            Some(r) => (r, true),
            None => {
                let request = self.request_body(&prompt.text);
                let response = self.post_with_retry(&request)?;
                self.cache.lock().unwrap().insert(key, request, response.clone())?;
                (response, false)
            }
        };
        let (choice, choice_probability, raw_response) = decode_response(&response)?;
        Ok(ComparisonResult { choice, choice_probability, raw_response, cached })
    }

    /// Run prompts with at most `max_in_flight` concurrent requests.
    /// Identical prompt texts are sent once.
    pub fn query_many(&self, prompts: &[PairPrompt]) -> Vec<Result<ComparisonResult>> {
        let mut first_of: HashMap<&str, usize> = HashMap::new();
        let unique: Vec<usize> = prompts
            .iter()
            .enumerate()
            .filter(|(i, p)| *first_of.entry(p.text.as_str()).or_insert(*i) == *i)
            .map(|(i, _)| i)
            .collect();

        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<ComparisonResult>>>> =
            unique.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.config.max_in_flight.min(unique.len()).max(1);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    if k >= unique.len() {
                        break;
                    }
                    let r = self.query_comparison(&prompts[unique[k]]);
                    *slots[k].lock().unwrap() = Some(r);
                });
            }
        });

        let by_first: HashMap<usize, Result<ComparisonResult>> = unique
            .iter()
            .zip(slots)
            .map(|(&i, slot)| (i, slot.into_inner().unwrap().expect("every slot filled")))
            .collect();
        prompts
            .iter()
            .map(|p| match &by_first[&first_of[p.text.as_str()]] {
                Ok(r) => Ok(r.clone()),
                Err(e) => Err(replicate(e)),
            })
            .collect()
    }

    fn score(&self, result: Result<ComparisonResult>, prompt: &PairPrompt) -> Result<Option<ComparisonScore>> {
        match parse_choice(&result?, prompt) {
            Ok(s) => Ok(Some(s)),
            Err(Error::Parse(_)) => {
                self.indeterminate.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

impl Comparator for RemoteComparator {
    fn compare_many(&self, queries: &[ComparisonQuery<'_>]) -> Vec<Result<ComparisonOutcome>> {
        let per_query = if self.config.symmetrize { 2 } else { 1 };
        let mut prompts = Vec::with_capacity(queries.len() * per_query);
        let mut build_errors: Vec<Option<Error>> = Vec::with_capacity(queries.len());
        for q in queries {
            let built = if q.subject.id == q.anchor.id {
                build_pair_prompt(&self.template, q.subject, q.anchor, q.policy, q.seed).map(|p| vec![p])
            } else if self.config.symmetrize {
                Ok([true, false]
                    .into_iter()
                    .map(|first| render_pair(&self.template, q.subject, q.anchor, first, q.policy))
                    .collect())
            } else {
                build_pair_prompt(&self.template, q.subject, q.anchor, q.policy, q.seed).map(|p| vec![p])
            };
            match built {
                Ok(ps) => {
                    prompts.extend(ps);
                    build_errors.push(None);
                }
                Err(e) => build_errors.push(Some(e)),
            }
        }

        let mut results = self.query_many(&prompts).into_iter().zip(prompts.iter());
        build_errors
            .into_iter()
            .map(|err| {
                if let Some(e) = err {
                    return Err(e);
                }
                let mut scores = Vec::with_capacity(per_query);
                for _ in 0..per_query {
                    let (r, p) = results.next().expect("one result per prompt");
                    scores.push(self.score(r, p)?);
                }
                let known: Vec<f64> = scores.iter().flatten().map(|s| s.p_first_earlier()).collect();
                if known.is_empty() {
                    return Ok(ComparisonOutcome::Indeterminate("no decodable answer".into()));
                }
                let mean = known.iter().sum::<f64>() / known.len() as f64;
                Ok(ComparisonOutcome::Score(ComparisonScore::new(mean)?))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textualize::OrderPolicy;

    fn prompt(subject_label: Label) -> PairPrompt {
        PairPrompt {
            text: "t".into(),
            label_a_id: "x".into(),
            label_b_id: "y".into(),
            subject_label,
            order_policy: OrderPolicy::Shuffle,
        }
    }

    fn result(choice: Option<Label>, p: f64) -> ComparisonResult {
        ComparisonResult { choice, choice_probability: p, raw_response: String::new(), cached: false }
    }

    #[test]
    fn logprob_becomes_probability() {
        let body = json!({"choices": [{
            "message": {"role": "assistant", "content": "a"},
            "logprobs": {"content": [{"token": "a", "logprob": -0.105}]}
        }]});
        let (label, p, _) = decode_response(&body).unwrap();
        assert_eq!(label, Some(Label::A));
        assert!((p - 0.900).abs() < 1e-3);
    }

    #[test]
    fn text_without_logprobs_has_unit_probability() {
        let body = json!({"choices": [{"message": {"content": "The answer is b"}}]});
        let (label, p, raw) = decode_response(&body).unwrap();
        assert_eq!((label, p), (Some(Label::B), 1.0));
        assert_eq!(raw, "The answer is b");
        assert_eq!(parse_choice(&result(label, p), &prompt(Label::B)).unwrap().p_first_earlier(), 1.0);
        assert_eq!(parse_choice(&result(label, p), &prompt(Label::A)).unwrap().p_first_earlier(), 0.0);
    }

    #[test]
    fn choice_maps_through_subject_label() {
        let r = result(Some(Label::A), 0.9);
        assert_eq!(parse_choice(&r, &prompt(Label::A)).unwrap().p_first_earlier(), 0.9);
        assert!((parse_choice(&r, &prompt(Label::B)).unwrap().p_first_earlier() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unparseable_answer_is_parse_error() {
        let r = result(parse_answer_text("I cannot decide."), 1.0);
        assert!(matches!(parse_choice(&r, &prompt(Label::A)), Err(Error::Parse(_))));
    }

    #[test]
    fn answer_text_variants() {
        assert_eq!(parse_answer_text(" B."), Some(Label::B));
        assert_eq!(parse_answer_text("**a**"), Some(Label::A));
        assert_eq!(parse_answer_text("Answer: (a)"), Some(Label::A));
        assert_eq!(parse_answer_text("Patient b is expected to die first"), Some(Label::B));
        assert_eq!(parse_answer_text("b"), Some(Label::B));
        assert_eq!(parse_answer_text("a or b"), None);
        assert_eq!(parse_answer_text("neither"), None);
    }

    #[test]
    fn cache_key_depends_on_model_and_prompt() {
        let k = cache_key("m1", "p");
        assert_eq!(k.len(), 64);
        assert_ne!(k, cache_key("m2", "p"));
        assert_ne!(k, cache_key("m1", "q"));
    }

    #[test]
    fn config_validation() {
        let mut c = EndpointConfig::new("http://localhost:1", "m");
        assert_eq!(c.temperature, 0.00001);
        c.validate().unwrap();
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
        let parsed: EndpointConfig =
            serde_json::from_str(r#"{"base_url": "http://h", "model_id": "m"}"#).unwrap();
        assert_eq!(parsed, EndpointConfig::new("http://h", "m"));
    }
}
