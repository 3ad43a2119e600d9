//! Chat-completion transports: an HTTP client for the common
//! `/chat/completions` wire shape, a replay transport keyed by request
//! digest, and a recorder that mints replay fixtures from live sessions.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_ENDPOINT: &str = "LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_MODEL: &str = "LLM_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self { model: model.into(), messages, temperature: 0.0, max_tokens: Some(512) }
    }

    /// Stable hex SHA-256 over the canonical JSON of the request.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self { content: content.into(), finish_reason: Some("stop".into()) }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetryExhausted { attempts: u32, last: Box<LlmError> },
    #[error("no replay fixture for request digest {digest}")]
    ReplayMiss { digest: String },
    #[error("completion failed validation after {attempts} attempts: {reason} (last reply: {last_reply:?})")]
    Schema { attempts: u32, reason: String, last_reply: String },
    #[error("missing configuration: {0}")]
    Config(String),
    #[error("fixture file {path}: {message}")]
    Fixture { path: String, message: String },
}

impl LlmError {
    fn retryable(&self) -> bool {
        match self {
            LlmError::Timeout(_) | LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Anything that can answer a chat request. Implementations must accept
/// concurrent calls.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<T: ChatTransport + ?Sized> ChatTransport for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Validates the request, then hands it to the transport.
pub fn complete(request: &ChatRequest, transport: &dyn ChatTransport) -> Result<ChatResponse, LlmError> {
    if request.messages.is_empty() {
        return Err(LlmError::InvalidRequest("message list is empty".into()));
    }
    transport.complete(request)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, initial_backoff: Duration::from_millis(500), multiplier: 2.0 }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff.mul_f64(self.multiplier.powi(attempt as i32))
    }
}

#[derive(Debug, Clone)]
pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    timeout: Duration,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Result<Self, LlmError> {
        Self::with_options(endpoint, api_key, Duration::from_secs(30), RetryPolicy::default())
    }

    pub fn with_options(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { endpoint: endpoint.into(), api_key, timeout, retry, client })
    }

    /// Reads `LLM_ENDPOINT` and `LLM_API_KEY`.
    pub fn from_env() -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| LlmError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        Self::new(endpoint, std::env::var(ENV_API_KEY).ok())
    }

    fn attempt(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout(self.timeout)
            } else {
                LlmError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let body = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Status { status: status.as_u16(), body });
        }
        let wire: WireResponse = serde_json::from_str(&body)
            .map_err(|e| LlmError::Transport(format!("malformed completion body: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Transport("completion has no choices".into()))?;
        Ok(ChatResponse { content: choice.message.content.unwrap_or_default(), finish_reason: choice.finish_reason })
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err(e) if e.retryable() => {
                    attempt += 1;
                    if attempt >= self.retry.attempts {
                        return Err(LlmError::RetryExhausted { attempts: attempt, last: Box::new(e) });
                    }
                    std::thread::sleep(self.retry.backoff(attempt - 1));
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum FixtureResponse {
    Text(String),
    Full(ChatResponse),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureLine {
    digest: String,
    response: FixtureResponse,
}

/// Answers requests from canned responses matched by request digest.
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    responses: HashMap<String, ChatResponse>,
}

impl ReplayTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, request: &ChatRequest, response: ChatResponse) {
        self.responses.insert(request.digest(), response);
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, response: ChatResponse) {
        self.responses.insert(digest.into(), response);
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Parses a JSON Lines fixture of `{digest, response}` records.
    pub fn from_jsonl(text: &str) -> Result<Self, LlmError> {
        let mut out = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureLine = serde_json::from_str(line).map_err(|e| LlmError::Fixture {
                path: format!("line {}", i + 1),
                message: e.to_string(),
            })?;
            let resp = match rec.response {
                FixtureResponse::Text(t) => ChatResponse::text(t),
                FixtureResponse::Full(r) => r,
            };
            out.responses.insert(rec.digest, resp);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Fixture { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_jsonl(&text)
    }
}

impl ChatTransport for ReplayTransport {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let digest = request.digest();
        self.responses.get(&digest).cloned().ok_or(LlmError::ReplayMiss { digest })
    }
}

#[derive(Debug, Clone, Serialize)]
struct SessionLine<'a> {
    digest: String,
    request: &'a ChatRequest,
    response: &'a ChatResponse,
}

/// Wraps a transport and appends every exchange to a JSON Lines session
/// log. The log is a valid replay fixture.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<SessionSink>,
}

enum SessionSink {
    Memory(Vec<String>),
    File(PathBuf),
}

impl<T: ChatTransport> RecordingTransport<T> {
    pub fn in_memory(inner: T) -> Self {
        Self { inner, log: Mutex::new(SessionSink::Memory(Vec::new())) }
    }

    pub fn to_file(inner: T, path: impl Into<PathBuf>) -> Self {
        Self { inner, log: Mutex::new(SessionSink::File(path.into())) }
    }

    /// Lines captured so far (in-memory sink only).
    pub fn lines(&self) -> Vec<String> {
        match &*self.log.lock().expect("session log lock") {
            SessionSink::Memory(lines) => lines.clone(),
            SessionSink::File(_) => Vec::new(),
        }
    }
}

impl<T: ChatTransport> ChatTransport for RecordingTransport<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let response = self.inner.complete(request)?;
        let line = serde_json::to_string(&SessionLine { digest: request.digest(), request, response: &response })
            .expect("session line serializes");
        let mut sink = self.log.lock().expect("session log lock");
        match &mut *sink {
            SessionSink::Memory(lines) => lines.push(line),
            SessionSink::File(path) => {
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&*path)
                    .map_err(|e| LlmError::Fixture { path: path.display().to_string(), message: e.to_string() })?;
                writeln!(f, "{line}")
                    .map_err(|e| LlmError::Fixture { path: path.display().to_string(), message: e.to_string() })?;
            }
        }
        Ok(response)
    }
}

/// A versioned prompt with `{name}` placeholders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prompt {
    pub name: &'static str,
    pub version: &'static str,
    pub system: &'static str,
    pub user: &'static str,
}

impl Prompt {
    const fn split(name: &'static str, version: &'static str, system: &'static str, user: &'static str) -> Self {
        Self { name, version, system, user }
    }

    pub fn id(&self) -> String {
        format!("{}@{}", self.name, self.version)
    }

    pub fn messages(&self, vars: &[(&str, &str)]) -> Vec<ChatMessage> {
        vec![ChatMessage::system(fill(self.system, vars)), ChatMessage::user(fill(self.user, vars))]
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.trim().to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

macro_rules! prompt {
    ($name:literal, $version:literal) => {
        Prompt::split(
            $name,
            $version,
            include_str!(concat!("../prompts/", $name, ".", $version, ".system.txt")),
            include_str!(concat!("../prompts/", $name, ".", $version, ".user.txt")),
        )
    };
}

pub mod prompts {
    use super::Prompt;

    pub const PARSE_PATTERN: Prompt = prompt!("parse_pattern", "v1");
    pub const CLASSIFY_ATTRIBUTE: Prompt = prompt!("classify_attribute", "v1");
    pub const SIMPLIFY_QUESTION: Prompt = prompt!("simplify_question", "v1");
    pub const FALLBACK_PLAN: Prompt = prompt!("fallback_plan", "v1");
    pub const JUDGE: Prompt = prompt!("judge", "v1");

    pub const ALL: [Prompt; 5] = [PARSE_PATTERN, CLASSIFY_ATTRIBUTE, SIMPLIFY_QUESTION, FALLBACK_PLAN, JUDGE];
}

/// A transport plus the model id and schema-retry budget that built-in
/// prompts use.
#[derive(Clone)]
pub struct ChatClient {
    transport: Arc<dyn ChatTransport>,
    model: String,
    schema_retries: u32,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient").field("model", &self.model).field("schema_retries", &self.schema_retries).finish()
    }
}

impl ChatClient {
    pub fn new(transport: Arc<dyn ChatTransport>, model: impl Into<String>) -> Self {
        Self { transport, model: model.into(), schema_retries: 2 }
    }

    /// HTTP client configured from `LLM_ENDPOINT`, `LLM_API_KEY`, `LLM_MODEL`.
    pub fn from_env() -> Result<Self, LlmError> {
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".to_string());
        Ok(Self::new(Arc::new(HttpTransport::from_env()?), model))
    }

    pub fn with_schema_retries(mut self, retries: u32) -> Self {
        self.schema_retries = retries;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn request(&self, prompt: &Prompt, vars: &[(&str, &str)]) -> ChatRequest {
        ChatRequest::new(self.model.clone(), prompt.messages(vars))
    }

    /// Sends the prompt and validates the reply, re-asking up to the schema
    /// retry budget when validation fails.
    pub fn ask<T>(
        &self,
        prompt: &Prompt,
        vars: &[(&str, &str)],
        validate: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, LlmError> {
        let request = self.request(prompt, vars);
        let mut last = (String::new(), String::new());
        let attempts = self.schema_retries + 1;
        for _ in 0..attempts {
            let reply = complete(&request, self.transport.as_ref())?;
            match validate(reply.content.trim()) {
                Ok(v) => return Ok(v),
                Err(reason) => last = (reason, reply.content),
            }
        }
        Err(LlmError::Schema { attempts, reason: last.0, last_reply: last.1 })
    }
}

/// Pulls the first JSON object out of a completion that may wrap it in
/// prose or code fences.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("test-model", vec![ChatMessage::user(text)])
    }

    #[test]
    fn replay_hit_and_miss() {
        let mut replay = ReplayTransport::new();
        replay.insert(&req("hello"), ChatResponse::text("world"));
        assert_eq!(complete(&req("hello"), &replay).unwrap().content, "world");
        match complete(&req("other"), &replay) {
            Err(LlmError::ReplayMiss { digest }) => assert_eq!(digest, req("other").digest()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_message_list_is_rejected() {
        let r = ChatRequest::new("m", vec![]);
        assert!(matches!(complete(&r, &ReplayTransport::new()), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        assert_eq!(req("a").digest(), req("a").digest());
        assert_ne!(req("a").digest(), req("b").digest());
        assert_eq!(req("a").digest().len(), 64);
    }

    #[test]
    fn recorder_output_replays() {
        let mut inner = ReplayTransport::new();
        inner.insert(&req("q"), ChatResponse::text("a"));
        let rec = RecordingTransport::in_memory(inner);
        rec.complete(&req("q")).unwrap();
        let replay = ReplayTransport::from_jsonl(&rec.lines().join("\n")).unwrap();
        assert_eq!(replay.complete(&req("q")).unwrap().content, "a");
    }

    #[test]
    fn fixture_accepts_plain_string_responses() {
        let d = req("x").digest();
        let replay = ReplayTransport::from_jsonl(&format!("{{\"digest\":\"{d}\",\"response\":\"yes\"}}\n\n")).unwrap();
        assert_eq!(replay.complete(&req("x")).unwrap().content, "yes");
        assert!(ReplayTransport::from_jsonl("not json").is_err());
    }

    #[test]
    fn schema_retries_then_error() {
        struct Counting(AtomicU32);
        impl ChatTransport for Counting {
            fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, LlmError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(ChatResponse::text("not a number"))
            }
        }
        let t = Arc::new(Counting(AtomicU32::new(0)));
        let client = ChatClient::new(t.clone(), "m").with_schema_retries(2);
        let r = client.ask(&prompts::JUDGE, &[], |s| s.parse::<u8>().map_err(|e| e.to_string()));
        assert!(matches!(r, Err(LlmError::Schema { attempts: 3, .. })));
        assert_eq!(t.0.load(Ordering::SeqCst), 3);
    }

    /// Serves `statuses` in order, one connection each, with the given body.
    fn serve(statuses: Vec<u16>, body: &'static str) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for status in statuses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line.to_ascii_lowercase().starts_with("content-length:") {
                        len = line[15..].trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    head.push_str(&line);
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(format!("{head}\n{}", String::from_utf8_lossy(&buf)));
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
            seen
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy { attempts: 3, initial_backoff: Duration::from_millis(1), multiplier: 2.0 }
    }

    #[test]
    fn http_speaks_chat_completions_shape() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Remote"},"finish_reason":"stop"}]}"#;
        let (url, handle) = serve(vec![200], body);
        let t = HttpTransport::with_options(url, Some("secret".into()), Duration::from_secs(5), fast_retry()).unwrap();
        let r = t.complete(&req("hi")).unwrap();
        assert_eq!(r.content, "Remote");
        assert_eq!(r.finish_reason.as_deref(), Some("stop"));
        let seen = handle.join().unwrap();
        let lower = seen[0].to_ascii_lowercase();
        assert!(lower.starts_with("post /v1/chat/completions"));
        assert!(lower.contains("authorization: bearer secret"));
        assert!(seen[0].contains("\"messages\""));
        assert!(seen[0].contains("\"model\":\"test-model\""));
    }

    #[test]
    fn server_errors_exhaust_retries() {
        let (url, handle) = serve(vec![500, 500, 500], "{}");
        let t = HttpTransport::with_options(url, None, Duration::from_secs(5), fast_retry()).unwrap();
        match t.complete(&req("hi")) {
            Err(LlmError::RetryExhausted { attempts: 3, last }) => {
                assert!(matches!(*last, LlmError::Status { status: 500, .. }))
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(handle.join().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, handle) = serve(vec![401], "{}");
        let t = HttpTransport::with_options(url, None, Duration::from_secs(5), fast_retry()).unwrap();
        assert!(matches!(t.complete(&req("hi")), Err(LlmError::Status { status: 401, .. })));
        assert_eq!(handle.join().unwrap().len(), 1);
    }
}
