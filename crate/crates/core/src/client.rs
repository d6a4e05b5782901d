//! Chat-completions client abstraction, retry policy and mock clients.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::structured::parse_ordered_object;

pub const DEFAULT_CHAT_ENDPOINT: &str = "https://openrouter.ai/api/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENROUTER_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Request body in chat-completions wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_format: Option<Value>,
}

impl ChatRequest {
    /// Content digest of the serialized request body.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("request serializes").as_bytes())
    }

    /// Total characters across all message contents.
    pub fn payload_chars(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }

    pub fn last_user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    /// Rate limits, server errors, timeouts: worth retrying.
    #[error("transient client error: {0}")]
    Transient(String),
    /// Authentication, bad request, misconfiguration.
    #[error("client error: {0}")]
    Fatal(String),
}

pub trait ChatClient: Send + Sync {
    /// Sends one request and returns the assistant message content.
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        (**self).complete(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        (**self).complete(request)
    }
}

/// Attempt budget and exponential backoff between attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 1000,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            initial_backoff_ms: 0,
            max_backoff_ms: 0,
        }
    }

    /// Delay before attempt `attempt + 1`, where `attempt` starts at 1.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

/// Client for an OpenRouter-style chat-completions endpoint.
pub struct HttpChatClient {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpChatClient {
    /// Reads the API key from the named environment variable.
    pub fn from_env(endpoint: &str, api_key_env: &str, timeout: Duration) -> Result<Self, ClientError> {
        let api_key = std::env::var(api_key_env)
            .map_err(|_| ClientError::Fatal(format!("environment variable {api_key_env} is not set")))?;
        Ok(Self::new(endpoint, api_key, timeout))
    }

    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Self {
        HttpChatClient {
            endpoint: endpoint.to_string(),
            api_key,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

pub(crate) fn classify_http_error(err: ureq::Error) -> ClientError {
    match err {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            let msg = format!("HTTP {code}: {}", body.chars().take(500).collect::<String>());
            if code == 408 || code == 429 || code >= 500 {
                ClientError::Transient(msg)
            } else {
                ClientError::Fatal(msg)
            }
        }
        ureq::Error::Transport(t) => ClientError::Transient(t.to_string()),
    }
}

/// Extracts `choices[0].message.content` from a chat-completions response.
pub fn extract_message_content(body: &Value) -> Result<String, ClientError> {
    if let Some(err) = body.get("error") {
        return Err(ClientError::Transient(format!("provider error: {err}")));
    }
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ClientError::Transient("response has no message content".into()))
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let body = serde_json::to_value(request).expect("request serializes");
        let resp = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(classify_http_error)?;
        let value: Value = resp
            .into_json()
            .map_err(|e| ClientError::Transient(format!("unreadable response body: {e}")))?;
        extract_message_content(&value)
    }
}

/// Ids of the keyed JSON object in the last user message, in order.
pub fn request_items(request: &ChatRequest) -> Vec<(String, Value)> {
    request
        .last_user_content()
        .and_then(|c| parse_ordered_object(c).ok())
        .unwrap_or_default()
}

fn keyed_json(entries: impl IntoIterator<Item = (String, Value)>) -> String {
    let map: serde_json::Map<String, Value> = entries.into_iter().collect();
    Value::Object(map).to_string()
}

/// Replies with canned responses in order, recording every request.
#[derive(Default)]
pub struct ScriptedClient {
    script: Mutex<VecDeque<Result<String, ClientError>>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedClient {
    pub fn new(script: impl IntoIterator<Item = Result<String, ClientError>>) -> Self {
        ScriptedClient {
            script: Mutex::new(script.into_iter().collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        self.requests.lock().unwrap().push(request.clone());
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(ClientError::Fatal("script exhausted".into())))
    }
}

/// Echoes the request items back: plain string values are returned as-is,
/// and for alignment items (`{"source": .., "<anchor>": ..}`) the anchor
/// text is returned.
#[derive(Default)]
pub struct EchoClient {
    calls: AtomicUsize,
}

impl EchoClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for EchoClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let items = request_items(request);
        Ok(keyed_json(items.into_iter().map(|(k, v)| {
            let echoed = match v {
                Value::Object(fields) => fields
                    .into_iter()
                    .find(|(name, _)| name != "source")
                    .map(|(_, v)| v)
                    .unwrap_or(Value::Null),
                other => other,
            };
            (k, echoed)
        })))
    }
}

/// Answers each requested id from a fixed table; unknown ids get null.
pub struct LookupClient {
    table: HashMap<String, Option<String>>,
    calls: AtomicUsize,
}

impl LookupClient {
    pub fn new(table: HashMap<String, Option<String>>) -> Self {
        LookupClient {
            table,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for LookupClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(keyed_json(request_items(request).into_iter().map(|(k, _)| {
            let v = match self.table.get(&k) {
                Some(Some(text)) => Value::String(text.clone()),
                _ => Value::Null,
            };
            (k, v)
        })))
    }
}

/// File-backed mock: maps request digests to canned responses.
///
/// File format: a JSON object `{"<digest>": "<response>", ...}`.
pub struct ReplayClient {
    responses: BTreeMap<String, String>,
    calls: AtomicUsize,
}

impl ReplayClient {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        ReplayClient {
            responses,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Fatal(format!("cannot read {}: {e}", path.display())))?;
        let responses = serde_json::from_str(&text)
            .map_err(|e| ClientError::Fatal(format!("bad replay file {}: {e}", path.display())))?;
        Ok(Self::new(responses))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let digest = request.digest();
        self.responses
            .get(&digest)
            .cloned()
            .ok_or_else(|| ClientError::Fatal(format!("no canned response for request {digest}")))
    }
}

/// Builds a JSON-object response format hint for providers that support it.
pub fn json_object_format() -> Value {
    json!({"type": "json_object"})
}
