//! Model-provider abstraction: every prompted step (extraction, grounding,
//! classification, judging) goes through [`Provider::complete`].
//!
//! This module owns all network I/O in the crate. Tests and offline corpora
//! use [`MockProvider`], a deterministic scripted provider; production use
//! goes through [`HttpProvider`] against a chat-completions-style endpoint.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::fnv1a_64;

/// What a request is for. Scripted mocks key their lookups on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestTag {
    Extract,
    Ground,
    Classify,
    Judge,
    Ilora,
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RequestTag::Extract => "extract",
            RequestTag::Ground => "ground",
            RequestTag::Classify => "classify",
            RequestTag::Judge => "judge",
            RequestTag::Ilora => "ilora",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub tag: RequestTag,
}

impl ChatRequest {
    /// Temperature defaults to 0: verdicts must be auditable, so decoding is
    /// kept low-variance unless explicitly overridden.
    pub fn new(tag: RequestTag, system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        ChatRequest {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: 0.0,
            tag,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ChatResponse {
    pub text: String,
    pub provider_meta: BTreeMap<String, String>,
}

impl ChatResponse {
    pub fn from_text(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            provider_meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("mock script exhausted for tag {tag}")]
    ScriptExhausted { tag: RequestTag },
    #[error("non-JSON response from provider: {0}")]
    NonJsonResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

/// Stable content hash of a request's user text, as used by mock scripts.
pub fn user_text_hash(user_text: &str) -> String {
    format!("{:016x}", fnv1a_64(user_text.as_bytes()))
}

/// One scripted mock entry. `match` selects by user-text content hash,
/// `contains` by substring; entries with neither go into a per-tag FIFO
/// queue consumed in file order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub tag: RequestTag,
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub match_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub response: String,
}

/// Deterministic scripted provider. Lookup order per request: exact
/// user-text hash, then first matching substring rule, then the tag's FIFO
/// queue. An exhausted script is an error, never a silent fallback.
#[derive(Default)]
pub struct MockProvider {
    by_hash: HashMap<(RequestTag, String), String>,
    contains: Vec<(RequestTag, String, String)>,
    queues: Mutex<HashMap<RequestTag, VecDeque<String>>>,
}

impl MockProvider {
    pub fn new() -> Self {
        MockProvider::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut mock = MockProvider::new();
        for entry in entries {
            mock.add_entry(entry);
        }
        mock
    }

    /// Loads a JSONL script of [`ScriptEntry`] records.
    pub fn from_script_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let file = File::open(path.as_ref())
            .map_err(|e| ProviderError::Unavailable(format!("script file: {e}")))?;
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::Unavailable(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line).map_err(|e| {
                ProviderError::Unavailable(format!("script line {}: {e}", lineno + 1))
            })?;
            entries.push(entry);
        }
        Ok(MockProvider::from_entries(entries))
    }

    pub fn add_entry(&mut self, entry: ScriptEntry) {
        match (entry.match_hash, entry.contains) {
            (Some(hash), _) => {
                self.by_hash.insert((entry.tag, hash), entry.response);
            }
            (None, Some(substr)) => {
                self.contains.push((entry.tag, substr, entry.response));
            }
            (None, None) => {
                self.queues
                    .lock()
                    .expect("mock queue lock")
                    .entry(entry.tag)
                    .or_default()
                    .push_back(entry.response);
            }
        }
    }

    /// Scripts a response for exactly this user text.
    pub fn script_exact(&mut self, tag: RequestTag, user_text: &str, response: impl Into<String>) {
        self.by_hash
            .insert((tag, user_text_hash(user_text)), response.into());
    }

    /// Scripts a response for any user text containing `substr`.
    pub fn script_contains(
        &mut self,
        tag: RequestTag,
        substr: impl Into<String>,
        response: impl Into<String>,
    ) {
        self.contains.push((tag, substr.into(), response.into()));
    }

    /// Appends a response to the tag's fallback queue.
    pub fn push_queue(&mut self, tag: RequestTag, response: impl Into<String>) {
        self.queues
            .lock()
            .expect("mock queue lock")
            .entry(tag)
            .or_default()
            .push_back(response.into());
    }
}

impl Provider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if request.user_text.is_empty() {
            return Err(ProviderError::InvalidRequest("empty user_text".into()));
        }
        let key = (request.tag, user_text_hash(&request.user_text));
        if let Some(text) = self.by_hash.get(&key) {
            return Ok(ChatResponse::from_text(text.clone()));
        }
        for (tag, substr, response) in &self.contains {
            if *tag == request.tag && request.user_text.contains(substr) {
                return Ok(ChatResponse::from_text(response.clone()));
            }
        }
        let mut queues = self.queues.lock().expect("mock queue lock");
        if let Some(queue) = queues.get_mut(&request.tag) {
            if let Some(text) = queue.pop_front() {
                return Ok(ChatResponse::from_text(text));
            }
        }
        Err(ProviderError::ScriptExhausted { tag: request.tag })
    }
}

/// Provider defined by a closure; handy for fault injection in tests.
pub struct FnProvider<F>(pub F);

impl<F> Provider for FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (self.0)(request)
    }
}

pub(crate) fn blocking_client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(120))
        .build()
        .expect("http client")
}

/// Shared JSON-over-HTTP POST used by the chat provider and the remote
/// embedder. Keeping it here keeps all network I/O inside this module.
pub(crate) fn http_post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
) -> Result<serde_json::Value, ProviderError> {
    let mut request = client.post(url).json(body);
    if let Some(key) = api_key {
        request = request.bearer_auth(key);
    }
    let response = request
        .send()
        .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
    let status = response.status();
    let text = response
        .text()
        .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
    if !status.is_success() {
        return Err(ProviderError::Unavailable(format!(
            "HTTP {status}: {}",
            text.chars().take(200).collect::<String>()
        )));
    }
    serde_json::from_str(&text).map_err(|_| ProviderError::NonJsonResponse(text))
}

/// Simple counting semaphore bounding concurrent in-flight HTTP requests.
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(slots: usize) -> Gate {
        Gate {
            slots: Mutex::new(slots.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut slots = self.slots.lock().expect("gate lock");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("gate wait");
        }
        *slots -= 1;
    }

    fn release(&self) {
        *self.slots.lock().expect("gate lock") += 1;
        self.freed.notify_one();
    }
}

/// Chat-completions HTTP provider.
pub struct HttpProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        max_in_flight: usize,
    ) -> Self {
        HttpProvider {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            client: blocking_client(),
            gate: Gate::new(max_in_flight),
        }
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if request.user_text.is_empty() {
            return Err(ProviderError::InvalidRequest("empty user_text".into()));
        }
        let body = serde_json::json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": [
                { "role": "system", "content": request.system_text },
                { "role": "user", "content": request.user_text },
            ],
        });
        self.gate.acquire();
        let result = http_post_json(&self.client, &self.endpoint, self.api_key.as_deref(), &body);
        self.gate.release();
        let value = result?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                ProviderError::NonJsonResponse("response missing choices[0].message.content".into())
            })?;
        let mut meta = BTreeMap::new();
        if let Some(model) = value.get("model").and_then(|v| v.as_str()) {
            meta.insert("model".to_string(), model.to_string());
        }
        Ok(ChatResponse {
            text: text.to_string(),
            provider_meta: meta,
        })
    }
}

/// Declarative provider selection for configuration files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    Mock {
        /// JSONL script files loaded in order.
        #[serde(default)]
        scripts: Vec<String>,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key: Option<String>,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
    },
}

fn default_max_in_flight() -> usize {
    4
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Box<dyn Provider>, ProviderError> {
        match self {
            ProviderConfig::Mock { scripts } => {
                let mut mock = MockProvider::new();
                for path in scripts {
                    let loaded = MockProvider::from_script_file(path)?;
                    mock.by_hash.extend(loaded.by_hash);
                    mock.contains.extend(loaded.contains);
                    let mut queues = mock.queues.lock().expect("mock queue lock");
                    for (tag, queue) in loaded.queues.into_inner().expect("mock queue lock") {
                        queues.entry(tag).or_default().extend(queue);
                    }
                }
                Ok(Box::new(mock))
            }
            ProviderConfig::Http {
                endpoint,
                model,
                api_key,
                max_in_flight,
            } => Ok(Box::new(HttpProvider::new(
                endpoint.clone(),
                model.clone(),
                api_key.clone(),
                *max_in_flight,
            ))),
        }
    }
}
