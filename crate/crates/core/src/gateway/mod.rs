//! Chat-completion and embedding interface over model providers.
//!
//! Two backends: an OpenAI-compatible HTTP client and a scripted backend that
//! replays canned replies from a rule file, which is what every offline test,
//! the bench and the bundled demos run on.

mod embedding;
mod http;
mod scripted;

pub use embedding::hashed_embedding;
pub use http::HttpBackend;
pub use scripted::{MatchKind, ScriptRule, ScriptedBackend};

use crate::tools::{ToolArgs, ToolSpec};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
    HumanFeedback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool_name: String,
    #[serde(default)]
    pub arguments: ToolArgs,
}

impl ToolInvocation {
    /// Only scalar argument values are allowed so the invocation serializes
    /// to a flat object.
    pub fn new(tool_name: impl Into<String>, arguments: ToolArgs) -> Result<Self, GatewayError> {
        let tool_name = tool_name.into();
        if tool_name.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("tool_name is empty".into()));
        }
        if let Some((k, _)) = arguments.iter().find(|(_, v)| v.is_array() || v.is_object()) {
            return Err(GatewayError::InvalidRequest(format!(
                "argument {k} is not a scalar"
            )));
        }
        Ok(Self { tool_name, arguments })
    }

    pub fn arguments_json(&self) -> String {
        serde_json::to_string(&self.arguments).expect("scalar map serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolInvocation>,
    #[serde(default)]
    pub seq: u64,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_call: None,
            seq: 0,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub available_tools: Vec<ToolSpec>,
    #[serde(default)]
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// Numbers the messages 1.. so seq is strictly increasing.
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        let messages = messages
            .into_iter()
            .enumerate()
            .map(|(i, mut m)| {
                m.seq = i as u64 + 1;
                m
            })
            .collect();
        Self {
            messages,
            available_tools: Vec::new(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    /// System prompt plus one user turn, the shape almost every call uses.
    pub fn prompt(system: &str, user: impl Into<String>) -> Self {
        Self::new(vec![ChatMessage::system(system), ChatMessage::user(user)])
    }

    pub fn with_tools(mut self, tools: Vec<ToolSpec>) -> Self {
        self.available_tools = tools;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages is empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.messages.windows(2).any(|w| w[0].seq >= w[1].seq) {
            return Err(GatewayError::InvalidRequest("message seq is not increasing".into()));
        }
        if self
            .messages
            .iter()
            .any(|m| m.tool_call.is_some() && m.role != Role::Assistant)
        {
            return Err(GatewayError::InvalidRequest(
                "tool_call on a non-assistant message".into(),
            ));
        }
        Ok(())
    }

    /// Content of the newest user or tool message, which is what scripted
    /// rules match against.
    pub fn latest_prompt(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| matches!(m.role, Role::User | Role::Tool | Role::HumanFeedback))
            .map(|m| m.content.as_str())
    }

    fn next_seq(&self) -> u64 {
        self.messages.last().map_or(1, |m| m.seq + 1)
    }
}

/// Fixed-length vector. Serialized as a bare array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.values {
                *v /= n;
            }
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    HttpOpenaiCompatible,
    Scripted,
}

fn default_embed_dim() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_model: Option<String>,
    /// Extra attempts after the first failed HTTP call.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_timeout_ms() -> u64 {
    30_000
}

impl ProviderConfig {
    pub fn scripted(script_path: impl Into<PathBuf>) -> Self {
        Self {
            kind: ProviderKind::Scripted,
            endpoint: None,
            api_key_env: None,
            script_path: Some(script_path.into()),
            embed_dim: default_embed_dim(),
            model: None,
            embedding_model: None,
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn http(endpoint: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::HttpOpenaiCompatible,
            endpoint: Some(endpoint.into()),
            api_key_env: Some(api_key_env.into()),
            script_path: None,
            ..Self::scripted("")
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.embed_dim == 0 {
            return Err(GatewayError::Config("embed_dim must be positive".into()));
        }
        match self.kind {
            ProviderKind::HttpOpenaiCompatible => {
                if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                    return Err(GatewayError::Config("http provider needs endpoint".into()));
                }
                if self.api_key_env.as_deref().is_none_or(|e| e.trim().is_empty()) {
                    return Err(GatewayError::Config("http provider needs api_key_env".into()));
                }
            }
            ProviderKind::Scripted => {
                if self.script_path.as_ref().is_none_or(|p| p.as_os_str().is_empty()) {
                    return Err(GatewayError::Config("scripted provider needs script_path".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("embedding input is empty")]
    EmptyInput,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no script rule matches prompt: {excerpt}")]
    NoMatchingRule { excerpt: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("cannot load script {path}: {reason}")]
    Script { path: String, reason: String },
}

pub trait LanguageModel: Send + Sync {
    /// One assistant message for the request.
    fn complete(&self, req: &CompletionRequest) -> Result<ChatMessage, GatewayError>;

    /// Unit-length embedding of `text`.
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError>;

    fn embed_dim(&self) -> usize;

    /// Number of `complete` calls that reached the backend.
    fn completion_calls(&self) -> u64 {
        0
    }
}

enum Backend {
    Http(HttpBackend),
    Scripted(ScriptedBackend),
}

/// Provider-agnostic model handle with call accounting and a request log.
pub struct Gateway {
    backend: Backend,
    embed_dim: usize,
    completions: AtomicU64,
    embeddings: AtomicU64,
    log: Mutex<Vec<CompletionRequest>>,
}

impl Gateway {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let backend = match cfg.kind {
            ProviderKind::HttpOpenaiCompatible => Backend::Http(HttpBackend::new(cfg)?),
            ProviderKind::Scripted => Backend::Scripted(ScriptedBackend::load(
                cfg.script_path.as_ref().expect("validated"),
                cfg.embed_dim,
            )?),
        };
        Ok(Self::with_backend(backend, cfg.embed_dim))
    }

    pub fn scripted(backend: ScriptedBackend) -> Self {
        let dim = backend.embed_dim();
        Self::with_backend(Backend::Scripted(backend), dim)
    }

    /// Scripted gateway from in-memory rules.
    pub fn from_rules(rules: Vec<ScriptRule>) -> Result<Self, GatewayError> {
        Ok(Self::scripted(ScriptedBackend::new(rules, default_embed_dim())?))
    }

    fn with_backend(backend: Backend, embed_dim: usize) -> Self {
        Self {
            backend,
            embed_dim,
            completions: AtomicU64::new(0),
            embeddings: AtomicU64::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn embedding_calls(&self) -> u64 {
        self.embeddings.load(Ordering::SeqCst)
    }

    /// Every completion request seen so far, in order.
    pub fn request_log(&self) -> Vec<CompletionRequest> {
        self.log.lock().expect("request log poisoned").clone()
    }
}

impl LanguageModel for Gateway {
    fn complete(&self, req: &CompletionRequest) -> Result<ChatMessage, GatewayError> {
        req.validate()?;
        self.completions.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("request log poisoned").push(req.clone());
        let mut msg = match &self.backend {
            Backend::Http(b) => b.complete(req)?,
            Backend::Scripted(b) => b.complete(req)?,
        };
        msg.role = Role::Assistant;
        msg.seq = req.next_seq();
        Ok(msg)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        self.embeddings.fetch_add(1, Ordering::SeqCst);
        match &self.backend {
            Backend::Http(b) => b.embed(text),
            Backend::Scripted(b) => b.embed(text),
        }
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn completion_calls(&self) -> u64 {
        self.completions.load(Ordering::SeqCst)
    }
}

/// Completes a single system+user prompt and returns the reply text.
pub fn ask(gw: &dyn LanguageModel, system: &str, user: impl Into<String>) -> Result<String, GatewayError> {
    Ok(gw.complete(&CompletionRequest::prompt(system, user))?.content)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provider_config_requires_kind_fields() {
        let mut cfg = ProviderConfig::scripted("");
        assert!(matches!(cfg.validate(), Err(GatewayError::Config(_))));
        cfg.script_path = Some("x.json".into());
        assert!(cfg.validate().is_ok());
        let mut http = ProviderConfig::http("http://localhost:1", "KEY");
        assert!(http.validate().is_ok());
        http.api_key_env = None;
        assert!(http.validate().is_err());
    }

    #[test]
    fn provider_config_parses_kebab_kinds() {
        let cfg: ProviderConfig = serde_json::from_str(
            r#"{"kind":"http-openai-compatible","endpoint":"http://x","api_key_env":"K","embed_dim":8}"#,
        )
        .unwrap();
        assert_eq!(cfg.kind, ProviderKind::HttpOpenaiCompatible);
        assert_eq!(cfg.retries, 2);
    }

    #[test]
    fn request_numbers_messages_and_rejects_misplaced_tool_calls() {
        let mut req = CompletionRequest::prompt("sys", "hi");
        assert_eq!(req.messages.iter().map(|m| m.seq).collect::<Vec<_>>(), vec![1, 2]);
        assert!(req.validate().is_ok());
        req.messages[1].tool_call = Some(ToolInvocation::new("t", ToolArgs::new()).unwrap());
        assert!(req.validate().is_err());
        assert!(CompletionRequest::new(vec![]).validate().is_err());
    }

    #[test]
    fn tool_invocation_must_be_flat() {
        let mut args = ToolArgs::new();
        args.insert("a".into(), serde_json::json!([1]));
        assert!(ToolInvocation::new("t", args).is_err());
        assert!(ToolInvocation::new(" ", ToolArgs::new()).is_err());
    }

    #[test]
    fn role_serializes_kebab() {
        assert_eq!(serde_json::to_string(&Role::HumanFeedback).unwrap(), "\"human-feedback\"");
    }
}
