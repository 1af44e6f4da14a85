//! OpenAI-compatible HTTP backend.

use super::{ChatMessage, CompletionRequest, EmbeddingVector, GatewayError, ProviderConfig, Role, ToolInvocation};
use crate::tools::ToolArgs;
use serde_json::{json, Value};
use std::time::Duration;

pub struct HttpBackend {
    base: String,
    api_key: Option<String>,
    model: String,
    embedding_model: String,
    embed_dim: usize,
    retries: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

enum Failure {
    Retryable(String),
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, GatewayError> {
        let base = cfg
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::Config("http provider needs endpoint".into()))?;
        let api_key = cfg
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build();
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            api_key,
            model: cfg.model.clone().unwrap_or_else(|| "gpt-4".into()),
            embedding_model: cfg
                .embedding_model
                .clone()
                .unwrap_or_else(|| "text-embedding-3-small".into()),
            embed_dim: cfg.embed_dim,
            retries: cfg.retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
            agent,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}{}", self.base, path);
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.backoff);
            }
            let mut req = self.agent.post(&url).set("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            let outcome = match req.send_json(body.clone()) {
                Ok(resp) => resp
                    .into_json::<Value>()
                    .map_err(|e| Failure::Fatal(GatewayError::MalformedResponse(e.to_string()))),
                Err(ureq::Error::Status(code, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    let msg = format!("HTTP {code}: {}", crate::text::truncate_chars(&text, 200));
                    if code >= 500 || code == 429 {
                        Err(Failure::Retryable(msg))
                    } else {
                        Err(Failure::Fatal(GatewayError::Transport { attempts: attempt, message: msg }))
                    }
                }
                Err(ureq::Error::Transport(t)) => Err(Failure::Retryable(t.to_string())),
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    tracing::warn!(attempt, %url, "model request failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport { attempts, message: last })
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<ChatMessage, GatewayError> {
        let body = chat_body(&self.model, req);
        let resp = self.post("/chat/completions", &body)?;
        parse_chat_response(&resp)
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let body = json!({"model": self.embedding_model, "input": text});
        let resp = self.post("/embeddings", &body)?;
        let values: Vec<f64> = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::MalformedResponse("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| GatewayError::MalformedResponse("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        if values.len() != self.embed_dim {
            return Err(GatewayError::MalformedResponse(format!(
                "embedding has {} dimensions, expected {}",
                values.len(),
                self.embed_dim
            )));
        }
        Ok(EmbeddingVector::new(values).normalized())
    }
}

fn wire_message(m: &ChatMessage) -> Value {
    // Tool results and human notes travel as user turns; the wire format's
    // tool role needs call ids this interface does not carry.
    let (role, content) = match m.role {
        Role::System => ("system", m.content.clone()),
        Role::User => ("user", m.content.clone()),
        Role::Assistant => ("assistant", m.content.clone()),
        Role::Tool => ("user", format!("Observation: {}", m.content)),
        Role::HumanFeedback => ("user", format!("Human feedback: {}", m.content)),
    };
    json!({"role": role, "content": content})
}

pub(crate) fn chat_body(model: &str, req: &CompletionRequest) -> Value {
    let mut body = json!({
        "model": model,
        "messages": req.messages.iter().map(wire_message).collect::<Vec<_>>(),
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    });
    if !req.available_tools.is_empty() {
        let tools: Vec<Value> = req
            .available_tools
            .iter()
            .map(|t| {
                let props: serde_json::Map<String, Value> = t
                    .args_schema
                    .iter()
                    .map(|(n, a)| (n.clone(), json!({"type": a.ty.json_name(), "description": a.description})))
                    .collect();
                let required: Vec<&String> =
                    t.args_schema.iter().filter(|(_, a)| a.required).map(|(n, _)| n).collect();
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": {"type": "object", "properties": props, "required": required},
                    }
                })
            })
            .collect();
        body["tools"] = Value::Array(tools);
    }
    body
}

pub(crate) fn parse_chat_response(resp: &Value) -> Result<ChatMessage, GatewayError> {
    let msg = resp
        .pointer("/choices/0/message")
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message".into()))?;
    let content = msg.get("content").and_then(Value::as_str).unwrap_or_default().to_string();
    let tool_call = match msg.pointer("/tool_calls/0/function") {
        None => None,
        Some(f) => {
            let name = f
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| GatewayError::MalformedResponse("tool call without name".into()))?;
            let args: ToolArgs = match f.get("arguments") {
                Some(Value::String(s)) if !s.trim().is_empty() => serde_json::from_str(s)
                    .map_err(|e| GatewayError::MalformedResponse(format!("tool arguments: {e}")))?,
                Some(Value::Object(o)) => o.clone().into_iter().collect(),
                _ => ToolArgs::new(),
            };
            Some(ToolInvocation::new(name, args)?)
        }
    };
    if content.is_empty() && tool_call.is_none() {
        return Err(GatewayError::MalformedResponse("empty message".into()));
    }
    Ok(ChatMessage {
        role: Role::Assistant,
        content,
        tool_call,
        seq: 0,
    })
}
