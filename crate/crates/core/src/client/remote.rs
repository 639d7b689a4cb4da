//! HTTP completion endpoint.
//!
//! Request: `POST <url>` with JSON `{prompt, temperature, top_k, max_tokens,
//! n, stop, seed?, model?}`. Accepted responses: `{"choices": [{"text"}]}`,
//! `{"texts": [..]}`, `{"generated_text": ".."}` or a list of
//! `{"generated_text"}` objects.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionRequest, CompletionService, CompletionSource};
use crate::error::ClientError;

/// Environment variable holding the bearer credential.
pub const API_KEY_ENV: &str = "MORALFRAMES_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: Option<String>,
    /// Send our seed in the body. When off, each seed is still a separate
    /// request and the seed is only recorded locally.
    pub send_seed: bool,
    pub timeout_secs: u64,
    /// Name of the variable to read the credential from.
    pub api_key_env: String,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080/v1/completions".to_string(),
            model: None,
            send_seed: true,
            timeout_secs: 120,
            api_key_env: API_KEY_ENV.to_string(),
        }
    }
}

pub struct RemoteClient {
    config: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient")
            .field("url", &self.config.url)
            .field("model", &self.config.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

impl RemoteClient {
    pub fn new(config: EndpointConfig) -> Result<Self, ClientError> {
        if !(config.url.starts_with("http://") || config.url.starts_with("https://")) {
            return Err(ClientError::InvalidConfig(format!(
                "endpoint url must be http(s): `{}`",
                config.url
            )));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        Ok(Self {
            config,
            agent,
            api_key,
        })
    }

    fn body(&self, r: &CompletionRequest) -> Value {
        let mut body = json!({
            "prompt": r.prompt,
            "temperature": r.temperature,
            "top_k": r.top_k,
            "max_tokens": r.max_tokens,
            "n": r.n,
            "stop": r.stop,
        });
        if self.config.send_seed {
            body["seed"] = json!(r.seed);
        }
        if let Some(model) = &self.config.model {
            body["model"] = json!(model);
        }
        body
    }
}

/// Pull the generated texts out of any supported response shape.
pub(crate) fn extract_texts(v: &Value) -> Result<Vec<String>, ClientError> {
    let as_text = |x: &Value, field: &str| -> Result<String, ClientError> {
        x.get(field)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ClientError::Decode(format!("entry without string `{field}`")))
    };
    if let Some(choices) = v.get("choices").and_then(Value::as_array) {
        return choices.iter().map(|c| as_text(c, "text")).collect();
    }
    if let Some(texts) = v.get("texts").and_then(Value::as_array) {
        return texts
            .iter()
            .map(|t| {
                t.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ClientError::Decode("non-string in `texts`".into()))
            })
            .collect();
    }
    match v.get("generated_text") {
        Some(Value::String(s)) => return Ok(vec![s.clone()]),
        Some(Value::Array(items)) => {
            return items
                .iter()
                .map(|t| {
                    t.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| ClientError::Decode("non-string in `generated_text`".into()))
                })
                .collect()
        }
        _ => {}
    }
    if let Some(items) = v.as_array() {
        return items.iter().map(|c| as_text(c, "generated_text")).collect();
    }
    Err(ClientError::Decode(
        "expected `choices`, `texts` or `generated_text`".into(),
    ))
}

impl CompletionService for RemoteClient {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, ClientError> {
        let mut call = self.agent.post(&self.config.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let response = call
            .send_json(self.body(request))
            .map_err(|e| ClientError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        let status = response.status().as_u16();
        let text = response
            .into_body()
            .read_to_string()
            .map_err(|e| ClientError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| {
                    v.pointer("/error/message")
                        .or_else(|| v.get("error"))
                        .map(|m| m.as_str().map(str::to_string).unwrap_or(m.to_string()))
                })
                .unwrap_or_else(|| text.chars().take(200).collect());
            return Err(ClientError::Service { status, message });
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))?;
        let texts = extract_texts(&value)?;
        if texts.len() != request.n as usize {
            return Err(ClientError::ShortResponse {
                expected: request.n as usize,
                got: texts.len(),
            });
        }
        Ok(texts)
    }

    fn source(&self) -> CompletionSource {
        CompletionSource::Remote
    }

    fn namespace(&self) -> String {
        match &self.config.model {
            Some(m) => format!("{}#{m}", self.config.url),
            None => self.config.url.clone(),
        }
    }
}
