use std::fs;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{Backend, BackendError, BackendRequest, ImageLocation};
use crate::error::{Error, Result};

/// Chat-completion style endpoint taking base64 data-URI images.
pub struct ChatHttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    token: String,
    temperature: f64,
    max_tokens: u32,
}

impl ChatHttpBackend {
    /// Reads the bearer token from `token_env`; the token is never written anywhere.
    pub fn new(
        endpoint: &str,
        model: &str,
        token_env: &str,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self> {
        let token = std::env::var(token_env)
            .map_err(|_| Error::Auth(format!("environment variable `{token_env}` is not set")))?;
        if temperature < 0.0 {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {temperature}"
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(ChatHttpBackend {
            client,
            endpoint: endpoint.to_owned(),
            model: model.to_owned(),
            token,
            temperature,
            max_tokens,
        })
    }

    fn body(&self, request: &BackendRequest<'_>) -> Result<Value, BackendError> {
        let mut content = vec![json!({"type": "text", "text": request.prompt.text})];
        for image in request.images {
            let url = match &image.location {
                ImageLocation::Url(url) => url.clone(),
                ImageLocation::File(path) => {
                    let bytes = fs::read(path)
                        .map_err(|e| BackendError::Transport(format!("{}: {e}", path.display())))?;
                    format!(
                        "data:{};base64,{}",
                        media_type(path),
                        base64::engine::general_purpose::STANDARD.encode(bytes)
                    )
                }
            };
            content.push(json!({"type": "image_url", "image_url": {"url": url}}));
        }
        Ok(json!({
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "messages": [{"role": "user", "content": content}],
        }))
    }
}

fn media_type(path: &std::path::Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("bmp") => "image/bmp",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("tif" | "tiff") => "image/tiff",
        _ => "image/png",
    }
}

/// Extracts the assistant text from a chat-completion response body.
pub fn response_text(body: &Value) -> Option<String> {
    let content = body.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl Backend for ChatHttpBackend {
    fn id(&self) -> String {
        format!("chat_http:{}", self.endpoint)
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        let body = self.body(request)?;
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.token)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(BackendError::Auth(format!(
                "{} from {}",
                status, self.endpoint
            )));
        }
        if !status.is_success() {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        let value: Value = response
            .json()
            .map_err(|e| BackendError::Transport(format!("invalid JSON body: {e}")))?;
        // a body without text is a model failure, handed to the parser as empty text
        Ok(response_text(&value).unwrap_or_default())
    }
}
