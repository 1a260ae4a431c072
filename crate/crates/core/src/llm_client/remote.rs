use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, LlmError};

#[derive(Debug, Clone, PartialEq)]
pub struct TransportError {
    pub message: String,
    pub timeout: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal blocking HTTP POST used by the remote chat and embedding
/// clients. `body` is sent verbatim as `application/json`.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &[u8],
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

#[derive(Debug, Clone, Default)]
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &[u8],
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| TransportError { message: e.to_string(), timeout: e.is_timeout() })?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| TransportError { message: e.to_string(), timeout: e.is_timeout() })?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub retries: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            retries: 2,
            backoff_base: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }

    /// Reads `REARRANGE_BASE_URL`, `REARRANGE_MODEL` and `REARRANGE_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let base = std::env::var("REARRANGE_BASE_URL").ok()?;
        let model = std::env::var("REARRANGE_MODEL").unwrap_or_else(|_| "gpt-4".to_string());
        let mut cfg = Self::new(base, model);
        cfg.api_key = std::env::var("REARRANGE_API_KEY").ok();
        Some(cfg)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Chat-completions client with exponential backoff on transport failures.
pub struct RemoteBackend<T: HttpTransport = ReqwestTransport> {
    config: RemoteConfig,
    transport: T,
}

impl RemoteBackend<ReqwestTransport> {
    pub fn new(config: RemoteConfig) -> Self {
        Self { config, transport: ReqwestTransport::new() }
    }
}

impl<T: HttpTransport> RemoteBackend<T> {
    pub fn with_transport(config: RemoteConfig, transport: T) -> Self {
        Self { config, transport }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn request_body(&self, request: &ChatRequest) -> Vec<u8> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        serde_json::to_vec(&body).expect("request body serializes")
    }
}

fn reply_text(body: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::MalformedResponse(format!("no choices[0].message.content in {body}")))
}

impl<T: HttpTransport> ChatBackend for RemoteBackend<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let url = self.config.endpoint();
        let body = self.request_body(request);
        let attempts = self.config.retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.transport.post_json(&url, self.config.api_key.as_deref(), &body, self.config.timeout) {
                Ok(resp) if (200..300).contains(&resp.status) => return reply_text(&resp.body),
                Ok(resp) => return Err(LlmError::Status { status: resp.status, body: resp.body }),
                Err(e) => last = Some(e),
            }
        }
        let last = last.expect("at least one attempt");
        if last.timeout {
            Err(LlmError::Timeout { attempts })
        } else {
            Err(LlmError::Transport { attempts, message: last.message })
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}
