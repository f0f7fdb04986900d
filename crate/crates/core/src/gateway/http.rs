use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatBackend, CompletionRequest};
use crate::error::{Error, Result};

pub const ENDPOINT_VAR: &str = "INQUIRE_ENDPOINT";
pub const TOKEN_VAR: &str = "INQUIRE_TOKEN";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Full URL of the chat-completion route.
    pub endpoint: String,
    pub token: Option<String>,
    pub retries: u32,
    pub timeout: Duration,
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            retries: 3,
            timeout: Duration::from_secs(60),
            backoff: Duration::from_millis(500),
        }
    }

    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| Error::Config(format!("{ENDPOINT_VAR} is not set")))?;
        let mut cfg = Self::new(endpoint);
        cfg.token = std::env::var(TOKEN_VAR).ok().filter(|t| !t.is_empty());
        Ok(cfg)
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn body(request: &CompletionRequest) -> serde_json::Value {
        let mut body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if request.top_p != 1.0 {
            body["top_p"] = json!(request.top_p);
        }
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Transport(format!("HTTP {status}: {}", truncate(&text, 200))));
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| Error::Transport(format!("malformed response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| Error::Transport("response has no choices".into()))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let body = Self::body(request);
        let mut delay = self.config.backoff;
        let mut last = None;
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
