//! OpenAI-compatible chat-completions backend.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::backend::{BackendError, GenerateRequest, ModelBackend};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_cache_path")]
    pub cache_path: String,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout() -> u64 {
    60_000
}
fn default_retries() -> u32 {
    5
}
fn default_in_flight() -> usize {
    8
}
fn default_cache_path() -> String {
    "probe-cache.jsonl".into()
}
fn default_backoff() -> u64 {
    250
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: default_key_env(),
            timeout_ms: default_timeout(),
            max_retries: default_retries(),
            max_in_flight: default_in_flight(),
            cache_path: default_cache_path(),
            backoff_base_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be >= 1".into()));
        }
        if self.base_url.is_empty() || self.model_name.is_empty() {
            return Err(Error::Config("endpoint needs base_url and model_name".into()));
        }
        Ok(())
    }
}

pub struct HttpBackend {
    config: EndpointConfig,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    index: Option<usize>,
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        let url = format!("{}/v1/chat/completions", config.base_url.trim_end_matches('/'));
        Ok(HttpBackend {
            config,
            url,
            api_key,
            client,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base_ms.saturating_mul(1 << attempt.min(10));
        let capped = base.min(30_000);
        let jitter = rand::thread_rng().gen_range(0..=capped / 2 + 1);
        Duration::from_millis(capped / 2 + jitter)
    }

    fn post_once(&self, req: &GenerateRequest<'_>, n: usize) -> Result<Vec<String>, BackendError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "n": n,
            "max_tokens": req.max_tokens,
        });
        let mut rb = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb
            .send()
            .map_err(|e| BackendError::retryable(format!("request to {} failed: {e}", self.url)))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                BackendError::retryable(msg)
            } else {
                BackendError::fatal(msg)
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| BackendError::fatal(format!("malformed completion response: {e}")))?;
        let mut choices = parsed.choices;
        choices.sort_by_key(|c| c.index.unwrap_or(usize::MAX));
        Ok(choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }

    fn post_with_retries(&self, req: &GenerateRequest<'_>, n: usize) -> Result<Vec<String>, BackendError> {
        let mut attempt = 0;
        loop {
            match self.post_once(req, n) {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable && attempt < self.config.max_retries => {
                    let wait = self.backoff(attempt);
                    log::warn!("{e}; retrying in {wait:?} (attempt {})", attempt + 1);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => {
                    return Err(BackendError {
                        message: format!("{} (after {} attempt(s))", e.message, attempt + 1),
                        retryable: false,
                    })
                }
            }
        }
    }
}

impl ModelBackend for HttpBackend {
    fn identity(&self) -> String {
        format!(
            "http:{}:{}",
            self.config.base_url.trim_end_matches('/'),
            self.config.model_name
        )
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<String>, BackendError> {
        let mut out = Vec::with_capacity(req.n);
        // some servers ignore `n`; top up with further requests
        for _ in 0..req.n {
            if out.len() >= req.n {
                break;
            }
            let batch = self.post_with_retries(req, req.n - out.len())?;
            if batch.is_empty() {
                return Err(BackendError::fatal("completion response had no choices"));
            }
            out.extend(batch);
        }
        out.truncate(req.n);
        Ok(out)
    }
}
