//! Chat-completions client over blocking HTTP.

use std::time::Duration;

use guidance_core::agents::{Agent, Backend, BackendConfig, BackendError, ChatMessage};
use serde::Serialize;

/// Overrides `backend.endpoint` when set.
pub const URL_ENV: &str = "GRAPPA_LLM_URL";
/// Names the variable that holds the API key, overriding `backend.api_key_env`.
pub const KEY_VAR_ENV: &str = "GRAPPA_LLM_KEY_VAR";

#[derive(Serialize)]
#[serde(untagged)]
enum Temperature {
    Int(i64),
    Float(f64),
}

impl From<f64> for Temperature {
    fn from(t: f64) -> Self {
        if t.fract() == 0.0 && t.abs() < 1e15 {
            Temperature::Int(t as i64)
        } else {
            Temperature::Float(t)
        }
    }
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: Temperature,
    max_tokens: u32,
}

/// The exact request body: keys in the order model, messages, temperature,
/// max_tokens, with an integral temperature written without a fraction.
pub fn request_body(cfg: &BackendConfig, messages: &[ChatMessage]) -> String {
    let body = RequestBody {
        model: &cfg.model,
        messages,
        temperature: cfg.temperature.into(),
        max_tokens: cfg.max_tokens,
    };
    serde_json::to_string(&body).expect("request body serializes")
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn parse_reply(body: &str) -> Result<String, BackendError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| BackendError::Response(format!("not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(serde_json::Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Response("missing choices[0].message.content".into()))
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Status { status, .. } => *status == 429 || *status >= 500,
        BackendError::Timeout | BackendError::Transport(_) => true,
        _ => false,
    }
}

pub struct HttpBackend {
    cfg: BackendConfig,
    endpoint: String,
    key: String,
    agent: ureq::Agent,
    /// Attempts made by the last `complete` call.
    pub last_attempts: u32,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig, endpoint: String, key: String) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build();
        Self { cfg, endpoint, key, agent: ureq::Agent::new_with_config(config), last_attempts: 0 }
    }

    /// Resolves the endpoint and key through the environment.
    pub fn from_env(cfg: &BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let endpoint = std::env::var(URL_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| cfg.endpoint.clone())
            .ok_or_else(|| BackendError::Config("no endpoint configured".into()))?;
        let key_var = std::env::var(KEY_VAR_ENV).ok().filter(|s| !s.is_empty()).unwrap_or_else(|| cfg.api_key_env.clone());
        let key = std::env::var(&key_var)
            .map_err(|_| BackendError::Config(format!("environment variable {key_var} holding the API key is not set")))?;
        Ok(Self::new(cfg.clone(), endpoint, key))
    }

    fn attempt(&self, body: &str) -> Result<String, BackendError> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.key))
            .header("Content-Type", "application/json")
            .send(body);
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(BackendError::Timeout),
            Err(e) => return Err(BackendError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            e => BackendError::Transport(e.to_string()),
        })?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        parse_reply(&text)
    }
}

impl Backend for HttpBackend {
    /// One initial attempt plus up to `retries` more on 429, 5xx, timeouts
    /// and transport errors, sleeping `backoff_base_ms * 2^i` before retry `i`.
    fn complete(&mut self, _agent: Agent, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let body = request_body(&self.cfg, messages);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.last_attempts = attempt;
            match self.attempt(&body) {
                Ok(reply) => return Ok(reply),
                Err(e) if retryable(&e) && attempt <= self.cfg.retries => {
                    let wait = self.cfg.backoff_base_ms.saturating_mul(1u64 << (attempt - 1).min(20));
                    std::thread::sleep(Duration::from_millis(wait));
                }
                Err(e) => return Err(e),
            }
        }
    }
}
