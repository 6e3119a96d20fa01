//! The Advisor / Grounding / Robotic / Monitor conversation that writes and
//! refines guidance scripts, plus keyframe summaries of failed episodes.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod conversation;
mod improve;
mod keyframes;
mod prompts;
#[cfg(test)]
mod tests;

pub use conversation::{
    generate_guidance_function, Artifacts, ConversationState, Message, Session, Speaker, ToolCall,
    DEFAULT_TURN_BUDGET,
};
pub use improve::{
    improve, monitor_feedback, render_monitor_payload, BatchRunner, ImprovementReport, IterationRecord,
    MonitorReport, SequentialRunner,
};
pub use keyframes::{extract_keyframes, kmeans, pca_project, KeyframeError, KeyframeParams, KeyframeSet, KMEANS_MAX_ITERS, KMEANS_TOL};
pub use prompts::{AgentRole, Prompts, Tool, GSL_AMENDMENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Advisor,
    Grounding,
    Monitor,
    Robotic,
}

impl Agent {
    pub const ALL: [Agent; 4] = [Agent::Advisor, Agent::Grounding, Agent::Monitor, Agent::Robotic];

    /// Name other agents use in `NEXT:` directives.
    pub fn wire_name(self) -> &'static str {
        match self {
            Agent::Advisor => "supervisor_agent",
            Agent::Grounding => "perception_agent",
            Agent::Monitor => "monitor_agent",
            Agent::Robotic => "robotic_agent",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Agent::Advisor => "advisor",
            Agent::Grounding => "grounding",
            Agent::Monitor => "monitor",
            Agent::Robotic => "robotic",
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    To(Agent),
    Terminate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Routing {
    pub route: Route,
    /// Set when the directive was missing or named no known agent.
    pub warning: Option<String>,
}

/// Reads the routing directive on the last non-empty line: `TERMINATE` as a
/// whole token, else a trailing `NEXT: <name>`. Falls back to the advisor.
pub fn route_message(text: &str) -> Routing {
    let last = text.lines().rev().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    if last.split(|c: char| !is_word(c)).any(|w| w == "TERMINATE") {
        return Routing { route: Route::Terminate, warning: None };
    }
    let fallback = |warning: String| Routing { route: Route::To(Agent::Advisor), warning: Some(warning) };
    let Some(pos) = last.rfind("NEXT:") else {
        return fallback("message has no routing directive".to_string());
    };
    let raw = last[pos + "NEXT:".len()..].trim().trim_end_matches(|c: char| !is_word(c));
    let name: String = raw
        .trim_matches(|c: char| c == '\'' || c == '"' || c == '`')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
        .to_lowercase();
    match name.as_str() {
        "supervisor_agent" => Routing { route: Route::To(Agent::Advisor), warning: None },
        "perception_agent" => Routing { route: Route::To(Agent::Grounding), warning: None },
        "robotic_agent" => Routing { route: Route::To(Agent::Robotic), warning: None },
        _ => fallback(alloc::format!("unknown routing target `{raw}`")),
    }
}

/// The last triple-backtick block, with the `#gsl 1` header prepended when
/// its first non-blank line is not already the header.
pub fn extract_code_block(text: &str) -> Option<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(body) => blocks.push(body),
                None => current = Some(Vec::new()),
            }
        } else if let Some(body) = current.as_mut() {
            body.push(line);
        }
    }
    let body = blocks.pop()?;
    let mut src = String::new();
    if body.iter().find(|l| !l.trim().is_empty()).map(|l| l.trim()) != Some(crate::gsl::HEADER) {
        src.push_str(crate::gsl::HEADER);
        src.push('\n');
    }
    for l in body {
        src.push_str(l);
        src.push('\n');
    }
    Some(src)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transcript has no reply for {agent} turn {turn}")]
    TranscriptExhausted { agent: Agent, turn: usize },
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend request timed out")]
    Timeout,
    #[error("backend transport error: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    Response(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// One chat completion per call. Implementations keep their own turn state.
pub trait Backend {
    fn complete(&mut self, agent: Agent, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub retries: u32,
    /// Backoff before retry `i` is `backoff_base_ms * 2^i`.
    pub backoff_base_ms: u64,
    pub transcript: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: None,
            model: "gpt-4o-mini-2024-07-18".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            temperature: 0.0,
            max_tokens: 2000,
            timeout_secs: 60,
            retries: 3,
            backoff_base_ms: 1000,
            transcript: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature != 0.0 {
            return Err(BackendError::Config("temperature is fixed at 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Config("max_tokens must be positive".into()));
        }
        match self.kind {
            BackendKind::Http if self.endpoint.as_deref().is_none_or(str::is_empty) => {
                Err(BackendError::Config("http backend needs an endpoint".into()))
            }
            BackendKind::Scripted if self.transcript.is_none() => {
                Err(BackendError::Config("scripted backend needs a transcript".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub role: Agent,
    pub text: String,
}

/// Recorded replies, consumed in order per role.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default, rename = "turn")]
    pub turns: Vec<TranscriptTurn>,
}

impl Transcript {
    pub fn replies(&self, agent: Agent) -> impl Iterator<Item = &str> {
        self.turns.iter().filter(move |t| t.role == agent).map(|t| t.text.as_str())
    }
}

/// Plays back a transcript; the `i`-th request from a role gets that role's
/// `i`-th recorded reply. Every request is kept for inspection.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: BTreeMap<Agent, Vec<String>>,
    next: BTreeMap<Agent, usize>,
    pub requests: Vec<(Agent, Vec<ChatMessage>)>,
}

impl ScriptedBackend {
    pub fn new(transcript: &Transcript) -> Self {
        let mut replies: BTreeMap<Agent, Vec<String>> = BTreeMap::new();
        for t in &transcript.turns {
            replies.entry(t.role).or_default().push(t.text.clone());
        }
        Self { replies, next: BTreeMap::new(), requests: Vec::new() }
    }

    /// Replies not yet consumed, per role.
    pub fn remaining(&self, agent: Agent) -> usize {
        let total = self.replies.get(&agent).map_or(0, Vec::len);
        total - self.next.get(&agent).copied().unwrap_or(0)
    }
}

impl Backend for ScriptedBackend {
    fn complete(&mut self, agent: Agent, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let turn = self.next.get(&agent).copied().unwrap_or(0);
        let reply = self
            .replies
            .get(&agent)
            .and_then(|r| r.get(turn))
            .cloned()
            .ok_or(BackendError::TranscriptExhausted { agent, turn })?;
        self.next.insert(agent, turn + 1);
        self.requests.push((agent, messages.to_vec()));
        Ok(reply)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("protocol failure after {turns} turns: {reason}")]
    ProtocolFailure { reason: String, turns: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Keyframes(#[from] KeyframeError),
    #[error(transparent)]
    Exec(#[from] crate::executor::ExecError),
}
