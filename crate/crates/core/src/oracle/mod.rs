//! The scoring oracle: a deterministic rule engine or an external
//! chat-completion endpoint, both behind [`Oracle::complete`].

mod engine;
mod http;
pub mod prompts;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::respond as deterministic_response;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle configuration: {0}")]
    Config(String),
    #[error("oracle transport: {0}")]
    Transport(String),
    #[error("oracle response: {0}")]
    Response(String),
    #[error("no rule-engine contract for this prompt: {0}")]
    UnknownPrompt(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn chars(&self) -> usize {
        self.content.chars().count()
    }
}

pub fn input_chars(messages: &[ChatMessage]) -> usize {
    messages.iter().map(ChatMessage::chars).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_input_chars: usize,
    /// Dotted path to the reply text in the response JSON; numeric
    /// segments index arrays.
    pub response_path: String,
    pub key_header: Option<String>,
    #[serde(skip_serializing)]
    pub key: Option<String>,
    pub retries: u32,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: "default".into(),
            timeout_secs: 60.0,
            max_input_chars: 32_768,
            response_path: "choices.0.message.content".into(),
            key_header: None,
            key: None,
            retries: 1,
        }
    }
}

pub const ENV_ENDPOINT: &str = "ROOTSCOPE_ORACLE_ENDPOINT";
pub const ENV_MODEL: &str = "ROOTSCOPE_ORACLE_MODEL";
pub const ENV_KEY_HEADER: &str = "ROOTSCOPE_ORACLE_KEY_HEADER";
pub const ENV_KEY: &str = "ROOTSCOPE_ORACLE_KEY";

impl ExternalConfig {
    /// Fills unset fields from the environment.
    pub fn with_env(mut self) -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if self.endpoint.is_empty() {
            if let Some(v) = var(ENV_ENDPOINT) {
                self.endpoint = v;
            }
        }
        if let Some(v) = var(ENV_MODEL) {
            self.model = v;
        }
        if self.key_header.is_none() {
            self.key_header = var(ENV_KEY_HEADER);
        }
        if self.key.is_none() {
            self.key = var(ENV_KEY);
        }
        self
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.endpoint.trim().is_empty() {
            return Err(OracleError::Config(format!(
                "external mode needs an endpoint (set {ENV_ENDPOINT} or the config field)"
            )));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(OracleError::Config("timeout must be positive".into()));
        }
        if self.max_input_chars == 0 {
            return Err(OracleError::Config("max_input_chars must be positive".into()));
        }
        if self.key.is_some() && self.key_header.is_none() {
            return Err(OracleError::Config("an API key needs a header name".into()));
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OracleMode {
    Deterministic,
    External(ExternalConfig),
}

impl fmt::Display for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleMode::Deterministic => f.write_str("deterministic"),
            OracleMode::External(c) => write!(f, "external({})", c.endpoint),
        }
    }
}

/// One recorded request/response pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub purpose: String,
    pub input_chars: usize,
    pub messages: Vec<ChatMessage>,
    pub reply: Option<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CallStats {
    pub calls: usize,
    pub max_input_chars: usize,
    pub total_input_chars: usize,
}

impl CallStats {
    fn record(&mut self, chars: usize) {
        self.calls += 1;
        self.total_input_chars += chars;
        self.max_input_chars = self.max_input_chars.max(chars);
    }

    /// Rough token count at four characters per token.
    pub fn max_input_tokens_estimate(&self) -> usize {
        self.max_input_chars.div_ceil(4)
    }
}

pub struct Oracle {
    mode: OracleMode,
    stats: CallStats,
    transcript: Vec<Exchange>,
    keep_transcript: bool,
}

impl Oracle {
    pub fn deterministic() -> Self {
        Self::new(OracleMode::Deterministic).expect("deterministic mode has no config")
    }

    pub fn new(mode: OracleMode) -> Result<Self, OracleError> {
        if let OracleMode::External(cfg) = &mode {
            cfg.validate()?;
        }
        Ok(Self {
            mode,
            stats: CallStats::default(),
            transcript: Vec::new(),
            keep_transcript: true,
        })
    }

    /// Disables transcript retention; call statistics are still kept.
    pub fn without_transcript(mut self) -> Self {
        self.keep_transcript = false;
        self
    }

    pub fn mode(&self) -> &OracleMode {
        &self.mode
    }

    pub fn is_external(&self) -> bool {
        matches!(self.mode, OracleMode::External(_))
    }

    pub fn stats(&self) -> &CallStats {
        &self.stats
    }

    pub fn transcript(&self) -> &[Exchange] {
        &self.transcript
    }

    pub fn take_transcript(&mut self) -> Vec<Exchange> {
        std::mem::take(&mut self.transcript)
    }

    pub fn reset(&mut self) {
        self.stats = CallStats::default();
        self.transcript.clear();
    }

    /// Sends `messages` and returns the reply text. The recorded input size
    /// is the character count actually sent.
    pub fn complete(&mut self, purpose: &str, messages: &[ChatMessage]) -> Result<String, OracleError> {
        let sent = match &self.mode {
            OracleMode::External(cfg) => head_trim(messages, cfg.max_input_chars),
            OracleMode::Deterministic => messages.to_vec(),
        };
        let chars = input_chars(&sent);
        self.stats.record(chars);
        let result = match &self.mode {
            OracleMode::Deterministic => engine::respond(&sent),
            OracleMode::External(cfg) => http::post_chat(cfg, &sent),
        };
        if self.keep_transcript {
            self.transcript.push(Exchange {
                purpose: purpose.to_string(),
                input_chars: chars,
                messages: sent,
                reply: result.as_ref().ok().cloned(),
                error: result.as_ref().err().map(ToString::to_string),
            });
        }
        result
    }
}

/// Drops leading characters so the total is at most `limit`, starting with
/// the earliest non-system message.
pub fn head_trim(messages: &[ChatMessage], limit: usize) -> Vec<ChatMessage> {
    let mut out = messages.to_vec();
    let mut excess = input_chars(&out).saturating_sub(limit);
    if excess == 0 {
        return out;
    }
    let order: Vec<usize> = (0..out.len())
        .filter(|&i| out[i].role != Role::System)
        .chain((0..out.len()).filter(|&i| out[i].role == Role::System))
        .collect();
    for i in order {
        if excess == 0 {
            break;
        }
        let n = out[i].chars();
        let cut = excess.min(n);
        out[i].content = out[i].content.chars().skip(cut).collect();
        excess -= cut;
    }
    out
}

/// Extracts the trimmed text of every `start … end` block in order. A start
/// marker followed by another start before its end is skipped.
pub fn parse_marked(text: &str, start: &str, end: &str) -> Vec<String> {
    let mut out = Vec::new();
    if start.is_empty() || end.is_empty() || start == end {
        return out;
    }
    let mut rest = text;
    while let Some(s) = rest.find(start) {
        let body = &rest[s + start.len()..];
        let Some(e) = body.find(end) else { break };
        match body[..e].rfind(start) {
            Some(inner) => {
                let b = &body[inner + start.len()..e];
                out.push(b.trim().to_string());
            }
            None => out.push(body[..e].trim().to_string()),
        }
        rest = &body[e + end.len()..];
    }
    out
}

/// Wraps `body` in a marker pair.
pub fn render_marked(start: &str, body: &str, end: &str) -> String {
    format!("{start}\n{body}\n{end}")
}
