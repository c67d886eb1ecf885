use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the chat endpoint API key.
pub const API_KEY_VAR: &str = "RAFG_API_KEY";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub messages: Vec<Message>,
}

impl ChatTranscript {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatTranscript {
            messages: vec![
                Message {
                    role: Role::System,
                    content: system.into(),
                },
                Message {
                    role: Role::User,
                    content: user.into(),
                },
            ],
        }
    }

    /// Concatenated message text, used by tests to inspect prompts.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("replay script exhausted after {0} responses")]
    ReplayExhausted(usize),
    #[error("environment variable {API_KEY_VAR} is not set")]
    MissingApiKey,
    #[error("http: {0}")]
    Http(String),
    #[error("malformed chat response: {0}")]
    BadResponse(String),
    #[error("no language model configured")]
    Unavailable,
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TransportError::Http(_) | TransportError::BadResponse(_))
    }
}

/// One chat-completion round trip.
pub trait ChatTransport: Send {
    fn complete(&mut self, transcript: &ChatTranscript) -> Result<String, TransportError>;
}

/// Scripted responses read from a file of records separated by `---` lines.
/// Record *i* answers the *i*-th call.
#[derive(Clone, Debug)]
pub struct ReplayTransport {
    records: Vec<String>,
    cursor: usize,
}

impl ReplayTransport {
    pub fn new(records: Vec<String>) -> Self {
        ReplayTransport { records, cursor: 0 }
    }

    /// Splits script text on lines consisting of exactly `---`. Leading and
    /// trailing blank lines of each record are dropped.
    pub fn parse(script: &str) -> Self {
        let mut records = Vec::new();
        let mut current: Vec<&str> = Vec::new();
        let mut flush = |lines: &mut Vec<&str>| {
            let text = lines.join("\n");
            records.push(text.trim_matches('\n').trim_end().to_string());
            lines.clear();
        };
        for line in script.lines() {
            if line.trim_end() == "---" {
                flush(&mut current);
            } else {
                current.push(line);
            }
        }
        if current.iter().any(|l| !l.trim().is_empty()) {
            flush(&mut current);
        }
        ReplayTransport::new(records)
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(ReplayTransport::parse(&fs::read_to_string(path)?))
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.records.len() - self.cursor
    }
}

impl ChatTransport for ReplayTransport {
    fn complete(&mut self, _transcript: &ChatTranscript) -> Result<String, TransportError> {
        let reply = self
            .records
            .get(self.cursor)
            .cloned()
            .ok_or(TransportError::ReplayExhausted(self.records.len()))?;
        self.cursor += 1;
        Ok(reply)
    }
}

/// Chat-completion endpoint: posts `{"model", "messages"}` and returns the
/// first choice's message content.
pub struct HttpTransport {
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| TransportError::Http(e.to_string()))?;
        Ok(HttpTransport {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            client,
        })
    }

    /// Reads the key from [`API_KEY_VAR`]; fails before any network use when
    /// it is absent.
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self, TransportError> {
        let key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(TransportError::MissingApiKey)?;
        HttpTransport::new(endpoint, model, key)
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl ChatTransport for HttpTransport {
    fn complete(&mut self, transcript: &ChatTranscript) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": transcript.messages,
        });
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| TransportError::Http(e.to_string()))?;
        let parsed: ChatResponse = resp.json().map_err(|e| TransportError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::BadResponse("no choices".into()))
    }
}
