//! Language-model gateway: retrieval queries, feature proposals and
//! description updates.
//!
//! A [`Gateway`] wraps an optional [`ChatTransport`]. With a transport every
//! operation is one chat call (retried once on a transient failure). Without
//! one the gateway runs in fallback mode: queries and description updates
//! come from fixed templates, and a proposal is read from a structured block
//! inside the retrieved document itself.

pub mod prompt;
pub mod transport;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fexpr::{self, FeatureExpr, OperationKind};
use crate::knowledge::Document;
use crate::tabular::FeatureMeta;

pub use transport::{ChatTranscript, ChatTransport, HttpTransport, ReplayTransport, Role, TransportError, API_KEY_VAR};

/// Longest query accepted from the model, in characters.
pub const MAX_QUERY_CHARS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("model returned an empty response")]
    EmptyResponse,
    #[error("malformed proposal: {0}")]
    MalformedProposal(String),
    #[error("schema has no features")]
    EmptySchema,
}

/// A validated feature proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateProposal {
    pub label: String,
    /// Formula text as the model wrote it.
    pub formula: String,
    pub expr: FeatureExpr,
    pub kind: OperationKind,
    pub reasoning: String,
    /// Free-form reasoning preceding the structured block.
    pub chain_of_thought: String,
    pub source_doc: String,
}

/// Purpose of a gateway call, recorded alongside each exchange.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Query,
    Proposal,
    Description,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub kind: CallKind,
    pub prompt: ChatTranscript,
    pub reply: Option<String>,
}

pub struct Gateway {
    transport: Option<Box<dyn ChatTransport>>,
    exchanges: Vec<Exchange>,
}

impl Gateway {
    pub fn new(transport: Box<dyn ChatTransport>) -> Self {
        Gateway {
            transport: Some(transport),
            exchanges: Vec::new(),
        }
    }

    pub fn replay(script: &str) -> Self {
        Gateway::new(Box::new(ReplayTransport::parse(script)))
    }

    /// Gateway without a model.
    pub fn fallback() -> Self {
        Gateway {
            transport: None,
            exchanges: Vec::new(),
        }
    }

    pub fn is_fallback(&self) -> bool {
        self.transport.is_none()
    }

    /// Every prompt sent so far with its reply (`None` on failure).
    pub fn exchanges(&self) -> &[Exchange] {
        &self.exchanges
    }

    fn call(&mut self, kind: CallKind, prompt: ChatTranscript) -> Result<String, OracleError> {
        let transport = self.transport.as_mut().ok_or(TransportError::Unavailable)?;
        let mut result = transport.complete(&prompt);
        if matches!(&result, Err(e) if e.is_retryable()) {
            result = transport.complete(&prompt);
        }
        self.exchanges.push(Exchange {
            kind,
            prompt,
            reply: result.as_ref().ok().cloned(),
        });
        Ok(result?)
    }

    /// Builds a retrieval query from the task goal, the current description
    /// and the feature schema.
    pub fn generate_query(&mut self, description: &str, schema: &[FeatureMeta], task_goal: &str) -> Result<String, OracleError> {
        if schema.is_empty() {
            return Err(OracleError::EmptySchema);
        }
        let raw = if self.is_fallback() {
            prompt::fallback_query(schema, task_goal)
        } else {
            self.call(CallKind::Query, prompt::query_prompt(description, schema, task_goal))?
        };
        let query: String = raw
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .chars()
            .take(MAX_QUERY_CHARS)
            .collect();
        if query.is_empty() {
            return Err(OracleError::EmptyResponse);
        }
        Ok(query)
    }

    /// Asks for one feature grounded in `doc`. Replies that do not yield a
    /// formula valid against `schema` become [`OracleError::MalformedProposal`].
    pub fn propose_feature(&mut self, doc: &Document, schema: &[FeatureMeta], description: &str) -> Result<CandidateProposal, OracleError> {
        let reply = if self.is_fallback() {
            doc.body.clone()
        } else {
            self.call(CallKind::Proposal, prompt::proposal_prompt(doc, schema, description))?
        };
        validate_reply(&reply, doc, schema)
    }

    /// New description text mentioning the adopted feature. Never fails: any
    /// model problem falls back to appending a template sentence.
    pub fn update_description(&mut self, description: &str, adopted: &CandidateProposal) -> String {
        if self.is_fallback() {
            return prompt::fallback_description(description, adopted);
        }
        match self.call(CallKind::Description, prompt::description_prompt(description, adopted)) {
            Ok(text) if text.contains(&adopted.label) => text.trim().to_string(),
            _ => prompt::fallback_description(description, adopted),
        }
    }
}

fn validate_reply(reply: &str, doc: &Document, schema: &[FeatureMeta]) -> Result<CandidateProposal, OracleError> {
    let malformed = |m: String| OracleError::MalformedProposal(m);
    let s = prompt::extract_structured(reply)
        .ok_or_else(|| malformed("no fenced block with Label/Calculation/Reasoning".into()))?;
    if s.label.is_empty() {
        return Err(malformed("empty label".into()));
    }
    if schema.iter().any(|m| m.name == s.label) {
        return Err(malformed(format!("label `{}` collides with an existing feature", s.label)));
    }
    let expr = fexpr::parse(&s.calculation).map_err(|e| malformed(format!("`{}`: {e}", s.calculation)))?;
    let kind = fexpr::classify(&expr, schema).map_err(|e| malformed(format!("`{}`: {e}", s.calculation)))?;
    Ok(CandidateProposal {
        label: s.label,
        formula: s.calculation,
        expr,
        kind,
        reasoning: s.reasoning,
        chain_of_thought: s.preamble,
        source_doc: doc.id.clone(),
    })
}
