//! Prompt templates and structured-reply extraction.

use crate::knowledge::Document;
use crate::tabular::FeatureMeta;

use super::transport::ChatTranscript;
use super::CandidateProposal;

const PERSONA: &str = "You are an experienced data scientist who engineers features for tabular \
classification models using domain knowledge.";

const GRAMMAR: &str = "\
Formula language (row-wise, one value per row):
- column names exactly as listed; wrap names that are not plain identifiers in backticks, e.g. `Land Area (Km2)`
- numbers, + - * /, parentheses, unary minus
- functions: log, exp, sqrt, abs (one argument); min, max (two or more arguments)
- comparisons < <= > >= == != and the connectives and / or produce a 0/1 rule feature
- if <condition> then <value> else <value>
No aggregates over the whole column, no strings, no user-defined functions.";

fn schema_lines(schema: &[FeatureMeta]) -> String {
    schema
        .iter()
        .map(|m| {
            if m.description.is_empty() {
                format!("- {} ({})", m.name, m.kind)
            } else {
                format!("- {} ({}): {}", m.name, m.kind, m.description)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn query_prompt(description: &str, schema: &[FeatureMeta], task_goal: &str) -> ChatTranscript {
    let user = format!(
        "Downstream task goal: {task_goal}\n\n\
         Dataset description:\n{description}\n\n\
         Current features:\n{}\n\n\
         Write one search query for documents that describe domain formulas, ratios, indices or \
         decision rules built from these features that could help with the task goal. \
         Reply with the query only, on a single line of at most 512 characters.",
        schema_lines(schema)
    );
    ChatTranscript::new(PERSONA, user)
}

pub fn proposal_prompt(doc: &Document, schema: &[FeatureMeta], description: &str) -> ChatTranscript {
    let system = format!("{PERSONA}\n\n{GRAMMAR}");
    let user = format!(
        "Retrieved document `{id}` ({title}):\n<<<\n{body}\n>>>\n\n\
         Dataset description:\n{description}\n\n\
         Current features:\n{schema}\n\n\
         Think step by step about how the knowledge in this document could produce one new \
         feature that helps predict the target: scaling a single feature, transforming two or \
         more features into one, or a rule-based judgment. Reason about the likely effect of \
         adding it to the table.\n\n\
         After your reasoning, answer with exactly one fenced block containing exactly these \
         three fields:\n\
         ```\n\
         Label: <name of the new feature>\n\
         Calculation: <formula in the formula language>\n\
         Reasoning: <why this feature should help>\n\
         ```",
        id = doc.id,
        title = doc.title,
        body = doc.body.trim_end(),
        schema = schema_lines(schema),
    );
    ChatTranscript::new(system, user)
}

pub fn description_prompt(description: &str, adopted: &CandidateProposal) -> ChatTranscript {
    let user = format!(
        "Current dataset description:\n{description}\n\n\
         A new feature was added to the dataset (derived from document `{doc}`):\n\
         Label: {label}\nCalculation: {formula}\nReasoning: {reasoning}\n\n\
         Rewrite the dataset description so it also covers the new feature, mentioning it by \
         its label. Reply with the full updated description only.",
        doc = adopted.source_doc,
        label = adopted.label,
        formula = adopted.formula,
        reasoning = adopted.reasoning,
    );
    ChatTranscript::new(PERSONA, user)
}

/// Template used when no model is available or the model call fails.
pub fn fallback_description(description: &str, adopted: &CandidateProposal) -> String {
    let sentence = format!(
        "Newly added feature: {} = {}. {}",
        adopted.label,
        adopted.formula,
        adopted.reasoning.trim()
    );
    let base = description.trim_end();
    if base.is_empty() {
        sentence.trim_end().to_string()
    } else {
        format!("{base}\n{}", sentence.trim_end())
    }
}

/// Query used without a model: task goal followed by feature names.
pub fn fallback_query(schema: &[FeatureMeta], task_goal: &str) -> String {
    let mut parts = vec![task_goal.to_string()];
    parts.extend(schema.iter().map(|m| m.name.clone()));
    parts.join(" ")
}

/// Fields of the first fenced block carrying `Label:`, `Calculation:` and
/// `Reasoning:` lines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuredReply {
    pub label: String,
    pub calculation: String,
    pub reasoning: String,
    /// Text before the block.
    pub preamble: String,
}

fn field<'a>(line: &'a str, name: &str) -> Option<&'a str> {
    let t = line.trim_start();
    let head = t.get(..name.len())?;
    if head.eq_ignore_ascii_case(name) {
        Some(t[name.len()..].trim())
    } else {
        None
    }
}

fn read_block(lines: &[&str]) -> Option<(String, String, String)> {
    let (mut label, mut calc, mut reasoning) = (None, None, None::<Vec<String>>);
    for line in lines {
        if let Some(v) = field(line, "Label:") {
            label = Some(v.to_string());
        } else if let Some(v) = field(line, "Calculation:") {
            calc = Some(v.to_string());
        } else if let Some(v) = field(line, "Reasoning:") {
            reasoning = Some(vec![v.to_string()]);
        } else if let Some(r) = reasoning.as_mut() {
            // reasoning may continue over several lines
            r.push(line.trim().to_string());
        }
    }
    let reasoning = reasoning?.join(" ").trim().to_string();
    Some((label?, calc?, reasoning))
}

pub fn extract_structured(reply: &str) -> Option<StructuredReply> {
    let lines: Vec<&str> = reply.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        if !lines[i].trim_start().starts_with("```") {
            i += 1;
            continue;
        }
        let start = i + 1;
        let end = (start..lines.len())
            .find(|&j| lines[j].trim_start().starts_with("```"))
            .unwrap_or(lines.len());
        if let Some((label, calculation, reasoning)) = read_block(&lines[start..end]) {
            return Some(StructuredReply {
                label,
                calculation,
                reasoning,
                preamble: lines[..i].join("\n").trim().to_string(),
            });
        }
        i = end + 1;
    }
    None
}
