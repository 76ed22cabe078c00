//! Tolerant extraction of structured JSON from free-form model output,
//! followed by strict schema validation.
//!
//! The extractor takes the first balanced JSON value of the expected root
//! type, so surrounding prose and code fences are ignored. Validation is
//! unforgiving, and every failure keeps the raw model text for repair
//! prompts and failure reports.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LlmError, LlmResponse};
use crate::corpus::normalize_text;
use crate::see::EditVerdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaName {
    ExplanationV1,
    JudgmentV1,
}

impl std::fmt::Display for SchemaName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemaName::ExplanationV1 => "explanation-v1",
            SchemaName::JudgmentV1 => "judgment-v1",
        })
    }
}

/// Validation context: the error types a record may use and the number of
/// edits a judgment must cover.
#[derive(Debug, Clone, Copy, Default)]
pub struct SchemaContext<'a> {
    pub allowed_error_types: Option<&'a [String]>,
    pub edit_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedExplanation {
    pub rank: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplanationPayload {
    pub error_types: Vec<String>,
    pub reference: String,
    pub explanations: Vec<RankedExplanation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgmentPayload {
    pub edit_index: usize,
    pub verdict: EditVerdict,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedStructured {
    Explanation(ExplanationPayload),
    Judgment(Vec<JudgmentPayload>),
}

pub fn parse_structured(
    response: &LlmResponse,
    schema: SchemaName,
    context: &SchemaContext,
) -> Result<ParsedStructured, LlmError> {
    let raw = response.text.as_str();
    match schema {
        SchemaName::ExplanationV1 => {
            let value = extract_value(raw, '{', '}')?;
            validate_explanation(&value, context, raw).map(ParsedStructured::Explanation)
        }
        SchemaName::JudgmentV1 => {
            let value = extract_value(raw, '[', ']')?;
            validate_judgment(&value, context, raw).map(ParsedStructured::Judgment)
        }
    }
}

/// First balanced, parseable JSON value rooted at `open`.
fn extract_value(text: &str, open: char, close: char) -> Result<Value, LlmError> {
    let mut search_from = 0usize;
    while let Some(offset) = text[search_from..].find(open) {
        let start = search_from + offset;
        if let Some(end) = balanced_end(text, start, open, close) {
            if let Ok(value) = serde_json::from_str::<Value>(&text[start..end]) {
                return Ok(value);
            }
        }
        search_from = start + open.len_utf8();
    }
    Err(LlmError::Parse {
        message: format!("no balanced JSON value starting with {open:?} found"),
        raw: text.to_string(),
    })
}

/// Byte index one past the matching `close`, honoring JSON string literals.
fn balanced_end(text: &str, start: usize, open: char, close: char) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, ch) in text[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        if ch == '"' {
            in_string = true;
        } else if ch == open {
            depth += 1;
        } else if ch == close {
            depth = depth.saturating_sub(1);
            if depth == 0 {
                return Some(start + offset + ch.len_utf8());
            }
        }
    }
    None
}

fn schema_err(field: &str, message: impl Into<String>, raw: &str) -> LlmError {
    LlmError::Schema {
        field: field.to_string(),
        message: message.into(),
        raw: raw.to_string(),
    }
}

fn require_string(value: &Value, field: &str, raw: &str) -> Result<String, LlmError> {
    value
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| schema_err(field, "expected a string", raw))
}

fn validate_explanation(
    value: &Value,
    context: &SchemaContext,
    raw: &str,
) -> Result<ExplanationPayload, LlmError> {
    let object = value
        .as_object()
        .ok_or_else(|| schema_err("root", "expected a JSON object", raw))?;

    let types_value = object
        .get("error_types")
        .ok_or_else(|| schema_err("error_types", "missing field", raw))?;
    let types_array = types_value
        .as_array()
        .ok_or_else(|| schema_err("error_types", "expected an array of strings", raw))?;
    let mut error_types = Vec::with_capacity(types_array.len());
    for entry in types_array {
        let name = require_string(entry, "error_types", raw)?;
        if let Some(allowed) = context.allowed_error_types {
            if !allowed.iter().any(|a| a == &name) {
                return Err(schema_err(
                    "error_types",
                    format!("unknown error type {name:?}"),
                    raw,
                ));
            }
        }
        if error_types.contains(&name) {
            return Err(schema_err(
                "error_types",
                format!("duplicate error type {name:?}"),
                raw,
            ));
        }
        error_types.push(name);
    }

    let reference_value = object
        .get("reference")
        .ok_or_else(|| schema_err("reference", "missing field", raw))?;
    let reference = normalize_text(&require_string(reference_value, "reference", raw)?);
    if reference.is_empty() {
        return Err(schema_err("reference", "reference sentence is empty", raw));
    }

    let expl_value = object
        .get("explanations")
        .ok_or_else(|| schema_err("explanations", "missing field", raw))?;
    let expl_array = expl_value
        .as_array()
        .ok_or_else(|| schema_err("explanations", "expected an array", raw))?;
    let mut explanations = Vec::with_capacity(expl_array.len());
    for entry in expl_array {
        let object = entry
            .as_object()
            .ok_or_else(|| schema_err("explanations", "expected objects with rank and text", raw))?;
        let rank = object
            .get("rank")
            .and_then(Value::as_u64)
            .filter(|rank| *rank >= 1)
            .ok_or_else(|| schema_err("rank", "expected an integer rank >= 1", raw))?;
        let rank = u32::try_from(rank)
            .map_err(|_| schema_err("rank", "rank out of range", raw))?;
        let text_value = object
            .get("text")
            .ok_or_else(|| schema_err("text", "missing field", raw))?;
        let text = normalize_text(&require_string(text_value, "text", raw)?);
        if text.is_empty() {
            return Err(schema_err("text", "explanation text is empty", raw));
        }
        explanations.push(RankedExplanation { rank, text });
    }
    explanations.sort_by_key(|e| e.rank);
    for (index, explanation) in explanations.iter().enumerate() {
        let expected = (index + 1) as u32;
        if explanation.rank != expected {
            return Err(schema_err(
                "rank",
                format!(
                    "ranks must be contiguous from 1; found {} where {expected} was expected",
                    explanation.rank
                ),
                raw,
            ));
        }
    }

    Ok(ExplanationPayload {
        error_types,
        reference,
        explanations,
    })
}

fn validate_judgment(
    value: &Value,
    context: &SchemaContext,
    raw: &str,
) -> Result<Vec<JudgmentPayload>, LlmError> {
    let array = value
        .as_array()
        .ok_or_else(|| schema_err("root", "expected a JSON array", raw))?;
    let mut judgments = Vec::with_capacity(array.len());
    for entry in array {
        let object = entry
            .as_object()
            .ok_or_else(|| schema_err("root", "expected judgment objects", raw))?;
        let edit_index = object
            .get("edit_index")
            .and_then(Value::as_u64)
            .ok_or_else(|| schema_err("edit_index", "expected a non-negative integer", raw))?
            as usize;
        let verdict_name = require_string(
            object
                .get("verdict")
                .ok_or_else(|| schema_err("verdict", "missing field", raw))?,
            "verdict",
            raw,
        )?;
        let verdict: EditVerdict = verdict_name.parse().map_err(|_| {
            schema_err(
                "verdict",
                format!(
                    "unknown verdict {verdict_name:?}; expected CorrectEdit, WrongEdit, or ReasonableEdit"
                ),
                raw,
            )
        })?;
        let rationale = object
            .get("rationale")
            .map(|value| require_string(value, "rationale", raw))
            .transpose()?
            .map(|text| normalize_text(&text))
            .unwrap_or_default();
        judgments.push(JudgmentPayload {
            edit_index,
            verdict,
            rationale,
        });
    }

    judgments.sort_by_key(|j| j.edit_index);
    if let Some(expected) = context.edit_count {
        if judgments.len() != expected {
            return Err(schema_err(
                "edit_index",
                format!("expected exactly {expected} judgments, got {}", judgments.len()),
                raw,
            ));
        }
    }
    for (index, judgment) in judgments.iter().enumerate() {
        let bound = context.edit_count.unwrap_or(usize::MAX);
        if judgment.edit_index >= bound {
            return Err(schema_err(
                "edit_index",
                format!("edit_index {} out of range 0..{bound}", judgment.edit_index),
                raw,
            ));
        }
        if context.edit_count.is_some() && judgment.edit_index != index {
            return Err(schema_err(
                "edit_index",
                format!("edit_index {index} is missing or duplicated", ),
                raw,
            ));
        }
        if judgment.edit_index == judgments.get(index + 1).map_or(usize::MAX, |j| j.edit_index) {
            return Err(schema_err(
                "edit_index",
                format!("duplicate edit_index {}", judgment.edit_index),
                raw,
            ));
        }
    }
    Ok(judgments)
}
