//! Explanation-augmented data generation: an explainer model annotates each
//! corrupted sentence with error types, a corrected sentence, and ranked
//! natural-language explanations, which are then serialized into a marked-up
//! training input alongside the original text.
//!
//! Augmented layout:
//! `[TYPES] t1;t2 [REF] ref [EXPL] e1 | e2 [SRC] source`, where every field
//! is escaped so marker and separator strings can never occur inside
//! content. Samples whose annotation failed fall back to `[SRC] source`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorrectionSample, CorpusError};
use crate::llm::{
    parse_structured, LlmClient, LlmError, LlmRequest, ParsedStructured, RankedExplanation,
    SchemaContext, SchemaName, TemplateRegistry,
};
use crate::pool::ordered_parallel_map;

#[derive(Debug, Error)]
pub enum ExamError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("annotation failed for sample {sample_id:?}: {reason}")]
    AnnotationFailed {
        sample_id: String,
        reason: String,
        raw_responses: Vec<String>,
    },
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("augmented file {path}, line {line}: {message}")]
    ParseAugmented {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExamError {
    fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ExamError::Io {
            context: context.into(),
            source,
        }
    }
}

pub const DEFAULT_ERROR_TYPES: [&str; 4] = [
    "punctuation errors",
    "spelling errors",
    "word errors",
    "syntax errors",
];

/// Closed set of error-type names an explainer may assign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorTypeSchema {
    types: Vec<String>,
}

impl Default for ErrorTypeSchema {
    fn default() -> Self {
        ErrorTypeSchema {
            types: DEFAULT_ERROR_TYPES.map(String::from).to_vec(),
        }
    }
}

impl ErrorTypeSchema {
    pub fn new(types: Vec<String>) -> Result<Self, ExamError> {
        if types.is_empty() {
            return Err(ExamError::Config("error-type schema must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &types {
            if name.trim() != name || name.is_empty() {
                return Err(ExamError::Config(format!(
                    "error type {name:?} must be nonempty without surrounding whitespace"
                )));
            }
            if name.contains(';') {
                return Err(ExamError::Config(format!(
                    "error type {name:?} contains the reserved separator ';'"
                )));
            }
            if name.chars().any(|c| c.is_control()) {
                return Err(ExamError::Config(format!(
                    "error type {name:?} contains control characters"
                )));
            }
            if !seen.insert(name) {
                return Err(ExamError::Config(format!("duplicate error type {name:?}")));
            }
        }
        Ok(ErrorTypeSchema { types })
    }

    /// Loads a JSON array of type names.
    pub fn from_file(path: &Path) -> Result<Self, ExamError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExamError::io(format!("reading schema {}", path.display()), e))?;
        let types: Vec<String> = serde_json::from_str(&text).map_err(|e| {
            ExamError::Config(format!("schema {} is not a JSON array of strings: {e}", path.display()))
        })?;
        Self::new(types)
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    /// Listing injected verbatim into the explain prompts.
    pub fn prompt_block(&self) -> String {
        self.types.join("; ")
    }
}

/// Whether the explainer prompt may include the gold reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldMode {
    None,
    Train,
    Test,
    Both,
}

impl std::str::FromStr for GoldMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(GoldMode::None),
            "train" => Ok(GoldMode::Train),
            "test" => Ok(GoldMode::Test),
            "both" => Ok(GoldMode::Both),
            other => Err(format!("unknown gold mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One explainer annotation tied back to its sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub sample_id: String,
    pub error_types: Vec<String>,
    pub reference: String,
    pub explanations: Vec<RankedExplanation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExamFailure {
    pub sample_id: String,
    pub reason: String,
    pub raw_responses: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExamConfig {
    pub schema: ErrorTypeSchema,
    pub gold_mode: GoldMode,
    pub split: Split,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<i64>,
    pub workers: usize,
}

pub struct ExamContext<'a> {
    pub client: &'a LlmClient,
    pub templates: &'a TemplateRegistry,
    pub config: &'a ExamConfig,
}

impl ExamConfig {
    fn include_gold(&self) -> bool {
        matches!(
            (self.gold_mode, self.split),
            (GoldMode::Both, _) | (GoldMode::Train, Split::Train) | (GoldMode::Test, Split::Test)
        )
    }
}

/// System and user prompt the explainer would see for this sample. Exposed
/// so callers can audit exactly what reaches the model, in particular that
/// no gold reference leaks under `gold_mode = none`.
pub fn explain_prompt(
    sample: &CorrectionSample,
    ctx: &ExamContext<'_>,
) -> Result<(String, String, &'static str), ExamError> {
    let system = ctx.templates.render("explain_system", &[])?;
    if ctx.config.include_gold() {
        let gold = sample.references.first().ok_or_else(|| ExamError::AnnotationFailed {
            sample_id: sample.id.clone(),
            reason: "gold hint requested but the sample has no references".into(),
            raw_responses: vec![],
        })?;
        let user = ctx
            .templates
            .render("explain_gold", &[("sentence", sample.source.as_str()), ("gold", gold)])?;
        Ok((system, user, "explain_gold"))
    } else {
        let user = ctx
            .templates
            .render("explain", &[("sentence", sample.source.as_str())])?;
        Ok((system, user, "explain"))
    }
}

fn build_request(ctx: &ExamContext<'_>, system: String, user: String, template: &str) -> LlmRequest {
    LlmRequest {
        model: ctx.config.model.clone(),
        system_prompt: system,
        user_prompt: user,
        demonstrations: ctx
            .templates
            .get(template)
            .map(|t| t.demonstrations().to_vec())
            .unwrap_or_default(),
        temperature: ctx.config.temperature,
        max_tokens: ctx.config.max_tokens,
        seed: ctx.config.seed,
    }
}

/// Annotates one sample, retrying once through the repair prompt when the
/// first response fails parsing or schema validation.
pub fn annotate_sample(
    sample: &CorrectionSample,
    ctx: &ExamContext<'_>,
) -> Result<ExplanationRecord, ExamError> {
    let (system, user, template) = explain_prompt(sample, ctx)?;
    let schema_types = ctx.config.schema.types().to_vec();
    let schema_ctx = SchemaContext {
        allowed_error_types: Some(&schema_types),
        edit_count: None,
    };

    let request = build_request(ctx, system.clone(), user.clone(), template);
    let response = ctx.client.complete(&request)?;
    let first_error = match parse_structured(&response, SchemaName::ExplanationV1, &schema_ctx) {
        Ok(ParsedStructured::Explanation(payload)) => {
            return Ok(record_from(sample, payload));
        }
        Ok(_) => unreachable!("explanation schema yields explanation payloads"),
        Err(err) => err,
    };

    let repair_user = ctx.templates.render(
        "repair",
        &[
            ("error", first_error.to_string().as_str()),
            ("previous", response.text.as_str()),
            ("original", user.as_str()),
        ],
    )?;
    let repair_request = build_request(ctx, system, repair_user, template);
    let second = ctx.client.complete(&repair_request)?;
    match parse_structured(&second, SchemaName::ExplanationV1, &schema_ctx) {
        Ok(ParsedStructured::Explanation(payload)) => Ok(record_from(sample, payload)),
        Ok(_) => unreachable!("explanation schema yields explanation payloads"),
        Err(second_error) => Err(ExamError::AnnotationFailed {
            sample_id: sample.id.clone(),
            reason: format!("first attempt: {first_error}; repair attempt: {second_error}"),
            raw_responses: vec![response.text, second.text],
        }),
    }
}

fn record_from(
    sample: &CorrectionSample,
    payload: crate::llm::ExplanationPayload,
) -> ExplanationRecord {
    ExplanationRecord {
        sample_id: sample.id.clone(),
        error_types: payload.error_types,
        reference: payload.reference,
        explanations: payload.explanations,
    }
}

/// Escapes content so layout markers and separators cannot occur inside it:
/// `\` doubles, `|` becomes `\p`, `[` becomes `\k`, `;` becomes `\s`.
pub fn escape_field(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\p"),
            '[' => out.push_str("\\k"),
            ';' => out.push_str("\\s"),
            other => out.push(other),
        }
    }
    out
}

pub fn unescape_field(text: &str) -> Result<String, ExamError> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('p') => out.push('|'),
            Some('k') => out.push('['),
            Some('s') => out.push(';'),
            Some(other) => {
                return Err(ExamError::Encoding(format!("invalid escape sequence \\{other}")))
            }
            None => return Err(ExamError::Encoding("dangling escape at end of field".into())),
        }
    }
    Ok(out)
}

const TYPES_MARKER: &str = "[TYPES] ";
const REF_MARKER: &str = " [REF] ";
const EXPL_MARKER: &str = " [EXPL] ";
const SRC_MARKER: &str = " [SRC] ";
const SRC_ONLY_MARKER: &str = "[SRC] ";
const EXPL_SEPARATOR: &str = " | ";

/// Builds the augmented input string for one sample.
pub fn augmented_input(source: &str, record: Option<&ExplanationRecord>) -> String {
    match record {
        None => format!("{SRC_ONLY_MARKER}{}", escape_field(source)),
        Some(record) => {
            let types = record
                .error_types
                .iter()
                .map(|t| escape_field(t))
                .collect::<Vec<_>>()
                .join(";");
            let explanations = record
                .explanations
                .iter()
                .map(|e| escape_field(&e.text))
                .collect::<Vec<_>>()
                .join(EXPL_SEPARATOR);
            format!(
                "{TYPES_MARKER}{types}{REF_MARKER}{}{EXPL_MARKER}{explanations}{SRC_MARKER}{}",
                escape_field(&record.reference),
                escape_field(source),
            )
        }
    }
}

/// Decoded pieces of one augmented input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedParts {
    pub error_types: Vec<String>,
    pub reference: Option<String>,
    pub explanations: Vec<String>,
    pub source: String,
    pub augmented: bool,
}

pub fn parse_augmented(input: &str) -> Result<AugmentedParts, ExamError> {
    if let Some(rest) = input.strip_prefix(SRC_ONLY_MARKER) {
        return Ok(AugmentedParts {
            error_types: vec![],
            reference: None,
            explanations: vec![],
            source: unescape_field(rest)?,
            augmented: false,
        });
    }
    let rest = input.strip_prefix(TYPES_MARKER).ok_or_else(|| {
        ExamError::Encoding(format!("augmented input does not start with a marker: {input:?}"))
    })?;
    let (types_part, rest) = split_marker(rest, REF_MARKER)?;
    let (ref_part, rest) = split_marker(rest, EXPL_MARKER)?;
    let (expl_part, src_part) = split_marker(rest, SRC_MARKER)?;

    let error_types = types_part
        .split(';')
        .filter(|segment| !segment.is_empty())
        .map(unescape_field)
        .collect::<Result<Vec<_>, _>>()?;
    let explanations = expl_part
        .split(EXPL_SEPARATOR)
        .filter(|segment| !segment.is_empty())
        .map(unescape_field)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AugmentedParts {
        error_types,
        reference: Some(unescape_field(ref_part)?),
        explanations,
        source: unescape_field(src_part)?,
        augmented: true,
    })
}

fn split_marker<'a>(text: &'a str, marker: &str) -> Result<(&'a str, &'a str), ExamError> {
    let position = text
        .find(marker)
        .ok_or_else(|| ExamError::Encoding(format!("missing marker {:?}", marker.trim())))?;
    Ok((&text[..position], &text[position + marker.len()..]))
}

/// One row of an augmented TSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedRow {
    pub id: String,
    pub parts: AugmentedParts,
    pub target: Option<String>,
    pub augmented_flag: bool,
}

/// Writes the augmented TSV: `id, augmented_input, [target,] flag`. The
/// target column is present only for the train split, filled with the first
/// reference.
pub fn emit_augmented(
    samples: &[CorrectionSample],
    records: &[Option<ExplanationRecord>],
    split: Split,
    path: &Path,
) -> Result<(), ExamError> {
    if samples.len() != records.len() {
        return Err(ExamError::Config(format!(
            "augmented emit got {} samples but {} records",
            samples.len(),
            records.len()
        )));
    }
    let mut out = String::new();
    for (sample, record) in samples.iter().zip(records) {
        let input = augmented_input(&sample.source, record.as_ref());
        for (what, text) in [("id", sample.id.as_str()), ("augmented input", input.as_str())] {
            if text.contains('\t') || text.contains('\n') {
                return Err(ExamError::Encoding(format!(
                    "{what} for sample {:?} contains tab or newline",
                    sample.id
                )));
            }
        }
        let flag = if record.is_some() { "true" } else { "false" };
        match split {
            Split::Train => {
                let target = sample.references.first().ok_or_else(|| {
                    ExamError::Config(format!(
                        "sample {:?} has no reference to use as the train target",
                        sample.id
                    ))
                })?;
                out.push_str(&format!("{}\t{}\t{}\t{}\n", sample.id, input, target, flag));
            }
            Split::Test => {
                out.push_str(&format!("{}\t{}\t{}\n", sample.id, input, flag));
            }
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Reads an augmented TSV back into rows; the column count distinguishes
/// train (4) from test (3) files.
pub fn read_augmented(path: &Path) -> Result<Vec<AugmentedRow>, ExamError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExamError::io(format!("reading augmented file {}", path.display()), e))?;
    let mut rows = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| ExamError::ParseAugmented {
            path: path.to_path_buf(),
            line: index + 1,
            message,
        };
        let columns: Vec<&str> = line.split('\t').collect();
        let (id, input, target, flag) = match columns.as_slice() {
            [id, input, target, flag] => (*id, *input, Some((*target).to_string()), *flag),
            [id, input, flag] => (*id, *input, None, *flag),
            other => {
                return Err(parse_err(format!("expected 3 or 4 columns, got {}", other.len())))
            }
        };
        let augmented_flag = match flag {
            "true" => true,
            "false" => false,
            other => return Err(parse_err(format!("bad augmented flag {other:?}"))),
        };
        let parts = parse_augmented(input)?;
        if parts.augmented != augmented_flag {
            return Err(parse_err(format!(
                "flag says augmented={augmented_flag} but the input layout says {}",
                parts.augmented
            )));
        }
        rows.push(AugmentedRow {
            id: id.to_string(),
            parts,
            target,
            augmented_flag,
        });
    }
    Ok(rows)
}

/// Writes explanation records as JSON Lines.
pub fn write_records(records: &[ExplanationRecord], path: &Path) -> Result<(), ExamError> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record)
            .map_err(|e| ExamError::Config(format!("serializing record: {e}")))?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

/// Reads explanation records from JSON Lines.
pub fn load_records(path: &Path) -> Result<Vec<ExplanationRecord>, ExamError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExamError::io(format!("reading records {}", path.display()), e))?;
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ExplanationRecord = serde_json::from_str(line).map_err(|e| {
            ExamError::Config(format!("records {} line {}: {e}", path.display(), index + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

fn write_atomic(path: &Path, payload: &[u8]) -> Result<(), ExamError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| ExamError::io(format!("creating {}", parent.display()), e))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut file = std::fs::File::create(&tmp)
            .map_err(|e| ExamError::io(format!("creating {}", tmp.display()), e))?;
        file.write_all(payload)
            .map_err(|e| ExamError::io(format!("writing {}", tmp.display()), e))?;
    }
    std::fs::rename(&tmp, path)
        .map_err(|e| ExamError::io(format!("publishing {}", path.display()), e))
}

#[derive(Debug)]
pub struct ExamOutcome {
    pub records: Vec<ExplanationRecord>,
    pub failures: Vec<ExamFailure>,
    pub records_path: PathBuf,
    pub augmented_path: PathBuf,
    pub failures_path: PathBuf,
}

/// Annotates a corpus and writes `records.jsonl`, `augmented.tsv`, and
/// `failures.jsonl` under `out_dir`. Annotation failures degrade the
/// affected sample to an unaugmented row instead of aborting the batch.
pub fn run_exam(
    corpus: &[CorrectionSample],
    ctx: &ExamContext<'_>,
    out_dir: &Path,
) -> Result<ExamOutcome, ExamError> {
    match (ctx.config.gold_mode, ctx.config.split) {
        (GoldMode::Train, Split::Test) => {
            return Err(ExamError::Config(
                "gold_mode=train cannot apply to a test-split corpus".into(),
            ))
        }
        (GoldMode::Test, Split::Train) => {
            return Err(ExamError::Config(
                "gold_mode=test cannot apply to a train-split corpus".into(),
            ))
        }
        _ => {}
    }
    if ctx.config.split == Split::Train {
        if let Some(sample) = corpus.iter().find(|s| s.references.is_empty()) {
            return Err(ExamError::Config(format!(
                "train split requires a reference target, but sample {:?} has none",
                sample.id
            )));
        }
    }

    std::fs::create_dir_all(out_dir)
        .map_err(|e| ExamError::io(format!("creating {}", out_dir.display()), e))?;

    let results = ordered_parallel_map(corpus, ctx.config.workers, |_, sample| {
        annotate_sample(sample, ctx)
    });

    let mut records = Vec::new();
    let mut per_sample: Vec<Option<ExplanationRecord>> = Vec::with_capacity(corpus.len());
    let mut failures = Vec::new();
    for (sample, result) in corpus.iter().zip(results) {
        match result {
            Ok(record) => {
                records.push(record.clone());
                per_sample.push(Some(record));
            }
            Err(ExamError::AnnotationFailed {
                sample_id,
                reason,
                raw_responses,
            }) => {
                failures.push(ExamFailure {
                    sample_id,
                    reason,
                    raw_responses,
                });
                per_sample.push(None);
            }
            Err(other) => {
                failures.push(ExamFailure {
                    sample_id: sample.id.clone(),
                    reason: other.to_string(),
                    raw_responses: vec![],
                });
                per_sample.push(None);
            }
        }
    }

    let records_path = out_dir.join("records.jsonl");
    let augmented_path = out_dir.join("augmented.tsv");
    let failures_path = out_dir.join("failures.jsonl");
    write_records(&records, &records_path)?;
    emit_augmented(corpus, &per_sample, ctx.config.split, &augmented_path)?;
    let mut failure_lines = Vec::new();
    for failure in &failures {
        serde_json::to_writer(&mut failure_lines, failure)
            .map_err(|e| ExamError::Config(format!("serializing failure: {e}")))?;
        failure_lines.push(b'\n');
    }
    write_atomic(&failures_path, &failure_lines)?;

    Ok(ExamOutcome {
        records,
        failures,
        records_path,
        augmented_path,
        failures_path,
    })
}

/// Explanation records keyed by sample id, for downstream judging.
pub fn records_by_id(records: &[ExplanationRecord]) -> BTreeMap<String, ExplanationRecord> {
    records
        .iter()
        .map(|record| (record.sample_id.clone(), record.clone()))
        .collect()
}
