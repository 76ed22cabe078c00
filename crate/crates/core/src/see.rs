//! LLM-as-judge scoring: a judge model classifies every predicted edit as a
//! correct, wrong, or reasonable edit, and precision/recall are computed
//! from those verdicts instead of exact reference matching.
//!
//! Verdict semantics: CorrectEdit fixes a real error, WrongEdit fails to or
//! introduces one, ReasonableEdit is an acceptable change the reference does
//! not contain. Reasonable edits are neutral: precision is
//! `n_ce / (n_ce + n_we)` and recall is `n_ce / n_golden`, so adding any
//! number of ReasonableEdit verdicts leaves the score report unchanged.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{
    apply_edits, detokenize, extract_edits, tokenize, AlignError, EditKind, EditSet, Granularity,
    Token,
};
use crate::corpus::{CorrectionSample, Prediction};
use crate::exam::ExplanationRecord;
use crate::llm::{
    parse_structured, LlmClient, LlmError, LlmRequest, ParsedStructured, SchemaContext,
    SchemaName, TemplateRegistry,
};
use crate::metrics::{
    compute_f_beta, gold_sets, match_edits, MetricsError, ReportCounts, ScoreReport,
    SentenceRecord,
};
use crate::pool::ordered_parallel_map;

#[derive(Debug, Error)]
pub enum SeeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("judging failed for sample {sample_id:?}: {reason}")]
    JudgmentFailed {
        sample_id: String,
        reason: String,
        raw_responses: Vec<String>,
    },
    #[error("judgment coverage violation for sample {sample_id:?}: {message}")]
    Coverage { sample_id: String, message: String },
    #[error("predictions reference unknown sample ids: {0:?}")]
    MissingSample(Vec<String>),
    #[error("duplicate prediction for sample {0:?}")]
    DuplicatePrediction(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl SeeError {
    fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        SeeError::Io {
            context: context.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditVerdict {
    CorrectEdit,
    WrongEdit,
    ReasonableEdit,
}

impl std::str::FromStr for EditVerdict {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CorrectEdit" => Ok(EditVerdict::CorrectEdit),
            "WrongEdit" => Ok(EditVerdict::WrongEdit),
            "ReasonableEdit" => Ok(EditVerdict::ReasonableEdit),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

impl std::fmt::Display for EditVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EditVerdict::CorrectEdit => "CorrectEdit",
            EditVerdict::WrongEdit => "WrongEdit",
            EditVerdict::ReasonableEdit => "ReasonableEdit",
        })
    }
}

/// One judged edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditJudgment {
    pub sample_id: String,
    pub edit_index: usize,
    pub verdict: EditVerdict,
    pub rationale: String,
}

/// Per-sentence verdict tallies, including the neutral count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceCounts {
    pub n_ce: usize,
    pub n_we: usize,
    pub n_re: usize,
    pub n_golden: usize,
}

/// Aggregate counts carried inside a [`ScoreReport`]. The reasonable-edit
/// count is deliberately absent: it has no effect on any score and is
/// reported outside the score report instead.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeeTotals {
    pub n_ce: usize,
    pub n_we: usize,
    pub n_golden: usize,
}

#[derive(Debug, Clone)]
pub struct SeeConfig {
    pub granularity: Granularity,
    pub judge_model: String,
    /// Model that produced the predictions, if known; used for the
    /// self-judging guard.
    pub evaluated_model: Option<String>,
    pub allow_same_model: bool,
    pub use_explanations: bool,
    pub beta: f64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<i64>,
    pub workers: usize,
}

pub struct SeeContext<'a> {
    pub client: &'a LlmClient,
    pub templates: &'a TemplateRegistry,
    pub config: &'a SeeConfig,
}

/// Numbered edit listing shown to the judge. Empty sides render as `∅`.
pub fn render_edit_list(
    src: &[Token],
    edits: &EditSet,
    granularity: &Granularity,
) -> String {
    let mut lines = Vec::with_capacity(edits.len());
    for (index, edit) in edits.edits().iter().enumerate() {
        let kind = match edit.kind() {
            EditKind::Insert => "插入",
            EditKind::Delete => "删除",
            EditKind::Substitute => "替换",
        };
        let before = if edit.start == edit.end {
            "∅".to_string()
        } else {
            detokenize(&src[edit.start..edit.end], granularity)
        };
        let after = if edit.replacement.is_empty() {
            "∅".to_string()
        } else {
            detokenize(&edit.replacement, granularity)
        };
        lines.push(format!(
            "{index}. {kind} [{},{}): {before} → {after}",
            edit.start, edit.end
        ));
    }
    lines.join("\n")
}

/// Renders an explanation record for the `{{explanation}}` slot.
pub fn explanation_block(record: &ExplanationRecord) -> String {
    let mut out = String::new();
    out.push_str("错误类型：");
    out.push_str(&record.error_types.join("；"));
    out.push_str("\n修改建议：");
    out.push_str(&record.reference);
    out.push_str("\n解释：");
    for explanation in &record.explanations {
        out.push_str(&format!("\n{}. {}", explanation.rank, explanation.text));
    }
    out
}

/// Reference with the most exact edit matches against the prediction, ties
/// to the lowest index. Returns the chosen index, that reference's gold edit
/// set, and its text (the source itself when no references exist).
pub fn select_reference(
    sample: &CorrectionSample,
    predicted: &EditSet,
    src: &[Token],
    granularity: &Granularity,
) -> Result<(Option<usize>, EditSet, String), SeeError> {
    let golds = gold_sets(sample, src, granularity)?;
    if golds.is_empty() {
        return Ok((None, EditSet::empty(src.len()), sample.source.clone()));
    }
    let mut best: Option<(usize, usize)> = None;
    for (index, gold) in golds.iter().enumerate() {
        let overlap = match_edits(predicted, gold)?.tp;
        if best.is_none_or(|(_, best_overlap)| overlap > best_overlap) {
            best = Some((index, overlap));
        }
    }
    let (index, _) = best.expect("at least one reference");
    Ok((
        Some(index),
        golds[index].clone(),
        sample.references[index].clone(),
    ))
}

fn judge_request(
    ctx: &SeeContext<'_>,
    system: String,
    user: String,
    template: &str,
) -> LlmRequest {
    LlmRequest {
        model: ctx.config.judge_model.clone(),
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

/// Judges every edit of one sentence in a single completion, retrying once
/// through the repair prompt. Zero edits never reach the model.
pub fn judge_edits(
    sample: &CorrectionSample,
    predicted: &EditSet,
    src: &[Token],
    golden_text: &str,
    explanation: Option<&ExplanationRecord>,
    ctx: &SeeContext<'_>,
) -> Result<Vec<EditJudgment>, SeeError> {
    if predicted.is_empty() {
        return Ok(vec![]);
    }
    let granularity = &ctx.config.granularity;
    let hypothesis = detokenize(&apply_edits(src, predicted)?, granularity);
    let edit_list = render_edit_list(src, predicted, granularity);

    let (template, user) = match explanation {
        Some(record) if ctx.config.use_explanations => {
            let block = explanation_block(record);
            let user = ctx.templates.render(
                "evaluate_expl",
                &[
                    ("source", sample.source.as_str()),
                    ("golden", golden_text),
                    ("predicted", hypothesis.as_str()),
                    ("edits", edit_list.as_str()),
                    ("explanation", block.as_str()),
                ],
            )?;
            ("evaluate_expl", user)
        }
        _ => {
            let user = ctx.templates.render(
                "evaluate",
                &[
                    ("source", sample.source.as_str()),
                    ("golden", golden_text),
                    ("predicted", hypothesis.as_str()),
                    ("edits", edit_list.as_str()),
                ],
            )?;
            ("evaluate", user)
        }
    };
    let system = ctx.templates.render("evaluate_system", &[])?;
    let schema_ctx = SchemaContext {
        allowed_error_types: None,
        edit_count: Some(predicted.len()),
    };

    let request = judge_request(ctx, system.clone(), user.clone(), template);
    let response = ctx.client.complete(&request)?;
    let first_error = match parse_structured(&response, SchemaName::JudgmentV1, &schema_ctx) {
        Ok(ParsedStructured::Judgment(payloads)) => {
            return Ok(to_judgments(&sample.id, payloads));
        }
        Ok(_) => unreachable!("judgment schema yields judgment payloads"),
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
    let repair_request = judge_request(ctx, system, repair_user, template);
    let second = ctx.client.complete(&repair_request)?;
    match parse_structured(&second, SchemaName::JudgmentV1, &schema_ctx) {
        Ok(ParsedStructured::Judgment(payloads)) => Ok(to_judgments(&sample.id, payloads)),
        Ok(_) => unreachable!("judgment schema yields judgment payloads"),
        Err(second_error) => Err(SeeError::JudgmentFailed {
            sample_id: sample.id.clone(),
            reason: format!("first attempt: {first_error}; repair attempt: {second_error}"),
            raw_responses: vec![response.text, second.text],
        }),
    }
}

fn to_judgments(sample_id: &str, payloads: Vec<crate::llm::JudgmentPayload>) -> Vec<EditJudgment> {
    payloads
        .into_iter()
        .map(|payload| EditJudgment {
            sample_id: sample_id.to_string(),
            edit_index: payload.edit_index,
            verdict: payload.verdict,
            rationale: payload.rationale,
        })
        .collect()
}

/// Tallies verdicts for one sentence after checking that the judgments
/// cover each predicted edit exactly once.
pub fn tally(
    sample_id: &str,
    judgments: &[EditJudgment],
    predicted_len: usize,
    n_golden: usize,
) -> Result<SentenceCounts, SeeError> {
    let coverage = |message: String| SeeError::Coverage {
        sample_id: sample_id.to_string(),
        message,
    };
    if judgments.len() != predicted_len {
        return Err(coverage(format!(
            "{} judgments for {predicted_len} edits",
            judgments.len()
        )));
    }
    let mut seen = vec![false; predicted_len];
    let mut counts = SentenceCounts {
        n_golden,
        ..Default::default()
    };
    for judgment in judgments {
        if judgment.edit_index >= predicted_len {
            return Err(coverage(format!(
                "edit_index {} out of range 0..{predicted_len}",
                judgment.edit_index
            )));
        }
        if seen[judgment.edit_index] {
            return Err(coverage(format!("duplicate edit_index {}", judgment.edit_index)));
        }
        seen[judgment.edit_index] = true;
        match judgment.verdict {
            EditVerdict::CorrectEdit => counts.n_ce += 1,
            EditVerdict::WrongEdit => counts.n_we += 1,
            EditVerdict::ReasonableEdit => counts.n_re += 1,
        }
    }
    Ok(counts)
}

/// Micro-aggregates sentence counts into a score report. Reasonable edits
/// are projected away before anything is stored, so the report is invariant
/// under adding ReasonableEdit verdicts. Recall is capped at 1 when the
/// judge accepts more edits than the chosen reference holds.
pub fn score_see(
    sentences: &[(String, SentenceCounts)],
    beta: f64,
) -> Result<ScoreReport, SeeError> {
    let mut totals = SeeTotals::default();
    let mut per_sentence = Vec::with_capacity(sentences.len());
    for (sample_id, counts) in sentences {
        totals.n_ce += counts.n_ce;
        totals.n_we += counts.n_we;
        totals.n_golden += counts.n_golden;
        per_sentence.push(SentenceRecord {
            sample_id: sample_id.clone(),
            reference_index: None,
            counts: ReportCounts::See(SeeTotals {
                n_ce: counts.n_ce,
                n_we: counts.n_we,
                n_golden: counts.n_golden,
            }),
        });
    }
    let precision = if totals.n_ce + totals.n_we == 0 {
        1.0
    } else {
        totals.n_ce as f64 / (totals.n_ce + totals.n_we) as f64
    };
    let recall = if totals.n_golden == 0 {
        1.0
    } else {
        (totals.n_ce as f64 / totals.n_golden as f64).min(1.0)
    };
    let f_beta = compute_f_beta(precision, recall, beta)?;
    Ok(ScoreReport {
        precision,
        recall,
        f_beta,
        beta,
        counts: ReportCounts::See(totals),
        per_sentence,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SeeFailure {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct SeeOutcome {
    pub report: ScoreReport,
    pub judgments: Vec<EditJudgment>,
    pub excluded: Vec<SeeFailure>,
    pub re_total: usize,
    pub judged_sentences: usize,
    pub judgments_path: PathBuf,
    pub report_path: PathBuf,
}

struct SentenceOutput {
    sample_id: String,
    judgments: Vec<EditJudgment>,
    counts: SentenceCounts,
}

fn judge_sentence(
    sample: &CorrectionSample,
    prediction: &Prediction,
    explanation: Option<&ExplanationRecord>,
    ctx: &SeeContext<'_>,
) -> Result<SentenceOutput, SeeError> {
    let granularity = &ctx.config.granularity;
    let src = tokenize(&sample.source, granularity)?;
    let hyp = tokenize(&prediction.hypothesis, granularity)?;
    let predicted = extract_edits(&src, &hyp);
    let (_, gold, golden_text) = select_reference(sample, &predicted, &src, granularity)?;
    let judgments = judge_edits(sample, &predicted, &src, &golden_text, explanation, ctx)?;
    let counts = tally(&sample.id, &judgments, predicted.len(), gold.len())?;
    Ok(SentenceOutput {
        sample_id: sample.id.clone(),
        judgments,
        counts,
    })
}

/// Judges a full prediction set and writes `judgments.jsonl` and
/// `see_report.json` under `out_dir`. Sentences whose judging failed are
/// excluded from the aggregate and reported with their reasons.
pub fn run_see(
    corpus: &[CorrectionSample],
    predictions: &[Prediction],
    explanations: Option<&BTreeMap<String, ExplanationRecord>>,
    ctx: &SeeContext<'_>,
    out_dir: &Path,
) -> Result<SeeOutcome, SeeError> {
    if let Some(evaluated) = &ctx.config.evaluated_model {
        if *evaluated == ctx.config.judge_model && !ctx.config.allow_same_model {
            return Err(SeeError::Config(format!(
                "judge model {evaluated:?} equals the evaluated model; pass allow_same_model to override"
            )));
        }
    }
    if ctx.config.use_explanations && explanations.is_none() {
        return Err(SeeError::Config(
            "use_explanations requires an explanation records file".into(),
        ));
    }

    let by_id: HashMap<&str, &CorrectionSample> =
        corpus.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut missing = Vec::new();
    for prediction in predictions {
        if !seen.insert(prediction.sample_id.as_str()) {
            return Err(SeeError::DuplicatePrediction(prediction.sample_id.clone()));
        }
        if !by_id.contains_key(prediction.sample_id.as_str()) {
            missing.push(prediction.sample_id.clone());
        }
    }
    if !missing.is_empty() {
        return Err(SeeError::MissingSample(missing));
    }

    // Work in corpus order regardless of prediction file order.
    let predicted_by_id: HashMap<&str, &Prediction> = predictions
        .iter()
        .map(|p| (p.sample_id.as_str(), p))
        .collect();
    let work: Vec<(&CorrectionSample, &Prediction)> = corpus
        .iter()
        .filter_map(|sample| {
            predicted_by_id
                .get(sample.id.as_str())
                .map(|prediction| (sample, *prediction))
        })
        .collect();

    std::fs::create_dir_all(out_dir)
        .map_err(|e| SeeError::io(format!("creating {}", out_dir.display()), e))?;

    let results = ordered_parallel_map(&work, ctx.config.workers, |_, (sample, prediction)| {
        let explanation = explanations.and_then(|map| map.get(sample.id.as_str()));
        judge_sentence(sample, prediction, explanation, ctx)
    });

    let mut sentences: Vec<(String, SentenceCounts)> = Vec::new();
    let mut judgments: Vec<EditJudgment> = Vec::new();
    let mut excluded = Vec::new();
    for ((sample, _), result) in work.iter().zip(results) {
        match result {
            Ok(output) => {
                sentences.push((output.sample_id, output.counts));
                judgments.extend(output.judgments);
            }
            Err(err) => excluded.push(SeeFailure {
                sample_id: sample.id.clone(),
                reason: err.to_string(),
            }),
        }
    }

    let report = score_see(&sentences, ctx.config.beta)?;
    let re_total = sentences.iter().map(|(_, c)| c.n_re).sum();

    let judgments_path = out_dir.join("judgments.jsonl");
    let mut lines = Vec::new();
    for judgment in &judgments {
        serde_json::to_writer(&mut lines, judgment)
            .map_err(|e| SeeError::Config(format!("serializing judgment: {e}")))?;
        lines.push(b'\n');
    }
    write_atomic(&judgments_path, &lines)?;

    let mut template_hashes = BTreeMap::new();
    for name in ["evaluate", "evaluate_expl", "evaluate_system"] {
        if let Some(template) = ctx.templates.get(name) {
            template_hashes.insert(name.to_string(), template.content_hash());
        }
    }
    #[derive(Serialize)]
    struct ReportConfig<'a> {
        judge_model: &'a str,
        granularity: String,
        use_explanations: bool,
        beta: f64,
        templates: BTreeMap<String, String>,
    }
    #[derive(Serialize)]
    struct ReportFile<'a> {
        report: &'a ScoreReport,
        excluded: &'a [SeeFailure],
        judged_sentences: usize,
        re_total: usize,
        config: ReportConfig<'a>,
    }
    let report_path = out_dir.join("see_report.json");
    let file = ReportFile {
        report: &report,
        excluded: &excluded,
        judged_sentences: sentences.len(),
        re_total,
        config: ReportConfig {
            judge_model: &ctx.config.judge_model,
            granularity: ctx.config.granularity.to_string(),
            use_explanations: ctx.config.use_explanations,
            beta: ctx.config.beta,
            templates: template_hashes,
        },
    };
    let mut payload = serde_json::to_vec_pretty(&file)
        .map_err(|e| SeeError::Config(format!("serializing report: {e}")))?;
    payload.push(b'\n');
    write_atomic(&report_path, &payload)?;

    Ok(SeeOutcome {
        report,
        judgments,
        excluded,
        re_total,
        judged_sentences: sentences.len(),
        judgments_path,
        report_path,
    })
}

fn write_atomic(path: &Path, payload: &[u8]) -> Result<(), SeeError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, payload)
        .map_err(|e| SeeError::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| SeeError::io(format!("publishing {}", path.display()), e))
}
