//! Command-line front end for the correction toolkit.
//!
//! Exit codes: 0 on success, 2 for usage or input errors, 3 for backend
//! failures. Every pipeline run leaves one manifest next to its outputs.

mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{resolve, write_manifest, LlmFlags};
use gecforge::align::Granularity;
use gecforge::corpus::{
    load_corpus, load_predictions, normalize_text, peek_m2_granularity, write_corpus,
    CorpusError, CorpusFormat, CorrectionSample, Prediction,
};
use gecforge::exam::{
    load_records, records_by_id, run_exam, ErrorTypeSchema, ExamConfig, ExamContext, ExamError,
    GoldMode, Split,
};
use gecforge::llm::{
    Backend, LiveConfig, LlmClient, LlmError, MockScript, ResponseCache, TemplateRegistry,
};
use gecforge::metrics::{score_corpus, MetricsError};
use gecforge::see::{run_see, SeeConfig, SeeContext, SeeError};

#[derive(Debug)]
pub enum AppError {
    /// Bad flags, malformed inputs, impossible configurations. Exit 2.
    Usage(String),
    /// The model backend or the filesystem let us down. Exit 3.
    Backend(String),
}

impl AppError {
    fn usage(message: impl Into<String>) -> Self {
        AppError::Usage(message.into())
    }

    fn backend(message: impl Into<String>) -> Self {
        AppError::Backend(message.into())
    }

    fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Backend(_) => 3,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Usage(m) | AppError::Backend(m) => f.write_str(m),
        }
    }
}

impl From<CorpusError> for AppError {
    fn from(err: CorpusError) -> Self {
        AppError::usage(err.to_string())
    }
}

impl From<gecforge::align::AlignError> for AppError {
    fn from(err: gecforge::align::AlignError) -> Self {
        AppError::usage(err.to_string())
    }
}

impl From<MetricsError> for AppError {
    fn from(err: MetricsError) -> Self {
        AppError::usage(err.to_string())
    }
}

impl From<LlmError> for AppError {
    fn from(err: LlmError) -> Self {
        match err {
            LlmError::Config(_) | LlmError::Template { .. } => AppError::usage(err.to_string()),
            _ => AppError::backend(err.to_string()),
        }
    }
}

impl From<ExamError> for AppError {
    fn from(err: ExamError) -> Self {
        match err {
            ExamError::Config(_) | ExamError::Encoding(_) | ExamError::ParseAugmented { .. } => {
                AppError::usage(err.to_string())
            }
            ExamError::Corpus(inner) => inner.into(),
            ExamError::Llm(inner) => inner.into(),
            other => AppError::backend(other.to_string()),
        }
    }
}

impl From<SeeError> for AppError {
    fn from(err: SeeError) -> Self {
        match err {
            SeeError::Config(_) | SeeError::MissingSample(_) | SeeError::DuplicatePrediction(_) => {
                AppError::usage(err.to_string())
            }
            SeeError::Metrics(inner) => inner.into(),
            SeeError::Align(inner) => inner.into(),
            SeeError::Llm(inner) => inner.into(),
            other => AppError::backend(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "gecforge", version, about = "Correction alignment, scoring, and LLM pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align parallel source/target line files and write their edits
    ExtractEdits(ExtractEditsArgs),
    /// Score hypothesis sentences against a gold corpus
    Score(ScoreArgs),
    /// Annotate a corpus with model-written correction explanations
    Exam(ExamArgs),
    /// Judge predicted edits with an evaluator model and score the verdicts
    See(SeeArgs),
    /// Inspect or prune the response cache
    Cache(CacheArgs),
}

#[derive(Args)]
struct ExtractEditsArgs {
    /// Source sentences, one per line
    #[arg(long)]
    src: PathBuf,
    /// Corrected sentences, one per line, parallel to --src
    #[arg(long)]
    tgt: PathBuf,
    /// Alignment granularity: char, word, or word:<segmenter>
    #[arg(long, default_value = "char")]
    granularity: String,
    /// Output edit file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Gold corpus
    #[arg(long)]
    gold: PathBuf,
    /// Gold corpus format: tsv, jsonl, or m2
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Hypotheses: either id<TAB>sentence lines or one plain sentence per
    /// corpus sample
    #[arg(long)]
    hyp: PathBuf,
    /// Alignment granularity (for m2 corpora the header decides)
    #[arg(long)]
    granularity: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Where to write the JSON score report
    #[arg(long, default_value = "score_report.json")]
    report: PathBuf,
}

#[derive(Args)]
struct ExamArgs {
    /// Corpus to annotate
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus format: tsv, jsonl, or m2
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Alignment granularity (for m2 corpora the header decides)
    #[arg(long)]
    granularity: Option<String>,
    /// Directory for records.jsonl, augmented.tsv, and failures.jsonl
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON array of permitted error types (defaults to the built-in four)
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Which splits may see the gold reference: none, train, test, or both
    #[arg(long, default_value = "none")]
    gold_mode: GoldMode,
    /// Split this corpus belongs to: train or test
    #[arg(long, default_value = "test")]
    split: Split,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Args)]
struct SeeArgs {
    /// Gold corpus
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus format: tsv, jsonl, or m2
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Alignment granularity (for m2 corpora the header decides)
    #[arg(long)]
    granularity: Option<String>,
    /// Predicted corrections: id<TAB>sentence lines or plain parallel lines
    #[arg(long)]
    pred: PathBuf,
    /// Directory for judgments.jsonl and see_report.json
    #[arg(long)]
    out_dir: PathBuf,
    /// Judge model (falls back to the configured model)
    #[arg(long)]
    judge_model: Option<String>,
    /// Model that produced the predictions, for the self-judging guard
    #[arg(long)]
    evaluated_model: Option<String>,
    /// Permit the judge to score its own output
    #[arg(long)]
    allow_same_model: bool,
    /// Explanation records from a prior annotation run
    #[arg(long)]
    explanations: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Args)]
struct CacheArgs {
    #[command(subcommand)]
    command: CacheCommand,
}

#[derive(Subcommand)]
enum CacheCommand {
    /// Count entries and bytes on disk
    Stats {
        #[arg(long, default_value = "cache")]
        cache_dir: PathBuf,
    },
    /// Drop entries older than the cutoff
    Gc {
        #[arg(long, default_value = "cache")]
        cache_dir: PathBuf,
        #[arg(long, default_value_t = 30)]
        older_than_days: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ExtractEdits(args) => cmd_extract_edits(args),
        Command::Score(args) => cmd_score(args),
        Command::Exam(args) => cmd_exam(args),
        Command::See(args) => cmd_see(args),
        Command::Cache(args) => cmd_cache(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn parse_granularity(raw: &str) -> Result<Granularity, AppError> {
    raw.parse::<Granularity>()
        .map_err(|e| AppError::usage(e.to_string()))
}

/// Loads a corpus and settles the working granularity. For m2 the file
/// header is authoritative; a conflicting --granularity is an error.
fn load_corpus_flexible(
    path: &Path,
    format: &str,
    granularity_flag: Option<&str>,
) -> Result<(Vec<CorrectionSample>, Granularity), AppError> {
    let flag = granularity_flag.map(parse_granularity).transpose()?;
    match format {
        "tsv" | "jsonl" => {
            let corpus_format = if format == "tsv" {
                CorpusFormat::ParallelTsv
            } else {
                CorpusFormat::JsonLines
            };
            let granularity = flag.unwrap_or(Granularity::Character);
            let samples = load_corpus(path, &corpus_format)?;
            Ok((samples, granularity))
        }
        "m2" => {
            let header = peek_m2_granularity(path)?;
            if let Some(requested) = flag {
                if requested != header {
                    return Err(AppError::usage(format!(
                        "--granularity {requested} conflicts with the {header} header in {}",
                        path.display()
                    )));
                }
            }
            let samples = load_corpus(path, &CorpusFormat::M2(header.clone()))?;
            Ok((samples, header))
        }
        other => Err(AppError::usage(format!(
            "unknown corpus format {other:?}; expected tsv, jsonl, or m2"
        ))),
    }
}

/// Accepts either id<TAB>hypothesis lines or plain hypothesis lines
/// parallel to the corpus. An empty file against a nonempty corpus is an
/// error rather than a perfect-precision score.
fn load_predictions_flexible(
    path: &Path,
    corpus: &[CorrectionSample],
) -> Result<Vec<Prediction>, AppError> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| AppError::usage(format!("reading {}: {e}", path.display())))?;
    if content.contains('\t') {
        return Ok(load_predictions(path)?);
    }
    let lines: Vec<&str> = content.lines().collect();
    if lines.is_empty() && !corpus.is_empty() {
        return Err(AppError::usage(format!(
            "{} is empty but the gold corpus has {} samples",
            path.display(),
            corpus.len()
        )));
    }
    if lines.len() != corpus.len() {
        return Err(AppError::usage(format!(
            "{} has {} lines but the corpus has {} samples; plain-line files must be parallel",
            path.display(),
            lines.len(),
            corpus.len()
        )));
    }
    Ok(lines
        .iter()
        .zip(corpus)
        .map(|(line, sample)| Prediction {
            sample_id: sample.id.clone(),
            hypothesis: normalize_text(line),
        })
        .collect())
}

fn build_backend(resolved: &config::Resolved) -> Result<Backend, AppError> {
    match resolved.backend.as_str() {
        "live-api" => {
            let mut live = LiveConfig::from_env()?;
            live.timeout_secs = resolved.timeout_secs;
            Ok(Backend::Live(live))
        }
        "replay-cache" => Ok(Backend::ReplayCache),
        "scripted-mock" => {
            let script_path = resolved.mock_script.as_deref().ok_or_else(|| {
                AppError::usage("the scripted-mock backend needs --mock-script")
            })?;
            let script = MockScript::from_file(script_path)?;
            Ok(Backend::ScriptedMock(Arc::new(script)))
        }
        other => Err(AppError::usage(format!(
            "unknown backend {other:?}; expected live-api, replay-cache, or scripted-mock"
        ))),
    }
}

/// `edits.m2` gets its manifest at `edits.m2.manifest.json`.
fn manifest_sibling(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), AppError> {
    let mut payload =
        serde_json::to_vec_pretty(value).map_err(|e| AppError::backend(e.to_string()))?;
    payload.push(b'\n');
    std::fs::write(path, payload)
        .map_err(|e| AppError::backend(format!("writing {}: {e}", path.display())))
}

fn cmd_extract_edits(args: ExtractEditsArgs) -> Result<(), AppError> {
    let granularity = parse_granularity(&args.granularity)?;
    let read = |path: &Path| {
        std::fs::read_to_string(path)
            .map_err(|e| AppError::usage(format!("reading {}: {e}", path.display())))
    };
    let src_text = read(&args.src)?;
    let tgt_text = read(&args.tgt)?;
    let src_lines: Vec<&str> = src_text.lines().collect();
    let tgt_lines: Vec<&str> = tgt_text.lines().collect();
    if src_lines.len() != tgt_lines.len() {
        return Err(AppError::usage(format!(
            "{} has {} lines but {} has {}; the files must be parallel",
            args.src.display(),
            src_lines.len(),
            args.tgt.display(),
            tgt_lines.len()
        )));
    }
    let mut samples = Vec::with_capacity(src_lines.len());
    let mut edit_total = 0usize;
    for (idx, (src, tgt)) in src_lines.iter().zip(&tgt_lines).enumerate() {
        let sample = CorrectionSample::new(
            format!("s{}", idx + 1),
            normalize_text(src),
            vec![normalize_text(tgt)],
            None,
        )?
        .with_derived_edits(&granularity)?;
        if let Some(sets) = &sample.gold_edits {
            edit_total += sets.iter().map(|set| set.edits().len()).sum::<usize>();
        }
        samples.push(sample);
    }
    write_corpus(&samples, &args.out, &CorpusFormat::M2(granularity.clone()))?;
    write_manifest(
        &manifest_sibling(&args.out),
        "none",
        json!({
            "command": "extract-edits",
            "granularity": granularity.to_string(),
        }),
        &[&args.src, &args.tgt],
    )?;
    println!(
        "aligned {} sentence pairs ({} edits) -> {}",
        samples.len(),
        edit_total,
        args.out.display()
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), AppError> {
    let (corpus, granularity) =
        load_corpus_flexible(&args.gold, &args.format, args.granularity.as_deref())?;
    let predictions = load_predictions_flexible(&args.hyp, &corpus)?;
    if predictions.is_empty() && !corpus.is_empty() {
        return Err(AppError::usage(format!(
            "{} holds no hypotheses but the gold corpus has {} samples",
            args.hyp.display(),
            corpus.len()
        )));
    }
    let report = score_corpus(&predictions, &corpus, &granularity, args.beta)?;
    print!("{}", report.render_table());
    write_json(&args.report, &report)?;
    write_manifest(
        &manifest_sibling(&args.report),
        "none",
        json!({
            "command": "score",
            "format": args.format,
            "granularity": granularity.to_string(),
            "beta": args.beta,
        }),
        &[&args.gold, &args.hyp],
    )?;
    println!("report -> {}", args.report.display());
    Ok(())
}

fn cmd_exam(args: ExamArgs) -> Result<(), AppError> {
    let resolved = resolve(&args.llm)?;
    let (corpus, granularity) =
        load_corpus_flexible(&args.corpus, &args.format, args.granularity.as_deref())?;
    let schema = match &args.schema {
        Some(path) => ErrorTypeSchema::from_file(path)?,
        None => ErrorTypeSchema::default(),
    };
    let templates =
        TemplateRegistry::with_overrides(resolved.prompts_dir.as_deref(), &schema.prompt_block())?;
    let model = resolved.model.clone().ok_or_else(|| {
        AppError::usage(
            "no model configured; pass --model, set model in the config file, or export GECFORGE_MODEL",
        )
    })?;
    let backend = build_backend(&resolved)?;
    let backend_name = backend.name();
    let client = LlmClient::new(backend, ResponseCache::new(&resolved.cache_dir))
        .with_rate_limit(resolved.rate_limit);
    let exam_config = ExamConfig {
        schema,
        gold_mode: args.gold_mode,
        split: args.split,
        model,
        temperature: resolved.temperature,
        max_tokens: resolved.max_tokens,
        seed: resolved.seed,
        workers: resolved.workers,
    };
    let ctx = ExamContext {
        client: &client,
        templates: &templates,
        config: &exam_config,
    };
    let outcome = run_exam(&corpus, &ctx, &args.out_dir)?;
    let mut inputs: Vec<&Path> = vec![&args.corpus];
    if let Some(schema_path) = &args.schema {
        inputs.push(schema_path);
    }
    write_manifest(
        &args.out_dir.join("run_manifest.json"),
        backend_name,
        json!({
            "command": "exam",
            "format": args.format,
            "granularity": granularity.to_string(),
            "gold_mode": exam_config.gold_mode,
            "split": exam_config.split,
            "error_types": exam_config.schema.types(),
            "llm": resolved,
        }),
        &inputs,
    )?;
    println!(
        "annotated {}/{} samples ({} degraded to unaugmented)",
        outcome.records.len(),
        corpus.len(),
        outcome.failures.len()
    );
    println!("records   -> {}", outcome.records_path.display());
    println!("augmented -> {}", outcome.augmented_path.display());
    if !outcome.failures.is_empty() {
        println!("failures  -> {}", outcome.failures_path.display());
    }
    println!("model calls past cache: {}", client.outbound_calls());
    Ok(())
}

fn cmd_see(args: SeeArgs) -> Result<(), AppError> {
    let resolved = resolve(&args.llm)?;
    let (corpus, granularity) =
        load_corpus_flexible(&args.corpus, &args.format, args.granularity.as_deref())?;
    let predictions = load_predictions_flexible(&args.pred, &corpus)?;
    let judge_model = args
        .judge_model
        .clone()
        .or_else(|| resolved.model.clone())
        .ok_or_else(|| {
            AppError::usage(
                "no judge model configured; pass --judge-model, set model in the config file, or export GECFORGE_MODEL",
            )
        })?;
    let record_map = match &args.explanations {
        Some(path) => Some(records_by_id(&load_records(path)?)),
        None => None,
    };
    let templates = TemplateRegistry::with_overrides(
        resolved.prompts_dir.as_deref(),
        &ErrorTypeSchema::default().prompt_block(),
    )?;
    let backend = build_backend(&resolved)?;
    let backend_name = backend.name();
    let client = LlmClient::new(backend, ResponseCache::new(&resolved.cache_dir))
        .with_rate_limit(resolved.rate_limit);
    let see_config = SeeConfig {
        granularity: granularity.clone(),
        judge_model,
        evaluated_model: args.evaluated_model.clone(),
        allow_same_model: args.allow_same_model,
        use_explanations: args.explanations.is_some(),
        beta: args.beta,
        temperature: resolved.temperature,
        max_tokens: resolved.max_tokens,
        seed: resolved.seed,
        workers: resolved.workers,
    };
    let ctx = SeeContext {
        client: &client,
        templates: &templates,
        config: &see_config,
    };
    let outcome = run_see(&corpus, &predictions, record_map.as_ref(), &ctx, &args.out_dir)?;
    let mut inputs: Vec<&Path> = vec![&args.corpus, &args.pred];
    if let Some(expl_path) = &args.explanations {
        inputs.push(expl_path);
    }
    write_manifest(
        &args.out_dir.join("run_manifest.json"),
        backend_name,
        json!({
            "command": "see",
            "format": args.format,
            "granularity": granularity.to_string(),
            "judge_model": see_config.judge_model,
            "evaluated_model": see_config.evaluated_model,
            "allow_same_model": see_config.allow_same_model,
            "use_explanations": see_config.use_explanations,
            "beta": args.beta,
            "llm": resolved,
        }),
        &inputs,
    )?;
    print!("{}", outcome.report.render_table());
    println!(
        "reasonable edits: {} (neutral, excluded from scoring)",
        outcome.re_total
    );
    println!(
        "judged {} sentences; {} excluded",
        outcome.judged_sentences,
        outcome.excluded.len()
    );
    println!("judgments -> {}", outcome.judgments_path.display());
    println!("report    -> {}", outcome.report_path.display());
    println!("model calls past cache: {}", client.outbound_calls());
    Ok(())
}

fn cmd_cache(args: CacheArgs) -> Result<(), AppError> {
    match args.command {
        CacheCommand::Stats { cache_dir } => {
            let stats = ResponseCache::new(&cache_dir).stats()?;
            println!(
                "{}: {} entries, {} bytes",
                cache_dir.display(),
                stats.entries,
                stats.bytes
            );
        }
        CacheCommand::Gc {
            cache_dir,
            older_than_days,
        } => {
            let max_age = std::time::Duration::from_secs(older_than_days * 86_400);
            let (removed, kept) = ResponseCache::new(&cache_dir).gc(max_age)?;
            println!(
                "{}: removed {} entries, kept {}",
                cache_dir.display(),
                removed,
                kept
            );
        }
    }
    Ok(())
}
