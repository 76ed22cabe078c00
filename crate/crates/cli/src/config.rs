//! Layered run settings (flags > JSON config file > environment > defaults)
//! and the manifest written next to every pipeline output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::AppError;
use gecforge::llm::{sha256_hex, ENV_MODEL};

#[derive(Debug, Clone, Args)]
pub struct LlmFlags {
    /// Backend: live-api, replay-cache, or scripted-mock
    #[arg(long)]
    pub backend: Option<String>,
    /// Model name sent to the backend (env: GECFORGE_MODEL)
    #[arg(long)]
    pub model: Option<String>,
    /// Response cache directory
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Directory with prompt template overrides
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    /// Script file for the scripted-mock backend
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Worker threads for model calls
    #[arg(long)]
    pub workers: Option<usize>,
    /// Sampling temperature
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Completion token budget
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Provider-side sampling seed
    #[arg(long)]
    pub seed: Option<i64>,
    /// Live-backend requests per minute
    #[arg(long)]
    pub rate_limit: Option<u32>,
    /// HTTP timeout for the live backend, in seconds
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// JSON config file supplying any of the above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<String>,
    model: Option<String>,
    cache_dir: Option<PathBuf>,
    prompts_dir: Option<PathBuf>,
    mock_script: Option<PathBuf>,
    workers: Option<usize>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    seed: Option<i64>,
    rate_limit: Option<u32>,
    timeout_secs: Option<u64>,
}

/// Fully resolved settings, echoed verbatim into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub backend: String,
    pub model: Option<String>,
    pub cache_dir: PathBuf,
    pub prompts_dir: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub workers: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<i64>,
    pub rate_limit: Option<u32>,
    pub timeout_secs: u64,
}

pub fn resolve(flags: &LlmFlags) -> Result<Resolved, AppError> {
    let file = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                AppError::usage(format!("reading config {}: {e}", path.display()))
            })?;
            serde_json::from_str::<FileConfig>(&text)
                .map_err(|e| AppError::usage(format!("config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let env_model = std::env::var(ENV_MODEL).ok().filter(|m| !m.is_empty());
    Ok(Resolved {
        backend: flags
            .backend
            .clone()
            .or(file.backend)
            .unwrap_or_else(|| "replay-cache".into()),
        model: flags.model.clone().or(file.model).or(env_model),
        cache_dir: flags
            .cache_dir
            .clone()
            .or(file.cache_dir)
            .unwrap_or_else(|| PathBuf::from("cache")),
        prompts_dir: flags.prompts_dir.clone().or(file.prompts_dir),
        mock_script: flags.mock_script.clone().or(file.mock_script),
        workers: flags.workers.or(file.workers).unwrap_or(1),
        temperature: flags.temperature.or(file.temperature).unwrap_or(0.0),
        max_tokens: flags.max_tokens.or(file.max_tokens).unwrap_or(1024),
        seed: flags.seed.or(file.seed),
        rate_limit: flags.rate_limit.or(file.rate_limit),
        timeout_secs: flags.timeout_secs.or(file.timeout_secs).unwrap_or(120),
    })
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    command: Vec<String>,
    timestamp_epoch_secs: u64,
    backend: String,
    config_digest: String,
    resolved_config: serde_json::Value,
    input_digests: BTreeMap<String, String>,
}

/// Writes the run manifest: argv, resolved config (and its digest), digests
/// of every input file, tool version, and a timestamp.
pub fn write_manifest(
    path: &Path,
    backend: &str,
    resolved_config: serde_json::Value,
    inputs: &[&Path],
) -> Result<(), AppError> {
    let mut input_digests = BTreeMap::new();
    for input in inputs {
        let bytes = std::fs::read(input)
            .map_err(|e| AppError::usage(format!("reading input {}: {e}", input.display())))?;
        input_digests.insert(input.display().to_string(), sha256_hex(&bytes));
    }
    let config_digest = sha256_hex(
        &serde_json::to_vec(&resolved_config).expect("resolved config serializes"),
    );
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command: std::env::args().collect(),
        timestamp_epoch_secs: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        backend: backend.to_string(),
        config_digest,
        resolved_config,
        input_digests,
    };
    let mut payload = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    payload.push(b'\n');
    std::fs::write(path, payload)
        .map_err(|e| AppError::backend(format!("writing manifest {}: {e}", path.display())))
}
