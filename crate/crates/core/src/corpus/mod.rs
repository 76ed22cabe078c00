//! Data model and I/O for parallel GEC corpora.
//!
//! Three interchange formats are supported: tab-separated parallel text,
//! MaxMatch-style M2 annotation files, and JSON lines. Writers refuse
//! anything the target format cannot represent losslessly, so a successful
//! `write_corpus` always round-trips through `load_corpus` field-for-field.

mod m2;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::align::{extract_edits, tokenize, AlignError, EditSet, Granularity};

pub use m2::peek_m2_granularity;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Decode { path: PathBuf, offset: usize },
    #[error("{path}:{line}: {message} (offending text: {text:?})")]
    Parse {
        path: PathBuf,
        line: usize,
        text: String,
        message: String,
    },
    #[error("duplicate sample id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid sample {id:?}: {message}")]
    InvalidSample { id: String, message: String },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(path: &Path, line: usize, text: &str, message: impl Into<String>) -> Self {
        CorpusError::Parse {
            path: path.to_path_buf(),
            line,
            text: text.to_string(),
            message: message.into(),
        }
    }
}

/// One source sentence with its gold corrections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionSample {
    pub id: String,
    pub source: String,
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_edits: Option<Vec<EditSet>>,
}

impl CorrectionSample {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        references: Vec<String>,
        gold_edits: Option<Vec<EditSet>>,
    ) -> Result<Self, CorpusError> {
        let sample = CorrectionSample {
            id: id.into(),
            source: source.into(),
            references,
            gold_edits,
        };
        sample.validate()?;
        Ok(sample)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        validate_id(&self.id)?;
        if normalize_text(&self.source).is_empty() {
            return Err(CorpusError::InvalidSample {
                id: self.id.clone(),
                message: "source is empty after normalization".into(),
            });
        }
        if let Some(sets) = &self.gold_edits {
            if sets.len() != self.references.len() {
                return Err(CorpusError::InvalidSample {
                    id: self.id.clone(),
                    message: format!(
                        "{} gold edit sets for {} references",
                        sets.len(),
                        self.references.len()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Copy of this sample with gold edits aligned from its references at
    /// the given granularity.
    pub fn with_derived_edits(&self, granularity: &Granularity) -> Result<Self, CorpusError> {
        let src = tokenize(&self.source, granularity).map_err(align_to_format)?;
        let sets = self
            .references
            .iter()
            .map(|reference| {
                let tgt = tokenize(reference, granularity)?;
                Ok(extract_edits(&src, &tgt))
            })
            .collect::<Result<Vec<_>, AlignError>>()
            .map_err(align_to_format)?;
        Ok(CorrectionSample {
            id: self.id.clone(),
            source: self.source.clone(),
            references: self.references.clone(),
            gold_edits: Some(sets),
        })
    }
}

fn align_to_format(err: AlignError) -> CorpusError {
    CorpusError::Format(err.to_string())
}

fn validate_id(id: &str) -> Result<(), CorpusError> {
    let ok = !id.is_empty()
        && id == id.trim()
        && !id.chars().any(|c| c.is_control() || c == '\t' || c == '\n');
    if ok {
        Ok(())
    } else {
        Err(CorpusError::InvalidSample {
            id: id.to_string(),
            message: "id must be nonempty, trimmed, and free of control characters".into(),
        })
    }
}

/// A system output for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub hypothesis: String,
}

/// On-disk corpus encodings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `id<TAB>source<TAB>ref1<TAB>ref2...`, one sample per line.
    ParallelTsv,
    /// MaxMatch-style blocks; the granularity is recorded in the file header
    /// and must match this declared value on load.
    M2(Granularity),
    /// One JSON object per line with keys `id`, `source`, `references`, and
    /// optional `gold_edits`.
    JsonLines,
}

/// NFC-normalizes, trims, and collapses internal runs of ASCII whitespace
/// to single spaces. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    let mut pending_space = false;
    for c in composed.chars() {
        if c.is_ascii_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| CorpusError::Decode {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    format: &CorpusFormat,
) -> Result<Vec<CorrectionSample>, CorpusError> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    let samples = match format {
        CorpusFormat::ParallelTsv => parse_tsv(path, &content)?,
        CorpusFormat::M2(granularity) => m2::parse(path, &content, granularity)?,
        CorpusFormat::JsonLines => parse_jsonl(path, &content)?,
    };
    let mut seen = HashSet::new();
    for (index, sample) in samples.iter().enumerate() {
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: sample.id.clone(),
                line: index + 1,
            });
        }
    }
    Ok(samples)
}

pub fn write_corpus(
    samples: &[CorrectionSample],
    path: impl AsRef<Path>,
    format: &CorpusFormat,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let rendered = match format {
        CorpusFormat::ParallelTsv => render_tsv(samples)?,
        CorpusFormat::M2(granularity) => m2::render(samples, granularity)?,
        CorpusFormat::JsonLines => render_jsonl(samples)?,
    };
    std::fs::write(path, rendered).map_err(|e| CorpusError::io(path, e))
}

fn parse_tsv(path: &Path, content: &str) -> Result<Vec<CorrectionSample>, CorpusError> {
    let mut samples = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(CorpusError::parse(
                path,
                line_no,
                line,
                "expected at least id and source columns",
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(CorpusError::parse(path, line_no, line, "empty id column"));
        }
        let source = normalize_text(fields[1]);
        if source.is_empty() {
            return Err(CorpusError::parse(path, line_no, line, "empty source column"));
        }
        let mut references = Vec::with_capacity(fields.len().saturating_sub(2));
        for field in &fields[2..] {
            let reference = normalize_text(field);
            if reference.is_empty() {
                return Err(CorpusError::parse(
                    path,
                    line_no,
                    line,
                    "empty reference column",
                ));
            }
            references.push(reference);
        }
        samples.push(
            CorrectionSample::new(id, source, references, None).map_err(|e| {
                CorpusError::parse(path, line_no, line, e.to_string())
            })?,
        );
    }
    Ok(samples)
}

fn render_tsv(samples: &[CorrectionSample]) -> Result<String, CorpusError> {
    let mut out = String::new();
    for sample in samples {
        sample.validate()?;
        if sample.gold_edits.is_some() {
            return Err(CorpusError::Format(format!(
                "sample {:?}: ParallelTSV cannot carry gold edit sets",
                sample.id
            )));
        }
        for field in std::iter::once(sample.source.as_str())
            .chain(sample.references.iter().map(String::as_str))
        {
            if field.contains('\t') || field.contains('\n') {
                return Err(CorpusError::Format(format!(
                    "sample {:?}: field contains a TSV delimiter character",
                    sample.id
                )));
            }
        }
        out.push_str(&sample.id);
        out.push('\t');
        out.push_str(&sample.source);
        for reference in &sample.references {
            out.push('\t');
            out.push_str(reference);
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Deserialize)]
struct JsonSampleRepr {
    #[serde(default)]
    id: Option<String>,
    source: String,
    references: Vec<String>,
    #[serde(default)]
    gold_edits: Option<Vec<EditSet>>,
}

fn parse_jsonl(path: &Path, content: &str) -> Result<Vec<CorrectionSample>, CorpusError> {
    let mut samples = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let repr: JsonSampleRepr = serde_json::from_str(line)
            .map_err(|e| CorpusError::parse(path, line_no, line, e.to_string()))?;
        let id = repr.id.unwrap_or_else(|| format!("s{line_no}"));
        let source = normalize_text(&repr.source);
        let references: Vec<String> = repr.references.iter().map(|r| normalize_text(r)).collect();
        if references.iter().any(String::is_empty) {
            return Err(CorpusError::parse(path, line_no, line, "empty reference"));
        }
        samples.push(
            CorrectionSample::new(id, source, references, repr.gold_edits)
                .map_err(|e| CorpusError::parse(path, line_no, line, e.to_string()))?,
        );
    }
    Ok(samples)
}

fn render_jsonl(samples: &[CorrectionSample]) -> Result<String, CorpusError> {
    let mut out = String::new();
    for sample in samples {
        sample.validate()?;
        let line = serde_json::to_string(sample)
            .map_err(|e| CorpusError::Format(e.to_string()))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Loads `id<TAB>hypothesis` prediction files. The hypothesis column may be
/// empty (a system that deletes the whole sentence).
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, CorpusError> {
    let path = path.as_ref();
    let content = read_to_string(path)?;
    let mut seen = HashSet::new();
    let mut predictions = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let Some((id, hyp)) = line.split_once('\t') else {
            return Err(CorpusError::parse(
                path,
                line_no,
                line,
                "expected id<TAB>hypothesis",
            ));
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(CorpusError::parse(path, line_no, line, "empty id column"));
        }
        if hyp.contains('\t') {
            return Err(CorpusError::parse(
                path,
                line_no,
                line,
                "unexpected extra column",
            ));
        }
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateId {
                id: id.to_string(),
                line: line_no,
            });
        }
        predictions.push(Prediction {
            sample_id: id.to_string(),
            hypothesis: normalize_text(hyp),
        });
    }
    Ok(predictions)
}

pub fn write_predictions(
    predictions: &[Prediction],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = String::new();
    for prediction in predictions {
        validate_id(&prediction.sample_id)?;
        if prediction.hypothesis.contains('\t') || prediction.hypothesis.contains('\n') {
            return Err(CorpusError::Format(format!(
                "prediction {:?}: hypothesis contains a TSV delimiter character",
                prediction.sample_id
            )));
        }
        out.push_str(&prediction.sample_id);
        out.push('\t');
        out.push_str(&prediction.hypothesis);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CorpusError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::Edit;
    use smol_str::SmolStr;

    #[test]
    fn normalize_strips_and_collapses() {
        assert_eq!(normalize_text("abc "), "abc");
        assert_eq!(normalize_text("a  b"), "a b");
        assert_eq!(normalize_text("  a\t\nb  "), "a b");
        assert_eq!(normalize_text(""), "");
    }

    #[test]
    fn normalize_composes_nfc() {
        let decomposed = "e\u{301}";
        let normalized = normalize_text(decomposed);
        assert_eq!(normalized, "\u{e9}");
    }

    #[test]
    fn normalize_is_idempotent() {
        for raw in ["  a  b ", "e\u{301}x", "他 今天  去", "\t\t", "ｱﾊﾟ\u{3099}"] {
            let once = normalize_text(raw);
            assert_eq!(normalize_text(&once), once);
        }
    }

    #[test]
    fn normalize_keeps_non_ascii_whitespace() {
        // U+3000 ideographic space is not ASCII whitespace and survives.
        assert_eq!(normalize_text("他\u{3000}去"), "他\u{3000}去");
    }

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn tsv_basic_line() {
        let dir = tmp();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "s1\t他今天去了学校\t他今天去学校\n").unwrap();
        let samples = load_corpus(&path, &CorpusFormat::ParallelTsv).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].id, "s1");
        assert_eq!(samples[0].source, "他今天去了学校");
        assert_eq!(samples[0].references, vec!["他今天去学校".to_string()]);
        assert!(samples[0].gold_edits.is_none());
    }

    #[test]
    fn tsv_empty_file_is_empty_corpus() {
        let dir = tmp();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "").unwrap();
        assert!(load_corpus(&path, &CorpusFormat::ParallelTsv).unwrap().is_empty());
    }

    #[test]
    fn tsv_rejects_single_column() {
        let dir = tmp();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "only-one-column\n").unwrap();
        let err = load_corpus(&path, &CorpusFormat::ParallelTsv).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }));
    }

    #[test]
    fn tsv_rejects_duplicate_ids() {
        let dir = tmp();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "s1\ta\ns1\tb\n").unwrap();
        let err = load_corpus(&path, &CorpusFormat::ParallelTsv).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { .. }));
    }

    #[test]
    fn tsv_roundtrip() {
        let dir = tmp();
        let path = dir.path().join("c.tsv");
        let samples = vec![
            CorrectionSample::new("s1", "他今天去了学校", vec!["他今天去学校".into()], None)
                .unwrap(),
            CorrectionSample::new("s2", "没有参考", vec![], None).unwrap(),
            CorrectionSample::new(
                "s3",
                "两个参考",
                vec!["参考一".into(), "参考二".into()],
                None,
            )
            .unwrap(),
        ];
        write_corpus(&samples, &path, &CorpusFormat::ParallelTsv).unwrap();
        let loaded = load_corpus(&path, &CorpusFormat::ParallelTsv).unwrap();
        assert_eq!(loaded, samples);
    }

    #[test]
    fn tsv_write_rejects_tab_in_source() {
        let dir = tmp();
        let path = dir.path().join("c.tsv");
        let sample = CorrectionSample {
            id: "s1".into(),
            source: "a\tb".into(),
            references: vec![],
            gold_edits: None,
        };
        let err = write_corpus(&[sample], &path, &CorpusFormat::ParallelTsv).unwrap_err();
        assert!(matches!(err, CorpusError::Format(_)));
    }

    #[test]
    fn tsv_write_rejects_gold_edits() {
        let dir = tmp();
        let path = dir.path().join("c.tsv");
        let set = EditSet::new(
            vec![Edit::new(0, 1, vec![SmolStr::new("x")]).unwrap()],
            1,
        )
        .unwrap();
        let sample =
            CorrectionSample::new("s1", "a", vec!["x".into()], Some(vec![set])).unwrap();
        let err = write_corpus(&[sample], &path, &CorpusFormat::ParallelTsv).unwrap_err();
        assert!(matches!(err, CorpusError::Format(_)));
    }

    #[test]
    fn jsonl_roundtrip_with_edits() {
        let dir = tmp();
        let path = dir.path().join("c.jsonl");
        let base = CorrectionSample::new(
            "s1",
            "他今天去了学校",
            vec!["他今天去学校".into()],
            None,
        )
        .unwrap();
        let derived = base.with_derived_edits(&Granularity::Character).unwrap();
        let plain = CorrectionSample::new("s2", "没问题", vec![], None).unwrap();
        let samples = vec![derived, plain];
        write_corpus(&samples, &path, &CorpusFormat::JsonLines).unwrap();
        let loaded = load_corpus(&path, &CorpusFormat::JsonLines).unwrap();
        assert_eq!(loaded, samples);
    }

    #[test]
    fn jsonl_assigns_sequential_ids() {
        let dir = tmp();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"source\":\"甲\",\"references\":[]}\n{\"source\":\"乙\",\"references\":[]}\n",
        )
        .unwrap();
        let loaded = load_corpus(&path, &CorpusFormat::JsonLines).unwrap();
        assert_eq!(loaded[0].id, "s1");
        assert_eq!(loaded[1].id, "s2");
    }

    #[test]
    fn jsonl_rejects_malformed_line() {
        let dir = tmp();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"source\":\"甲\",\"references\":[]}\nnot json\n").unwrap();
        let err = load_corpus(&path, &CorpusFormat::JsonLines).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }));
    }

    #[test]
    fn jsonl_rejects_mismatched_gold_edit_count() {
        let dir = tmp();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"s1\",\"source\":\"甲乙\",\"references\":[\"甲丙\"],\"gold_edits\":[]}\n",
        )
        .unwrap();
        let err = load_corpus(&path, &CorpusFormat::JsonLines).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { .. }));
    }

    #[test]
    fn decode_error_reports_offset() {
        let dir = tmp();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, [b's', b'1', b'\t', 0xFF, 0xFE]).unwrap();
        let err = load_corpus(&path, &CorpusFormat::ParallelTsv).unwrap_err();
        assert!(matches!(err, CorpusError::Decode { offset: 3, .. }));
    }

    #[test]
    fn predictions_roundtrip() {
        let dir = tmp();
        let path = dir.path().join("p.tsv");
        let predictions = vec![
            Prediction {
                sample_id: "s1".into(),
                hypothesis: "他今天去学校".into(),
            },
            Prediction {
                sample_id: "s2".into(),
                hypothesis: String::new(),
            },
        ];
        write_predictions(&predictions, &path).unwrap();
        assert_eq!(load_predictions(&path).unwrap(), predictions);
    }
}
