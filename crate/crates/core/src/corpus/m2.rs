//! MaxMatch-style M2 reading and writing.
//!
//! Files begin with a `# granularity=` header naming the tokenization the
//! indices refer to. Each block holds an optional `# id=` comment, an `S`
//! line with space-joined source tokens, and one `A` line per edit:
//!
//! ```text
//! A start end|||type|||replacement|||REQUIRED|||-NONE-|||annotator
//! ```
//!
//! An annotator whose correction equals the source is recorded with a
//! `noop` line, so zero references and a zero-edit reference stay distinct.

use std::collections::BTreeMap;
use std::path::Path;

use smol_str::SmolStr;

use crate::align::{apply_edits, detokenize, tokenize, Edit, EditKind, EditSet, Granularity, Token};

use super::{normalize_text, CorpusError, CorrectionSample};

const NONE_FIELD: &str = "-NONE-";
const NOOP_TYPE: &str = "noop";

/// Reads just the granularity header of an M2 file.
pub fn peek_m2_granularity(path: impl AsRef<Path>) -> Result<Granularity, CorpusError> {
    let path = path.as_ref();
    let content = super::read_to_string(path)?;
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        return parse_header(path, idx + 1, line);
    }
    Err(CorpusError::Format(format!(
        "{}: missing granularity header",
        path.display()
    )))
}

fn parse_header(path: &Path, line_no: usize, line: &str) -> Result<Granularity, CorpusError> {
    let value = line.strip_prefix("# granularity=").ok_or_else(|| {
        CorpusError::parse(path, line_no, line, "expected `# granularity=` header")
    })?;
    value
        .trim()
        .parse()
        .map_err(|_| CorpusError::parse(path, line_no, line, "unknown granularity"))
}

struct BlockState {
    line_no: usize,
    id: Option<String>,
    tokens: Vec<Token>,
    edits: BTreeMap<usize, Vec<Edit>>,
    noops: BTreeMap<usize, usize>,
}

pub(super) fn parse(
    path: &Path,
    content: &str,
    declared: &Granularity,
) -> Result<Vec<CorrectionSample>, CorpusError> {
    if content.trim().is_empty() {
        return Ok(Vec::new());
    }

    let mut samples = Vec::new();
    let mut header: Option<Granularity> = None;
    let mut pending_id: Option<String> = None;
    let mut block: Option<BlockState> = None;

    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            if let Some(state) = block.take() {
                samples.push(close_block(path, state, declared)?);
            }
            if pending_id.is_some() {
                return Err(CorpusError::parse(
                    path,
                    line_no,
                    line,
                    "id comment without a following S line",
                ));
            }
            continue;
        }

        if header.is_none() {
            let file_granularity = parse_header(path, line_no, line)?;
            if &file_granularity != declared {
                return Err(CorpusError::parse(
                    path,
                    line_no,
                    line,
                    format!(
                        "file is at granularity {file_granularity}, loader expected {declared}"
                    ),
                ));
            }
            header = Some(file_granularity);
            continue;
        }

        if let Some(rest) = line.strip_prefix("# id=") {
            if block.is_some() {
                return Err(CorpusError::parse(
                    path,
                    line_no,
                    line,
                    "id comment must precede the S line of its block",
                ));
            }
            if pending_id.is_some() {
                return Err(CorpusError::parse(path, line_no, line, "second id comment"));
            }
            let id = rest.trim();
            if id.is_empty() {
                return Err(CorpusError::parse(path, line_no, line, "empty id comment"));
            }
            pending_id = Some(id.to_string());
            continue;
        }

        if line.starts_with('#') {
            return Err(CorpusError::parse(path, line_no, line, "unrecognized comment"));
        }

        if let Some(rest) = line.strip_prefix("S ") {
            if block.is_some() {
                return Err(CorpusError::parse(
                    path,
                    line_no,
                    line,
                    "S line inside an open block (missing blank separator)",
                ));
            }
            let mut tokens = Vec::new();
            for token in rest.split(' ') {
                if token.is_empty() {
                    return Err(CorpusError::parse(path, line_no, line, "empty source token"));
                }
                tokens.push(SmolStr::new(token));
            }
            block = Some(BlockState {
                line_no,
                id: pending_id.take(),
                tokens,
                edits: BTreeMap::new(),
                noops: BTreeMap::new(),
            });
            continue;
        }

        if let Some(rest) = line.strip_prefix("A ") {
            let Some(state) = block.as_mut() else {
                return Err(CorpusError::parse(path, line_no, line, "A line before any S line"));
            };
            parse_a_line(path, line_no, line, rest, state)?;
            continue;
        }

        return Err(CorpusError::parse(
            path,
            line_no,
            line,
            "expected an S line, an A line, or a comment",
        ));
    }

    if let Some(state) = block.take() {
        samples.push(close_block(path, state, declared)?);
    }
    if pending_id.is_some() {
        return Err(CorpusError::Format(format!(
            "{}: trailing id comment without an S line",
            path.display()
        )));
    }
    Ok(samples)
}

fn parse_a_line(
    path: &Path,
    line_no: usize,
    line: &str,
    rest: &str,
    state: &mut BlockState,
) -> Result<(), CorpusError> {
    let fields: Vec<&str> = rest.split("|||").collect();
    if fields.len() != 6 {
        return Err(CorpusError::parse(
            path,
            line_no,
            line,
            format!("expected 6 |||-separated fields, got {}", fields.len()),
        ));
    }
    let span: Vec<&str> = fields[0].split(' ').filter(|s| !s.is_empty()).collect();
    if span.len() != 2 {
        return Err(CorpusError::parse(path, line_no, line, "expected `start end`"));
    }
    let start: i64 = span[0]
        .parse()
        .map_err(|_| CorpusError::parse(path, line_no, line, "non-integer start"))?;
    let end: i64 = span[1]
        .parse()
        .map_err(|_| CorpusError::parse(path, line_no, line, "non-integer end"))?;
    let annotator: usize = fields[5]
        .trim()
        .parse()
        .map_err(|_| CorpusError::parse(path, line_no, line, "non-integer annotator"))?;

    if fields[1] == NOOP_TYPE {
        if start != -1 || end != -1 || fields[2] != NONE_FIELD {
            return Err(CorpusError::parse(
                path,
                line_no,
                line,
                "noop lines must be `A -1 -1|||noop|||-NONE-|||...`",
            ));
        }
        if state.edits.contains_key(&annotator) || state.noops.contains_key(&annotator) {
            return Err(CorpusError::parse(
                path,
                line_no,
                line,
                format!("annotator {annotator} already has annotations"),
            ));
        }
        state.noops.insert(annotator, line_no);
        return Ok(());
    }

    if start < 0 || end < start {
        return Err(CorpusError::parse(path, line_no, line, "invalid span"));
    }
    if state.noops.contains_key(&annotator) {
        return Err(CorpusError::parse(
            path,
            line_no,
            line,
            format!("annotator {annotator} mixes noop and edits"),
        ));
    }
    let replacement: Vec<Token> = if fields[2] == NONE_FIELD {
        Vec::new()
    } else if fields[2].is_empty() {
        return Err(CorpusError::parse(
            path,
            line_no,
            line,
            "empty replacement field (use -NONE- for deletions)",
        ));
    } else {
        fields[2].split(' ').map(SmolStr::new).collect()
    };
    let edit = Edit::new(start as usize, end as usize, replacement)
        .map_err(|e| CorpusError::parse(path, line_no, line, e.to_string()))?;
    state.edits.entry(annotator).or_default().push(edit);
    Ok(())
}

fn close_block(
    path: &Path,
    state: BlockState,
    granularity: &Granularity,
) -> Result<CorrectionSample, CorpusError> {
    let BlockState {
        line_no,
        id,
        tokens,
        edits,
        noops,
    } = state;

    let source = normalize_text(&detokenize(&tokens, granularity));
    let id = id.unwrap_or_else(|| format!("s{line_no}"));

    let mut annotators: Vec<usize> = edits.keys().chain(noops.keys()).copied().collect();
    annotators.sort_unstable();
    for (expected, &got) in annotators.iter().enumerate() {
        if expected != got {
            return Err(CorpusError::Format(format!(
                "{}: block at line {line_no}: annotator ids must be contiguous from 0, found {annotators:?}",
                path.display()
            )));
        }
    }

    let mut references = Vec::with_capacity(annotators.len());
    let mut sets = Vec::with_capacity(annotators.len());
    for &annotator in &annotators {
        let set = match edits.get(&annotator) {
            Some(list) => EditSet::new(list.clone(), tokens.len()).map_err(|e| {
                CorpusError::Format(format!(
                    "{}: block at line {line_no}, annotator {annotator}: {e}",
                    path.display()
                ))
            })?,
            None => EditSet::empty(tokens.len()),
        };
        let corrected = apply_edits(&tokens, &set).map_err(|e| {
            CorpusError::Format(format!(
                "{}: block at line {line_no}, annotator {annotator}: {e}",
                path.display()
            ))
        })?;
        references.push(normalize_text(&detokenize(&corrected, granularity)));
        sets.push(set);
    }

    CorrectionSample::new(id, source, references, Some(sets)).map_err(|e| {
        CorpusError::Format(format!(
            "{}: block at line {line_no}: {e}",
            path.display()
        ))
    })
}

fn check_token(sample_id: &str, token: &str) -> Result<(), CorpusError> {
    if token.is_empty()
        || token.chars().any(char::is_whitespace)
        || token.contains("|||")
        || token == NONE_FIELD
    {
        return Err(CorpusError::Format(format!(
            "sample {sample_id:?}: token {token:?} is not representable in M2 \
             (whitespace, |||, and -NONE- are reserved)"
        )));
    }
    Ok(())
}

fn kind_label(kind: EditKind) -> &'static str {
    match kind {
        EditKind::Insert => "insert",
        EditKind::Delete => "delete",
        EditKind::Substitute => "substitute",
    }
}

pub(super) fn render(
    samples: &[CorrectionSample],
    granularity: &Granularity,
) -> Result<String, CorpusError> {
    let mut out = format!("# granularity={granularity}\n");
    for (index, sample) in samples.iter().enumerate() {
        sample.validate()?;
        let Some(sets) = &sample.gold_edits else {
            return Err(CorpusError::Format(format!(
                "sample {:?}: M2 requires gold edit sets; derive them first",
                sample.id
            )));
        };
        let tokens = tokenize(&sample.source, granularity).map_err(|e| {
            CorpusError::Format(format!("sample {:?}: {e}", sample.id))
        })?;
        for token in &tokens {
            check_token(&sample.id, token)?;
        }
        if detokenize(&tokens, granularity) != sample.source {
            return Err(CorpusError::Format(format!(
                "sample {:?}: source does not survive tokenization at granularity {granularity}",
                sample.id
            )));
        }

        if index > 0 {
            out.push('\n');
        }
        out.push_str("# id=");
        out.push_str(&sample.id);
        out.push('\n');
        out.push_str("S ");
        out.push_str(&tokens.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(" "));
        out.push('\n');

        for (annotator, set) in sets.iter().enumerate() {
            let corrected = apply_edits(&tokens, set).map_err(|e| {
                CorpusError::Format(format!(
                    "sample {:?}, annotator {annotator}: {e}",
                    sample.id
                ))
            })?;
            let reconstructed = detokenize(&corrected, granularity);
            if reconstructed != sample.references[annotator] {
                return Err(CorpusError::Format(format!(
                    "sample {:?}: gold edits for annotator {annotator} rebuild {reconstructed:?}, \
                     not the stored reference {:?}",
                    sample.id, sample.references[annotator]
                )));
            }
            if set.is_empty() {
                out.push_str(&format!(
                    "A -1 -1|||{NOOP_TYPE}|||{NONE_FIELD}|||REQUIRED|||{NONE_FIELD}|||{annotator}\n"
                ));
                continue;
            }
            for edit in set.edits() {
                for token in &edit.replacement {
                    check_token(&sample.id, token)?;
                }
                let replacement = if edit.replacement.is_empty() {
                    NONE_FIELD.to_string()
                } else {
                    edit.replacement
                        .iter()
                        .map(|t| t.as_str())
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                out.push_str(&format!(
                    "A {} {}|||{}|||{}|||REQUIRED|||{NONE_FIELD}|||{}\n",
                    edit.start,
                    edit.end,
                    kind_label(edit.kind()),
                    replacement,
                    annotator
                ));
            }
        }
    }
    Ok(out)
}
