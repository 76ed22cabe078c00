//! Token-level alignment between a source sentence and a corrected target.
//!
//! The aligner produces a unit-cost Levenshtein script with a fixed tie-break
//! order, then merges adjacent non-match operations into span edits. Both the
//! raw operation stream ([`align_ops`]) and the merged form ([`extract_edits`])
//! are part of the public contract: scorers consume merged [`EditSet`]s while
//! minimality tests inspect the pre-merge stream.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use smol_str::SmolStr;
use thiserror::Error;

/// One aligned unit: a Unicode scalar at character granularity, a segmenter
/// output at word granularity. Inline-stored for up to 22 bytes, so CJK
/// characters and short words never hit the heap.
pub type Token = SmolStr;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("unknown segmenter {0:?}")]
    UnknownSegmenter(String),
    #[error("edit span [{start}, {end}) out of range for source of length {source_len}")]
    Bounds {
        start: usize,
        end: usize,
        source_len: usize,
    },
    #[error("edit spans [{a_start}, {a_end}) and [{b_start}, {b_end}) overlap")]
    Overlap {
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("null edit at position {0} (empty span with empty replacement)")]
    NullEdit(usize),
    #[error("two insertions at position {0}")]
    DuplicateInsertion(usize),
    #[error("edits not sorted by (start, end): [{b_start}, {b_end}) follows [{a_start}, {a_end})")]
    Unsorted {
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("declared kind {declared:?} does not match span shape {actual:?}")]
    KindMismatch { declared: EditKind, actual: EditKind },
    #[error("edit set built for source length {expected}, got source of length {actual}")]
    SourceLenMismatch { expected: usize, actual: usize },
}

/// Tokenization level for alignment and scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Granularity {
    /// One token per Unicode scalar value.
    Character,
    /// Tokens from the named registered segmenter.
    Word(String),
}

impl Granularity {
    /// Word granularity with the built-in whitespace segmenter.
    pub fn word_default() -> Self {
        Granularity::Word(WHITESPACE_FALLBACK.to_string())
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::Character => f.write_str("char"),
            Granularity::Word(name) if name == WHITESPACE_FALLBACK => f.write_str("word"),
            Granularity::Word(name) => write!(f, "word:{name}"),
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = AlignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" | "character" => Ok(Granularity::Character),
            "word" => Ok(Granularity::word_default()),
            other => match other.strip_prefix("word:") {
                Some(name) if !name.is_empty() => Ok(Granularity::Word(name.to_string())),
                _ => Err(AlignError::UnknownSegmenter(other.to_string())),
            },
        }
    }
}

impl From<Granularity> for String {
    fn from(g: Granularity) -> String {
        g.to_string()
    }
}

impl TryFrom<String> for Granularity {
    type Error = AlignError;

    fn try_from(s: String) -> Result<Self, AlignError> {
        s.parse()
    }
}

/// Derived shape of an edit span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditKind {
    Insert,
    Delete,
    Substitute,
}

/// A contiguous span replacement on the source token sequence.
///
/// `start == end` with a nonempty replacement is an insertion before `start`;
/// an empty replacement over a nonempty span is a deletion. The fully null
/// edit (empty span, empty replacement) is rejected at construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: Vec<Token>,
}

impl Edit {
    pub fn new(start: usize, end: usize, replacement: Vec<Token>) -> Result<Self, AlignError> {
        if end < start {
            return Err(AlignError::Bounds {
                start,
                end,
                source_len: 0,
            });
        }
        if start == end && replacement.is_empty() {
            return Err(AlignError::NullEdit(start));
        }
        Ok(Edit {
            start,
            end,
            replacement,
        })
    }

    pub fn kind(&self) -> EditKind {
        if self.start == self.end {
            EditKind::Insert
        } else if self.replacement.is_empty() {
            EditKind::Delete
        } else {
            EditKind::Substitute
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EditRepr {
    start: usize,
    end: usize,
    replacement: Vec<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<EditKind>,
}

impl Serialize for Edit {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        EditRepr {
            start: self.start,
            end: self.end,
            replacement: self.replacement.clone(),
            kind: Some(self.kind()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Edit {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = EditRepr::deserialize(deserializer)?;
        let edit = Edit::new(repr.start, repr.end, repr.replacement)
            .map_err(serde::de::Error::custom)?;
        if let Some(declared) = repr.kind {
            if declared != edit.kind() {
                return Err(serde::de::Error::custom(AlignError::KindMismatch {
                    declared,
                    actual: edit.kind(),
                }));
            }
        }
        Ok(edit)
    }
}

/// A validated, sorted, non-overlapping set of edits against one source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EditSetRepr", into = "EditSetRepr")]
pub struct EditSet {
    edits: Vec<Edit>,
    source_len: usize,
}

#[derive(Serialize, Deserialize, Clone)]
struct EditSetRepr {
    edits: Vec<Edit>,
    source_len: usize,
}

impl From<EditSet> for EditSetRepr {
    fn from(set: EditSet) -> EditSetRepr {
        EditSetRepr {
            edits: set.edits,
            source_len: set.source_len,
        }
    }
}

impl TryFrom<EditSetRepr> for EditSet {
    type Error = AlignError;

    fn try_from(repr: EditSetRepr) -> Result<EditSet, AlignError> {
        EditSet::new(repr.edits, repr.source_len)
    }
}

impl EditSet {
    /// Validates ordering, bounds, pairwise non-overlap, and the ban on
    /// stacked insertions at one position.
    pub fn new(edits: Vec<Edit>, source_len: usize) -> Result<Self, AlignError> {
        for edit in &edits {
            if edit.start == edit.end && edit.replacement.is_empty() {
                return Err(AlignError::NullEdit(edit.start));
            }
            if edit.end < edit.start || edit.end > source_len {
                return Err(AlignError::Bounds {
                    start: edit.start,
                    end: edit.end,
                    source_len,
                });
            }
        }
        for pair in edits.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if (b.start, b.end) < (a.start, a.end) {
                return Err(AlignError::Unsorted {
                    a_start: a.start,
                    a_end: a.end,
                    b_start: b.start,
                    b_end: b.end,
                });
            }
            if b.start < a.end {
                return Err(AlignError::Overlap {
                    a_start: a.start,
                    a_end: a.end,
                    b_start: b.start,
                    b_end: b.end,
                });
            }
            if a.start == a.end && b.start == b.end && a.start == b.start {
                return Err(AlignError::DuplicateInsertion(a.start));
            }
        }
        Ok(EditSet { edits, source_len })
    }

    pub fn empty(source_len: usize) -> Self {
        EditSet {
            edits: Vec::new(),
            source_len,
        }
    }

    pub fn edits(&self) -> &[Edit] {
        &self.edits
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }
}

/// One step of the raw alignment script.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Match,
    Substitute,
    Delete,
    Insert,
}

const WHITESPACE_FALLBACK: &str = "whitespace-fallback";

/// Splits text into word tokens.
pub trait Segmenter: Send + Sync {
    fn segment(&self, text: &str) -> Vec<Token>;
}

struct WhitespaceSegmenter;

impl Segmenter for WhitespaceSegmenter {
    fn segment(&self, text: &str) -> Vec<Token> {
        text.split_whitespace().map(SmolStr::new).collect()
    }
}

/// Named segmenters for word-granularity tokenization.
pub struct SegmenterRegistry {
    segmenters: BTreeMap<String, Arc<dyn Segmenter>>,
}

impl SegmenterRegistry {
    /// Registry with only the built-in whitespace segmenter.
    pub fn new() -> Self {
        let mut segmenters: BTreeMap<String, Arc<dyn Segmenter>> = BTreeMap::new();
        segmenters.insert(WHITESPACE_FALLBACK.to_string(), Arc::new(WhitespaceSegmenter));
        SegmenterRegistry { segmenters }
    }

    pub fn register(&mut self, name: &str, segmenter: Arc<dyn Segmenter>) {
        self.segmenters.insert(name.to_string(), segmenter);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Segmenter>> {
        self.segmenters.get(name)
    }

    fn builtin() -> &'static SegmenterRegistry {
        static BUILTIN: OnceLock<SegmenterRegistry> = OnceLock::new();
        BUILTIN.get_or_init(SegmenterRegistry::new)
    }
}

impl Default for SegmenterRegistry {
    fn default() -> Self {
        SegmenterRegistry::new()
    }
}

/// Tokenizes with the built-in registry; see [`tokenize_with`] for custom
/// segmenters.
pub fn tokenize(text: &str, granularity: &Granularity) -> Result<Vec<Token>, AlignError> {
    tokenize_with(SegmenterRegistry::builtin(), text, granularity)
}

pub fn tokenize_with(
    registry: &SegmenterRegistry,
    text: &str,
    granularity: &Granularity,
) -> Result<Vec<Token>, AlignError> {
    match granularity {
        Granularity::Character => {
            let mut buf = [0u8; 4];
            Ok(text
                .chars()
                .map(|c| SmolStr::new(c.encode_utf8(&mut buf)))
                .collect())
        }
        Granularity::Word(name) => {
            let segmenter = registry
                .get(name)
                .ok_or_else(|| AlignError::UnknownSegmenter(name.clone()))?;
            Ok(segmenter.segment(text))
        }
    }
}

/// Rejoins tokens into text: direct concatenation at character granularity;
/// at word granularity a single space separates tokens only where both
/// boundary scalars are outside the CJK ranges.
pub fn detokenize(tokens: &[Token], granularity: &Granularity) -> String {
    match granularity {
        Granularity::Character => tokens.iter().map(|t| t.as_str()).collect(),
        Granularity::Word(_) => {
            let mut out = String::new();
            for token in tokens {
                if !out.is_empty() {
                    let prev = out.chars().next_back();
                    let next = token.chars().next();
                    if let (Some(p), Some(n)) = (prev, next) {
                        if !is_cjk(p) && !is_cjk(n) {
                            out.push(' ');
                        }
                    }
                }
                out.push_str(token);
            }
            out
        }
    }
}

/// CJK scalar test covering the unified ideograph blocks, kana, hangul,
/// CJK punctuation, and fullwidth forms.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F
        | 0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF
        | 0x20000..=0x2FA1F)
}

// DP cells for sentence-sized inputs live on the stack; anything larger
// falls back to a heap matrix.
const STACK_DIM: usize = 33;

/// Unit-cost Levenshtein alignment script from `source` to `target`.
///
/// Ties during traceback resolve as Match > Substitute > Delete > Insert,
/// scanning from the end, which makes the script unique for fixed inputs.
/// The number of non-match operations equals the edit distance.
pub fn align_ops(source: &[Token], target: &[Token]) -> Vec<AlignOp> {
    let n = source.len();
    let m = target.len();
    if (n + 1) * (m + 1) <= STACK_DIM * STACK_DIM {
        let mut cells = [0u32; STACK_DIM * STACK_DIM];
        fill_and_trace(source, target, &mut cells[..(n + 1) * (m + 1)])
    } else {
        let mut cells = vec![0u32; (n + 1) * (m + 1)];
        fill_and_trace(source, target, &mut cells)
    }
}

fn fill_and_trace(source: &[Token], target: &[Token], d: &mut [u32]) -> Vec<AlignOp> {
    let n = source.len();
    let m = target.len();
    let stride = m + 1;

    for j in 0..=m {
        d[j] = j as u32;
    }
    for i in 1..=n {
        let (prev_row, row) = d[(i - 1) * stride..].split_at_mut(stride);
        row[0] = i as u32;
        let src_tok = &source[i - 1];
        let mut diag = prev_row[0];
        for j in 1..=m {
            let up = prev_row[j];
            let left = row[j - 1];
            let through = if *src_tok == target[j - 1] {
                diag
            } else {
                diag + 1
            };
            row[j] = through.min(up + 1).min(left + 1);
            diag = up;
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let mut i = n;
    let mut j = m;
    while i > 0 || j > 0 {
        let here = d[i * stride + j];
        if i > 0 && j > 0 {
            let diag = d[(i - 1) * stride + (j - 1)];
            if source[i - 1] == target[j - 1] && diag == here {
                ops.push(AlignOp::Match);
                i -= 1;
                j -= 1;
                continue;
            }
            if source[i - 1] != target[j - 1] && diag + 1 == here {
                ops.push(AlignOp::Substitute);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * stride + j] + 1 == here {
            ops.push(AlignOp::Delete);
            i -= 1;
            continue;
        }
        ops.push(AlignOp::Insert);
        j -= 1;
    }
    ops.reverse();
    ops
}

/// Minimal edit set from `source` to `target`: the [`align_ops`] script with
/// every maximal run of adjacent non-match operations merged into one span
/// edit whose replacement concatenates the run's target-side tokens.
pub fn extract_edits(source: &[Token], target: &[Token]) -> EditSet {
    let ops = align_ops(source, target);
    let mut edits = Vec::new();
    let mut src_pos = 0usize;
    let mut tgt_pos = 0usize;
    let mut run_start: Option<usize> = None;
    let mut run_replacement: Vec<Token> = Vec::new();

    for op in ops {
        match op {
            AlignOp::Match => {
                if let Some(start) = run_start.take() {
                    edits.push(Edit {
                        start,
                        end: src_pos,
                        replacement: std::mem::take(&mut run_replacement),
                    });
                }
                src_pos += 1;
                tgt_pos += 1;
            }
            AlignOp::Substitute => {
                run_start.get_or_insert(src_pos);
                run_replacement.push(target[tgt_pos].clone());
                src_pos += 1;
                tgt_pos += 1;
            }
            AlignOp::Delete => {
                run_start.get_or_insert(src_pos);
                src_pos += 1;
            }
            AlignOp::Insert => {
                run_start.get_or_insert(src_pos);
                run_replacement.push(target[tgt_pos].clone());
                tgt_pos += 1;
            }
        }
    }
    if let Some(start) = run_start {
        edits.push(Edit {
            start,
            end: src_pos,
            replacement: run_replacement,
        });
    }

    EditSet {
        edits,
        source_len: source.len(),
    }
}

/// Applies a validated edit set to its source sequence.
///
/// Equivalent to right-to-left span splicing; implemented as a single
/// forward pass since spans are sorted and disjoint.
pub fn apply_edits(source: &[Token], edits: &EditSet) -> Result<Vec<Token>, AlignError> {
    if edits.source_len != source.len() {
        return Err(AlignError::SourceLenMismatch {
            expected: edits.source_len,
            actual: source.len(),
        });
    }
    let grown: usize = edits.edits.iter().map(|e| e.replacement.len()).sum();
    let mut out = Vec::with_capacity(source.len() + grown);
    let mut cursor = 0usize;
    for edit in &edits.edits {
        out.extend_from_slice(&source[cursor..edit.start]);
        out.extend(edit.replacement.iter().cloned());
        cursor = edit.end;
    }
    out.extend_from_slice(&source[cursor..]);
    Ok(out)
}
