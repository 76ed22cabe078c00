//! Word- and character-level P/R/F-beta scoring against multi-reference gold
//! edit sets.
//!
//! Edits match on exact (start, end, replacement) equality. Each sentence is
//! scored against the reference that maximizes its sentence-level F-beta
//! (ties go to the lowest reference index), and the winning counts are
//! micro-aggregated. Zero-denominator conventions are explicit: precision is
//! 1 when nothing was predicted, recall is 1 when no gold edits exist, and
//! F(0, 0) is 0.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{extract_edits, tokenize, AlignError, EditSet, Granularity};
use crate::corpus::{CorrectionSample, Prediction};
use crate::see::SeeTotals;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("granularity mismatch: edit sets built over source lengths {left} and {right}")]
    Granularity { left: usize, right: usize },
    #[error("predictions reference unknown sample ids: {0:?}")]
    MissingSample(Vec<String>),
    #[error("duplicate prediction for sample {0:?}")]
    DuplicatePrediction(String),
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// Exact-match tallies for one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_gold: usize,
}

/// Counts carried by a [`ScoreReport`]: exact-match tallies for the
/// traditional scorer, verdict tallies for the LLM judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportCounts {
    Match(MatchCounts),
    See(SeeTotals),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_index: Option<usize>,
    pub counts: ReportCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub beta: f64,
    pub counts: ReportCounts,
    pub per_sentence: Vec<SentenceRecord>,
}

impl ScoreReport {
    /// Fixed-width P / R / F table with percentages rounded half-up to two
    /// decimals. Internal values keep full precision.
    pub fn render_table(&self) -> String {
        let header = format!("{:>10} {:>10} {:>10}", "P", "R", format!("F{}", self.beta));
        let row = format!(
            "{:>10} {:>10} {:>10}",
            display_percent(self.precision),
            display_percent(self.recall),
            display_percent(self.f_beta),
        );
        format!("{header}\n{row}\n")
    }
}

/// Percentage with two decimals, rounding half-up.
pub fn display_percent(fraction: f64) -> String {
    let scaled = ((fraction * 10000.0) + 0.5).floor() / 100.0;
    format!("{scaled:.2}")
}

/// Exact-match comparison of a predicted edit set against one gold set.
pub fn match_edits(predicted: &EditSet, gold: &EditSet) -> Result<MatchCounts, MetricsError> {
    if predicted.source_len() != gold.source_len() {
        return Err(MetricsError::Granularity {
            left: predicted.source_len(),
            right: gold.source_len(),
        });
    }
    // Both sets are sorted by (start, end) with unique spans, so a single
    // merge pass finds every exact match.
    let mut tp = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    let p = predicted.edits();
    let g = gold.edits();
    while i < p.len() && j < g.len() {
        let key_p = (p[i].start, p[i].end);
        let key_g = (g[j].start, g[j].end);
        if key_p == key_g {
            if p[i].replacement == g[j].replacement {
                tp += 1;
            }
            i += 1;
            j += 1;
        } else if key_p < key_g {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(MatchCounts {
        tp,
        fp: p.len() - tp,
        fn_: g.len() - tp,
        n_gold: g.len(),
    })
}

/// F-beta from precision and recall, with F(0, 0) defined as 0.
pub fn compute_f_beta(p: f64, r: f64, beta: f64) -> Result<f64, MetricsError> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(MetricsError::Domain(format!("beta must be positive, got {beta}")));
    }
    for (name, v) in [("precision", p), ("recall", r)] {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(MetricsError::Domain(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    if p == 0.0 && r == 0.0 {
        return Ok(0.0);
    }
    let b2 = beta * beta;
    Ok(((1.0 + b2) * p * r) / (b2 * p + r))
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn sentence_f(counts: &MatchCounts, beta: f64) -> Result<f64, MetricsError> {
    let p = ratio_or_one(counts.tp, counts.tp + counts.fp);
    let r = ratio_or_one(counts.tp, counts.n_gold);
    compute_f_beta(p, r, beta)
}

/// Scores predictions against the corpus at the given granularity.
///
/// Gold edit sets are taken from the samples when present (their recorded
/// source length must match the requested tokenization) and aligned from the
/// reference texts otherwise. A sample with no references contributes an
/// empty gold set, so any predicted edit on it counts as a false positive.
pub fn score_corpus(
    predictions: &[Prediction],
    corpus: &[CorrectionSample],
    granularity: &Granularity,
    beta: f64,
) -> Result<ScoreReport, MetricsError> {
    let by_id: HashMap<&str, &CorrectionSample> =
        corpus.iter().map(|s| (s.id.as_str(), s)).collect();

    let mut missing = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for prediction in predictions {
        if !seen.insert(prediction.sample_id.as_str()) {
            return Err(MetricsError::DuplicatePrediction(prediction.sample_id.clone()));
        }
        if !by_id.contains_key(prediction.sample_id.as_str()) {
            missing.push(prediction.sample_id.clone());
        }
    }
    if !missing.is_empty() {
        return Err(MetricsError::MissingSample(missing));
    }

    let mut total = MatchCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        n_gold: 0,
    };
    let mut per_sentence = Vec::with_capacity(predictions.len());

    for prediction in predictions {
        let sample = by_id[prediction.sample_id.as_str()];
        let src = tokenize(&sample.source, granularity)?;
        let hyp = tokenize(&prediction.hypothesis, granularity)?;
        let predicted = extract_edits(&src, &hyp);

        let golds = gold_sets(sample, &src, granularity)?;
        let (reference_index, counts) = select_reference(&predicted, &golds, beta)?;

        total.tp += counts.tp;
        total.fp += counts.fp;
        total.fn_ += counts.fn_;
        total.n_gold += counts.n_gold;
        per_sentence.push(SentenceRecord {
            sample_id: sample.id.clone(),
            reference_index,
            counts: ReportCounts::Match(counts),
        });
    }

    let precision = ratio_or_one(total.tp, total.tp + total.fp);
    let recall = ratio_or_one(total.tp, total.n_gold);
    let f_beta = compute_f_beta(precision, recall, beta)?;
    Ok(ScoreReport {
        precision,
        recall,
        f_beta,
        beta,
        counts: ReportCounts::Match(total),
        per_sentence,
    })
}

pub(crate) fn gold_sets(
    sample: &CorrectionSample,
    src: &[crate::align::Token],
    granularity: &Granularity,
) -> Result<Vec<EditSet>, MetricsError> {
    match &sample.gold_edits {
        Some(sets) => {
            for set in sets {
                if set.source_len() != src.len() {
                    return Err(MetricsError::Granularity {
                        left: set.source_len(),
                        right: src.len(),
                    });
                }
            }
            Ok(sets.clone())
        }
        None => sample
            .references
            .iter()
            .map(|reference| {
                let tgt = tokenize(reference, granularity)?;
                Ok(extract_edits(src, &tgt))
            })
            .collect(),
    }
}

fn select_reference(
    predicted: &EditSet,
    golds: &[EditSet],
    beta: f64,
) -> Result<(Option<usize>, MatchCounts), MetricsError> {
    if golds.is_empty() {
        let counts = MatchCounts {
            tp: 0,
            fp: predicted.len(),
            fn_: 0,
            n_gold: 0,
        };
        return Ok((None, counts));
    }
    let mut best: Option<(usize, MatchCounts, f64)> = None;
    for (index, gold) in golds.iter().enumerate() {
        let counts = match_edits(predicted, gold)?;
        let f = sentence_f(&counts, beta)?;
        let better = match &best {
            None => true,
            Some((_, _, best_f)) => f > *best_f,
        };
        if better {
            best = Some((index, counts, f));
        }
    }
    let (index, counts, _) = best.expect("at least one reference");
    Ok((Some(index), counts))
}
