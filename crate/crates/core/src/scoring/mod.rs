//! Answer judging and the weighted F-measure.
//!
//! Every `(receipt, category)` pair gets exactly one judgement:
//!
//! | answer      | truth empty | truth has a match | truth, no match |
//! |-------------|-------------|-------------------|-----------------|
//! | `None`      | TP          | FN                | FN              |
//! | surface form| FP          | TP                | FP              |
//!
//! Matching is done on [`normalize`]d strings against every ground-truth
//! candidate. Per category, `F_β = (1+β²)·P·R / (β²·P + R)` with β = 0.5, and
//! `F_final` is the weighted mean of the six `F_β` values.

mod normalize;
mod report;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Answer, Corpus, NECategory, Split};

pub use normalize::{fold_width, normalize, NormalizeOptions};
pub use report::{comparison_csv, comparison_markdown, percent, report_csv, report_markdown};

/// Scores within this distance count as tied during configuration selection.
pub const TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("expected one score per category, {0} is missing")]
    MissingCategory(NECategory),
    #[error("category {0} is scored twice")]
    DuplicateCategory(NECategory),
    #[error("invalid scoring config: {0}")]
    InvalidConfig(String),
    #[error("predictions are missing {} pair(s): {}", .0.len(), format_pairs(.0))]
    MissingPredictions(Vec<(String, NECategory)>),
    #[error("duplicate prediction for receipt `{0}` ({1})")]
    DuplicatePrediction(String, NECategory),
    #[error("prediction for receipt `{0}`, which is not in the corpus")]
    UnknownReceipt(String),
    #[error("no reports to select from")]
    NoReports,
    #[error(
        "report `{config_id}` is on the {split} split; selection uses validation reports only"
    )]
    NotValidation { config_id: String, split: Split },
    #[error("predictions line {line}: {message}")]
    PredictionParse { line: usize, message: String },
}

fn format_pairs(pairs: &[(String, NECategory)]) -> String {
    pairs
        .iter()
        .map(|(id, cat)| format!("{id}/{cat}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Judgement {
    TP,
    FP,
    FN,
}

/// One extraction result, as produced by a backend or tagger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub receipt_id: String,
    pub category: NECategory,
    pub answer: Answer,
    pub terminated: bool,
    #[serde(default)]
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub beta: f64,
    /// Per-category weights in table order.
    pub weights: [f64; 6],
    pub normalize: NormalizeOptions,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            weights: [1.0; 6],
            normalize: NormalizeOptions::default(),
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(ScoringError::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ScoringError::InvalidConfig(
                "weights must be non-negative".into(),
            ));
        }
        if self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(ScoringError::InvalidConfig(
                "weights must not all be zero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: NECategory,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
}

/// Identifies the run a report belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_id: String,
    pub split: Option<Split>,
    /// Training iterations of the scored checkpoint, used to break ties.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    #[serde(flatten)]
    pub meta: ReportMeta,
    /// Table order.
    pub per_category: Vec<CategoryScore>,
    pub f_final: f64,
}

impl ScoreReport {
    pub fn category(&self, cat: NECategory) -> &CategoryScore {
        &self.per_category[cat.index()]
    }
}

/// One JSON object per line, in the given order.
pub fn predictions_to_jsonl(predictions: &[Prediction]) -> String {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

/// Parses [`predictions_to_jsonl`] output. Blank lines are skipped.
pub fn predictions_from_jsonl(input: &str) -> Result<Vec<Prediction>, ScoringError> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ScoringError::PredictionParse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Judges one answer against the ground-truth candidates of its category.
pub fn judge(
    answer: &Answer,
    truth: &[String],
    cat: NECategory,
    opts: NormalizeOptions,
) -> Judgement {
    match answer {
        Answer::None if truth.is_empty() => Judgement::TP,
        Answer::None => Judgement::FN,
        Answer::Value(_) if truth.is_empty() => Judgement::FP,
        Answer::Value(v) if v.is_empty() => Judgement::FP,
        Answer::Value(v) => {
            let hyp = normalize(v, cat, opts);
            if truth.iter().any(|t| normalize(t, cat, opts) == hyp) {
                Judgement::TP
            } else {
                Judgement::FP
            }
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(1+β²)·P·R / (β²·P + R)`, or 0 when the denominator vanishes.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

pub fn score_category(
    cat: NECategory,
    judgements: &[Judgement],
    cfg: &ScoringConfig,
) -> CategoryScore {
    let count = |j| judgements.iter().filter(|&&x| x == j).count() as u64;
    score_counts(
        cat,
        count(Judgement::TP),
        count(Judgement::FP),
        count(Judgement::FN),
        cfg,
    )
}

/// [`score_category`] from pre-tallied counts.
pub fn score_counts(
    cat: NECategory,
    tp: u64,
    fp: u64,
    fn_: u64,
    cfg: &ScoringConfig,
) -> CategoryScore {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    CategoryScore {
        category: cat,
        tp,
        fp,
        fn_,
        precision,
        recall,
        f_beta: f_beta(precision, recall, cfg.beta),
    }
}

/// Combines six category scores into a report: `Σ wᵢ·Fᵢ / Σ wᵢ`.
pub fn aggregate(
    per_category: &[CategoryScore],
    cfg: &ScoringConfig,
    meta: ReportMeta,
) -> Result<ScoreReport, ScoringError> {
    cfg.validate()?;
    let mut slots: [Option<&CategoryScore>; 6] = [None; 6];
    for score in per_category {
        let slot = &mut slots[score.category.index()];
        if slot.is_some() {
            return Err(ScoringError::DuplicateCategory(score.category));
        }
        *slot = Some(score);
    }
    let mut ordered = Vec::with_capacity(6);
    for cat in NECategory::ALL {
        ordered.push(
            slots[cat.index()]
                .ok_or(ScoringError::MissingCategory(cat))?
                .clone(),
        );
    }
    let weighted: f64 = ordered
        .iter()
        .zip(cfg.weights)
        .map(|(s, w)| w * s.f_beta)
        .sum();
    let f_final = weighted / cfg.weights.iter().sum::<f64>();
    Ok(ScoreReport {
        meta,
        per_category: ordered,
        f_final,
    })
}

/// Judges every `(receipt, category)` pair of `corpus` and aggregates.
///
/// Predictions must cover every pair exactly once.
pub fn score_predictions(
    corpus: &Corpus,
    predictions: &[Prediction],
    cfg: &ScoringConfig,
    meta: ReportMeta,
) -> Result<ScoreReport, ScoringError> {
    cfg.validate()?;
    let known: HashSet<&str> = corpus.records.iter().map(|r| r.id.as_str()).collect();
    let mut by_key: HashMap<(&str, NECategory), &Prediction> = HashMap::new();
    for p in predictions {
        if !known.contains(p.receipt_id.as_str()) {
            return Err(ScoringError::UnknownReceipt(p.receipt_id.clone()));
        }
        if by_key
            .insert((p.receipt_id.as_str(), p.category), p)
            .is_some()
        {
            return Err(ScoringError::DuplicatePrediction(
                p.receipt_id.clone(),
                p.category,
            ));
        }
    }

    let mut missing = Vec::new();
    let mut judgements: [Vec<Judgement>; 6] = Default::default();
    for record in &corpus.records {
        for cat in NECategory::ALL {
            match by_key.get(&(record.id.as_str(), cat)) {
                Some(p) => judgements[cat.index()].push(judge(
                    &p.answer,
                    record.truth.get(cat),
                    cat,
                    cfg.normalize,
                )),
                None => missing.push((record.id.clone(), cat)),
            }
        }
    }
    if !missing.is_empty() {
        return Err(ScoringError::MissingPredictions(missing));
    }
    let scores: Vec<CategoryScore> = NECategory::ALL
        .into_iter()
        .map(|cat| score_category(cat, &judgements[cat.index()], cfg))
        .collect();
    let meta = ReportMeta {
        split: meta.split.or(Some(corpus.split)),
        ..meta
    };
    aggregate(&scores, cfg, meta)
}

/// Picks the validation report with the highest `F_final`.
///
/// Ties (within [`TIE_EPSILON`]) go to the fewest training iterations, with
/// unknown iteration counts last, then to the smallest config id.
pub fn select_best_config(reports: &[ScoreReport]) -> Result<&ScoreReport, ScoringError> {
    for r in reports {
        if r.meta.split != Some(Split::Validation) {
            return Err(ScoringError::NotValidation {
                config_id: r.meta.config_id.clone(),
                split: r.meta.split.unwrap_or(Split::Test),
            });
        }
    }
    let best = reports
        .iter()
        .map(|r| r.f_final)
        .fold(f64::NEG_INFINITY, f64::max);
    reports
        .iter()
        .filter(|r| r.f_final >= best - TIE_EPSILON)
        .min_by(|a, b| {
            let iters = |r: &ScoreReport| r.meta.iterations.unwrap_or(u64::MAX);
            iters(a)
                .cmp(&iters(b))
                .then_with(|| a.meta.config_id.cmp(&b.meta.config_id))
        })
        .ok_or(ScoringError::NoReports)
}
