//! Accuracy, dev/test gap, fact-quality statistics and run reports.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Label, QuestionRecord};
use crate::inference::Prediction;
use crate::zero_shot::ZeroShotRow;

mod annotate;
mod quality;

pub use annotate::{annotate_facts, read_labels, AnnotationItem, LabelRow, SessionSummary};
pub use quality::{compare_with_reported, quality_stats, DatasetQuality, Discrepancy, QualityLabel, QualityTable, ReportedCell};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no gold label for {0}")]
    MissingGold(String),
    #[error("question {0} is predicted more than once")]
    DuplicatePrediction(String),
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("annotation session interrupted after {labeled} new labels")]
    InterruptedSession { labeled: usize },
    #[error("labels file: {0}")]
    Io(#[from] std::io::Error),
    #[error("labels file line {line_no}: {reason}")]
    MalformedLabel { line_no: usize, reason: String },
}

/// Anything carrying a question id and (possibly missing) predicted label.
pub trait Graded {
    fn question_id(&self) -> &str;
    /// `None` counts as incorrect.
    fn predicted_label(&self) -> Option<Label>;
}

impl Graded for Prediction {
    fn question_id(&self) -> &str {
        &self.question_id
    }

    fn predicted_label(&self) -> Option<Label> {
        Some(self.predicted)
    }
}

impl Graded for ZeroShotRow {
    fn question_id(&self) -> &str {
        &self.question_id
    }

    fn predicted_label(&self) -> Option<Label> {
        self.predicted()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub question_id: String,
    pub predicted: Option<Label>,
    pub gold: Label,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub n_total: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    /// Dev minus test accuracy, in points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    /// Sorted by question id.
    pub rows: Vec<PredictionRow>,
}

impl EvalReport {
    pub fn accuracy_percent(&self) -> f64 {
        self.accuracy * 100.0
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset:  {}", self.dataset);
        let _ = writeln!(out, "correct:  {}/{}", self.n_correct, self.n_total);
        let _ = writeln!(out, "accuracy: {:.4} ({:.1}%)", self.accuracy, self.accuracy_percent());
        if let Some(gap) = self.gap {
            let _ = writeln!(out, "dev-test gap: {gap:.1} points");
        }
        out
    }

    /// Machine-readable summary without per-row detail.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "dataset": self.dataset,
            "n_total": self.n_total,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "accuracy_percent": (self.accuracy_percent() * 10.0).round() / 10.0,
            "gap": self.gap,
        })
    }
}

pub fn gold_labels(records: &[QuestionRecord]) -> HashMap<String, Label> {
    records.iter().filter_map(|r| r.gold.map(|g| (r.id.clone(), g))).collect()
}

/// Fraction of predictions matching their gold label.
pub fn accuracy<G: Graded>(dataset: &str, predictions: &[G], golds: &HashMap<String, Label>) -> Result<EvalReport, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(predictions.len());
    for p in predictions {
        let id = p.question_id();
        if !seen.insert(id) {
            return Err(EvalError::DuplicatePrediction(id.to_string()));
        }
        let gold = *golds.get(id).ok_or_else(|| EvalError::MissingGold(id.to_string()))?;
        let predicted = p.predicted_label();
        rows.push(PredictionRow { question_id: id.to_string(), predicted, gold, correct: predicted == Some(gold) });
    }
    rows.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let n_correct = rows.iter().filter(|r| r.correct).count();
    Ok(EvalReport {
        dataset: dataset.to_string(),
        n_total: rows.len(),
        n_correct,
        accuracy: n_correct as f64 / rows.len() as f64,
        gap: None,
        rows,
    })
}

/// Dev accuracy minus test accuracy, both in percent.
pub fn dev_test_gap(dev_acc: f64, test_acc: f64) -> f64 {
    debug_assert!((0.0..=100.0).contains(&dev_acc) && (0.0..=100.0).contains(&test_acc));
    dev_acc - test_acc
}

/// Rounds to one decimal, the precision accuracies are reported at.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}
