//! Fact-integrated answer inference.
//!
//! The selected fact is placed ahead of the question (and, for multiple choice,
//! each candidate answer in turn), handed to a scorer backend, and the scores
//! are normalized with softmax.

use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::dataset::{render_question_text, Label, QuestionRecord};
use crate::generation::FactCandidate;

pub const CLS_MARKER: &str = "[CLS]";
pub const SEP_MARKER: &str = "[SEP]";

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("{0} is empty")]
    EmptyField(&'static str),
    #[error("{0} contains a literal separator marker")]
    ContainsMarker(&'static str),
    #[error("softmax of an empty vector")]
    EmptyInput,
    #[error("non-finite value in softmax input")]
    NonFiniteInput,
    #[error("record {id} has the wrong style for {task} prediction")]
    StyleMismatch { id: String, task: &'static str },
    #[error("scorer failure: {0}")]
    Backend(#[from] BackendError),
}

/// One element of an assembled input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Segment {
    Cls,
    Sep,
    Fact { text: String },
    Question { text: String },
    Choice { text: String },
}

impl Segment {
    fn render(&self) -> &str {
        match self {
            Segment::Cls => CLS_MARKER,
            Segment::Sep => SEP_MARKER,
            Segment::Fact { text } | Segment::Question { text } | Segment::Choice { text } => text,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledInput {
    pub segments: Vec<Segment>,
}

impl AssembledInput {
    /// Canonical rendering: segments joined by single spaces, markers as
    /// `[CLS]` / `[SEP]`.
    pub fn flat_text(&self) -> String {
        self.segments.iter().map(Segment::render).collect::<Vec<_>>().join(" ")
    }

    pub fn sep_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Sep)).count()
    }
}

fn checked(field: &'static str, text: &str) -> Result<String, InferenceError> {
    if text.trim().is_empty() {
        return Err(InferenceError::EmptyField(field));
    }
    if text.contains(CLS_MARKER) || text.contains(SEP_MARKER) {
        return Err(InferenceError::ContainsMarker(field));
    }
    Ok(text.to_string())
}

/// `[CLS] fact [SEP] question [SEP]`
pub fn assemble_binary(fact: &str, question: &str) -> Result<AssembledInput, InferenceError> {
    Ok(AssembledInput {
        segments: vec![
            Segment::Cls,
            Segment::Fact { text: checked("fact", fact)? },
            Segment::Sep,
            Segment::Question { text: checked("question", question)? },
            Segment::Sep,
        ],
    })
}

/// `[CLS] fact [SEP] question [SEP] choice [SEP]`
pub fn assemble_choice(fact: &str, question: &str, choice: &str) -> Result<AssembledInput, InferenceError> {
    Ok(AssembledInput {
        segments: vec![
            Segment::Cls,
            Segment::Fact { text: checked("fact", fact)? },
            Segment::Sep,
            Segment::Question { text: checked("question", question)? },
            Segment::Sep,
            Segment::Choice { text: checked("choice", choice)? },
            Segment::Sep,
        ],
    })
}

/// Largest f64 strictly below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Max-shifted softmax.
///
/// Results are kept strictly inside (0, 1): entries that underflow are raised
/// to `f64::MIN_POSITIVE` and a saturated maximum is lowered to the largest
/// f64 below 1, so every class keeps a finite log-probability.
pub fn softmax(values: &[f64]) -> Result<Vec<f64>, InferenceError> {
    if values.is_empty() {
        return Err(InferenceError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::NonFiniteInput);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    if values.len() == 1 {
        return Ok(vec![1.0]);
    }
    Ok(exps.iter().map(|e| (e / total).clamp(f64::MIN_POSITIVE, BELOW_ONE)).collect())
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if *v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Answer-inference model consuming assembled inputs.
pub trait ScorerBackend: Send + Sync {
    fn scorer_id(&self) -> &str;

    /// Two logits: index 0 negative, index 1 positive.
    fn score_binary(&self, input: &AssembledInput) -> Result<[f64; 2], BackendError>;

    /// Plausibility of the choice in `input`.
    fn score_choice(&self, input: &AssembledInput) -> Result<f64, BackendError>;

    /// Whether `score_*` may be called from several threads at once.
    fn concurrency_safe(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub predicted: Label,
    pub probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_used: Option<FactCandidate>,
}

fn finite(values: &[f64]) -> Result<(), InferenceError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(BackendError::Protocol("scorer returned a non-finite value".into()).into())
    }
}

pub fn predict_binary(
    record: &QuestionRecord,
    fact: &FactCandidate,
    backend: &dyn ScorerBackend,
) -> Result<Prediction, InferenceError> {
    if !record.style.is_binary() {
        return Err(InferenceError::StyleMismatch { id: record.id.clone(), task: "binary" });
    }
    let input = assemble_binary(&fact.text, &render_question_text(record))?;
    let logits = backend.score_binary(&input)?;
    finite(&logits)?;
    let probabilities = softmax(&logits)?;
    let positive = argmax(&probabilities) == Some(1);
    Ok(Prediction {
        question_id: record.id.clone(),
        predicted: Label::Bool(positive),
        probabilities,
        fact_used: Some(fact.clone()),
    })
}

pub fn predict_choice(
    record: &QuestionRecord,
    fact: &FactCandidate,
    backend: &dyn ScorerBackend,
) -> Result<Prediction, InferenceError> {
    if record.style.is_binary() || record.choices.len() < 2 {
        return Err(InferenceError::StyleMismatch { id: record.id.clone(), task: "multiple-choice" });
    }
    let question = render_question_text(record);
    let inputs = record
        .choices
        .iter()
        .map(|c| assemble_choice(&fact.text, &question, c))
        .collect::<Result<Vec<_>, _>>()?;

    let scores: Vec<f64> = if backend.concurrency_safe() {
        thread::scope(|scope| {
            let handles: Vec<_> = inputs.iter().map(|input| scope.spawn(move || backend.score_choice(input))).collect();
            handles.into_iter().map(|h| h.join().expect("scorer thread panicked")).collect::<Result<_, _>>()
        })?
    } else {
        inputs.iter().map(|input| backend.score_choice(input)).collect::<Result<_, _>>()?
    };
    finite(&scores)?;
    let probabilities = softmax(&scores)?;
    let predicted = argmax(&probabilities).expect("at least two choices");
    Ok(Prediction {
        question_id: record.id.clone(),
        predicted: Label::Choice(predicted),
        probabilities,
        fact_used: Some(fact.clone()),
    })
}

/// Dispatches on the record's style.
pub fn predict(record: &QuestionRecord, fact: &FactCandidate, backend: &dyn ScorerBackend) -> Result<Prediction, InferenceError> {
    if record.style.is_binary() {
        predict_binary(record, fact, backend)
    } else {
        predict_choice(record, fact, backend)
    }
}
