//! Question records for the four supported question styles, and the canonical
//! JSONL dataset format.
//!
//! One record per line:
//!
//! ```text
//! {"id":"c1","question":"...","context":"...","choices":["..."],"answer":true}
//! ```
//!
//! `context` is only present for question-with-context datasets, `choices` is
//! absent for assertion judgments, and `answer` is optional so unlabeled splits
//! can flow through the pipeline.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line_no}: {reason}")]
    MalformedRecord { line_no: usize, reason: String },
    #[error("record {0} contradicts the dataset's expected choice count")]
    ChoiceCountMismatch(String),
    #[error("duplicate record id {0}")]
    DuplicateId(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionStyle {
    /// True/false statements (CSQA2).
    AssertionJudgment,
    /// Plain multiple-choice questions (OBQA).
    RegularQuestion,
    /// Incomplete sentence stems (QASC).
    SentenceCompletion,
    /// A situation followed by a question about it (SIQA).
    QuestionWithContext,
}

impl QuestionStyle {
    pub fn is_binary(self) -> bool {
        matches!(self, QuestionStyle::AssertionJudgment)
    }
}

impl fmt::Display for QuestionStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            QuestionStyle::AssertionJudgment => "assertion_judgment",
            QuestionStyle::RegularQuestion => "regular_question",
            QuestionStyle::SentenceCompletion => "sentence_completion",
            QuestionStyle::QuestionWithContext => "question_with_context",
        };
        f.write_str(s)
    }
}

/// A gold or predicted answer.
///
/// Serialized untagged: booleans for assertion judgments, integers for choice
/// indices. `true` means the assertion holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Bool(bool),
    Choice(usize),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Bool(b) => write!(f, "{b}"),
            Label::Choice(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuestionRecord {
    pub id: String,
    pub style: QuestionStyle,
    pub question_text: String,
    pub context: Option<String>,
    pub choices: Vec<String>,
    pub gold: Option<Label>,
}

impl QuestionRecord {
    pub fn choice_count(&self) -> usize {
        self.choices.len()
    }

    /// Checks the style-dependent shape of the record.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.question_text.trim().is_empty() {
            return Err(format!("record {} has an empty question", self.id));
        }
        match (self.style, &self.context) {
            (QuestionStyle::QuestionWithContext, None) => {
                return Err(format!("record {} is missing its context", self.id))
            }
            (QuestionStyle::QuestionWithContext, Some(_)) | (_, None) => {}
            (style, Some(_)) => {
                return Err(format!("record {} carries a context but style is {style}", self.id))
            }
        }
        if self.style.is_binary() {
            if !self.choices.is_empty() {
                return Err(format!("assertion record {} must not have choices", self.id));
            }
            if let Some(Label::Choice(_)) = self.gold {
                return Err(format!("assertion record {} needs a boolean answer", self.id));
            }
        } else {
            if self.choices.is_empty() {
                return Err(format!("record {} has no choices", self.id));
            }
            match self.gold {
                Some(Label::Bool(_)) => {
                    return Err(format!("record {} needs an integer answer", self.id))
                }
                Some(Label::Choice(i)) if i >= self.choices.len() => {
                    return Err(format!(
                        "record {} answer {i} is out of range for {} choices",
                        self.id,
                        self.choices.len()
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// What a dataset file is expected to contain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub style: QuestionStyle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_choice_count: Option<usize>,
}

impl DatasetDescriptor {
    pub fn new(name: impl Into<String>, style: QuestionStyle, expected_choice_count: Option<usize>) -> Self {
        Self { name: name.into(), style, expected_choice_count }
    }

    pub fn csqa2() -> Self {
        Self::new("CSQA2", QuestionStyle::AssertionJudgment, None)
    }

    pub fn obqa() -> Self {
        Self::new("OBQA", QuestionStyle::RegularQuestion, Some(4))
    }

    pub fn qasc() -> Self {
        Self::new("QASC", QuestionStyle::SentenceCompletion, Some(8))
    }

    pub fn siqa() -> Self {
        Self::new("SIQA", QuestionStyle::QuestionWithContext, Some(3))
    }

    /// Looks up one of the four built-in descriptors by case-insensitive name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "csqa2" => Some(Self::csqa2()),
            "obqa" => Some(Self::obqa()),
            "qasc" => Some(Self::qasc()),
            "siqa" => Some(Self::siqa()),
            _ => None,
        }
    }
}

/// On-disk shape of one canonical record.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    choices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<Label>,
}

/// Parses canonical JSONL text. Blank lines are skipped; line numbers in errors
/// are 1-based positions in the text.
pub fn parse_dataset(text: &str, descriptor: &DatasetDescriptor) -> Result<Vec<QuestionRecord>, DatasetError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(line)
            .map_err(|e| DatasetError::MalformedRecord { line_no, reason: e.to_string() })?;
        let record = QuestionRecord {
            id: raw.id,
            style: descriptor.style,
            question_text: raw.question,
            context: raw.context,
            choices: raw.choices,
            gold: raw.answer,
        };
        record
            .validate()
            .map_err(|reason| DatasetError::MalformedRecord { line_no, reason })?;
        if let Some(k) = descriptor.expected_choice_count {
            if record.choices.len() != k {
                return Err(DatasetError::ChoiceCountMismatch(record.id));
            }
        }
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: &Path, descriptor: &DatasetDescriptor) -> Result<Vec<QuestionRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, descriptor)
}

pub fn dataset_to_jsonl(records: &[QuestionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = RecordLine {
            id: r.id.clone(),
            question: r.question_text.clone(),
            context: r.context.clone(),
            choices: r.choices.clone(),
            answer: r.gold,
        };
        out.push_str(&serde_json::to_string(&line).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, records: &[QuestionRecord]) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.display().to_string(), source };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(dataset_to_jsonl(records).as_bytes()).map_err(io_err)
}

/// The question string substituted into prompts and inference inputs.
///
/// Context and question are joined by a single space; an empty context is
/// dropped.
pub fn render_question_text(record: &QuestionRecord) -> String {
    match (&record.style, &record.context) {
        (QuestionStyle::QuestionWithContext, Some(ctx)) if !ctx.trim().is_empty() => {
            format!("{} {}", ctx, record.question_text)
        }
        _ => record.question_text.clone(),
    }
}
