//! Converters from each benchmark's native distribution files into canonical
//! records.
//!
//! - CSQA2: JSONL with `id`, `question`, `answer` ("yes"/"no").
//! - OBQA and QASC: ARC-style JSONL with `id`, `question.stem`,
//!   `question.choices[].{label,text}` and `answerKey`.
//! - SIQA: JSONL with `context`, `question`, `answerA..C`, plus an optional
//!   labels file holding one 1-based answer per line. Ids are synthesized from
//!   line positions.

use std::str::FromStr;

use serde::Deserialize;
use serde_json::Value;

use crate::dataset::{DatasetError, Label, QuestionRecord, QuestionStyle};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NativeFormat {
    Csqa2,
    Obqa,
    Qasc,
    Siqa,
}

impl FromStr for NativeFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csqa2" => Ok(NativeFormat::Csqa2),
            "obqa" => Ok(NativeFormat::Obqa),
            "qasc" => Ok(NativeFormat::Qasc),
            "siqa" => Ok(NativeFormat::Siqa),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

fn malformed(line_no: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::MalformedRecord { line_no, reason: reason.into() }
}

fn non_blank_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Converts native file contents. `labels` is only consulted for SIQA.
pub fn convert(format: NativeFormat, text: &str, labels: Option<&str>) -> Result<Vec<QuestionRecord>, DatasetError> {
    let records = match format {
        NativeFormat::Csqa2 => convert_csqa2(text)?,
        NativeFormat::Obqa => convert_arc_style(text, QuestionStyle::RegularQuestion)?,
        NativeFormat::Qasc => convert_arc_style(text, QuestionStyle::SentenceCompletion)?,
        NativeFormat::Siqa => convert_siqa(text, labels)?,
    };
    Ok(records)
}

fn convert_csqa2(text: &str) -> Result<Vec<QuestionRecord>, DatasetError> {
    #[derive(Deserialize)]
    struct Native {
        id: String,
        question: String,
        #[serde(default)]
        answer: Option<String>,
    }
    non_blank_lines(text)
        .map(|(line_no, line)| {
            let n: Native = serde_json::from_str(line).map_err(|e| malformed(line_no, e.to_string()))?;
            let gold = match n.answer.as_deref().map(str::to_ascii_lowercase).as_deref() {
                None => None,
                Some("yes") | Some("true") => Some(Label::Bool(true)),
                Some("no") | Some("false") => Some(Label::Bool(false)),
                Some(other) => return Err(malformed(line_no, format!("unknown answer {other:?}"))),
            };
            Ok(QuestionRecord {
                id: n.id,
                style: QuestionStyle::AssertionJudgment,
                question_text: n.question,
                context: None,
                choices: Vec::new(),
                gold,
            })
        })
        .collect()
}

fn convert_arc_style(text: &str, style: QuestionStyle) -> Result<Vec<QuestionRecord>, DatasetError> {
    #[derive(Deserialize)]
    struct Choice {
        label: String,
        text: String,
    }
    #[derive(Deserialize)]
    struct Question {
        stem: String,
        choices: Vec<Choice>,
    }
    #[derive(Deserialize)]
    struct Native {
        id: String,
        question: Question,
        #[serde(default, rename = "answerKey")]
        answer_key: Option<String>,
    }
    non_blank_lines(text)
        .map(|(line_no, line)| {
            let n: Native = serde_json::from_str(line).map_err(|e| malformed(line_no, e.to_string()))?;
            let gold = match n.answer_key.filter(|k| !k.is_empty()) {
                None => None,
                Some(key) => {
                    let idx = n
                        .question
                        .choices
                        .iter()
                        .position(|c| c.label == key)
                        .ok_or_else(|| malformed(line_no, format!("answerKey {key:?} matches no choice label")))?;
                    Some(Label::Choice(idx))
                }
            };
            Ok(QuestionRecord {
                id: n.id,
                style,
                question_text: n.question.stem,
                context: None,
                choices: n.question.choices.into_iter().map(|c| c.text).collect(),
                gold,
            })
        })
        .collect()
}

fn convert_siqa(text: &str, labels: Option<&str>) -> Result<Vec<QuestionRecord>, DatasetError> {
    let labels: Option<Vec<&str>> = labels.map(|l| l.lines().map(str::trim).filter(|l| !l.is_empty()).collect());
    let mut out = Vec::new();
    for (pos, (line_no, line)) in non_blank_lines(text).enumerate() {
        let v: Value = serde_json::from_str(line).map_err(|e| malformed(line_no, e.to_string()))?;
        let field = |name: &str| -> Result<String, DatasetError> {
            v.get(name)
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or_else(|| malformed(line_no, format!("missing field {name}")))
        };
        let choices = vec![field("answerA")?, field("answerB")?, field("answerC")?];
        let gold = match &labels {
            None => None,
            Some(ls) => {
                let raw = ls
                    .get(pos)
                    .ok_or_else(|| malformed(line_no, "labels file is shorter than the data file"))?;
                let one_based: usize = raw
                    .parse()
                    .map_err(|_| malformed(line_no, format!("bad label {raw:?}")))?;
                if !(1..=3).contains(&one_based) {
                    return Err(malformed(line_no, format!("label {one_based} out of range")));
                }
                Some(Label::Choice(one_based - 1))
            }
        };
        out.push(QuestionRecord {
            id: format!("siqa-{}", pos + 1),
            style: QuestionStyle::QuestionWithContext,
            question_text: field("question")?,
            context: Some(field("context")?),
            choices,
            gold,
        });
    }
    if let Some(ls) = &labels {
        if ls.len() != out.len() {
            return Err(malformed(out.len() + 1, "labels file is longer than the data file"));
        }
    }
    Ok(out)
}
