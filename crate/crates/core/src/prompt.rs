//! Few-shot fact-generation prompt and zero-shot multiple-choice prompts.
//!
//! The fact prompt is laid out as
//!
//! ```text
//! {head}
//!
//! Input: {demo input}
//! Fact: {demo fact}
//!
//! ... (one block per demonstration)
//!
//! {tail}
//!
//! Input: {question}
//! Fact:
//! ```
//!
//! with exactly one blank line between parts, LF line endings and no trailing
//! whitespace after the final cue.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{render_question_text, QuestionRecord};

const DEFAULT_HEAD: &str = include_str!("../resources/template/head.txt");
const DEFAULT_TAIL: &str = include_str!("../resources/template/tail.txt");
const DEFAULT_DEMOS: &str = include_str!("../resources/template/demos.jsonl");

const PART_SEPARATOR: &str = "\n\n";

pub const ZERO_SHOT_INSTRUCTION: &str = "Select the best choice for the given question.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("record {0} is not a multiple-choice question")]
    NotMultipleChoice(String),
    #[error("template resource {path}: {reason}")]
    InvalidTemplate { path: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub source_dataset: String,
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "fact")]
    pub fact_text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub head_instruction: String,
    pub demonstrations: Vec<Demonstration>,
    pub tail_instruction: String,
    pub placeholder_prefix: String,
    pub completion_cue: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub question_id: Option<String>,
    pub template_fingerprint: String,
}

impl RenderedPrompt {
    pub fn with_question_id(mut self, id: impl Into<String>) -> Self {
        self.question_id = Some(id.into());
        self
    }
}

fn normalize_text(raw: &str) -> String {
    raw.replace("\r\n", "\n").trim_end_matches('\n').to_string()
}

impl PromptTemplate {
    /// Assembles a template from resource-file contents.
    pub fn from_parts(head: &str, demos_jsonl: &str, tail: &str) -> Result<Self, PromptError> {
        let invalid = |path: &str, reason: String| PromptError::InvalidTemplate { path: path.into(), reason };
        let mut demonstrations = Vec::new();
        for (i, line) in demos_jsonl.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let demo: Demonstration = serde_json::from_str(line)
                .map_err(|e| invalid("demos.jsonl", format!("line {}: {e}", i + 1)))?;
            if demo.input_text.trim().is_empty() || demo.fact_text.trim().is_empty() {
                return Err(invalid("demos.jsonl", format!("line {}: empty input or fact", i + 1)));
            }
            if demo.input_text.contains('\n') || demo.fact_text.contains('\n') {
                return Err(invalid("demos.jsonl", format!("line {}: multi-line demonstration", i + 1)));
            }
            demonstrations.push(demo);
        }
        let head = normalize_text(head);
        let tail = normalize_text(tail);
        if head.trim().is_empty() {
            return Err(invalid("head.txt", "empty".into()));
        }
        if tail.trim().is_empty() {
            return Err(invalid("tail.txt", "empty".into()));
        }
        Ok(PromptTemplate {
            head_instruction: head,
            demonstrations,
            tail_instruction: tail,
            placeholder_prefix: "Input: ".into(),
            completion_cue: "Fact:".into(),
        })
    }

    /// Loads `head.txt`, `tail.txt` and `demos.jsonl` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| PromptError::InvalidTemplate {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
        };
        Self::from_parts(&read("head.txt")?, &read("demos.jsonl")?, &read("tail.txt")?)
    }

    /// Hex SHA-256 over every constant text, each length-prefixed.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |s: &str| {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        };
        feed(&self.head_instruction);
        for d in &self.demonstrations {
            feed(&d.source_dataset);
            feed(&d.input_text);
            feed(&d.fact_text);
        }
        feed(&self.tail_instruction);
        feed(&self.placeholder_prefix);
        feed(&self.completion_cue);
        hex::encode(h.finalize())
    }

    fn render_pair(&self, input: &str, out: &mut String) {
        out.push_str(&self.placeholder_prefix);
        out.push_str(input);
        out.push('\n');
        out.push_str(&self.completion_cue);
    }
}

/// The shipped template: five demonstrations in the order CSQA2 (positive),
/// SIQA, OBQA, CSQA2 (negative), QASC.
pub fn default_template() -> PromptTemplate {
    PromptTemplate::from_parts(DEFAULT_HEAD, DEFAULT_DEMOS, DEFAULT_TAIL).expect("bundled template is valid")
}

/// Plugs `question_text` into the template's placeholder.
///
/// Internal whitespace runs (including line breaks) in the question collapse to
/// single spaces so the question cannot break the prompt's block structure.
pub fn build_fact_prompt(question_text: &str, template: &PromptTemplate) -> Result<RenderedPrompt, PromptError> {
    let question = question_text.split_whitespace().collect::<Vec<_>>().join(" ");
    if question.is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    let mut text = String::with_capacity(2048);
    text.push_str(&template.head_instruction);
    for demo in &template.demonstrations {
        text.push_str(PART_SEPARATOR);
        template.render_pair(&demo.input_text, &mut text);
        text.push(' ');
        text.push_str(&demo.fact_text);
    }
    text.push_str(PART_SEPARATOR);
    text.push_str(&template.tail_instruction);
    text.push_str(PART_SEPARATOR);
    template.render_pair(&question, &mut text);
    Ok(RenderedPrompt {
        text,
        question_id: None,
        template_fingerprint: template.fingerprint(),
    })
}

pub fn build_fact_prompt_for(record: &QuestionRecord, template: &PromptTemplate) -> Result<RenderedPrompt, PromptError> {
    Ok(build_fact_prompt(&render_question_text(record), template)?.with_question_id(record.id.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

fn choice_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// Role-tagged zero-shot prompt: instruction as system, question and choices
/// as user, and the `Answer:` cue as a trailing assistant turn.
pub fn build_zero_shot_messages(record: &QuestionRecord) -> Result<Vec<ChatMessage>, PromptError> {
    if record.style.is_binary() || record.choices.len() < 2 {
        return Err(PromptError::NotMultipleChoice(record.id.clone()));
    }
    if record.choices.len() > 26 {
        return Err(PromptError::NotMultipleChoice(record.id.clone()));
    }
    let choices = record
        .choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", choice_letter(i), c))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(vec![
        ChatMessage { role: Role::System, content: ZERO_SHOT_INSTRUCTION.into() },
        ChatMessage {
            role: Role::User,
            content: format!("Question: {}\nChoices: {}", render_question_text(record), choices),
        },
        ChatMessage { role: Role::Assistant, content: "Answer:".into() },
    ])
}

/// Flattens role-tagged messages for single-text completion backends.
pub fn flatten_messages(messages: &[ChatMessage]) -> String {
    messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
}

pub fn build_zero_shot_prompt(record: &QuestionRecord) -> Result<String, PromptError> {
    Ok(flatten_messages(&build_zero_shot_messages(record)?))
}
