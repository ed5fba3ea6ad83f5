//! Zero-shot multiple-choice answering and answer extraction.
//!
//! Completions are parsed by the first rule that fires:
//!
//! 1. the first non-whitespace character is a choice letter followed by the
//!    end of text, a dot or whitespace;
//! 2. `X.` appears in the first line, with `X` a choice letter not preceded by
//!    a letter or digit;
//! 3. a choice's text appears in the completion (case-insensitive); the
//!    earliest occurrence wins, the longer choice on equal positions;
//! 4. otherwise the completion is unparseable.
//!
//! Letters beyond the record's choice count never match.

use serde::{Deserialize, Serialize};

use crate::backends::BackendError;
use crate::dataset::{Label, QuestionRecord};
use crate::generation::{CompletionBackend, SamplingConfig};
use crate::prompt::{build_zero_shot_messages, PromptError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseRule {
    LeadingLetter,
    LetterWithDot,
    ChoiceTextMatch,
    Unparseable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub choice_index: Option<usize>,
    pub raw_completion: String,
    pub parse_rule_fired: ParseRule,
}

/// One persisted zero-shot result.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroShotRow {
    pub question_id: String,
    pub raw_completion: String,
    pub parse_rule: ParseRule,
    pub choice_index: Option<usize>,
}

impl ZeroShotRow {
    pub fn new(question_id: &str, answer: ParsedAnswer) -> Self {
        ZeroShotRow {
            question_id: question_id.into(),
            raw_completion: answer.raw_completion,
            parse_rule: answer.parse_rule_fired,
            choice_index: answer.choice_index,
        }
    }

    pub fn predicted(&self) -> Option<Label> {
        self.choice_index.map(Label::Choice)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ZeroShotError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
}

fn letter_index(c: char, k: usize) -> Option<usize> {
    if c.is_ascii_uppercase() {
        let i = (c as u8 - b'A') as usize;
        (i < k).then_some(i)
    } else {
        None
    }
}

fn leading_letter(completion: &str, k: usize) -> Option<usize> {
    let mut chars = completion.trim_start().chars();
    let i = letter_index(chars.next()?, k)?;
    match chars.next() {
        None | Some('.') => Some(i),
        Some(c) if c.is_whitespace() => Some(i),
        _ => None,
    }
}

fn letter_with_dot(completion: &str, k: usize) -> Option<usize> {
    let first_line = completion.trim_start().lines().next().unwrap_or("");
    let chars: Vec<char> = first_line.chars().collect();
    chars.windows(2).enumerate().find_map(|(pos, w)| {
        let boundary = pos == 0 || !chars[pos - 1].is_alphanumeric();
        if boundary && w[1] == '.' {
            letter_index(w[0], k)
        } else {
            None
        }
    })
}

fn choice_text_match(completion: &str, choices: &[String]) -> Option<usize> {
    let haystack = completion.to_lowercase();
    choices
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.trim().is_empty())
        .filter_map(|(i, c)| haystack.find(&c.to_lowercase()).map(|pos| (pos, std::cmp::Reverse(c.len()), i)))
        .min()
        .map(|(_, _, i)| i)
}

/// Extracts a choice from free text. Total: never fails.
pub fn parse_answer(completion: &str, choices: &[String]) -> ParsedAnswer {
    let k = choices.len();
    let (choice_index, rule) = if let Some(i) = leading_letter(completion, k) {
        (Some(i), ParseRule::LeadingLetter)
    } else if let Some(i) = letter_with_dot(completion, k) {
        (Some(i), ParseRule::LetterWithDot)
    } else if let Some(i) = choice_text_match(completion, choices) {
        (Some(i), ParseRule::ChoiceTextMatch)
    } else {
        (None, ParseRule::Unparseable)
    };
    ParsedAnswer { choice_index, raw_completion: completion.to_string(), parse_rule_fired: rule }
}

/// Poses the zero-shot prompt with greedy decoding and parses the reply.
pub fn answer_zero_shot(record: &QuestionRecord, backend: &dyn CompletionBackend) -> Result<ParsedAnswer, ZeroShotError> {
    let messages = build_zero_shot_messages(record)?;
    let completion = backend
        .complete_messages(&messages, &SamplingConfig::greedy())?
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("empty completion list".into()))?;
    Ok(parse_answer(&completion, &record.choices))
}
