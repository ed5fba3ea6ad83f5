//! Deterministic offline backends.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::BackendError;
use crate::dataset::{render_question_text, Label, QuestionRecord};
use crate::generation::{CompletionBackend, SamplingConfig};
use crate::inference::{AssembledInput, ScorerBackend, Segment};

/// The question plugged into a fact prompt (last `Input:` line), or the
/// `Question:` line of a zero-shot prompt.
pub fn prompt_question(prompt: &str) -> Option<&str> {
    if let Some((_, rest)) = prompt.rsplit_once("Input: ") {
        return Some(rest.split('\n').next().unwrap_or(rest));
    }
    prompt
        .lines()
        .find_map(|l| l.strip_prefix("Question: "))
}

enum Script {
    Sequence(Vec<Vec<String>>),
    Constant(String),
    Keyed(HashMap<String, Vec<String>>),
}

/// Replays canned completions.
pub struct ScriptedCompletion {
    model_id: String,
    script: Script,
    calls: AtomicUsize,
}

impl ScriptedCompletion {
    /// Call `i` returns `responses[i]`; the last response repeats.
    pub fn new(model_id: &str, responses: Vec<Vec<String>>) -> Self {
        assert!(!responses.is_empty());
        Self::with(model_id, Script::Sequence(responses))
    }

    /// Every call returns `n` copies of `text`.
    pub fn constant(model_id: &str, text: &str) -> Self {
        Self::with(model_id, Script::Constant(text.into()))
    }

    /// Looks the prompt's question up in `by_question` and returns the first
    /// `n` completions listed for it.
    pub fn keyed(model_id: &str, by_question: HashMap<String, Vec<String>>) -> Self {
        Self::with(model_id, Script::Keyed(by_question))
    }

    fn with(model_id: &str, script: Script) -> Self {
        ScriptedCompletion { model_id: model_id.into(), script, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for ScriptedCompletion {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<String>, BackendError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.script {
            Script::Sequence(rs) => Ok(rs[call.min(rs.len() - 1)].clone()),
            Script::Constant(text) => Ok(vec![text.clone(); config.n_samples]),
            Script::Keyed(map) => {
                let q = prompt_question(prompt).unwrap_or_default();
                let list = map
                    .get(q)
                    .ok_or_else(|| BackendError::Upstream { status: 404, body: format!("no script for {q:?}") })?;
                if list.len() < config.n_samples {
                    return Err(BackendError::Protocol(format!("script for {q:?} is too short")));
                }
                Ok(list[..config.n_samples].to_vec())
            }
        }
    }
}

/// Always fails with the configured error.
pub struct FailingCompletion {
    model_id: String,
    error: BackendError,
    calls: AtomicUsize,
}

impl FailingCompletion {
    pub fn new(model_id: &str, error: BackendError) -> Self {
        FailingCompletion { model_id: model_id.into(), error, calls: AtomicUsize::new(0) }
    }

    pub fn transport(model_id: &str) -> Self {
        Self::new(model_id, BackendError::Transport("connection refused".into()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for FailingCompletion {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, _: &str, _: &SamplingConfig) -> Result<Vec<String>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(self.error.clone())
    }
}

fn seeded_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

const FACT_SHAPES: [&str; 4] = [
    "{a} is closely related to {b}.",
    "{a} and {b} are often found together with {c}.",
    "People usually associate {a} with {b}.",
    "A {a} can affect {b} and {c}.",
];

/// Produces plausible-looking facts from the words of the question.
///
/// Output depends only on (seed, prompt question, sample position), so runs are
/// reproducible regardless of scheduling. Zero-shot prompts get a letter.
pub struct SyntheticCompletion {
    model_id: String,
    seed: u64,
}

impl SyntheticCompletion {
    pub fn new(seed: u64) -> Self {
        SyntheticCompletion { model_id: format!("synthetic-s{seed}"), seed }
    }
}

impl CompletionBackend for SyntheticCompletion {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<String>, BackendError> {
        let question = prompt_question(prompt).unwrap_or(prompt);
        if let Some(choices) = prompt.lines().find_map(|l| l.strip_prefix("Choices: ")) {
            let k = choices.split("; ").count().max(1);
            let mut rng = seeded_rng(self.seed, &[question.as_bytes()]);
            let letter = (b'A' + rng.gen_range(0..k) as u8) as char;
            return Ok(vec![letter.to_string(); config.n_samples]);
        }
        let words: Vec<String> = question
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.len() > 2)
            .map(str::to_lowercase)
            .collect();
        Ok((0..config.n_samples)
            .map(|i| {
                if words.is_empty() {
                    return "No relevant fact is known.".to_string();
                }
                let mut rng = seeded_rng(self.seed, &[question.as_bytes(), &(i as u64).to_le_bytes()]);
                let shape = FACT_SHAPES.choose(&mut rng).unwrap();
                let mut pick = || words.choose(&mut rng).unwrap().clone();
                let (a, b, c) = (pick(), pick(), pick());
                let mut s = shape.replace("{a}", &a).replace("{b}", &b).replace("{c}", &c);
                s[..1].make_ascii_uppercase();
                s
            })
            .collect())
    }
}

fn segment_text(input: &AssembledInput, pick: fn(&Segment) -> Option<&str>) -> &str {
    input.segments.iter().find_map(pick).unwrap_or("")
}

fn fact_of(input: &AssembledInput) -> &str {
    segment_text(input, |s| match s {
        Segment::Fact { text } => Some(text),
        _ => None,
    })
}

fn question_of(input: &AssembledInput) -> &str {
    segment_text(input, |s| match s {
        Segment::Question { text } => Some(text),
        _ => None,
    })
}

fn choice_of(input: &AssembledInput) -> &str {
    segment_text(input, |s| match s {
        Segment::Choice { text } => Some(text),
        _ => None,
    })
}

/// Same scores for every input.
pub struct ConstantScorer {
    logits: [f64; 2],
    score: f64,
}

impl ConstantScorer {
    pub fn binary(logits: [f64; 2]) -> Self {
        ConstantScorer { logits, score: 0.0 }
    }

    pub fn choice(score: f64) -> Self {
        ConstantScorer { logits: [0.0, 0.0], score }
    }

    pub fn zero() -> Self {
        Self::choice(0.0)
    }
}

impl ScorerBackend for ConstantScorer {
    fn scorer_id(&self) -> &str {
        "constant"
    }

    fn score_binary(&self, _: &AssembledInput) -> Result<[f64; 2], BackendError> {
        Ok(self.logits)
    }

    fn score_choice(&self, _: &AssembledInput) -> Result<f64, BackendError> {
        Ok(self.score)
    }
}

/// Scores a choice by looking its text up in a table; unknown choices score 0.
pub struct TableScorer {
    scores: HashMap<String, f64>,
}

impl TableScorer {
    pub fn new<'a>(entries: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        TableScorer { scores: entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }
}

impl ScorerBackend for TableScorer {
    fn scorer_id(&self) -> &str {
        "table"
    }

    fn score_binary(&self, input: &AssembledInput) -> Result<[f64; 2], BackendError> {
        Ok([0.0, self.scores.get(fact_of(input)).copied().unwrap_or(0.0)])
    }

    fn score_choice(&self, input: &AssembledInput) -> Result<f64, BackendError> {
        Ok(self.scores.get(choice_of(input)).copied().unwrap_or(0.0))
    }
}

fn words(text: &str) -> std::collections::HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const NEGATIONS: [&str; 6] = ["not", "no", "never", "cannot", "false", "none"];

/// Toy reader that trusts the fact.
///
/// A choice scores the number of distinct words it shares with the fact. For
/// assertions the negative logit counts negation words in the fact and the
/// positive logit is fixed at 0.5.
pub struct OverlapScorer;

impl ScorerBackend for OverlapScorer {
    fn scorer_id(&self) -> &str {
        "overlap"
    }

    fn score_binary(&self, input: &AssembledInput) -> Result<[f64; 2], BackendError> {
        let fact = words(fact_of(input));
        let negations = NEGATIONS.iter().filter(|n| fact.contains(**n)).count();
        Ok([negations as f64, 0.5])
    }

    fn score_choice(&self, input: &AssembledInput) -> Result<f64, BackendError> {
        let fact = words(fact_of(input));
        Ok(words(choice_of(input)).intersection(&fact).count() as f64)
    }
}

/// Knows the gold answers; scores 1 for the gold choice and 0 otherwise.
pub struct GoldScorer {
    binary: HashMap<String, bool>,
    choices: HashMap<(String, String), bool>,
}

impl GoldScorer {
    pub fn from_records(records: &[QuestionRecord]) -> Self {
        let mut binary = HashMap::new();
        let mut choices = HashMap::new();
        for r in records {
            let q = render_question_text(r);
            match r.gold {
                Some(Label::Bool(b)) => {
                    binary.insert(q, b);
                }
                Some(Label::Choice(g)) => {
                    for (i, c) in r.choices.iter().enumerate() {
                        let e = choices.entry((q.clone(), c.clone())).or_insert(false);
                        *e |= i == g;
                    }
                }
                None => {}
            }
        }
        GoldScorer { binary, choices }
    }
}

impl ScorerBackend for GoldScorer {
    fn scorer_id(&self) -> &str {
        "gold"
    }

    fn score_binary(&self, input: &AssembledInput) -> Result<[f64; 2], BackendError> {
        match self.binary.get(question_of(input)) {
            Some(true) => Ok([0.0, 1.0]),
            Some(false) => Ok([1.0, 0.0]),
            None => Ok([0.0, 0.0]),
        }
    }

    fn score_choice(&self, input: &AssembledInput) -> Result<f64, BackendError> {
        let key = (question_of(input).to_string(), choice_of(input).to_string());
        Ok(if self.choices.get(&key).copied().unwrap_or(false) { 1.0 } else { 0.0 })
    }
}
