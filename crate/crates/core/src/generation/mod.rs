//! Samples candidate facts from a completion backend.

use std::thread;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::BackendError;
use crate::batch::map_bounded;
use crate::dataset::QuestionRecord;
use crate::prompt::{build_fact_prompt_for, flatten_messages, ChatMessage, PromptError, PromptTemplate};

mod cache;

pub use cache::{CacheKey, FactCache};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("backend failure: {0}")]
    BackendFailure(BackendError),
    #[error("retry budget exhausted without any usable completion")]
    AllSamplesEmpty,
    #[error("retry budget exhausted with {got} of {wanted} usable completions")]
    IncompleteSamples { got: usize, wanted: usize },
    #[error("fact cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error("no records to generate for")]
    EmptyBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub max_output_words: usize,
    pub stop_markers: Vec<String>,
}

pub fn default_stop_markers() -> Vec<String> {
    vec!["\n\n".into(), "\nInput:".into()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Large generators: three samples per question.
    Large,
    /// Smaller generators: five samples per question.
    Small,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "large" => Ok(Preset::Large),
            "small" => Ok(Preset::Small),
            other => Err(format!("unknown preset {other:?} (expected large or small)")),
        }
    }
}

impl SamplingConfig {
    pub fn preset(preset: Preset) -> Self {
        let n_samples = match preset {
            Preset::Large => 3,
            Preset::Small => 5,
        };
        SamplingConfig {
            n_samples,
            top_p: 0.5,
            temperature: 0.7,
            max_output_words: 30,
            stop_markers: default_stop_markers(),
        }
    }

    /// Greedy single-sample decoding.
    pub fn greedy() -> Self {
        SamplingConfig { n_samples: 1, top_p: 1.0, temperature: 0.0, ..Self::preset(Preset::Large) }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.n_samples == 0 {
            return Err(GenerationError::InvalidConfig("n_samples must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenerationError::InvalidConfig(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GenerationError::InvalidConfig(format!("temperature {} is negative", self.temperature)));
        }
        if self.max_output_words == 0 {
            return Err(GenerationError::InvalidConfig("max_output_words must be positive".into()));
        }
        Ok(())
    }

    fn with_samples(&self, n: usize) -> Self {
        SamplingConfig { n_samples: n, ..self.clone() }
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self::preset(Preset::Large)
    }
}

/// Hash of the sampling settings plus the template they are used with.
pub fn sampling_fingerprint(config: &SamplingConfig, template_fingerprint: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update([0u8]);
    h.update(template_fingerprint.as_bytes());
    hex::encode(h.finalize())
}

/// A text-completion model.
pub trait CompletionBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Returns exactly `config.n_samples` raw completions, or fails.
    fn complete(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<String>, BackendError>;

    /// Role-tagged variant. Backends without role support receive the
    /// messages' contents joined in order.
    fn complete_messages(&self, messages: &[ChatMessage], config: &SamplingConfig) -> Result<Vec<String>, BackendError> {
        self.complete(&flatten_messages(messages), config)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactCandidate {
    pub question_id: String,
    pub sample_index: usize,
    pub text: String,
    pub model_id: String,
    pub sampling_fingerprint: String,
    /// Set when the fact exceeds the requested word budget.
    #[serde(default)]
    pub over_length: bool,
}

/// Cleans one raw completion: cut at the earliest stop marker, drop an echoed
/// `Fact:` cue and collapse whitespace to a single line.
pub fn clean_completion(raw: &str, stop_markers: &[String]) -> String {
    let s = raw.trim_start();
    let cut = stop_markers
        .iter()
        .filter(|m| !m.is_empty())
        .filter_map(|m| s.find(m.as_str()))
        .min()
        .unwrap_or(s.len());
    let s = s[..cut].trim_start();
    let s = s.strip_prefix("Fact:").unwrap_or(s);
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    /// Total backend calls allowed per record, resamples included.
    pub max_attempts: usize,
    /// Delay before the first retry after a transport error; doubles after
    /// each further error.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: usize) -> Self {
        RetryPolicy { max_attempts, base_delay: Duration::ZERO }
    }
}

pub fn sample_facts(
    record: &QuestionRecord,
    template: &PromptTemplate,
    config: &SamplingConfig,
    backend: &dyn CompletionBackend,
    retry: &RetryPolicy,
) -> Result<Vec<FactCandidate>, GenerationError> {
    config.validate()?;
    let prompt = build_fact_prompt_for(record, template)?;
    let fingerprint = sampling_fingerprint(config, &prompt.template_fingerprint);
    let wanted = config.n_samples;

    let mut usable: Vec<String> = Vec::with_capacity(wanted);
    let mut last_error: Option<BackendError> = None;
    let mut consecutive_errors = 0u32;
    let mut attempts = 0;
    while usable.len() < wanted && attempts < retry.max_attempts {
        if consecutive_errors > 0 && !retry.base_delay.is_zero() {
            thread::sleep(retry.base_delay * 2u32.pow(consecutive_errors - 1));
        }
        attempts += 1;
        let missing = wanted - usable.len();
        match backend.complete(&prompt.text, &config.with_samples(missing)) {
            Ok(raw) if raw.len() != missing => {
                return Err(GenerationError::BackendFailure(BackendError::Protocol(format!(
                    "asked for {missing} completions, got {}",
                    raw.len()
                ))));
            }
            Ok(raw) => {
                last_error = None;
                consecutive_errors = 0;
                usable.extend(
                    raw.iter()
                        .map(|r| clean_completion(r, &config.stop_markers))
                        .filter(|t| !t.is_empty()),
                );
            }
            Err(e) if e.is_transient() => {
                log::debug!("completion attempt {attempts} for {} failed: {e}", record.id);
                consecutive_errors += 1;
                last_error = Some(e);
            }
            Err(e) => return Err(GenerationError::BackendFailure(e)),
        }
    }

    if usable.len() < wanted {
        return Err(match last_error {
            Some(e) => GenerationError::BackendFailure(e),
            None if usable.is_empty() => GenerationError::AllSamplesEmpty,
            None => GenerationError::IncompleteSamples { got: usable.len(), wanted },
        });
    }

    Ok(usable
        .into_iter()
        .enumerate()
        .map(|(sample_index, text)| {
            let over_length = text.split_whitespace().count() > config.max_output_words;
            if over_length {
                log::warn!(
                    "fact {sample_index} for {} exceeds {} words",
                    record.id,
                    config.max_output_words
                );
            }
            FactCandidate {
                question_id: record.id.clone(),
                sample_index,
                text,
                model_id: backend.model_id().to_string(),
                sampling_fingerprint: fingerprint.clone(),
                over_length,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub question_id: String,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct BatchReport {
    /// Successful records, in input order.
    pub facts: IndexMap<String, Vec<FactCandidate>>,
    /// Failed records, in input order.
    pub failures: Vec<RecordFailure>,
    pub cache_hits: usize,
}

#[derive(Clone, Debug)]
pub struct BatchOptions {
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions { max_in_flight: 4, retry: RetryPolicy::default() }
    }
}

enum Outcome {
    Hit(Vec<FactCandidate>),
    Sampled(Vec<FactCandidate>),
}

/// Generates facts for every record, reusing cached results.
///
/// At most `max_in_flight` records are processed at once and each worker has
/// at most one backend call outstanding. Failures are collected per record.
pub fn generate_batch(
    records: &[QuestionRecord],
    template: &PromptTemplate,
    config: &SamplingConfig,
    backend: &dyn CompletionBackend,
    cache: &FactCache,
    options: &BatchOptions,
) -> Result<BatchReport, GenerationError> {
    if records.is_empty() {
        return Err(GenerationError::EmptyBatch);
    }
    config.validate()?;
    let fingerprint = sampling_fingerprint(config, &template.fingerprint());

    let process = |record: &QuestionRecord| -> Result<Outcome, GenerationError> {
        let key = CacheKey {
            question_id: record.id.clone(),
            model_id: backend.model_id().to_string(),
            sampling_fingerprint: fingerprint.clone(),
        };
        if let Some(hit) = cache.get(&key)? {
            return Ok(Outcome::Hit(hit));
        }
        let facts = sample_facts(record, template, config, backend, &options.retry)?;
        cache.put(&key, &facts)?;
        Ok(Outcome::Sampled(facts))
    };

    let outcomes = map_bounded(records, options.max_in_flight, process);

    let mut report = BatchReport::default();
    for (record, outcome) in records.iter().zip(outcomes) {
        match outcome {
            Ok(Outcome::Hit(facts)) => {
                report.cache_hits += 1;
                report.facts.insert(record.id.clone(), facts);
            }
            Ok(Outcome::Sampled(facts)) => {
                report.facts.insert(record.id.clone(), facts);
            }
            Err(e) => report.failures.push(RecordFailure { question_id: record.id.clone(), error: e.to_string() }),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{FailingCompletion, ScriptedCompletion};
    use crate::dataset::{Label, QuestionStyle};
    use crate::prompt::default_template;

    fn record(id: &str) -> QuestionRecord {
        QuestionRecord {
            id: id.into(),
            style: QuestionStyle::AssertionJudgment,
            question_text: format!("Question {id}?"),
            context: None,
            choices: vec![],
            gold: Some(Label::Bool(true)),
        }
    }

    #[test]
    fn cleans_raw_completions() {
        let stops = vec!["\n\n".to_string()];
        let raw = ["Hens lay eggs without roosters.", "Fact: Eggs need no male.", "A\n\nB"];
        let cleaned: Vec<_> = raw.iter().map(|r| clean_completion(r, &stops)).collect();
        assert_eq!(cleaned, ["Hens lay eggs without roosters.", "Eggs need no male.", "A"]);
    }

    #[test]
    fn cleaning_with_default_stops() {
        let stops = default_stop_markers();
        assert_eq!(clean_completion(" Birds fly.\nInput: next", &stops), "Birds fly.");
        assert_eq!(clean_completion("  one\n two  ", &stops), "one two");
        assert_eq!(clean_completion("\n\n", &stops), "");
    }

    #[test]
    fn sample_facts_applies_post_processing() {
        let backend = ScriptedCompletion::new(
            "m",
            vec![vec![
                "Hens lay eggs without roosters.".into(),
                "Fact: Eggs need no male.".into(),
                "A\n\nB".into(),
            ]],
        );
        let cfg = SamplingConfig { stop_markers: vec!["\n\n".into()], ..SamplingConfig::preset(Preset::Large) };
        let facts = sample_facts(&record("c1"), &default_template(), &cfg, &backend, &RetryPolicy::no_delay(3)).unwrap();
        let texts: Vec<_> = facts.iter().map(|f| f.text.as_str()).collect();
        assert_eq!(texts, ["Hens lay eggs without roosters.", "Eggs need no male.", "A"]);
        assert_eq!(facts.iter().map(|f| f.sample_index).collect::<Vec<_>>(), [0, 1, 2]);
        assert!(facts.iter().all(|f| f.model_id == "m" && f.question_id == "c1"));
    }

    #[test]
    fn single_sample() {
        let backend = ScriptedCompletion::constant("m", "Hens lay eggs.");
        let cfg = SamplingConfig { n_samples: 1, ..Default::default() };
        let facts = sample_facts(&record("x"), &default_template(), &cfg, &backend, &RetryPolicy::no_delay(3)).unwrap();
        assert_eq!(facts.len(), 1);
        assert_eq!(facts[0].sample_index, 0);
    }

    #[test]
    fn failing_backend_exhausts_retries() {
        let backend = FailingCompletion::transport("m");
        let err = sample_facts(&record("x"), &default_template(), &SamplingConfig::default(), &backend, &RetryPolicy::no_delay(3))
            .unwrap_err();
        assert!(matches!(err, GenerationError::BackendFailure(BackendError::Transport(_))));
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn non_transient_errors_fail_fast() {
        let backend = FailingCompletion::new("m", BackendError::Upstream { status: 401, body: "no".into() });
        assert!(sample_facts(&record("x"), &default_template(), &SamplingConfig::default(), &backend, &RetryPolicy::no_delay(3)).is_err());
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn empty_completions_are_resampled() {
        let backend = ScriptedCompletion::new(
            "m",
            vec![
                vec!["one".into(), "".into(), "Fact:".into()],
                vec!["two".into(), "   ".into()],
                vec!["three".into()],
            ],
        );
        let facts = sample_facts(&record("x"), &default_template(), &SamplingConfig::default(), &backend, &RetryPolicy::no_delay(3)).unwrap();
        let texts: Vec<_> = facts.iter().map(|f| f.text.as_str()).collect();
        assert_eq!(texts, ["one", "two", "three"]);
    }

    #[test]
    fn empty_budget_exhaustion() {
        let backend = ScriptedCompletion::constant("m", "\n\n");
        let err = sample_facts(&record("x"), &default_template(), &SamplingConfig::default(), &backend, &RetryPolicy::no_delay(3)).unwrap_err();
        assert!(matches!(err, GenerationError::AllSamplesEmpty));
        let backend = ScriptedCompletion::new("m", vec![vec!["ok".into(), "".into(), "".into()], vec!["".into(), "".into()]]);
        let err = sample_facts(&record("x"), &default_template(), &SamplingConfig::default(), &backend, &RetryPolicy::no_delay(2)).unwrap_err();
        assert!(matches!(err, GenerationError::IncompleteSamples { got: 1, wanted: 3 }));
    }

    #[test]
    fn over_length_flagged_not_truncated() {
        let long = (0..40).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let backend = ScriptedCompletion::constant("m", &long);
        let cfg = SamplingConfig { n_samples: 1, ..Default::default() };
        let facts = sample_facts(&record("x"), &default_template(), &cfg, &backend, &RetryPolicy::no_delay(3)).unwrap();
        assert!(facts[0].over_length);
        assert_eq!(facts[0].text, long);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SamplingConfig { n_samples: 0, ..Default::default() },
            SamplingConfig { top_p: 0.0, ..Default::default() },
            SamplingConfig { top_p: 1.5, ..Default::default() },
            SamplingConfig { temperature: -0.1, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(GenerationError::InvalidConfig(_))));
        }
    }

    #[test]
    fn presets() {
        let large = SamplingConfig::preset(Preset::Large);
        let small = SamplingConfig::preset(Preset::Small);
        assert_eq!((large.n_samples, large.top_p, large.temperature), (3, 0.5, 0.7));
        assert_eq!(small.n_samples, 5);
        assert_eq!(large.max_output_words, 30);
    }

    #[test]
    fn fingerprint_depends_on_config_and_template() {
        let a = sampling_fingerprint(&SamplingConfig::default(), "t");
        assert_eq!(a, sampling_fingerprint(&SamplingConfig::default(), "t"));
        assert_ne!(a, sampling_fingerprint(&SamplingConfig::preset(Preset::Small), "t"));
        assert_ne!(a, sampling_fingerprint(&SamplingConfig::default(), "u"));
    }
}
