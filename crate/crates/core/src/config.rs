//! Run configuration.
//!
//! Loaded from TOML. Relative paths resolve against the config file's
//! directory. The canonical JSON form is what gets hashed into the run
//! directory name and written next to the outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::http::HttpSettings;
use crate::dataset::{DatasetDescriptor, QuestionStyle};
use crate::generation::{default_stop_markers, Preset, RetryPolicy, SamplingConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    /// Defaults to the built-in style for known dataset names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<QuestionStyle>,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_choice_count: Option<usize>,
}

impl DatasetSection {
    pub fn descriptor(&self) -> Result<DatasetDescriptor, ConfigError> {
        let builtin = DatasetDescriptor::builtin(&self.name);
        let style = match (self.style, &builtin) {
            (Some(s), _) => s,
            (None, Some(b)) => b.style,
            (None, None) => {
                return Err(ConfigError::Invalid(format!(
                    "dataset {:?} is not built in, so dataset.style is required",
                    self.name
                )))
            }
        };
        let expected = self.expected_choice_count.or_else(|| builtin.as_ref().and_then(|b| b.expected_choice_count));
        Ok(DatasetDescriptor::new(self.name.clone(), style, expected))
    }
}

/// A preset plus optional per-field overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_words: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_markers: Option<Vec<String>>,
}

impl SamplingSection {
    pub fn resolve(&self) -> SamplingConfig {
        let base = SamplingConfig::preset(self.preset.unwrap_or(Preset::Large));
        SamplingConfig {
            n_samples: self.n_samples.unwrap_or(base.n_samples),
            top_p: self.top_p.unwrap_or(base.top_p),
            temperature: self.temperature.unwrap_or(base.temperature),
            max_output_words: self.max_output_words.unwrap_or(base.max_output_words),
            stop_markers: self.stop_markers.clone().unwrap_or_else(default_stop_markers),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompletionSection {
    /// Offline deterministic generator.
    Synthetic {
        #[serde(default)]
        seed: u64,
    },
    /// Canned completions from a JSON object mapping question text to a list
    /// of completions.
    Scripted { path: PathBuf, model_id: String },
    Http {
        #[serde(flatten)]
        settings: HttpSettings,
        model_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_tokens: Option<u32>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSection {
    /// Offline character-trigram hashing encoder.
    Hashing {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default)]
        seed: u64,
    },
    Http {
        #[serde(flatten)]
        settings: HttpSettings,
    },
}

fn default_dimension() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSection {
    /// Word overlap between fact and choice.
    Overlap,
    /// Reads the dataset's gold labels; for plumbing checks only.
    Gold,
    Http {
        #[serde(flatten)]
        settings: HttpSettings,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Dual-encoder dot-product selection.
    #[default]
    Dpr,
    /// Always the first sample.
    Passthrough,
}

impl std::str::FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dpr" => Ok(SelectionMode::Dpr),
            "passthrough" => Ok(SelectionMode::Passthrough),
            other => Err(format!("unknown selection mode {other:?} (expected dpr or passthrough)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySection {
    pub max_attempts: usize,
    pub base_delay_ms: u64,
}

impl Default for RetrySection {
    fn default() -> Self {
        RetrySection { max_attempts: 3, base_delay_ms: 500 }
    }
}

impl RetrySection {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy { max_attempts: self.max_attempts, base_delay: Duration::from_millis(self.base_delay_ms) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    /// Directory with `head.txt`, `demos.jsonl` and `tail.txt`; the built-in
    /// template when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    #[serde(default)]
    pub sampling: SamplingSection,
    pub completion: CompletionSection,
    pub embedding: EmbeddingSection,
    pub scorer: ScorerSection,
    #[serde(default)]
    pub selection_mode: SelectionMode,
    pub output_dir: PathBuf,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetrySection,
}

fn default_max_in_flight() -> usize {
    4
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), reason: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a TOML file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut config = Self::from_toml(&text, &path.display().to_string())?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        fix(&mut self.output_dir);
        if let Some(t) = self.template_dir.as_mut() {
            fix(t);
        }
        if let CompletionSection::Scripted { path, .. } = &mut self.completion {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.dataset.descriptor()?;
        self.sampling.resolve().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(ConfigError::Invalid("retry.max_attempts must be at least 1".into()));
        }
        if let EmbeddingSection::Hashing { dimension: 0, .. } = self.embedding {
            return Err(ConfigError::Invalid("embedding.dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse { path: "<json>".into(), reason: e.to_string() })
    }

    /// Hex sha256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// `<output_dir>/<dataset>-<first 12 hash chars>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("{}-{}", self.dataset.name.to_lowercase(), &self.hash()[..12]))
    }

    /// Fact cache shared by every run under the same output directory.
    pub fn cache_dir(&self) -> PathBuf {
        self.output_dir.join("cache")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
output_dir = "out"
selection_mode = "passthrough"
max_in_flight = 2
template_dir = "tpl"

[dataset]
name = "OBQA"
path = "data/obqa.jsonl"

[sampling]
preset = "small"
top_p = 0.9

[completion]
kind = "http"
endpoint = "http://localhost:9000/v1"
api_key_env = "GEN_KEY"
model_id = "gen-large"
max_tokens = 64

[embedding]
kind = "hashing"
dimension = 64

[scorer]
kind = "overlap"

[retry]
max_attempts = 5
base_delay_ms = 10
"#;

    #[test]
    fn parses_and_resolves() {
        let mut c = RunConfig::from_toml(SAMPLE, "sample").unwrap();
        c.resolve_paths(Path::new("/base"));
        assert_eq!(c.dataset.path, PathBuf::from("/base/data/obqa.jsonl"));
        assert_eq!(c.template_dir, Some(PathBuf::from("/base/tpl")));
        let s = c.sampling.resolve();
        assert_eq!((s.n_samples, s.top_p, s.temperature), (5, 0.9, 0.7));
        assert_eq!(c.dataset.descriptor().unwrap().expected_choice_count, Some(4));
        assert_eq!(c.selection_mode, SelectionMode::Passthrough);
        assert!(matches!(&c.completion, CompletionSection::Http { settings, .. } if settings.api_key_env.as_deref() == Some("GEN_KEY")));
    }

    #[test]
    fn canonical_round_trip() {
        let c = RunConfig::from_toml(SAMPLE, "sample").unwrap();
        let back = RunConfig::from_json(&c.canonical_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert!(c.run_dir().ends_with(format!("obqa-{}", &c.hash()[..12])));
    }

    #[test]
    fn hash_tracks_changes() {
        let a = RunConfig::from_toml(SAMPLE, "a").unwrap();
        let mut b = a.clone();
        b.selection_mode = SelectionMode::Dpr;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_values() {
        let bad = SAMPLE.replace("max_in_flight = 2", "max_in_flight = 0");
        assert!(matches!(RunConfig::from_toml(&bad, "x"), Err(ConfigError::Invalid(_))));
        let bad = SAMPLE.replace("name = \"OBQA\"", "name = \"Custom\"");
        assert!(matches!(RunConfig::from_toml(&bad, "x"), Err(ConfigError::Invalid(_))));
        let bad = SAMPLE.replace("top_p = 0.9", "top_p = 0.0");
        assert!(RunConfig::from_toml(&bad, "x").is_err());
        let bad = SAMPLE.replace("kind = \"overlap\"", "kind = \"oracle\"");
        assert!(matches!(RunConfig::from_toml(&bad, "x"), Err(ConfigError::Parse { .. })));
    }
}
