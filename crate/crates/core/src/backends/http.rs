//! Remote backends over JSON/HTTP.
//!
//! Completion: OpenAI-compatible `POST {endpoint}/completions` (or
//! `/chat/completions` for role-tagged prompts).
//!
//! Embedding: `GET {endpoint}/info` returns `{"model_id", "dimension"}` once at
//! connect time; `POST {endpoint}/embed` with `{"role", "text"}` returns
//! `{"vector": [...]}`.
//!
//! Scorer: `POST {endpoint}/score` with `{"task": "binary"|"choice",
//! "segments": [...], "flat_text": "..."}` returns `{"logits": [neg, pos]}`
//! or `{"score": x}`.
//!
//! Credentials are read from the environment variable named in the backend
//! settings and sent as a bearer token.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use ureq::Agent;

use super::BackendError;
use crate::generation::{CompletionBackend, SamplingConfig};
use crate::inference::{AssembledInput, ScorerBackend};
use crate::prompt::ChatMessage;
use crate::selection::{DualEncoder, EncoderRole, SelectionError, Vector};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

struct Client {
    agent: Agent,
    base: String,
    api_key_env: Option<String>,
}

impl Client {
    fn new(settings: &HttpSettings) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs.unwrap_or(60))))
            .http_status_as_error(false)
            .build()
            .into();
        Client {
            agent,
            base: settings.endpoint.trim_end_matches('/').to_string(),
            api_key_env: settings.api_key_env.clone(),
        }
    }

    fn auth(&self) -> Result<Option<String>, BackendError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(|k| Some(format!("Bearer {k}")))
                .map_err(|_| BackendError::MissingCredential(var.clone())),
        }
    }

    fn finish<T: DeserializeOwned>(mut resp: ureq::http::Response<ureq::Body>) -> Result<T, BackendError> {
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Upstream { status, body });
        }
        resp.body_mut()
            .read_json::<T>()
            .map_err(|e| BackendError::Protocol(format!("bad response body: {e}")))
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &serde_json::Value) -> Result<T, BackendError> {
        let mut req = self.agent.post(format!("{}{}", self.base, path));
        if let Some(auth) = self.auth()? {
            req = req.header("Authorization", auth);
        }
        let resp = req.send_json(body).map_err(|e| BackendError::Transport(e.to_string()))?;
        Self::finish(resp)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, BackendError> {
        let mut req = self.agent.get(format!("{}{}", self.base, path));
        if let Some(auth) = self.auth()? {
            req = req.header("Authorization", auth);
        }
        let resp = req.call().map_err(|e| BackendError::Transport(e.to_string()))?;
        Self::finish(resp)
    }
}

pub struct HttpCompletion {
    client: Client,
    model_id: String,
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    index: usize,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    message: Option<ChatMessageOut>,
}

#[derive(Deserialize)]
struct ChatMessageOut {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

impl HttpCompletion {
    pub fn new(settings: &HttpSettings, model_id: &str, max_tokens: Option<u32>) -> Self {
        HttpCompletion { client: Client::new(settings), model_id: model_id.into(), max_tokens }
    }

    fn request_body(&self, config: &SamplingConfig) -> serde_json::Value {
        let mut body = json!({
            "model": self.model_id,
            "n": config.n_samples,
            "top_p": config.top_p,
            "temperature": config.temperature,
            "stop": config.stop_markers,
        });
        if let Some(m) = self.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }

    fn collect(resp: CompletionResponse, wanted: usize) -> Result<Vec<String>, BackendError> {
        let mut choices = resp.choices;
        if choices.len() != wanted {
            return Err(BackendError::Protocol(format!("expected {wanted} choices, got {}", choices.len())));
        }
        choices.sort_by_key(|c| c.index);
        Ok(choices
            .into_iter()
            .map(|c| c.text.or_else(|| c.message.and_then(|m| m.content)).unwrap_or_default())
            .collect())
    }
}

impl CompletionBackend for HttpCompletion {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<String>, BackendError> {
        let mut body = self.request_body(config);
        body["prompt"] = json!(prompt);
        Self::collect(self.client.post("/completions", &body)?, config.n_samples)
    }

    fn complete_messages(&self, messages: &[ChatMessage], config: &SamplingConfig) -> Result<Vec<String>, BackendError> {
        let mut body = self.request_body(config);
        body["messages"] = json!(messages);
        Self::collect(self.client.post("/chat/completions", &body)?, config.n_samples)
    }
}

#[derive(Deserialize)]
struct EncoderInfo {
    model_id: String,
    dimension: usize,
    #[serde(default = "default_true")]
    concurrency_safe: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

pub struct HttpEncoder {
    client: Client,
    id: String,
    dimension: usize,
    concurrency_safe: bool,
}

impl HttpEncoder {
    /// Performs the `/info` handshake.
    pub fn connect(settings: &HttpSettings) -> Result<Self, BackendError> {
        let client = Client::new(settings);
        let info: EncoderInfo = client.get("/info")?;
        if info.dimension == 0 {
            return Err(BackendError::Protocol("encoder advertised dimension 0".into()));
        }
        Ok(HttpEncoder { client, id: info.model_id, dimension: info.dimension, concurrency_safe: info.concurrency_safe })
    }
}

impl DualEncoder for HttpEncoder {
    fn encoder_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn concurrency_safe(&self) -> bool {
        self.concurrency_safe
    }

    fn embed(&self, role: EncoderRole, text: &str) -> Result<Vector, SelectionError> {
        let resp: EmbedResponse = self.client.post("/embed", &json!({ "role": role, "text": text }))?;
        Vector::new(resp.vector)
    }
}

#[derive(Deserialize)]
struct ScoreResponse {
    #[serde(default)]
    logits: Option<Vec<f64>>,
    #[serde(default)]
    score: Option<f64>,
}

pub struct HttpScorer {
    client: Client,
    id: String,
}

impl HttpScorer {
    pub fn new(settings: &HttpSettings) -> Self {
        HttpScorer { client: Client::new(settings), id: settings.endpoint.clone() }
    }

    fn score(&self, task: &str, input: &AssembledInput) -> Result<ScoreResponse, BackendError> {
        self.client.post(
            "/score",
            &json!({ "task": task, "segments": input.segments, "flat_text": input.flat_text() }),
        )
    }
}

impl ScorerBackend for HttpScorer {
    fn scorer_id(&self) -> &str {
        &self.id
    }

    fn score_binary(&self, input: &AssembledInput) -> Result<[f64; 2], BackendError> {
        match self.score("binary", input)?.logits.as_deref() {
            Some([neg, pos]) => Ok([*neg, *pos]),
            _ => Err(BackendError::Protocol("binary score needs exactly two logits".into())),
        }
    }

    fn score_choice(&self, input: &AssembledInput) -> Result<f64, BackendError> {
        self.score("choice", input)?
            .score
            .ok_or_else(|| BackendError::Protocol("choice score missing".into()))
    }
}
