//! Dense fact selection: embed the question and each candidate with a dual
//! encoder, score by raw dot product, keep the highest-scoring fact.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::BackendError;
use crate::generation::FactCandidate;

mod hashing;

pub use hashing::HashingEncoder;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("vector lengths differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no candidate facts to select from")]
    NoCandidates,
    #[error("encoder returned a vector with a non-finite component")]
    NonFiniteVector,
    #[error("encoder failure: {0}")]
    Encoder(#[from] BackendError),
}

/// Dense embedding with finite components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self, SelectionError> {
        if components.iter().all(|c| c.is_finite()) {
            Ok(Vector(components))
        } else {
            Err(SelectionError::NonFiniteVector)
        }
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|c| c * factor).collect())
    }
}

pub fn dot(a: &Vector, b: &Vector) -> Result<f64, SelectionError> {
    if a.len() != b.len() {
        return Err(SelectionError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderRole {
    Question,
    Passage,
}

/// Separate question and passage encoders sharing one embedding space.
pub trait DualEncoder: Send + Sync {
    fn encoder_id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, role: EncoderRole, text: &str) -> Result<Vector, SelectionError>;

    /// False when concurrent `embed` calls are not allowed.
    fn concurrency_safe(&self) -> bool {
        true
    }

    fn embed_question(&self, text: &str) -> Result<Vector, SelectionError> {
        self.embed(EncoderRole::Question, text)
    }

    fn embed_passage(&self, text: &str) -> Result<Vector, SelectionError> {
        self.embed(EncoderRole::Passage, text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredFact {
    pub candidate: FactCandidate,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub best: ScoredFact,
    /// One entry per candidate, in input order.
    pub all: Vec<ScoredFact>,
}

/// Picks the candidate whose passage embedding has the largest dot product with
/// the question embedding. Equal scores go to the lowest `sample_index`.
pub fn select_best(
    question_text: &str,
    candidates: &[FactCandidate],
    encoder: &dyn DualEncoder,
) -> Result<Selection, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    let question = checked_embedding(encoder, EncoderRole::Question, question_text)?;
    let all = candidates
        .iter()
        .map(|c| {
            let passage = checked_embedding(encoder, EncoderRole::Passage, &c.text)?;
            Ok(ScoredFact { candidate: c.clone(), score: dot(&question, &passage)? })
        })
        .collect::<Result<Vec<_>, SelectionError>>()?;

    let mut best = &all[0];
    for s in &all[1..] {
        let better = s.score > best.score
            || (s.score == best.score && s.candidate.sample_index < best.candidate.sample_index);
        if better {
            best = s;
        }
    }
    Ok(Selection { best: best.clone(), all })
}

fn checked_embedding(encoder: &dyn DualEncoder, role: EncoderRole, text: &str) -> Result<Vector, SelectionError> {
    let v = encoder.embed(role, text)?;
    if v.len() != encoder.dimension() {
        return Err(SelectionError::DimensionMismatch(v.len(), encoder.dimension()));
    }
    Ok(v)
}

/// The no-selection arm: always the first sample.
pub fn selection_mode_passthrough(candidates: &[FactCandidate]) -> Result<FactCandidate, SelectionError> {
    candidates
        .iter()
        .min_by_key(|c| c.sample_index)
        .cloned()
        .ok_or(SelectionError::NoCandidates)
}

type EmbeddingKey = (String, EncoderRole, [u8; 32]);

/// Memoizes another encoder's embeddings by (encoder id, role, text hash).
pub struct CachedEncoder<E> {
    inner: E,
    entries: Mutex<HashMap<EmbeddingKey, Vector>>,
}

impl<E: DualEncoder> CachedEncoder<E> {
    pub fn new(inner: E) -> Self {
        CachedEncoder { inner, entries: Mutex::default() }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<E: DualEncoder> DualEncoder for CachedEncoder<E> {
    fn encoder_id(&self) -> &str {
        self.inner.encoder_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn concurrency_safe(&self) -> bool {
        self.inner.concurrency_safe()
    }

    fn embed(&self, role: EncoderRole, text: &str) -> Result<Vector, SelectionError> {
        let key = (self.inner.encoder_id().to_string(), role, Sha256::digest(text.as_bytes()).into());
        if let Some(v) = self.entries.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(role, text)?;
        self.entries.lock().unwrap().insert(key, v.clone());
        Ok(v)
    }
}
