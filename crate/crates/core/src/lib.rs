//! Fact generation and selection for commonsense question answering.
//!
//! A large language model is prompted with a fixed few-shot template to write
//! several short facts per question. A dual encoder picks the fact closest to
//! the question, and an answer-inference model scores the question (with each
//! choice, if any) conditioned on that fact.

pub mod adapters;
pub mod backends;
pub mod batch;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod generation;
pub mod inference;
pub mod pipeline;
pub mod prompt;
pub mod selection;
pub mod zero_shot;

pub use config::{RunConfig, SelectionMode};
pub use dataset::{Label, QuestionRecord, QuestionStyle};
pub use generation::{CompletionBackend, FactCandidate, SamplingConfig};
pub use inference::{Prediction, ScorerBackend};
pub use prompt::{build_fact_prompt, PromptTemplate, RenderedPrompt};
pub use selection::{select_best, DualEncoder};
