//! Backend implementations for the three model roles: completion (fact
//! generation and zero-shot answering), dual encoder (fact selection) and
//! answer scorer (fact-integrated inference).
//!
//! `http` talks to remote services; `mock` holds deterministic offline
//! stand-ins used by tests and dry runs.

use thiserror::Error;

pub mod http;
pub mod mock;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum BackendError {
    /// Connection, timeout or other transport-level failure.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("upstream returned status {status}: {body}")]
    Upstream { status: u16, body: String },
    /// The backend answered, but not in the agreed shape.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
}

impl BackendError {
    /// Whether retrying the same request may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Upstream { status, .. } => *status == 429 || *status >= 500,
            BackendError::Protocol(_) | BackendError::MissingCredential(_) => false,
        }
    }
}
