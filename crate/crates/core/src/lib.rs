//! Process engine for an eight-phase, gated development method: discovery
//! rubric, lens catalog, coverage matrix, structural convergence checks and
//! verification gates over a durable project repository.

pub mod config;
pub mod convergence;
pub mod critique;
pub mod discovery;
pub mod error;
pub mod gates;
pub mod hash;
pub mod lens;
pub mod metrics;
pub mod phase;
pub mod prompts;
pub mod runner;
pub mod store;
pub mod verdict;

pub use error::{Error, ErrorClass, Result};
pub use phase::{GateId, PhaseId};
pub use store::{Project, ProjectState};
pub use verdict::{GateVerdict, Verdict};

/// Version reported by the CLI and in API envelopes.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
