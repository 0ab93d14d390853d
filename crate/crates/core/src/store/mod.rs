//! The durable project repository: `specs/` layout, engine state file,
//! writer lock and the phase state machine.

mod persist;
mod project;
mod state;

pub use persist::{
    decode_state, encode_state, load_state, save_state, save_state_with, state_path, write_atomic,
    write_atomic_with, WriterLock, LOCK_FILE, STATE_FILE,
};
pub use project::{
    list_artifacts, load_catalog, load_requirements, ArtifactCheck, ArtifactStatus, ConvergencePreview,
    EvaluationSummary, GateOutcome, GateSubmission, Project, StatusReport, LENS_DIR, PHASE0_BYPASS_ADVISORY,
    REQUIREMENTS_FILE, SECTIONS, SPECS_DIR,
};
pub use state::{authorize, replay, Artifact, CellRecord, PendingGate, PhaseTransition, ProjectState, SCHEMA_VERSION};
