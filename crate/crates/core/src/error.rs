use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad error classes; the CLI maps these to exit codes and the API to
/// HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Caller supplied something the operation rejects.
    Invalid,
    /// Operation is not allowed in the current project state.
    Conflict,
    /// Something referenced does not exist.
    NotFound,
    /// On-disk state is damaged.
    Integrity,
    /// Filesystem, process or lock failure.
    Operational,
}

#[derive(Debug, Error)]
pub enum Error {
    // project store
    #[error("location already holds a project: {0}")]
    LocationOccupied(PathBuf),
    #[error("permission denied: {0}")]
    PermissionDenied(PathBuf),
    #[error("no project found at {0}")]
    MissingProject(PathBuf),
    #[error("corrupt state file: {0}")]
    CorruptStateFile(String),
    #[error("project is locked by another writer: {0}")]
    Locked(PathBuf),
    #[error("project was opened read-only; mutations need the writer lock")]
    NotLocked,
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid phase: {0}")]
    InvalidPhase(String),
    #[error("illegal transition {from} -> {to}")]
    IllegalEdge { from: u8, to: u8 },
    #[error("gate verdict does not authorize this transition: {0}")]
    GateVerdictMismatch(String),
    #[error("artifact already registered: phase {phase}, version {version}, {path}")]
    DuplicateArtifact {
        phase: u8,
        version: u32,
        path: String,
    },
    #[error("artifact file not found: {0}")]
    ArtifactMissing(String),
    #[error("artifact checksum mismatch: {0}")]
    ArtifactIntegrity(String),

    // discovery
    #[error("expected 10 rubric awards, got {0}")]
    WrongArity(usize),
    #[error("criterion {criterion}: award {awarded} exceeds weight {max}")]
    AwardExceedsWeight { criterion: u8, awarded: u32, max: u32 },
    #[error("unknown rubric criterion {0}")]
    UnknownCriterion(u8),
    #[error("level {level} cannot converge while level {open} is open")]
    FoundationNotConverged { level: u8, open: u8 },
    #[error("retroaction must go to a shallower level ({from} -> {to})")]
    DownwardRetroaction { from: u8, to: u8 },
    #[error("retroaction from level {0}, which was never reached")]
    LevelNotReached(u8),
    #[error("HSA level must be 1..=5, got {0}")]
    InvalidLevel(u8),
    #[error("teach-back cycle {got} is not consecutive (expected {expected})")]
    NonConsecutiveCycle { expected: u32, got: u32 },

    // lenses and critique
    #[error("unknown lens: {0}")]
    UnknownLens(String),
    #[error("unknown context flag: {0}")]
    UnknownFlag(String),
    #[error("invalid lens definition {source_name}: {message}")]
    InvalidLensFile {
        source_name: String,
        message: String,
    },
    #[error("unknown module: {0}")]
    UnknownModule(String),
    #[error("lens is not active: {0}")]
    InactiveLens(String),
    #[error("coverage matrix is incomplete ({0} cells missing)")]
    MatrixIncomplete(usize),
    #[error("decision {decision} is not legal for a {severity} finding")]
    IllegalDecision { severity: String, decision: String },
    #[error("a non-empty rationale is required")]
    MissingRationale,
    #[error("unknown finding: {0}")]
    UnknownFinding(String),
    #[error("finding {0} is not open")]
    FindingNotOpen(String),
    #[error("no architecture version registered")]
    NoArchitecture,
    #[error("cell ({module}, {lens}) already has findings")]
    CellHasFindings { module: String, lens: String },
    #[error("findings outcome needs at least one finding")]
    EmptyFindings,
    #[error("unknown concentration flag: {0}")]
    UnknownConcentrationFlag(String),

    // convergence
    #[error("versions are not consecutive ({prev} -> {next})")]
    NonConsecutiveVersions { prev: u32, next: u32 },
    #[error("invalid architecture manifest: {0}")]
    InvalidManifest(String),

    // gates
    #[error("unknown gate: {0}")]
    UnknownGate(String),
    #[error("verdicts do not match the gate's agents (missing: {missing:?}, extra: {extra:?})")]
    VerdictSetMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("command not found: {0}")]
    CommandNotFound(String),
    #[error("command timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("verification agent {0} is not automatic")]
    AgentNotAutomatic(String),
    #[error("unknown verification agent: {0}")]
    UnknownAgent(String),
    #[error("gate {gate} can only be evaluated in phase {expected} (current phase {actual})")]
    GatePhaseMismatch { gate: String, expected: u8, actual: u8 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown requirement: {0}")]
    UnknownRequirement(String),
    #[error("verification agent {0} is automatic; its verdict comes from running its command")]
    AgentNotHuman(String),
    #[error("{action} is not allowed in phase {phase}")]
    PhaseRestricted { action: String, phase: u8 },

    // metrics
    #[error("total tokens must be positive")]
    ZeroTotalTokens,
    #[error("relevant tokens {relevant} exceed total {total}")]
    RelevantExceedsTotal { relevant: u64, total: u64 },
    #[error("probability out of range [0,1]: {0}")]
    ProbabilityOutOfRange(f64),
    #[error("cost must be a finite non-negative number: {0}")]
    InvalidCost(f64),
    #[error("cost units are mixed: {0:?}")]
    MixedUnits(Vec<String>),

    // prompts
    #[error("prompt kind {kind} is not available in phase {phase}")]
    KindPhaseMismatch { kind: String, phase: u8 },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::LocationOccupied(_) => "LOCATION_OCCUPIED",
            Error::PermissionDenied(_) => "PERMISSION_DENIED",
            Error::MissingProject(_) => "PROJECT_NOT_FOUND",
            Error::CorruptStateFile(_) => "CORRUPT_STATE_FILE",
            Error::Locked(_) => "LOCKED",
            Error::NotLocked => "NOT_LOCKED",
            Error::Io { .. } => "IO_ERROR",
            Error::InvalidPhase(_) => "INVALID_PHASE",
            Error::IllegalEdge { .. } => "ILLEGAL_EDGE",
            Error::GateVerdictMismatch(_) => "GATE_VERDICT_MISMATCH",
            Error::DuplicateArtifact { .. } => "DUPLICATE_ARTIFACT",
            Error::ArtifactMissing(_) => "ARTIFACT_MISSING",
            Error::ArtifactIntegrity(_) => "ARTIFACT_INTEGRITY",
            Error::WrongArity(_) => "WRONG_ARITY",
            Error::AwardExceedsWeight { .. } => "AWARD_EXCEEDS_WEIGHT",
            Error::UnknownCriterion(_) => "UNKNOWN_CRITERION",
            Error::FoundationNotConverged { .. } => "FOUNDATION_NOT_CONVERGED",
            Error::DownwardRetroaction { .. } => "DOWNWARD_RETROACTION",
            Error::LevelNotReached(_) => "LEVEL_NOT_REACHED",
            Error::InvalidLevel(_) => "INVALID_LEVEL",
            Error::NonConsecutiveCycle { .. } => "NON_CONSECUTIVE_CYCLE",
            Error::UnknownLens(_) => "UNKNOWN_LENS",
            Error::UnknownFlag(_) => "UNKNOWN_FLAG",
            Error::InvalidLensFile { .. } => "INVALID_LENS_FILE",
            Error::UnknownModule(_) => "UNKNOWN_MODULE",
            Error::InactiveLens(_) => "INACTIVE_LENS",
            Error::MatrixIncomplete(_) => "MATRIX_INCOMPLETE",
            Error::IllegalDecision { .. } => "ILLEGAL_DECISION",
            Error::MissingRationale => "MISSING_RATIONALE",
            Error::UnknownFinding(_) => "UNKNOWN_FINDING",
            Error::FindingNotOpen(_) => "FINDING_NOT_OPEN",
            Error::NoArchitecture => "NO_ARCHITECTURE",
            Error::EmptyFindings => "EMPTY_FINDINGS",
            Error::CellHasFindings { .. } => "CELL_HAS_FINDINGS",
            Error::UnknownConcentrationFlag(_) => "UNKNOWN_CONCENTRATION_FLAG",
            Error::NonConsecutiveVersions { .. } => "NON_CONSECUTIVE_VERSIONS",
            Error::InvalidManifest(_) => "INVALID_MANIFEST",
            Error::UnknownGate(_) => "UNKNOWN_GATE",
            Error::VerdictSetMismatch { .. } => "VERDICT_SET_MISMATCH",
            Error::CommandNotFound(_) => "COMMAND_NOT_FOUND",
            Error::Timeout(_) => "TIMEOUT",
            Error::AgentNotAutomatic(_) => "AGENT_NOT_AUTOMATIC",
            Error::UnknownAgent(_) => "UNKNOWN_AGENT",
            Error::GatePhaseMismatch { .. } => "GATE_PHASE_MISMATCH",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::UnknownRequirement(_) => "UNKNOWN_REQUIREMENT",
            Error::AgentNotHuman(_) => "AGENT_NOT_HUMAN",
            Error::PhaseRestricted { .. } => "PHASE_RESTRICTED",
            Error::ZeroTotalTokens => "ZERO_TOTAL_TOKENS",
            Error::RelevantExceedsTotal { .. } => "RELEVANT_EXCEEDS_TOTAL",
            Error::ProbabilityOutOfRange(_) => "PROBABILITY_OUT_OF_RANGE",
            Error::InvalidCost(_) => "INVALID_COST",
            Error::MixedUnits(_) => "MIXED_UNITS",
            Error::KindPhaseMismatch { .. } => "KIND_PHASE_MISMATCH",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::MissingProject(_)
            | Error::UnknownCriterion(_)
            | Error::UnknownLens(_)
            | Error::UnknownFlag(_)
            | Error::UnknownModule(_)
            | Error::UnknownFinding(_)
            | Error::UnknownGate(_)
            | Error::UnknownAgent(_)
            | Error::UnknownRequirement(_)
            | Error::UnknownConcentrationFlag(_)
            | Error::ArtifactMissing(_)
            | Error::NoArchitecture
            | Error::CommandNotFound(_) => ErrorClass::NotFound,
            Error::CorruptStateFile(_) | Error::ArtifactIntegrity(_) => ErrorClass::Integrity,
            Error::PermissionDenied(_)
            | Error::Locked(_)
            | Error::NotLocked
            | Error::Io { .. }
            | Error::Timeout(_) => ErrorClass::Operational,
            Error::LocationOccupied(_)
            | Error::IllegalEdge { .. }
            | Error::GateVerdictMismatch(_)
            | Error::DuplicateArtifact { .. }
            | Error::FoundationNotConverged { .. }
            | Error::LevelNotReached(_)
            | Error::NonConsecutiveCycle { .. }
            | Error::InactiveLens(_)
            | Error::MatrixIncomplete(_)
            | Error::CellHasFindings { .. }
            | Error::FindingNotOpen(_)
            | Error::NonConsecutiveVersions { .. }
            | Error::GatePhaseMismatch { .. }
            | Error::PhaseRestricted { .. }
            | Error::KindPhaseMismatch { .. } => ErrorClass::Conflict,
            _ => ErrorClass::Invalid,
        }
    }
}
