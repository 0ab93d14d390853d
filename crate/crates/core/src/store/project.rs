use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::persist::{load_state, save_state, save_state_with, state_path, write_atomic, WriterLock};
use super::state::{Artifact, CellRecord, PendingGate, PhaseTransition, ProjectState};
use crate::config::EngineConfig;
use crate::convergence::{
    complexity, diff_versions, evaluate_g3, evaluate_g4_with_threshold, structural_diff, ArchitectureVersion,
    ComplexityMeasure, StructuralDiff, MANIFEST_FILE,
};
use crate::critique::{
    concentration_analysis, evaluate_g2, resolve_finding, triage_finding, AssessmentInput, ConcentrationDecision,
    ConcentrationReport, CoverageMatrix, Decision, Finding, FindingStatus, Severity,
};
use crate::discovery::{append_teachback, compute_score, evaluate_g0, DiscoveryScore, HsaState, TeachBackIteration};
use crate::error::{Error, Result};
use crate::gates::{
    evaluate_gate, g6_readiness, parse_requirements, scope_inventory_check, ChecklistEntry, Divergence,
    GateEvaluation, MicroCheckRecord, Requirement, ScopeInventory, VaVerdict,
};
use crate::hash::sha256_hex;
use crate::lens::{ActivationReport, ContextFlag, LensActivation, LensCatalog, ProjectContext};
use crate::metrics::{append_metric, AdoptionEstimate, AdoptionInput, ContextEfficiency, MetricRecord, METRICS_LOG};
use crate::phase::{edge_kind, GateId, PhaseId};
use crate::prompts::{render_prompt, PromptKind, PromptScaffold};
use crate::runner::{run_all, RunOutcome};
use crate::verdict::{GateVerdict, Verdict, VerdictDetail};

pub const SPECS_DIR: &str = "specs";
pub const SECTIONS: [&str; 6] = ["problem", "architecture", "findings", "validation", "lessons", "prompts"];
/// Operator lens extensions, `*.lens` files.
pub const LENS_DIR: &str = "specs/prompts/lenses";
pub const REQUIREMENTS_FILE: &str = "specs/validation/requirements.toml";

pub const PHASE0_BYPASS_ADVISORY: &str =
    "Phase 0 bypass: G0 evaluated without any recorded teach-back iteration";

/// Handle on one project directory. Mutations need the writer lock
/// (`init` or `open_locked`); each one persists before returning.
#[derive(Debug)]
pub struct Project {
    root: PathBuf,
    state: ProjectState,
    lock: Option<WriterLock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSubmission {
    #[serde(default)]
    pub verdicts: Vec<VaVerdict>,
    #[serde(default)]
    pub run_automatic: bool,
    #[serde(default = "yes")]
    pub advance: bool,
}

fn yes() -> bool {
    true
}

impl Default for GateSubmission {
    fn default() -> Self {
        GateSubmission { verdicts: Vec::new(), run_automatic: false, advance: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub gate_id: GateId,
    /// Present once every agent has a verdict.
    pub evaluation: Option<GateEvaluation>,
    pub pending: Option<PendingGate>,
    pub waiting_for: Vec<String>,
    pub runs: Vec<RunOutcome>,
    pub transition: Option<PhaseTransition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactStatus {
    Ok,
    Missing,
    ChecksumMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactCheck {
    pub artifact_id: String,
    pub relative_path: String,
    pub status: ArtifactStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub evaluation_id: String,
    pub gate_id: GateId,
    pub result: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusReport {
    pub project_id: String,
    pub name: String,
    pub current_phase: PhaseId,
    pub phase_name: String,
    pub iteration_count: u32,
    pub exit_gate: GateId,
    pub pending_gate: Option<PendingGate>,
    pub last_evaluation: Option<EvaluationSummary>,
    pub architecture_version: Option<u32>,
    pub open_findings: usize,
    /// G7 approved in phase 7.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePreview {
    pub diff: Option<StructuralDiff>,
    pub g4: Option<GateVerdict>,
    pub threshold: f64,
    pub threshold_overridden: bool,
    pub complexity: Vec<(u32, ComplexityMeasure)>,
    pub open_criticals: Vec<String>,
}

fn io_perm(path: &Path, what: &str, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::PermissionDenied {
        Error::PermissionDenied(path.to_path_buf())
    } else {
        Error::io(format!("{what} {}", path.display()), e)
    }
}

fn require_phase(state: &ProjectState, allowed: &[PhaseId], action: &str) -> Result<()> {
    if allowed.contains(&state.current_phase) {
        Ok(())
    } else {
        Err(Error::PhaseRestricted {
            action: action.to_string(),
            phase: state.current_phase.index(),
        })
    }
}

pub fn load_catalog(root: &Path) -> Result<LensCatalog> {
    let mut c = LensCatalog::default();
    c.load_extensions(&root.join(LENS_DIR))?;
    Ok(c)
}

pub fn load_requirements(root: &Path) -> Result<Vec<Requirement>> {
    let path = root.join(REQUIREMENTS_FILE);
    match std::fs::read_to_string(&path) {
        Ok(text) => parse_requirements(&text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(io_perm(&path, "read", e)),
    }
}

/// Recompute activations for `ctx`, keeping operator rationales whose
/// activation did not change.
fn refresh_activations(state: &mut ProjectState, catalog: &LensCatalog) {
    let phase = state.current_phase;
    let fresh = catalog
        .select(&state.context)
        .into_iter()
        .map(|mut a| {
            match state.lens_activations.iter().find(|o| o.lens_id == a.lens_id) {
                Some(old) if old.active == a.active && !old.rationale.trim().is_empty() => {
                    a.rationale = old.rationale.clone();
                    a.decided_at_phase = old.decided_at_phase;
                }
                _ => a.decided_at_phase = phase,
            }
            a
        })
        .collect();
    state.lens_activations = fresh;
}

fn failed_run(va_id: &str, e: &Error) -> RunOutcome {
    RunOutcome {
        va_id: va_id.to_string(),
        verdict: Verdict::Rejected,
        exit_code: None,
        output: e.to_string(),
        truncated: false,
        vetoed: false,
        duration_ms: 0,
    }
}

fn auto_target(eval: &GateEvaluation) -> Option<PhaseId> {
    let from = eval.gate_id.phase();
    match (eval.gate_id, eval.is_approved()) {
        (GateId::G7, _) => None,
        (GateId::G2, true) if eval.criteria.as_ref().is_some_and(|c| c.skip_phase3_allowed()) => None,
        (_, true) => PhaseId::new(from.index() + 1).ok(),
        (GateId::G4, false) => Some(PhaseId::CRITIQUE),
        _ => None,
    }
}

fn upsert_verdict(list: &mut Vec<VaVerdict>, v: VaVerdict) {
    match list.iter_mut().find(|x| x.va_id == v.va_id) {
        Some(slot) => *slot = v,
        None => list.push(v),
    }
}

impl Project {
    /// Create the `specs/` skeleton and a phase-0 state under `root`.
    pub fn init(root: &Path, name: &str, context: ProjectContext) -> Result<Project> {
        std::fs::create_dir_all(root).map_err(|e| io_perm(root, "create", e))?;
        if state_path(root).exists() {
            return Err(Error::LocationOccupied(root.to_path_buf()));
        }
        let lock = WriterLock::acquire(root)?;
        if state_path(root).exists() {
            return Err(Error::LocationOccupied(root.to_path_buf()));
        }
        for s in SECTIONS {
            let dir = root.join(SPECS_DIR).join(s);
            std::fs::create_dir_all(&dir).map_err(|e| io_perm(&dir, "create", e))?;
        }
        let catalog = load_catalog(root)?;
        let activations = catalog.select(&context);
        let state = ProjectState::new(name, context, activations);
        save_state(root, &state)?;
        Ok(Project {
            root: root.to_path_buf(),
            state,
            lock: Some(lock),
        })
    }

    /// Read-only snapshot of the last persisted state.
    pub fn open(root: &Path) -> Result<Project> {
        Ok(Project {
            root: root.to_path_buf(),
            state: load_state(root)?,
            lock: None,
        })
    }

    pub fn open_locked(root: &Path) -> Result<Project> {
        if !state_path(root).exists() {
            return Err(Error::MissingProject(root.to_path_buf()));
        }
        let lock = WriterLock::acquire(root)?;
        Ok(Project {
            root: root.to_path_buf(),
            state: load_state(root)?,
            lock: Some(lock),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn state(&self) -> &ProjectState {
        &self.state
    }

    pub fn is_locked(&self) -> bool {
        self.lock.is_some()
    }

    pub fn catalog(&self) -> Result<LensCatalog> {
        load_catalog(&self.root)
    }

    pub fn config(&self) -> Result<EngineConfig> {
        EngineConfig::load(&self.root)
    }

    pub fn requirements(&self) -> Result<Vec<Requirement>> {
        load_requirements(&self.root)
    }

    pub fn save(&mut self) -> Result<()> {
        self.save_with(|_| Ok(()))
    }

    /// Save with a hook run between the temp write and the rename.
    pub fn save_with(&mut self, before_rename: impl FnOnce(&Path) -> std::io::Result<()>) -> Result<()> {
        if self.lock.is_none() {
            return Err(Error::NotLocked);
        }
        save_state_with(&self.root, &self.state, before_rename)
    }

    /// Apply `f` to a copy, persist it, then adopt it. A failing `f` or a
    /// failing save leaves both memory and disk unchanged.
    fn mutate<T>(&mut self, f: impl FnOnce(&mut ProjectState) -> Result<T>) -> Result<T> {
        if self.lock.is_none() {
            return Err(Error::NotLocked);
        }
        let mut next = self.state.clone();
        let out = f(&mut next)?;
        next.updated_at = Utc::now();
        let problems = next.consistency_problems();
        if !problems.is_empty() {
            return Err(Error::CorruptStateFile(problems.join("; ")));
        }
        save_state(&self.root, &next)?;
        self.state = next;
        Ok(out)
    }

    fn relative_path(&self, path: &Path) -> Result<(PathBuf, String)> {
        let abs = if path.is_absolute() { path.to_path_buf() } else { self.root.join(path) };
        let canon = abs
            .canonicalize()
            .map_err(|_| Error::ArtifactMissing(abs.display().to_string()))?;
        let root = self
            .root
            .canonicalize()
            .map_err(|e| io_perm(&self.root, "resolve", e))?;
        let rel = canon
            .strip_prefix(&root)
            .map_err(|_| Error::InvalidArgument(format!("{} is outside the project root", abs.display())))?;
        let rel_str = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        Ok((canon, rel_str))
    }

    pub fn status(&self) -> StatusReport {
        let s = &self.state;
        let last = s.gate_log.last().map(|e| EvaluationSummary {
            evaluation_id: e.evaluation_id.clone(),
            gate_id: e.gate_id,
            result: e.result,
        });
        StatusReport {
            project_id: s.project_id.clone(),
            name: s.name.clone(),
            current_phase: s.current_phase,
            phase_name: s.current_phase.name().to_string(),
            iteration_count: s.iteration_count,
            exit_gate: s.current_phase.exit_gate(),
            pending_gate: s.pending_gate.clone(),
            last_evaluation: last,
            architecture_version: s.latest_architecture().map(|a| a.version),
            open_findings: s.findings.iter().filter(|f| f.status == FindingStatus::Open).count(),
            complete: s.current_phase == PhaseId::POST_REVIEW
                && s.current_evaluation(GateId::G7).is_some_and(|e| e.is_approved()),
        }
    }

    // ---- lenses and context

    pub fn set_context_flag(&mut self, flag: ContextFlag, value: bool) -> Result<Vec<LensActivation>> {
        let catalog = self.catalog()?;
        self.mutate(|s| {
            s.context.set(flag, value);
            refresh_activations(s, &catalog);
            Ok(s.lens_activations.clone())
        })
    }

    pub fn set_lens_rationale(&mut self, lens_id: &str, rationale: &str) -> Result<LensActivation> {
        let catalog = self.catalog()?;
        if catalog.get(lens_id).is_none() {
            return Err(Error::UnknownLens(lens_id.to_string()));
        }
        self.mutate(|s| {
            refresh_activations(s, &catalog);
            let phase = s.current_phase;
            let a = s
                .lens_activations
                .iter_mut()
                .find(|a| a.lens_id == lens_id)
                .ok_or_else(|| Error::UnknownLens(lens_id.to_string()))?;
            a.rationale = rationale.trim().to_string();
            a.decided_at_phase = phase;
            Ok(a.clone())
        })
    }

    pub fn lens_report(&self) -> Result<ActivationReport> {
        Ok(self.catalog()?.validate(&self.state.lens_activations))
    }

    // ---- discovery

    pub fn set_award(&mut self, criterion_id: u8, points: u32) -> Result<DiscoveryScore> {
        self.mutate(|s| {
            require_phase(s, &[PhaseId::DISCOVERY], "rubric scoring")?;
            s.discovery.score.set_award(criterion_id, points)?;
            Ok(s.discovery.score.clone())
        })
    }

    /// Replace all ten awards; the confirmation flag is kept.
    pub fn set_awards(&mut self, awards: &[u32]) -> Result<DiscoveryScore> {
        self.mutate(|s| {
            require_phase(s, &[PhaseId::DISCOVERY], "rubric scoring")?;
            let mut score = compute_score(awards)?;
            score.operator_confirmed = s.discovery.score.operator_confirmed;
            s.discovery.score = score;
            Ok(s.discovery.score.clone())
        })
    }

    pub fn set_confirmation(&mut self, confirmed: bool) -> Result<DiscoveryScore> {
        self.mutate(|s| {
            require_phase(s, &[PhaseId::DISCOVERY], "rubric confirmation")?;
            s.discovery.score.operator_confirmed = confirmed;
            Ok(s.discovery.score.clone())
        })
    }

    pub fn record_teachback(&mut self, it: TeachBackIteration) -> Result<()> {
        self.mutate(|s| {
            require_phase(s, &[PhaseId::DISCOVERY], "teach-back")?;
            append_teachback(&mut s.discovery.teachbacks, it)
        })
    }

    pub fn hsa_converge(&mut self, level: u8) -> Result<HsaState> {
        self.mutate(|s| {
            require_phase(s, &[PhaseId::DISCOVERY], "semantic ladder update")?;
            s.discovery.hsa.mark_level_converged(level)?;
            Ok(s.discovery.hsa.clone())
        })
    }

    pub fn hsa_notes(&mut self, level: u8, notes: &str) -> Result<HsaState> {
        self.mutate(|s| {
            require_phase(s, &[PhaseId::DISCOVERY], "semantic ladder update")?;
            s.discovery.hsa.set_notes(level, notes)?;
            Ok(s.discovery.hsa.clone())
        })
    }

    pub fn hsa_retroact(&mut self, from_level: u8, to_level: u8, reason: &str) -> Result<HsaState> {
        self.mutate(|s| {
            require_phase(s, &[PhaseId::DISCOVERY], "semantic ladder update")?;
            s.discovery.hsa.record_retroaction(from_level, to_level, reason)?;
            Ok(s.discovery.hsa.clone())
        })
    }

    // ---- architecture and artifacts

    /// Register `<dir>/manifest.toml` (or a manifest file) as the next
    /// architecture version. The manifest is indexed, never copied or edited.
    pub fn register_architecture(&mut self, path: &Path) -> Result<ArchitectureVersion> {
        require_phase(&self.state, &[PhaseId::ARCHITECTURE, PhaseId::SIMPLIFICATION], "architecture registration")?;
        let abs = if path.is_absolute() { path.to_path_buf() } else { self.root.join(path) };
        let file = if abs.is_dir() { abs.join(MANIFEST_FILE) } else { abs };
        let (canon, rel) = self.relative_path(&file)?;
        let arch = ArchitectureVersion::load_manifest(&canon)?;
        let latest = self.state.latest_architecture().map_or(0, |a| a.version);
        if arch.version != latest + 1 {
            return Err(Error::NonConsecutiveVersions {
                prev: latest,
                next: arch.version,
            });
        }
        let bytes = std::fs::read(&canon).map_err(|e| io_perm(&canon, "read", e))?;
        let checksum = sha256_hex(&bytes);
        self.mutate(|s| {
            let phase = s.current_phase;
            push_artifact(s, phase, arch.version, rel, checksum)?;
            s.architectures.push(arch.clone());
            Ok(arch)
        })
    }

    pub fn register_artifact(&mut self, phase: PhaseId, version: u32, path: &Path) -> Result<Artifact> {
        if version == 0 {
            return Err(Error::InvalidArgument("artifact version must be positive".into()));
        }
        let (canon, rel) = self.relative_path(path)?;
        if !canon.is_file() {
            return Err(Error::ArtifactMissing(rel));
        }
        let bytes = std::fs::read(&canon).map_err(|e| io_perm(&canon, "read", e))?;
        let checksum = sha256_hex(&bytes);
        self.mutate(|s| push_artifact(s, phase, version, rel, checksum))
    }

    pub fn list_artifacts(&self, phase: PhaseId) -> Vec<Artifact> {
        list_artifacts(&self.state, phase)
    }

    pub fn check_artifact(&self, a: &Artifact) -> Result<()> {
        let path = self.root.join(&a.relative_path);
        let bytes = std::fs::read(&path).map_err(|_| Error::ArtifactMissing(a.relative_path.clone()))?;
        if sha256_hex(&bytes) != a.checksum {
            return Err(Error::ArtifactIntegrity(format!(
                "{} ({}) no longer matches its recorded checksum",
                a.artifact_id, a.relative_path
            )));
        }
        Ok(())
    }

    pub fn verify_artifacts(&self) -> Vec<ArtifactCheck> {
        self.state
            .artifacts
            .iter()
            .map(|a| ArtifactCheck {
                artifact_id: a.artifact_id.clone(),
                relative_path: a.relative_path.clone(),
                status: match self.check_artifact(a) {
                    Ok(()) => ArtifactStatus::Ok,
                    Err(Error::ArtifactMissing(_)) => ArtifactStatus::Missing,
                    Err(_) => ArtifactStatus::ChecksumMismatch,
                },
            })
            .collect()
    }

    // ---- critique

    pub fn matrix(&self) -> Result<CoverageMatrix> {
        self.state.current_matrix()
    }

    pub fn record_assessment(&mut self, module: &str, lens: &str, input: AssessmentInput) -> Result<Vec<Finding>> {
        self.mutate(|s| {
            require_phase(s, &[PhaseId::CRITIQUE], "critique assessment")?;
            let mut matrix = s.current_matrix()?;
            let base = s.findings.len();
            let mut n = 0;
            let created = matrix.record_assessment(module, lens, input, || {
                n += 1;
                format!("F-{:03}", base + n)
            })?;
            let cell = matrix
                .cell(module, lens)
                .cloned()
                .expect("cell just recorded");
            let v = matrix.arch_version;
            s.cells
                .retain(|c| !(c.arch_version == v && c.cell.module_ref == module && c.cell.lens_ref == lens));
            s.cells.push(CellRecord { arch_version: v, cell });
            s.findings.extend(created.iter().cloned());
            Ok(created)
        })
    }

    pub fn triage(&mut self, finding_id: &str, decision: Decision) -> Result<Finding> {
        self.mutate(|s| {
            let f = s.finding_mut(finding_id)?;
            triage_finding(f, decision)?;
            Ok(f.clone())
        })
    }

    pub fn resolve(&mut self, finding_id: &str, note: &str) -> Result<Finding> {
        self.mutate(|s| {
            let f = s.finding_mut(finding_id)?;
            resolve_finding(f, note)?;
            Ok(f.clone())
        })
    }

    pub fn concentration(&self, min_severity: Option<Severity>) -> Result<ConcentrationReport> {
        let m = self.state.current_matrix()?;
        concentration_analysis(&m, &self.state.findings, min_severity, &self.state.concentration_decisions)
    }

    pub fn decide_concentration(&mut self, flag: &str, decision: &str) -> Result<ConcentrationDecision> {
        if decision.trim().is_empty() {
            return Err(Error::MissingRationale);
        }
        let report = self.concentration(None)?;
        if !report.flag_keys().iter().any(|k| k == flag) {
            return Err(Error::UnknownConcentrationFlag(flag.to_string()));
        }
        let d = ConcentrationDecision {
            flag: flag.to_string(),
            decision: decision.trim().to_string(),
            arch_version: self.state.current_matrix()?.arch_version,
        };
        self.mutate(|s| {
            s.concentration_decisions
                .retain(|x| !(x.flag == d.flag && x.arch_version == d.arch_version));
            s.concentration_decisions.push(d.clone());
            Ok(d)
        })
    }

    // ---- convergence

    /// Diff between the two latest versions; a single version diffs
    /// against itself.
    pub fn latest_diff(&self) -> Result<StructuralDiff> {
        let a = &self.state.architectures;
        match a.len() {
            0 => Err(Error::NoArchitecture),
            1 => Ok(diff_versions(&a[0], &a[0])),
            n => structural_diff(&a[n - 2], &a[n - 1]),
        }
    }

    pub fn convergence_preview(&self) -> Result<ConvergencePreview> {
        let cfg = self.config()?;
        let diff = self.latest_diff().ok();
        let g4 = diff
            .as_ref()
            .map(|d| evaluate_g4_with_threshold(d, &self.state.findings, cfg.change_threshold()));
        Ok(ConvergencePreview {
            diff,
            g4,
            threshold: cfg.change_threshold(),
            threshold_overridden: cfg.threshold_overridden(),
            complexity: self
                .state
                .architectures
                .iter()
                .map(|a| (a.version, complexity(a)))
                .collect(),
            open_criticals: self
                .state
                .findings
                .iter()
                .filter(|f| f.is_open_critical())
                .map(|f| f.finding_id.clone())
                .collect(),
        })
    }

    // ---- gates

    /// The gate's builtin predicate over the current state.
    pub fn gate_criteria(&self, gate: GateId) -> Result<GateVerdict> {
        let cfg = self.config()?;
        let catalog = self.catalog()?;
        self.gate_criteria_with(gate, &cfg, &catalog)
    }

    fn gate_criteria_with(&self, gate: GateId, cfg: &EngineConfig, catalog: &LensCatalog) -> Result<GateVerdict> {
        let s = &self.state;
        let none = |failures: Vec<String>| GateVerdict::from_failures(gate, failures, VerdictDetail::None);
        Ok(match gate {
            GateId::G0 => {
                let mut v = evaluate_g0(&s.discovery.score);
                if s.discovery.teachbacks.is_empty() {
                    v.advisories.push(PHASE0_BYPASS_ADVISORY.to_string());
                }
                v
            }
            GateId::G1 => {
                let mut failures: Vec<String> = catalog
                    .validate(&s.lens_activations)
                    .violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect();
                match s.latest_architecture() {
                    None => failures.push("no architecture version registered".into()),
                    Some(a) if a.modules.is_empty() => failures.push(format!("architecture v{} declares no modules", a.version)),
                    Some(_) => {}
                }
                none(failures)
            }
            GateId::G2 => match s.current_matrix() {
                Err(_) => none(vec!["no architecture version registered".into()]),
                Ok(m) => {
                    let report =
                        concentration_analysis(&m, &s.findings, None, &s.concentration_decisions).ok();
                    evaluate_g2(&m, &s.findings, report.as_ref())
                }
            },
            GateId::G3 => {
                let a = &s.architectures;
                if a.len() < 2 {
                    none(vec!["no simplified architecture version registered".into()])
                } else {
                    evaluate_g3(&a[a.len() - 2], &a[a.len() - 1])?
                }
            }
            GateId::G4 => match self.latest_diff() {
                Err(_) => none(vec!["no architecture version registered".into()]),
                Ok(d) => {
                    let mut v = evaluate_g4_with_threshold(&d, &s.findings, cfg.change_threshold());
                    if cfg.threshold_overridden() {
                        v.advisories.insert(
                            0,
                            format!("change threshold overridden by configuration: {}", cfg.change_threshold()),
                        );
                    }
                    v
                }
            },
            GateId::G5 => none(self.scope_inventory_with(cfg)?.failures()),
            GateId::G6 => {
                let modules = s.latest_architecture().map(|a| a.module_names()).unwrap_or_default();
                g6_readiness(&modules, &s.micro_checks, &self.requirements()?, &s.checklist)
            }
            GateId::G7 => none(Vec::new()),
        })
    }

    /// Record verdicts and optionally run automatic agents for `gate`. The
    /// evaluation is finalized and logged once every agent has a verdict;
    /// with `advance`, an approved gate moves to the next phase and a
    /// rejected G4 loops back to phase 2.
    pub fn submit_gate(&mut self, gate: GateId, sub: GateSubmission) -> Result<GateOutcome> {
        let phase = self.state.current_phase;
        if gate.phase() != phase {
            return Err(Error::GatePhaseMismatch {
                gate: gate.to_string(),
                expected: gate.phase().index(),
                actual: phase.index(),
            });
        }
        if self.lock.is_none() {
            return Err(Error::NotLocked);
        }
        let cfg = self.config()?;
        let catalog = self.catalog()?;
        let defn = cfg.gate_definition(gate);
        for v in &sub.verdicts {
            let agent = defn
                .agent(&v.va_id)
                .ok_or_else(|| Error::UnknownAgent(v.va_id.clone()))?;
            if agent.is_automatic() {
                return Err(Error::AgentNotHuman(v.va_id.clone()));
            }
        }
        let runs: Vec<RunOutcome> = if sub.run_automatic {
            let agents: Vec<_> = defn.automatic_agents().collect();
            run_all(&agents, &self.root, &cfg.run_limits())
                .into_iter()
                .zip(&agents)
                .map(|(r, a)| r.unwrap_or_else(|e| failed_run(&a.va_id, &e)))
                .collect()
        } else {
            Vec::new()
        };
        let criteria = self.gate_criteria_with(gate, &cfg, &catalog)?;
        self.mutate(|s| {
            let visit = s.phase_visit();
            let mut pending = s
                .pending_gate
                .take()
                .filter(|p| p.gate_id == gate && p.phase_visit == visit)
                .unwrap_or_else(|| PendingGate {
                    gate_id: gate,
                    phase_visit: visit,
                    verdicts: Vec::new(),
                    runs: Vec::new(),
                    started_at: Utc::now(),
                });
            for v in sub.verdicts {
                upsert_verdict(&mut pending.verdicts, v);
            }
            for r in &runs {
                upsert_verdict(
                    &mut pending.verdicts,
                    VaVerdict {
                        va_id: r.va_id.clone(),
                        verdict: r.verdict,
                        evidence: r.evidence(),
                    },
                );
                pending.runs.retain(|x| x.va_id != r.va_id);
                pending.runs.push(r.clone());
            }
            let waiting_for: Vec<String> = defn
                .va_list
                .iter()
                .filter(|a| !pending.verdicts.iter().any(|v| v.va_id == a.va_id))
                .map(|a| a.va_id.clone())
                .collect();
            if !waiting_for.is_empty() {
                s.pending_gate = Some(pending.clone());
                return Ok(GateOutcome {
                    gate_id: gate,
                    evaluation: None,
                    pending: Some(pending),
                    waiting_for,
                    runs,
                    transition: None,
                });
            }
            let eval = evaluate_gate(&defn, pending.verdicts)?.with_criteria(criteria);
            let id = s.log_evaluation(eval);
            let logged = s.evaluation(&id).cloned().expect("just logged");
            let transition = match auto_target(&logged).filter(|_| sub.advance) {
                Some(to) => Some(s.apply_transition(to, &id, Utc::now())?),
                None => None,
            };
            Ok(GateOutcome {
                gate_id: gate,
                evaluation: Some(logged),
                pending: None,
                waiting_for,
                runs,
                transition,
            })
        })
    }

    /// Move to `to`, authorized by `gate_ref` or, when absent, by the latest
    /// evaluation of the current phase's exit gate in this phase visit.
    pub fn record_transition(&mut self, to: PhaseId, gate_ref: Option<&str>) -> Result<PhaseTransition> {
        let from = self.state.current_phase;
        if edge_kind(from, to).is_none() {
            return Err(Error::IllegalEdge { from: from.index(), to: to.index() });
        }
        let gate = from.exit_gate();
        let id = match gate_ref {
            Some(r) => r.to_string(),
            None => self
                .state
                .current_evaluation(gate)
                .map(|e| e.evaluation_id.clone())
                .ok_or_else(|| {
                    Error::GateVerdictMismatch(format!("no {gate} evaluation in the current visit of phase {}", self.state.current_phase))
                })?,
        };
        self.mutate(|s| s.apply_transition(to, &id, Utc::now()))
    }

    // ---- phase 5/6 checks

    pub fn scope_inventory(&self) -> Result<ScopeInventory> {
        self.scope_inventory_with(&self.config()?)
    }

    fn scope_inventory_with(&self, cfg: &EngineConfig) -> Result<ScopeInventory> {
        let declared = self
            .state
            .latest_architecture()
            .map(|a| a.module_names())
            .unwrap_or_default();
        let codebase = self.root.join(cfg.scope.codebase_root.as_deref().unwrap_or("."));
        let reqs = self.requirements()?;
        let ids: Vec<String> = reqs.iter().map(|r| r.id.clone()).collect();
        let claims: BTreeMap<String, Vec<String>> =
            reqs.into_iter().map(|r| (r.id, r.covered_by)).collect();
        Ok(scope_inventory_check(&declared, &codebase, &cfg.scope.modules, &ids, &claims))
    }

    pub fn g6_readiness(&self) -> Result<GateVerdict> {
        let modules = self
            .state
            .latest_architecture()
            .map(|a| a.module_names())
            .unwrap_or_default();
        Ok(g6_readiness(&modules, &self.state.micro_checks, &self.requirements()?, &self.state.checklist))
    }

    pub fn record_micro_check(&mut self, module: &str, response: &str, divergences: Vec<Divergence>) -> Result<MicroCheckRecord> {
        let arch = self.state.latest_architecture().ok_or(Error::NoArchitecture)?;
        if !arch.has_module(module) {
            return Err(Error::UnknownModule(module.to_string()));
        }
        let rec = MicroCheckRecord::new(module, response, divergences);
        self.mutate(|s| {
            s.micro_checks.push(rec.clone());
            Ok(rec)
        })
    }

    /// Check a validation requirement off, naming the exact test or manual
    /// step that exercises it.
    pub fn check_requirement(&mut self, requirement_id: &str, note: &str) -> Result<ChecklistEntry> {
        if !self.requirements()?.iter().any(|r| r.id == requirement_id) {
            return Err(Error::UnknownRequirement(requirement_id.to_string()));
        }
        if note.trim().is_empty() {
            return Err(Error::MissingRationale);
        }
        let entry = ChecklistEntry {
            requirement_id: requirement_id.to_string(),
            note: note.trim().to_string(),
            checked_at: Utc::now(),
        };
        self.mutate(|s| {
            s.checklist.retain(|c| c.requirement_id != requirement_id);
            s.checklist.push(entry.clone());
            Ok(entry)
        })
    }

    // ---- prompts and metrics

    pub fn render_prompt(&self, phase: PhaseId, kind: &PromptKind) -> Result<PromptScaffold> {
        render_prompt(&self.state, &self.catalog()?, phase, kind)
    }

    /// Render, write to `specs/prompts/`, and mark embedded feedback consumed.
    pub fn emit_prompt(&mut self, phase: PhaseId, kind: &PromptKind) -> Result<PromptScaffold> {
        if self.lock.is_none() {
            return Err(Error::NotLocked);
        }
        let scaffold = self.render_prompt(phase, kind)?;
        let dir = self.root.join(SPECS_DIR).join("prompts");
        std::fs::create_dir_all(&dir).map_err(|e| io_perm(&dir, "create", e))?;
        write_atomic(&dir.join(&scaffold.file_name), scaffold.rendered_text.as_bytes())?;
        let refs = scaffold.feedback_refs.clone();
        let unconsumed = self
            .state
            .gate_log
            .iter()
            .any(|e| refs.contains(&e.evaluation_id) && e.feedback.as_ref().is_some_and(|f| !f.consumed));
        if unconsumed {
            self.mutate(|s| {
                for e in s.gate_log.iter_mut().filter(|e| refs.contains(&e.evaluation_id)) {
                    if let Some(fb) = e.feedback.as_mut() {
                        fb.consumed = true;
                    }
                }
                Ok(())
            })?;
        }
        Ok(scaffold)
    }

    fn metrics_log(&self) -> Result<PathBuf> {
        let dir = self.root.join(SPECS_DIR).join("lessons");
        std::fs::create_dir_all(&dir).map_err(|e| io_perm(&dir, "create", e))?;
        Ok(dir.join(METRICS_LOG))
    }

    pub fn record_efficiency(&self, e: ContextEfficiency) -> Result<()> {
        append_metric(&self.metrics_log()?, MetricRecord::ContextEfficiency(e)).map(|_| ())
    }

    pub fn record_adoption(&self, input: AdoptionInput) -> Result<AdoptionEstimate> {
        let est = input.evaluate()?;
        append_metric(&self.metrics_log()?, MetricRecord::Adoption(est.clone()))?;
        Ok(est)
    }
}

fn push_artifact(s: &mut ProjectState, phase: PhaseId, version: u32, rel: String, checksum: String) -> Result<Artifact> {
    if s
        .artifacts
        .iter()
        .any(|a| a.phase == phase && a.version == version && a.relative_path == rel)
    {
        return Err(Error::DuplicateArtifact {
            phase: phase.index(),
            version,
            path: rel,
        });
    }
    let a = Artifact {
        artifact_id: format!("A-{:04}", s.artifacts.len() + 1),
        phase,
        version,
        relative_path: rel,
        checksum,
        created_at: Utc::now(),
    };
    s.artifacts.push(a.clone());
    Ok(a)
}

/// Artifacts of `phase` ordered by (version, created_at).
pub fn list_artifacts(state: &ProjectState, phase: PhaseId) -> Vec<Artifact> {
    let mut v: Vec<Artifact> = state.artifacts.iter().filter(|a| a.phase == phase).cloned().collect();
    v.sort_by_key(|a| (a.version, a.created_at));
    v
}
