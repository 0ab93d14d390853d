use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::convergence::ArchitectureVersion;
use crate::critique::{CellAssessment, ConcentrationDecision, CoverageMatrix, Finding};
use crate::discovery::DiscoveryRecord;
use crate::error::{Error, Result};
use crate::gates::{ChecklistEntry, GateEvaluation, MicroCheckRecord, VaVerdict};
use crate::lens::{LensActivation, ProjectContext};
use crate::phase::{edge_kind, EdgeKind, GateId, PhaseId};
use crate::runner::RunOutcome;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTransition {
    pub from_phase: PhaseId,
    pub to_phase: PhaseId,
    pub gate_ref: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub artifact_id: String,
    pub phase: PhaseId,
    pub version: u32,
    /// Relative to the project root, `/`-separated.
    pub relative_path: String,
    pub checksum: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub arch_version: u32,
    pub cell: CellAssessment,
}

/// A gate evaluation still waiting for some agents' verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingGate {
    pub gate_id: GateId,
    pub phase_visit: usize,
    pub verdicts: Vec<VaVerdict>,
    #[serde(default)]
    pub runs: Vec<RunOutcome>,
    pub started_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub project_id: String,
    pub name: String,
    pub current_phase: PhaseId,
    /// Transitions that left phase 3.
    pub iteration_count: u32,
    pub context: ProjectContext,
    pub lens_activations: Vec<LensActivation>,
    pub transitions: Vec<PhaseTransition>,
    pub gate_log: Vec<GateEvaluation>,
    #[serde(default)]
    pub pending_gate: Option<PendingGate>,
    pub artifacts: Vec<Artifact>,
    pub discovery: DiscoveryRecord,
    pub architectures: Vec<ArchitectureVersion>,
    pub findings: Vec<Finding>,
    pub cells: Vec<CellRecord>,
    pub concentration_decisions: Vec<ConcentrationDecision>,
    pub micro_checks: Vec<MicroCheckRecord>,
    pub checklist: Vec<ChecklistEntry>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl ProjectState {
    pub fn new(name: &str, context: ProjectContext, lens_activations: Vec<LensActivation>) -> Self {
        let now = Utc::now();
        ProjectState {
            project_id: uuid::Uuid::new_v4().to_string(),
            name: name.to_string(),
            current_phase: PhaseId::DISCOVERY,
            iteration_count: 0,
            context,
            lens_activations,
            transitions: Vec::new(),
            gate_log: Vec::new(),
            pending_gate: None,
            artifacts: Vec::new(),
            discovery: DiscoveryRecord::default(),
            architectures: Vec::new(),
            findings: Vec::new(),
            cells: Vec::new(),
            concentration_decisions: Vec::new(),
            micro_checks: Vec::new(),
            checklist: Vec::new(),
            created_at: now,
            updated_at: now,
        }
    }

    /// Identifies the current stay in `current_phase`.
    pub fn phase_visit(&self) -> usize {
        self.transitions.len()
    }

    pub fn evaluation(&self, evaluation_id: &str) -> Option<&GateEvaluation> {
        self.gate_log.iter().find(|e| e.evaluation_id == evaluation_id)
    }

    /// Most recent evaluation of `gate` made during the current phase visit.
    pub fn current_evaluation(&self, gate: GateId) -> Option<&GateEvaluation> {
        let visit = self.phase_visit();
        self.gate_log
            .iter()
            .rev()
            .find(|e| e.gate_id == gate && e.phase_visit == visit)
    }

    /// Append to the gate log, assigning id and phase visit.
    pub fn log_evaluation(&mut self, mut eval: GateEvaluation) -> String {
        eval.evaluation_id = format!("GE-{:04}", self.gate_log.len() + 1);
        eval.phase_visit = self.phase_visit();
        let id = eval.evaluation_id.clone();
        self.gate_log.push(eval);
        id
    }

    pub fn latest_architecture(&self) -> Option<&ArchitectureVersion> {
        self.architectures.last()
    }

    pub fn architecture(&self, version: u32) -> Option<&ArchitectureVersion> {
        self.architectures.iter().find(|a| a.version == version)
    }

    pub fn active_lens_ids(&self) -> Vec<String> {
        self.lens_activations
            .iter()
            .filter(|a| a.active)
            .map(|a| a.lens_id.clone())
            .collect()
    }

    /// Latest architecture's modules × active lenses, with the cells recorded
    /// against that version.
    pub fn current_matrix(&self) -> Result<CoverageMatrix> {
        let arch = self.latest_architecture().ok_or(Error::NoArchitecture)?;
        let mut m = CoverageMatrix::new(arch.version, arch.module_names(), self.active_lens_ids());
        m.cells = self
            .cells
            .iter()
            .filter(|c| c.arch_version == arch.version)
            .filter(|c| m.modules.contains(&c.cell.module_ref) && m.active_lenses.contains(&c.cell.lens_ref))
            .map(|c| c.cell.clone())
            .collect();
        Ok(m)
    }

    pub fn finding(&self, id: &str) -> Result<&Finding> {
        self.findings
            .iter()
            .find(|f| f.finding_id == id)
            .ok_or_else(|| Error::UnknownFinding(id.to_string()))
    }

    pub fn finding_mut(&mut self, id: &str) -> Result<&mut Finding> {
        self.findings
            .iter_mut()
            .find(|f| f.finding_id == id)
            .ok_or_else(|| Error::UnknownFinding(id.to_string()))
    }

    /// Check the edge and its authorization without mutating.
    pub fn check_transition(&self, to: PhaseId, eval: &GateEvaluation) -> Result<()> {
        authorize(self.current_phase, to, eval, self.phase_visit())
    }

    /// Append a transition authorized by the logged evaluation `gate_ref`.
    pub fn apply_transition(&mut self, to: PhaseId, gate_ref: &str, now: DateTime<Utc>) -> Result<PhaseTransition> {
        let from = self.current_phase;
        if edge_kind(from, to).is_none() {
            return Err(Error::IllegalEdge {
                from: from.index(),
                to: to.index(),
            });
        }
        let eval = self
            .evaluation(gate_ref)
            .ok_or_else(|| Error::GateVerdictMismatch(format!("no gate evaluation {gate_ref}")))?;
        self.check_transition(to, eval)?;
        let t = PhaseTransition {
            from_phase: from,
            to_phase: to,
            gate_ref: gate_ref.to_string(),
            timestamp: now,
        };
        self.transitions.push(t.clone());
        self.current_phase = to;
        if from == PhaseId::SIMPLIFICATION {
            self.iteration_count += 1;
        }
        self.pending_gate = None;
        Ok(t)
    }

    /// Every structural invariant that a persisted state must satisfy.
    pub fn consistency_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match replay(&self.transitions) {
            Ok((phase, iterations)) => {
                if phase != self.current_phase {
                    problems.push(format!(
                        "transitions replay to phase {phase}, state records {}",
                        self.current_phase
                    ));
                }
                if iterations != self.iteration_count {
                    problems.push(format!(
                        "transitions give iteration count {iterations}, state records {}",
                        self.iteration_count
                    ));
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
        let mut ids = BTreeSet::new();
        for e in &self.gate_log {
            if !ids.insert(e.evaluation_id.as_str()) {
                problems.push(format!("duplicate gate evaluation id {}", e.evaluation_id));
            }
            if e.feedback.is_some() == e.is_approved() {
                problems.push(format!("{}: feedback must be present exactly when rejected", e.evaluation_id));
            }
        }
        for (i, t) in self.transitions.iter().enumerate() {
            match self.evaluation(&t.gate_ref) {
                None => problems.push(format!("transition {i} references unknown evaluation {}", t.gate_ref)),
                Some(e) => {
                    if let Err(err) = authorize(t.from_phase, t.to_phase, e, i) {
                        problems.push(format!("transition {i}: {err}"));
                    }
                }
            }
        }
        let mut keys = BTreeSet::new();
        for a in &self.artifacts {
            if !keys.insert((a.phase, a.version, a.relative_path.as_str())) {
                problems.push(format!("duplicate artifact ({}, {}, {})", a.phase, a.version, a.relative_path));
            }
        }
        let mut fids = BTreeSet::new();
        for f in &self.findings {
            if !fids.insert(f.finding_id.as_str()) {
                problems.push(format!("duplicate finding id {}", f.finding_id));
            }
        }
        for w in self.architectures.windows(2) {
            if w[1].version != w[0].version + 1 {
                problems.push(format!("architecture versions {} and {} are not consecutive", w[0].version, w[1].version));
            }
        }
        if self.architectures.first().is_some_and(|a| a.version != 1) {
            problems.push("first architecture version must be 1".into());
        }
        problems
    }
}

/// Does `eval`, logged during phase visit `visit`, authorize `from -> to`?
pub fn authorize(from: PhaseId, to: PhaseId, eval: &GateEvaluation, visit: usize) -> Result<()> {
    let kind = edge_kind(from, to).ok_or(Error::IllegalEdge {
        from: from.index(),
        to: to.index(),
    })?;
    let mismatch = |msg: String| Err(Error::GateVerdictMismatch(msg));
    if eval.phase_visit != visit {
        return mismatch(format!(
            "{} was not evaluated during the current visit of phase {from}",
            eval.evaluation_id
        ));
    }
    let expected = from.exit_gate();
    if eval.gate_id != expected {
        return mismatch(format!(
            "{from} -> {to} needs a {expected} evaluation, {} is {}",
            eval.evaluation_id, eval.gate_id
        ));
    }
    match kind {
        EdgeKind::Forward if !eval.is_approved() => {
            mismatch(format!("{from} -> {to} needs an approved {expected}, {} was rejected", eval.evaluation_id))
        }
        EdgeKind::LoopBack if eval.is_approved() => {
            mismatch(format!("4 -> 2 needs a rejected G4, {} was approved", eval.evaluation_id))
        }
        EdgeKind::SkipSimplification => {
            let zero = eval
                .criteria
                .as_ref()
                .is_some_and(|c| c.skip_phase3_allowed());
            if !eval.is_approved() || !zero {
                mismatch(format!(
                    "2 -> 4 needs an approved G2 with zero findings, {} does not qualify",
                    eval.evaluation_id
                ))
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}

/// Replay edges from phase 0 using only the legality relation; returns the
/// final phase and the count of transitions leaving phase 3.
pub fn replay(transitions: &[PhaseTransition]) -> Result<(PhaseId, u32)> {
    let mut phase = PhaseId::DISCOVERY;
    let mut iterations = 0;
    for t in transitions {
        if t.from_phase != phase || edge_kind(t.from_phase, t.to_phase).is_none() {
            return Err(Error::IllegalEdge {
                from: t.from_phase.index(),
                to: t.to_phase.index(),
            });
        }
        if phase == PhaseId::SIMPLIFICATION {
            iterations += 1;
        }
        phase = t.to_phase;
    }
    Ok((phase, iterations))
}
