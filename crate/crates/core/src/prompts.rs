//! Prompt scaffolds: text the operator pastes into whatever assistant they
//! use. The engine never calls a model.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critique::FindingStatus;
use crate::discovery::{LevelStatus, G0_THRESHOLD};
use crate::error::{Error, Result};
use crate::gates::{FeedbackRecord, MICRO_CHECK_QUESTION};
use crate::lens::{ContextFlag, LensCatalog};
use crate::phase::PhaseId;
use crate::store::ProjectState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "snake_case")]
pub enum PromptKind {
    DiscoveryQuestions,
    TeachbackRequest,
    LensCritique(String),
    Simplification,
    MicroCheck(String),
}

impl PromptKind {
    pub fn name(&self) -> &'static str {
        match self {
            PromptKind::DiscoveryQuestions => "discovery_questions",
            PromptKind::TeachbackRequest => "teachback_request",
            PromptKind::LensCritique(_) => "lens_critique",
            PromptKind::Simplification => "simplification",
            PromptKind::MicroCheck(_) => "micro_check",
        }
    }

    pub fn target(&self) -> Option<&str> {
        match self {
            PromptKind::LensCritique(t) | PromptKind::MicroCheck(t) => Some(t),
            _ => None,
        }
    }

    pub fn phase(&self) -> PhaseId {
        match self {
            PromptKind::DiscoveryQuestions | PromptKind::TeachbackRequest => PhaseId::DISCOVERY,
            PromptKind::LensCritique(_) => PhaseId::CRITIQUE,
            PromptKind::Simplification => PhaseId::SIMPLIFICATION,
            PromptKind::MicroCheck(_) => PhaseId::CODE,
        }
    }

    pub fn file_name(&self) -> String {
        let mut s = format!("phase{}-{}", self.phase(), self.name());
        if let Some(t) = self.target() {
            s.push('-');
            s.extend(t.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }));
        }
        s.push_str(".md");
        s
    }

    /// `name` plus the lens id or module name for the targeted kinds.
    pub fn parse(name: &str, target: Option<&str>) -> Result<Self> {
        let need = |t: Option<&str>| -> Result<String> {
            t.filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().to_string())
                .ok_or_else(|| Error::InvalidArgument(format!("prompt kind {name} needs a target")))
        };
        match name.trim().replace('-', "_").as_str() {
            "discovery_questions" => Ok(PromptKind::DiscoveryQuestions),
            "teachback_request" => Ok(PromptKind::TeachbackRequest),
            "lens_critique" => Ok(PromptKind::LensCritique(need(target)?)),
            "simplification" => Ok(PromptKind::Simplification),
            "micro_check" => Ok(PromptKind::MicroCheck(need(target)?)),
            other => Err(Error::InvalidArgument(format!("unknown prompt kind {other:?}"))),
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.target() {
            Some(t) => write!(f, "{}:{t}", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

/// Accepts `lens_critique:security` style.
impl FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((k, t)) => PromptKind::parse(k, Some(t)),
            None => PromptKind::parse(s, None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptScaffold {
    pub phase: PhaseId,
    pub kind: PromptKind,
    /// Path under `specs/prompts/`.
    pub file_name: String,
    /// Gate evaluations whose feedback is embedded.
    pub feedback_refs: Vec<String>,
    pub rendered_text: String,
}

/// Rejection feedback that conditions the next attempt at `phase`: rejected
/// evaluations of the phase's exit gate in the current visit, plus the G4
/// rejection that authorized a loop back into phase 2.
pub fn relevant_feedback(state: &ProjectState, phase: PhaseId) -> Vec<(String, &FeedbackRecord)> {
    if phase != state.current_phase {
        return Vec::new();
    }
    let visit = state.phase_visit();
    let mut out: Vec<(String, &FeedbackRecord)> = Vec::new();
    if let Some(t) = state.transitions.last().filter(|t| t.to_phase == phase) {
        if let Some(e) = state.evaluation(&t.gate_ref) {
            if let Some(fb) = &e.feedback {
                out.push((e.evaluation_id.clone(), fb));
            }
        }
    }
    for e in &state.gate_log {
        if e.phase_visit == visit && e.gate_id == phase.exit_gate() {
            if let Some(fb) = &e.feedback {
                out.push((e.evaluation_id.clone(), fb));
            }
        }
    }
    out
}

/// Deterministic in (phase, kind, project state); consumption flags on
/// feedback records do not affect the text.
pub fn render_prompt(state: &ProjectState, catalog: &LensCatalog, phase: PhaseId, kind: &PromptKind) -> Result<PromptScaffold> {
    if kind.phase() != phase {
        return Err(Error::KindPhaseMismatch {
            kind: kind.name().to_string(),
            phase: phase.index(),
        });
    }
    let mut t = String::new();
    match kind {
        PromptKind::DiscoveryQuestions => discovery_questions(&mut t, state),
        PromptKind::TeachbackRequest => teachback_request(&mut t, state),
        PromptKind::LensCritique(lens_id) => lens_critique(&mut t, state, catalog, lens_id)?,
        PromptKind::Simplification => simplification(&mut t, state)?,
        PromptKind::MicroCheck(module) => micro_check(&mut t, state, module)?,
    }
    let feedback = relevant_feedback(state, phase);
    if !feedback.is_empty() {
        t.push_str("\n## Gate feedback to address\n\n");
        t.push_str("The previous attempt was rejected. Address every item below before anything else.\n");
        for (id, fb) in &feedback {
            let _ = writeln!(t, "\n{} rejected ({id}):", fb.gate_id);
            for item in &fb.items {
                let _ = writeln!(t, "- [{}] {}", item.va_id, item.message.trim());
            }
        }
    }
    Ok(PromptScaffold {
        phase,
        kind: kind.clone(),
        file_name: kind.file_name(),
        feedback_refs: feedback.into_iter().map(|(id, _)| id).collect(),
        rendered_text: t,
    })
}

fn context_lines(t: &mut String, state: &ProjectState) {
    let on: Vec<&str> = ContextFlag::ALL
        .iter()
        .filter(|f| state.context.get(**f))
        .map(|f| f.as_str())
        .collect();
    let _ = writeln!(
        t,
        "Context flags set: {}",
        if on.is_empty() { "none".to_string() } else { on.join(", ") }
    );
}

fn discovery_questions(t: &mut String, state: &ProjectState) {
    let s = &state.discovery.score;
    let _ = writeln!(t, "# Discovery questions: {}\n", state.name);
    t.push_str(
        "No design and no code exist yet. Do not propose solutions. Ask the questions \
         whose answers are still missing, starting with the weakest criteria below. \
         Prefer questions that could reveal the problem is different from how it was stated.\n\n",
    );
    t.push_str("| # | Criterion | Awarded | Max |\n|---|---|---|---|\n");
    for c in &s.criteria {
        let _ = writeln!(t, "| {} | {} | {} | {} |", c.criterion_id, c.name, c.awarded, c.max_points);
    }
    let _ = writeln!(
        t,
        "\nCurrent total: {}/100. G0 requires at least {G0_THRESHOLD} and explicit operator confirmation.\n",
        s.total
    );
    t.push_str("Semantic ladder (a level is worked only after the one above it converged):\n");
    for l in &state.discovery.hsa.levels {
        let status = match l.status {
            LevelStatus::Converged => "converged",
            LevelStatus::Open => "open",
        };
        let _ = write!(t, "{}. {} [{status}]", l.level, l.name);
        if !l.notes.trim().is_empty() {
            let _ = write!(t, ": {}", l.notes.trim());
        }
        t.push('\n');
    }
    t.push('\n');
    context_lines(t, state);
}

fn teachback_request(t: &mut String, state: &ProjectState) {
    let n = state.discovery.teachbacks.len();
    let _ = writeln!(t, "# Teach-back request: {} (cycle {})\n", state.name, n + 1);
    t.push_str(
        "Restate the problem in the vocabulary of its domain, as you would explain it to a \
         practitioner of that domain. Use no implementation terms. State who has the problem, \
         what success looks like for them, and what is deliberately out of scope.\n\n\
         The operator will judge the restatement and correct what is wrong. Do not ask whether \
         it is correct; mark the parts you are least sure of.\n",
    );
    if let Some(last) = state.discovery.teachbacks.last() {
        let _ = writeln!(t, "\nPrevious restatement (cycle {}):\n{}", last.cycle, last.synthesis.trim());
        if let crate::discovery::ValidationOutcome::Corrected(c) = &last.validation_outcome {
            let _ = writeln!(t, "\nOperator correction:\n{}", c.trim());
        }
    }
}

fn architecture_block(t: &mut String, arch: &crate::convergence::ArchitectureVersion) {
    let _ = writeln!(t, "## Architecture v{}\n", arch.version);
    t.push_str("Modules:\n");
    for m in &arch.modules {
        let _ = writeln!(t, "- {}: {}", m.name, m.responsibility.trim());
    }
    if !arch.interfaces.is_empty() {
        t.push_str("\nInterfaces:\n");
        for i in &arch.interfaces {
            let _ = writeln!(t, "- {} -> {}: {}", i.provider, i.consumer, i.contract.trim());
        }
    }
    if !arch.assumptions.is_empty() {
        t.push_str("\nAssumptions:\n");
        for a in &arch.assumptions {
            let _ = writeln!(t, "- {a}");
        }
    }
    if !arch.negative_scope.is_empty() {
        t.push_str("\nDeliberately out of scope:\n");
        for a in &arch.negative_scope {
            let _ = writeln!(t, "- {a}");
        }
    }
}

fn lens_critique(t: &mut String, state: &ProjectState, catalog: &LensCatalog, lens_id: &str) -> Result<()> {
    let lens = catalog
        .get(lens_id)
        .ok_or_else(|| Error::UnknownLens(lens_id.to_string()))?;
    if !state.active_lens_ids().iter().any(|l| l == lens_id) {
        return Err(Error::InactiveLens(lens_id.to_string()));
    }
    let arch = state.latest_architecture().ok_or(Error::NoArchitecture)?;
    let _ = writeln!(t, "# Lens critique: {} ({})\n", lens.name, lens.lens_id);
    let _ = writeln!(t, "Central question: {}", lens.central_question);
    let _ = writeln!(t, "Failure class: {}\n", lens.failure_class);
    t.push_str(
        "Refute this design; do not validate it. Answer the central question for every module \
         listed below. Give each finding a severity: critical, important or suggestion. For a \
         module with nothing to report under this lens, write \"none\" for it explicitly.\n\n",
    );
    architecture_block(t, arch);
    let prior: Vec<_> = state
        .findings
        .iter()
        .filter(|f| f.lens_ref == lens_id && f.arch_version == arch.version)
        .collect();
    if !prior.is_empty() {
        t.push_str("\nAlready recorded under this lens:\n");
        for f in prior {
            let _ = writeln!(t, "- {} [{}] {}: {}", f.finding_id, f.severity, f.module_ref, f.description);
        }
    }
    Ok(())
}

fn simplification(t: &mut String, state: &ProjectState) -> Result<()> {
    let arch = state.latest_architecture().ok_or(Error::NoArchitecture)?;
    let c = crate::convergence::complexity(arch);
    let _ = writeln!(t, "# Simplification: v{} -> v{}\n", arch.version, arch.version + 1);
    let _ = writeln!(
        t,
        "Produce architecture v{} that resolves the open findings below. Complexity \
         (modules + interfaces) is {} now and must not increase. Remove before adding. \
         Declare renamed modules with renamed_from.\n",
        arch.version + 1,
        c.total
    );
    architecture_block(t, arch);
    let open: Vec<_> = state
        .findings
        .iter()
        .filter(|f| f.status == FindingStatus::Open)
        .collect();
    t.push_str("\n## Open findings\n\n");
    if open.is_empty() {
        t.push_str("none\n");
    }
    for f in open {
        let _ = writeln!(t, "- {} [{}] {} / {}: {}", f.finding_id, f.severity, f.module_ref, f.lens_ref, f.description);
    }
    Ok(())
}

fn micro_check(t: &mut String, state: &ProjectState, module: &str) -> Result<()> {
    let arch = state.latest_architecture().ok_or(Error::NoArchitecture)?;
    let decl = arch
        .modules
        .iter()
        .find(|m| m.name == module)
        .ok_or_else(|| Error::UnknownModule(module.to_string()))?;
    let _ = writeln!(t, "# Micro-check: {module}\n");
    let _ = writeln!(t, "Question: {MICRO_CHECK_QUESTION}\n");
    let _ = writeln!(
        t,
        "List every point where the implementation of `{module}` diverges from specs/. Cite the \
         spec file and the implementation location for each divergence. \"No divergence\" is an \
         answer that needs evidence.\n"
    );
    let _ = writeln!(t, "Specified responsibility: {}", decl.responsibility.trim());
    let related: Vec<_> = arch
        .interfaces
        .iter()
        .filter(|i| i.provider == module || i.consumer == module)
        .collect();
    if !related.is_empty() {
        t.push_str("\nInterfaces:\n");
        for i in related {
            let _ = writeln!(t, "- {} -> {}: {}", i.provider, i.consumer, i.contract.trim());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_parsing_and_files() {
        assert_eq!("lens_critique:security".parse::<PromptKind>().unwrap(), PromptKind::LensCritique("security".into()));
        assert_eq!("micro-check:parser".parse::<PromptKind>().unwrap(), PromptKind::MicroCheck("parser".into()));
        assert!("lens_critique".parse::<PromptKind>().is_err());
        assert!("summarize".parse::<PromptKind>().is_err());
        assert_eq!(PromptKind::MicroCheck("a/b".into()).file_name(), "phase5-micro_check-a_b.md");
        assert_eq!(PromptKind::Simplification.file_name(), "phase3-simplification.md");
    }

    #[test]
    fn phase_legality() {
        let state = ProjectState::new("t", Default::default(), LensCatalog::default().select(&Default::default()));
        let err = render_prompt(&state, &LensCatalog::default(), PhaseId::ARCHITECTURE, &PromptKind::LensCritique("security".into()));
        assert!(matches!(err, Err(Error::KindPhaseMismatch { .. })));
        let ok = render_prompt(&state, &LensCatalog::default(), PhaseId::DISCOVERY, &PromptKind::DiscoveryQuestions).unwrap();
        assert!(ok.rendered_text.contains("Current total: 0/100"));
        let again = render_prompt(&state, &LensCatalog::default(), PhaseId::DISCOVERY, &PromptKind::DiscoveryQuestions).unwrap();
        assert_eq!(ok, again);
    }
}
