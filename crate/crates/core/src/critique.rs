//! Phase 2 artifacts: findings, the modules x lenses coverage matrix,
//! concentration analysis, triage and the G2 predicate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::GateId;
use crate::verdict::{GateVerdict, VerdictDetail};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Critical,
    Important,
    Suggestion,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Critical, Severity::Important, Severity::Suggestion];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Critical => "critical",
            Severity::Important => "important",
            Severity::Suggestion => "suggestion",
        }
    }

    /// Critical ranks highest.
    fn rank(self) -> u8 {
        match self {
            Severity::Critical => 3,
            Severity::Important => 2,
            Severity::Suggestion => 1,
        }
    }

    pub fn at_least(self, min: Severity) -> bool {
        self.rank() >= min.rank()
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Severity::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown severity {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "rationale", rename_all = "snake_case")]
pub enum Decision {
    CarriedToPhase3,
    ResolveInPhase3,
    AcceptRisk(String),
    Deferred,
}

impl Decision {
    pub fn name(&self) -> &'static str {
        match self {
            Decision::CarriedToPhase3 => "carried_to_phase3",
            Decision::ResolveInPhase3 => "resolve_in_phase3",
            Decision::AcceptRisk(_) => "accept_risk",
            Decision::Deferred => "deferred",
        }
    }

    /// Parse a decision name, attaching `rationale` to accept_risk.
    pub fn parse(name: &str, rationale: Option<&str>) -> Result<Self> {
        match name.trim() {
            "carried_to_phase3" | "carry" => Ok(Decision::CarriedToPhase3),
            "resolve_in_phase3" | "resolve" => Ok(Decision::ResolveInPhase3),
            "accept_risk" | "accept" => Ok(Decision::AcceptRisk(
                rationale.unwrap_or_default().to_string(),
            )),
            "deferred" | "defer" => Ok(Decision::Deferred),
            other => Err(Error::IllegalDecision {
                severity: "any".into(),
                decision: other.to_string(),
            }),
        }
    }
}

/// Legality of a triage decision for a severity.
pub fn decision_allowed(severity: Severity, decision: &Decision) -> bool {
    matches!(
        (severity, decision),
        (Severity::Critical, Decision::CarriedToPhase3)
            | (Severity::Important, Decision::ResolveInPhase3)
            | (Severity::Important, Decision::AcceptRisk(_))
            | (Severity::Suggestion, Decision::ResolveInPhase3)
            | (Severity::Suggestion, Decision::Deferred)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingStatus {
    Open,
    Resolved,
    Accepted,
    Deferred,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub finding_id: String,
    pub module_ref: String,
    pub lens_ref: String,
    pub severity: Severity,
    pub description: String,
    pub decision: Option<Decision>,
    pub status: FindingStatus,
    /// Architecture version under critique when the finding was recorded.
    pub arch_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_note: Option<String>,
}

impl Finding {
    pub fn is_open_critical(&self) -> bool {
        self.severity == Severity::Critical && self.status == FindingStatus::Open
    }
}

/// Apply a triage decision.
pub fn triage_finding(finding: &mut Finding, decision: Decision) -> Result<()> {
    if finding.status != FindingStatus::Open {
        return Err(Error::FindingNotOpen(finding.finding_id.clone()));
    }
    if !decision_allowed(finding.severity, &decision) {
        return Err(Error::IllegalDecision {
            severity: finding.severity.to_string(),
            decision: decision.name().to_string(),
        });
    }
    finding.status = match &decision {
        Decision::AcceptRisk(r) if r.trim().is_empty() => return Err(Error::MissingRationale),
        Decision::AcceptRisk(_) => FindingStatus::Accepted,
        Decision::Deferred => FindingStatus::Deferred,
        Decision::CarriedToPhase3 | Decision::ResolveInPhase3 => FindingStatus::Open,
    };
    finding.decision = Some(decision);
    Ok(())
}

/// Mark an open finding resolved (phase 3 work).
pub fn resolve_finding(finding: &mut Finding, note: impl Into<String>) -> Result<()> {
    if finding.status != FindingStatus::Open {
        return Err(Error::FindingNotOpen(finding.finding_id.clone()));
    }
    if finding.decision.is_none() {
        finding.decision = Some(match finding.severity {
            Severity::Critical => Decision::CarriedToPhase3,
            _ => Decision::ResolveInPhase3,
        });
    }
    finding.status = FindingStatus::Resolved;
    finding.resolution_note = Some(note.into());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "finding_ids", rename_all = "snake_case")]
pub enum CellOutcome {
    Findings(Vec<String>),
    ExplicitNone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellAssessment {
    pub module_ref: String,
    pub lens_ref: String,
    pub outcome: CellOutcome,
    pub assessed_at: DateTime<Utc>,
}

impl CellAssessment {
    pub fn has_findings(&self) -> bool {
        matches!(self.outcome, CellOutcome::Findings(_))
    }
}

/// A finding to be recorded with an assessment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewFinding {
    pub severity: Severity,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "findings", rename_all = "snake_case")]
pub enum AssessmentInput {
    ExplicitNone,
    Findings(Vec<NewFinding>),
}

/// Modules of the architecture under critique crossed with the active lenses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub arch_version: u32,
    pub modules: Vec<String>,
    pub active_lenses: Vec<String>,
    pub cells: Vec<CellAssessment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageCheck {
    pub complete: bool,
    pub expected_cells: usize,
    pub missing: Vec<(String, String)>,
}

impl CoverageMatrix {
    pub fn new(arch_version: u32, modules: Vec<String>, active_lenses: Vec<String>) -> Self {
        CoverageMatrix {
            arch_version,
            modules,
            active_lenses,
            cells: Vec::new(),
        }
    }

    pub fn cell(&self, module: &str, lens: &str) -> Option<&CellAssessment> {
        self.cells
            .iter()
            .find(|c| c.module_ref == module && c.lens_ref == lens)
    }

    fn check_key(&self, module: &str, lens: &str) -> Result<()> {
        if !self.modules.iter().any(|m| m == module) {
            return Err(Error::UnknownModule(module.to_string()));
        }
        if !self.active_lenses.iter().any(|l| l == lens) {
            return Err(Error::InactiveLens(lens.to_string()));
        }
        Ok(())
    }

    /// Upsert a cell. New findings get ids from `next_id` and are returned
    /// for the caller's finding store; findings accumulate on a cell, and a
    /// cell that already has findings cannot be reset to explicit none.
    pub fn record_assessment(
        &mut self,
        module: &str,
        lens: &str,
        input: AssessmentInput,
        mut next_id: impl FnMut() -> String,
    ) -> Result<Vec<Finding>> {
        self.check_key(module, lens)?;
        let existing = self
            .cells
            .iter()
            .position(|c| c.module_ref == module && c.lens_ref == lens);
        let (outcome, created) = match input {
            AssessmentInput::ExplicitNone => {
                if existing.is_some_and(|i| self.cells[i].has_findings()) {
                    return Err(Error::CellHasFindings {
                        module: module.to_string(),
                        lens: lens.to_string(),
                    });
                }
                (CellOutcome::ExplicitNone, Vec::new())
            }
            AssessmentInput::Findings(list) => {
                if list.is_empty() {
                    return Err(Error::EmptyFindings);
                }
                let created: Vec<Finding> = list
                    .into_iter()
                    .map(|nf| Finding {
                        finding_id: next_id(),
                        module_ref: module.to_string(),
                        lens_ref: lens.to_string(),
                        decision: (nf.severity == Severity::Critical)
                            .then_some(Decision::CarriedToPhase3),
                        severity: nf.severity,
                        description: nf.description,
                        status: FindingStatus::Open,
                        arch_version: self.arch_version,
                        resolution_note: None,
                    })
                    .collect();
                let mut ids = match existing.map(|i| &self.cells[i].outcome) {
                    Some(CellOutcome::Findings(ids)) => ids.clone(),
                    _ => Vec::new(),
                };
                ids.extend(created.iter().map(|f| f.finding_id.clone()));
                (CellOutcome::Findings(ids), created)
            }
        };
        let cell = CellAssessment {
            module_ref: module.to_string(),
            lens_ref: lens.to_string(),
            outcome,
            assessed_at: Utc::now(),
        };
        match existing {
            Some(i) => self.cells[i] = cell,
            None => self.cells.push(cell),
        }
        Ok(created)
    }

    pub fn coverage_complete(&self) -> CoverageCheck {
        let assessed: BTreeSet<(&str, &str)> = self
            .cells
            .iter()
            .map(|c| (c.module_ref.as_str(), c.lens_ref.as_str()))
            .collect();
        let mut missing = Vec::new();
        for m in &self.modules {
            for l in &self.active_lenses {
                if !assessed.contains(&(m.as_str(), l.as_str())) {
                    missing.push((m.clone(), l.clone()));
                }
            }
        }
        CoverageCheck {
            complete: missing.is_empty(),
            expected_cells: self.modules.len() * self.active_lenses.len(),
            missing,
        }
    }

    /// Ids of findings referenced by in-scope cells.
    pub fn finding_ids(&self) -> BTreeSet<&str> {
        self.cells
            .iter()
            .filter(|c| self.modules.contains(&c.module_ref) && self.active_lenses.contains(&c.lens_ref))
            .flat_map(|c| match &c.outcome {
                CellOutcome::Findings(ids) => ids.iter().map(String::as_str).collect(),
                CellOutcome::ExplicitNone => Vec::new(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcentrationDecision {
    /// `module:<name>` or `lens:<id>`.
    pub flag: String,
    pub decision: String,
    pub arch_version: u32,
}

pub fn module_flag(module: &str) -> String {
    format!("module:{module}")
}

pub fn lens_flag(lens: &str) -> String {
    format!("lens:{lens}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub per_module: BTreeMap<String, f64>,
    pub per_lens: BTreeMap<String, f64>,
    /// Redesign candidates: findings under every active lens.
    pub module_flags: Vec<String>,
    /// Systemic failures: findings under every module.
    pub lens_flags: Vec<String>,
    pub decisions: Vec<ConcentrationDecision>,
    pub min_severity: Option<Severity>,
}

impl ConcentrationReport {
    pub fn flag_keys(&self) -> Vec<String> {
        self.module_flags
            .iter()
            .map(|m| module_flag(m))
            .chain(self.lens_flags.iter().map(|l| lens_flag(l)))
            .collect()
    }

    pub fn undecided_flags(&self) -> Vec<String> {
        self.flag_keys()
            .into_iter()
            .filter(|k| {
                !self
                    .decisions
                    .iter()
                    .any(|d| &d.flag == k && !d.decision.trim().is_empty())
            })
            .collect()
    }
}

/// Fractions of cells with findings per module and per lens. A cell counts
/// when it references at least one finding at or above `min_severity`.
pub fn concentration_analysis(
    matrix: &CoverageMatrix,
    findings: &[Finding],
    min_severity: Option<Severity>,
    decisions: &[ConcentrationDecision],
) -> Result<ConcentrationReport> {
    let check = matrix.coverage_complete();
    if !check.complete {
        return Err(Error::MatrixIncomplete(check.missing.len()));
    }
    let by_id: BTreeMap<&str, &Finding> =
        findings.iter().map(|f| (f.finding_id.as_str(), f)).collect();
    let counts = |cell: &CellAssessment| match &cell.outcome {
        CellOutcome::ExplicitNone => false,
        CellOutcome::Findings(ids) => ids.iter().any(|id| match min_severity {
            None => true,
            Some(min) => by_id.get(id.as_str()).is_some_and(|f| f.severity.at_least(min)),
        }),
    };
    let hit: BTreeSet<(&str, &str)> = matrix
        .cells
        .iter()
        .filter(|c| counts(c))
        .map(|c| (c.module_ref.as_str(), c.lens_ref.as_str()))
        .collect();

    let n_lenses = matrix.active_lenses.len();
    let n_modules = matrix.modules.len();
    let mut per_module = BTreeMap::new();
    let mut module_flags = Vec::new();
    for m in &matrix.modules {
        let k = matrix
            .active_lenses
            .iter()
            .filter(|l| hit.contains(&(m.as_str(), l.as_str())))
            .count();
        let frac = if n_lenses == 0 { 0.0 } else { k as f64 / n_lenses as f64 };
        if n_lenses > 0 && k == n_lenses {
            module_flags.push(m.clone());
        }
        per_module.insert(m.clone(), frac);
    }
    let mut per_lens = BTreeMap::new();
    let mut lens_flags = Vec::new();
    for l in &matrix.active_lenses {
        let k = matrix
            .modules
            .iter()
            .filter(|m| hit.contains(&(m.as_str(), l.as_str())))
            .count();
        let frac = if n_modules == 0 { 0.0 } else { k as f64 / n_modules as f64 };
        if n_modules > 0 && k == n_modules {
            lens_flags.push(l.clone());
        }
        per_lens.insert(l.clone(), frac);
    }
    Ok(ConcentrationReport {
        per_module,
        per_lens,
        module_flags,
        lens_flags,
        decisions: decisions
            .iter()
            .filter(|d| d.arch_version == matrix.arch_version)
            .cloned()
            .collect(),
        min_severity,
    })
}

/// G2: complete matrix, every important decided, every concentration flag
/// decided. Skipping phase 3 is allowed when no finding exists at all.
pub fn evaluate_g2(
    matrix: &CoverageMatrix,
    findings: &[Finding],
    report: Option<&ConcentrationReport>,
) -> GateVerdict {
    let mut failures = Vec::new();
    let check = matrix.coverage_complete();
    if !check.complete {
        let listed: Vec<String> = check
            .missing
            .iter()
            .map(|(m, l)| format!("({m}, {l})"))
            .collect();
        failures.push(format!(
            "coverage matrix incomplete: {} of {} cells missing: {}",
            check.missing.len(),
            check.expected_cells,
            listed.join(", ")
        ));
    }
    let ids = matrix.finding_ids();
    let in_scope: Vec<&Finding> = findings
        .iter()
        .filter(|f| ids.contains(f.finding_id.as_str()))
        .collect();
    for f in &in_scope {
        if f.severity == Severity::Important && f.decision.is_none() {
            failures.push(format!(
                "important finding {} ({}, {}) has no decision",
                f.finding_id, f.module_ref, f.lens_ref
            ));
        }
    }
    if check.complete {
        match report {
            Some(r) => {
                for flag in r.undecided_flags() {
                    failures.push(format!("concentration flag {flag} has no recorded decision"));
                }
            }
            None => failures.push("concentration analysis missing".to_string()),
        }
    }
    GateVerdict::from_failures(
        GateId::G2,
        failures,
        VerdictDetail::Critique {
            total_findings: in_scope.len(),
            skip_phase3_allowed: in_scope.is_empty(),
        },
    )
}
