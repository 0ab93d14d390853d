//! Every operation reachable from the command line or the HTTP API.
//!
//! Both front ends parse their input into an [`Op`] and hand it to
//! [`execute`], so a mutation exists in one place only.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use converge_core::critique::{AssessmentInput, CellOutcome, Decision, Severity};
use converge_core::discovery::{TeachBackIteration, ValidationOutcome};
use converge_core::gates::Divergence;
use converge_core::lens::{ContextFlag, ProjectContext};
use converge_core::metrics::{context_efficiency, AdoptionInput};
use converge_core::prompts::PromptKind;
use converge_core::store::{GateSubmission, Project};
use converge_core::{GateId, GateVerdict, PhaseId, Result, Verdict};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Init { name: String, flags: Vec<ContextFlag> },
    Status,
    Show,
    LensList { active_only: bool },
    SetContext { flag: ContextFlag, value: bool, rationale: Option<String> },
    LensRationale { lens_id: String, rationale: String },
    ScoreShow,
    /// Awards as (criterion id, points), then an optional confirmation change.
    Score { awards: Vec<(u8, u32)>, confirmed: Option<bool> },
    Teachback { collection_notes: String, synthesis: String, correction: Option<String> },
    HsaShow,
    HsaConverge { level: u8 },
    HsaNotes { level: u8, notes: String },
    HsaRetroact { from_level: u8, to_level: u8, reason: String },
    ArchRegister { path: PathBuf },
    ArchList,
    ConvergeCheck,
    Assess { module: String, lens: String, input: AssessmentInput },
    Triage { finding_id: String, decision: Decision },
    Resolve { finding_id: String, note: String },
    FindingList { open_only: bool },
    MatrixShow { min_severity: Option<Severity> },
    MatrixCheck,
    MatrixDecide { flag: String, decision: String },
    GateShow { gate: GateId },
    GateSubmit { gate: GateId, submission: GateSubmission },
    Transition { to: PhaseId, gate_ref: Option<String> },
    ArtifactAdd { phase: PhaseId, version: u32, path: PathBuf },
    ArtifactList { phase: PhaseId },
    ArtifactVerify,
    MicroCheck { module: String, response: String, divergences: Vec<Divergence> },
    Checklist { requirement_id: String, note: String },
    Scope,
    MetricsEfficiency { relevant_tokens: u64, total_tokens: u64 },
    MetricsAdoption { input: AdoptionInput },
    Prompt { phase: PhaseId, kind: PromptKind },
}

/// Operations that change the project directory. `init` is excluded: the
/// API serves a project that already exists.
pub const MUTATING_OPS: &[&str] = &[
    "set_context",
    "lens_rationale",
    "score",
    "teachback",
    "hsa_converge",
    "hsa_notes",
    "hsa_retroact",
    "arch_register",
    "assess",
    "triage",
    "resolve",
    "matrix_decide",
    "gate_submit",
    "transition",
    "artifact_add",
    "microcheck",
    "checklist",
    "metrics_efficiency",
    "metrics_adoption",
    "prompt",
];

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Init { .. } => "init",
            Op::Status => "status",
            Op::Show => "show",
            Op::LensList { .. } => "lens_list",
            Op::SetContext { .. } => "set_context",
            Op::LensRationale { .. } => "lens_rationale",
            Op::ScoreShow => "score_show",
            Op::Score { .. } => "score",
            Op::Teachback { .. } => "teachback",
            Op::HsaShow => "hsa_show",
            Op::HsaConverge { .. } => "hsa_converge",
            Op::HsaNotes { .. } => "hsa_notes",
            Op::HsaRetroact { .. } => "hsa_retroact",
            Op::ArchRegister { .. } => "arch_register",
            Op::ArchList => "arch_list",
            Op::ConvergeCheck => "converge_check",
            Op::Assess { .. } => "assess",
            Op::Triage { .. } => "triage",
            Op::Resolve { .. } => "resolve",
            Op::FindingList { .. } => "finding_list",
            Op::MatrixShow { .. } => "matrix_show",
            Op::MatrixCheck => "matrix_check",
            Op::MatrixDecide { .. } => "matrix_decide",
            Op::GateShow { .. } => "gate_show",
            Op::GateSubmit { .. } => "gate_submit",
            Op::Transition { .. } => "transition",
            Op::ArtifactAdd { .. } => "artifact_add",
            Op::ArtifactList { .. } => "artifact_list",
            Op::ArtifactVerify => "artifact_verify",
            Op::MicroCheck { .. } => "microcheck",
            Op::Checklist { .. } => "checklist",
            Op::Scope => "scope",
            Op::MetricsEfficiency { .. } => "metrics_efficiency",
            Op::MetricsAdoption { .. } => "metrics_adoption",
            Op::Prompt { .. } => "prompt",
        }
    }

    pub fn mutates(&self) -> bool {
        MUTATING_OPS.contains(&self.name())
    }
}

/// Result of an operation. `passed` is false when a check or gate came out
/// negative; the operation itself still succeeded.
#[derive(Debug, Clone)]
pub struct Reply {
    pub data: Value,
    pub passed: bool,
    pub text: String,
}

impl Reply {
    fn new(data: impl Serialize, text: String) -> Self {
        Reply {
            data: serde_json::to_value(data).expect("payload serializes"),
            passed: true,
            text,
        }
    }

    fn passed(mut self, passed: bool) -> Self {
        self.passed = passed;
        self
    }
}

fn resolve_path(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

pub fn execute(root: &Path, op: Op) -> Result<Reply> {
    if let Op::Init { name, flags } = op {
        let mut ctx = ProjectContext::default();
        for f in flags {
            ctx.set(f, true);
        }
        let p = Project::init(root, &name, ctx)?;
        let s = p.state();
        let text = format!(
            "initialized project {} ({}) at {}\n{} lenses active",
            s.name,
            s.project_id,
            root.display(),
            s.active_lens_ids().len()
        );
        return Ok(Reply::new(s, text));
    }
    let mut p = if op.mutates() {
        Project::open_locked(root)?
    } else {
        Project::open(root)?
    };
    apply(&mut p, op)
}

fn verdict_lines(out: &mut String, v: &GateVerdict) {
    let _ = writeln!(out, "{} criteria: {}", v.gate_id, v.verdict);
    for f in &v.failures {
        let _ = writeln!(out, "  - {f}");
    }
    for a in &v.advisories {
        let _ = writeln!(out, "  note: {a}");
    }
}

fn apply(p: &mut Project, op: Op) -> Result<Reply> {
    let root = p.root().to_path_buf();
    Ok(match op {
        Op::Init { .. } => unreachable!("handled by execute"),
        Op::Status => {
            let r = p.status();
            let mut t = format!(
                "project {} ({})\nphase {} {}, iteration {}\nexit gate {}",
                r.name, r.project_id, r.current_phase, r.phase_name, r.iteration_count, r.exit_gate
            );
            match &r.pending_gate {
                Some(g) => {
                    let got: Vec<&str> = g.verdicts.iter().map(|v| v.va_id.as_str()).collect();
                    let _ = write!(t, "\npending gate {} (verdicts from: {})", g.gate_id, got.join(", "));
                }
                None => t.push_str("\npending gate: none"),
            }
            if let Some(e) = &r.last_evaluation {
                let _ = write!(t, "\nlast evaluation {} {} {}", e.evaluation_id, e.gate_id, e.result);
            }
            if let Some(v) = r.architecture_version {
                let _ = write!(t, "\narchitecture v{v}, {} open findings", r.open_findings);
            }
            if r.complete {
                t.push_str("\nprocess complete");
            }
            Reply::new(r, t)
        }
        Op::Show => {
            let t = serde_json::to_string_pretty(p.state()).expect("state serializes");
            Reply::new(p.state(), t)
        }
        Op::LensList { active_only } => lens_list(p, active_only)?,
        Op::SetContext { flag, value, rationale } => {
            p.set_context_flag(flag, value)?;
            let catalog = p.catalog()?;
            let ids: Vec<String> = catalog.lens_for_flag(flag).map(|l| l.lens_id.clone()).collect();
            if let Some(r) = rationale {
                for id in &ids {
                    p.set_lens_rationale(id, &r)?;
                }
            }
            let touched: Vec<_> = p
                .state()
                .lens_activations
                .iter()
                .filter(|a| ids.contains(&a.lens_id))
                .cloned()
                .collect();
            let mut t = format!("{} = {value}", flag.as_str());
            for a in &touched {
                let _ = write!(t, "\n  {} {}", a.lens_id, if a.active { "active" } else { "inactive" });
            }
            Reply::new(json!({ "flag": flag.as_str(), "value": value, "lenses": touched }), t)
        }
        Op::LensRationale { lens_id, rationale } => {
            let a = p.set_lens_rationale(&lens_id, &rationale)?;
            let t = format!("{}: rationale recorded", a.lens_id);
            Reply::new(a, t)
        }
        Op::ScoreShow => score_reply(p)?,
        Op::Score { awards, confirmed } => {
            // validate everything before the first write
            let mut probe = p.state().discovery.score.clone();
            for &(id, pts) in &awards {
                probe.set_award(id, pts)?;
            }
            for (id, pts) in awards {
                p.set_award(id, pts)?;
            }
            if let Some(c) = confirmed {
                p.set_confirmation(c)?;
            }
            score_reply(p)?
        }
        Op::Teachback { collection_notes, synthesis, correction } => {
            let it = TeachBackIteration {
                cycle: p.state().discovery.teachbacks.len() as u32 + 1,
                collection_notes,
                synthesis,
                validation_outcome: match correction {
                    Some(c) => ValidationOutcome::Corrected(c),
                    None => ValidationOutcome::Accepted,
                },
                score_snapshot: p.state().discovery.score.clone(),
            };
            p.record_teachback(it.clone())?;
            let t = format!("teach-back cycle {} recorded", it.cycle);
            Reply::new(it, t)
        }
        Op::HsaShow => hsa_reply(&p.state().discovery.hsa),
        Op::HsaConverge { level } => hsa_reply(&p.hsa_converge(level)?),
        Op::HsaNotes { level, notes } => hsa_reply(&p.hsa_notes(level, &notes)?),
        Op::HsaRetroact { from_level, to_level, reason } => {
            hsa_reply(&p.hsa_retroact(from_level, to_level, &reason)?)
        }
        Op::ArchRegister { path } => {
            let v = p.register_architecture(&resolve_path(&root, &path))?;
            let t = format!(
                "registered architecture v{}: {} modules, {} interfaces",
                v.version,
                v.modules.len(),
                v.interfaces.len()
            );
            Reply::new(v, t)
        }
        Op::ArchList => {
            let mut t = String::new();
            for a in &p.state().architectures {
                let _ = writeln!(t, "v{}: {}", a.version, a.module_names().join(", "));
            }
            if t.is_empty() {
                t.push_str("no architecture versions registered");
            }
            Reply::new(&p.state().architectures, t.trim_end().to_string())
        }
        Op::ConvergeCheck => {
            let c = p.convergence_preview()?;
            let mut t = String::new();
            match &c.diff {
                Some(d) => {
                    let _ = writeln!(
                        t,
                        "v{} -> v{}: {} of {} elements changed, ratio {:.4} (threshold {}{})",
                        d.from_version,
                        d.to_version,
                        d.changed,
                        d.union_size,
                        d.change_ratio,
                        c.threshold,
                        if c.threshold_overridden { ", overridden" } else { "" }
                    );
                }
                None => t.push_str("no architecture version registered\n"),
            }
            for (v, m) in &c.complexity {
                let _ = writeln!(t, "  v{v} complexity {} ({} modules, {} interfaces)", m.total, m.module_count, m.interface_count);
            }
            if !c.open_criticals.is_empty() {
                let _ = writeln!(t, "open criticals: {}", c.open_criticals.join(", "));
            }
            let passed = c.g4.as_ref().is_some_and(|g| g.verdict == Verdict::Approved);
            if let Some(g) = &c.g4 {
                verdict_lines(&mut t, g);
            }
            Reply::new(&c, t.trim_end().to_string()).passed(passed)
        }
        Op::Assess { module, lens, input } => {
            let created = p.record_assessment(&module, &lens, input)?;
            let mut t = format!("assessed ({module}, {lens})");
            for f in &created {
                let _ = write!(
                    t,
                    "\n  {} {} {}",
                    f.finding_id,
                    f.severity.as_str(),
                    f.decision.as_ref().map_or("untriaged", |d| d.name())
                );
            }
            let cell = p.matrix()?.cell(&module, &lens).cloned();
            Reply::new(json!({ "cell": cell, "findings": created }), t)
        }
        Op::Triage { finding_id, decision } => {
            let f = p.triage(&finding_id, decision)?;
            let t = format!("{}: {}", f.finding_id, f.decision.as_ref().map_or("", |d| d.name()));
            Reply::new(f, t)
        }
        Op::Resolve { finding_id, note } => {
            let f = p.resolve(&finding_id, &note)?;
            let t = format!("{}: resolved", f.finding_id);
            Reply::new(f, t)
        }
        Op::FindingList { open_only } => {
            let list: Vec<_> = p
                .state()
                .findings
                .iter()
                .filter(|f| !open_only || f.status == converge_core::critique::FindingStatus::Open)
                .cloned()
                .collect();
            let mut t = String::new();
            for f in &list {
                let _ = writeln!(
                    t,
                    "{} v{} ({}, {}) {} {:?} {}: {}",
                    f.finding_id,
                    f.arch_version,
                    f.module_ref,
                    f.lens_ref,
                    f.severity.as_str(),
                    f.status,
                    f.decision.as_ref().map_or("untriaged", |d| d.name()),
                    f.description
                );
            }
            if t.is_empty() {
                t.push_str("no findings");
            }
            Reply::new(&list, t.trim_end().to_string())
        }
        Op::MatrixShow { min_severity } => matrix_reply(p, min_severity)?,
        Op::MatrixCheck => {
            let m = p.matrix()?;
            let c = m.coverage_complete();
            let mut t = format!(
                "v{}: {} of {} cells assessed",
                m.arch_version,
                c.expected_cells - c.missing.len(),
                c.expected_cells
            );
            for (module, lens) in &c.missing {
                let _ = write!(t, "\n  missing ({module}, {lens})");
            }
            let passed = c.complete;
            Reply::new(c, t).passed(passed)
        }
        Op::MatrixDecide { flag, decision } => {
            let d = p.decide_concentration(&flag, &decision)?;
            let t = format!("{}: {}", d.flag, d.decision);
            Reply::new(d, t)
        }
        Op::GateShow { gate } => {
            let defn = p.config()?.gate_definition(gate);
            let criteria = p.gate_criteria(gate)?;
            let current = p.state().current_evaluation(gate).cloned();
            let mut t = format!("{} {}: {}\nagents:", gate, defn.name, defn.criteria_text);
            for a in &defn.va_list {
                let _ = write!(t, " {} ({})", a.va_id, a.kind_name());
            }
            t.push('\n');
            verdict_lines(&mut t, &criteria);
            if let Some(e) = &current {
                let _ = write!(t, "current evaluation {} {}", e.evaluation_id, e.result);
            }
            Reply::new(json!({ "gate": defn, "criteria": criteria, "current_evaluation": current }), t.trim_end().to_string())
        }
        Op::GateSubmit { gate, submission } => {
            let out = p.submit_gate(gate, submission)?;
            let mut t = String::new();
            for r in &out.runs {
                let _ = writeln!(
                    t,
                    "{} {} exit {} in {} ms{}",
                    r.va_id,
                    r.verdict,
                    r.exit_code.map_or("none".to_string(), |c| c.to_string()),
                    r.duration_ms,
                    if r.vetoed { " (vetoed)" } else { "" }
                );
            }
            let passed = match &out.evaluation {
                Some(e) => {
                    let _ = writeln!(t, "{} {} {}", e.evaluation_id, gate, e.result);
                    if let Some(fb) = &e.feedback {
                        for i in &fb.items {
                            let _ = writeln!(t, "  - [{}] {}", i.va_id, i.message);
                        }
                    }
                    for a in &e.advisories {
                        let _ = writeln!(t, "  note: {a}");
                    }
                    e.is_approved()
                }
                None => {
                    let _ = writeln!(
                        t,
                        "{gate} pending; awaiting verdicts from: {}\n  record with: converge gate approve|reject {gate} --as <agent>",
                        out.waiting_for.join(", ")
                    );
                    true
                }
            };
            if let Some(tr) = &out.transition {
                let _ = writeln!(t, "phase {} -> {}", tr.from_phase, tr.to_phase);
            }
            Reply::new(&out, t.trim_end().to_string()).passed(passed)
        }
        Op::Transition { to, gate_ref } => {
            let tr = p.record_transition(to, gate_ref.as_deref())?;
            let t = format!("phase {} -> {} ({})", tr.from_phase, tr.to_phase, tr.gate_ref);
            Reply::new(tr, t)
        }
        Op::ArtifactAdd { phase, version, path } => {
            let a = p.register_artifact(phase, version, &resolve_path(&root, &path))?;
            let t = format!("{} phase {} v{} {}", a.artifact_id, a.phase, a.version, a.relative_path);
            Reply::new(a, t)
        }
        Op::ArtifactList { phase } => {
            let list = p.list_artifacts(phase);
            let mut t = String::new();
            for a in &list {
                let _ = writeln!(t, "{} v{} {} {}", a.artifact_id, a.version, a.relative_path, &a.checksum[..12]);
            }
            if t.is_empty() {
                let _ = write!(t, "no artifacts in phase {phase}");
            }
            Reply::new(&list, t.trim_end().to_string())
        }
        Op::ArtifactVerify => {
            let checks = p.verify_artifacts();
            let bad: Vec<_> = checks
                .iter()
                .filter(|c| c.status != converge_core::store::ArtifactStatus::Ok)
                .collect();
            let mut t = format!("{} artifacts, {} failing", checks.len(), bad.len());
            for c in &bad {
                let _ = write!(t, "\n  {} {} {:?}", c.artifact_id, c.relative_path, c.status);
            }
            let passed = bad.is_empty();
            Reply::new(&checks, t).passed(passed)
        }
        Op::MicroCheck { module, response, divergences } => {
            let r = p.record_micro_check(&module, &response, divergences)?;
            let t = format!(
                "micro-check for {} recorded ({} divergences, {})",
                r.module_ref,
                r.divergences.len(),
                if r.is_clean() { "clean" } else { "unresolved" }
            );
            Reply::new(r, t)
        }
        Op::Checklist { requirement_id, note } => {
            let e = p.check_requirement(&requirement_id, &note)?;
            let t = format!("{} checked", e.requirement_id);
            Reply::new(e, t)
        }
        Op::Scope => {
            let inv = p.scope_inventory()?;
            let failures = inv.failures();
            let mut t = format!(
                "{} declared modules, {} requirements",
                inv.declared_modules.len(),
                inv.requirements.len()
            );
            for f in &failures {
                let _ = write!(t, "\n  - {f}");
            }
            let passed = inv.passed;
            Reply::new(inv, t).passed(passed)
        }
        Op::MetricsEfficiency { relevant_tokens, total_tokens } => {
            let e = context_efficiency(relevant_tokens, total_tokens)?;
            p.record_efficiency(e)?;
            let t = format!("E = {relevant_tokens} / {total_tokens} = {:.4}", e.efficiency);
            Reply::new(e, t)
        }
        Op::MetricsAdoption { input } => {
            let est = p.record_adoption(input)?;
            let t = format!(
                "gate cost {} {} expected error cost {}: adoption {}",
                est.lhs,
                if est.satisfied { "<" } else { ">=" },
                est.rhs,
                if est.satisfied { "pays off" } else { "does not pay off" }
            );
            let passed = est.satisfied;
            Reply::new(est, t).passed(passed)
        }
        Op::Prompt { phase, kind } => {
            let s = p.emit_prompt(phase, &kind)?;
            let t = s.rendered_text.clone();
            Reply::new(s, t)
        }
    })
}

fn lens_list(p: &Project, active_only: bool) -> Result<Reply> {
    let catalog = p.catalog()?;
    let acts = &p.state().lens_activations;
    let mut rows = Vec::new();
    let mut t = String::new();
    for l in catalog.lenses() {
        let a = acts.iter().find(|a| a.lens_id == l.lens_id);
        let active = a.is_some_and(|a| a.active);
        if active_only && !active {
            continue;
        }
        let _ = writeln!(
            t,
            "[{}] {:<24} {:<16} {}",
            if active { "x" } else { " " },
            l.lens_id,
            l.category.as_str(),
            l.central_question
        );
        rows.push(json!({
            "lens_id": l.lens_id,
            "name": l.name,
            "category": l.category,
            "central_question": l.central_question,
            "failure_class": l.failure_class,
            "activation_condition": l.activation_condition,
            "active": active,
            "rationale": a.map(|a| a.rationale.clone()).unwrap_or_default(),
        }));
    }
    let report = catalog.validate(acts);
    let violations: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
    for v in &violations {
        let _ = writeln!(t, "  ! {v}");
    }
    Ok(Reply::new(
        json!({ "context": p.state().context, "lenses": rows, "violations": violations }),
        t.trim_end().to_string(),
    ))
}

fn score_reply(p: &Project) -> Result<Reply> {
    let score = p.state().discovery.score.clone();
    let g0 = p.gate_criteria(GateId::G0)?;
    let mut t = String::new();
    for c in &score.criteria {
        let _ = writeln!(t, "{:>2}. {:<40} {:>2}/{}", c.criterion_id, c.name, c.awarded, c.max_points);
    }
    let _ = writeln!(
        t,
        "total {}/100, operator {}",
        score.total,
        if score.operator_confirmed { "confirmed" } else { "not confirmed" }
    );
    verdict_lines(&mut t, &g0);
    Ok(Reply::new(json!({ "score": score, "g0": g0 }), t.trim_end().to_string()))
}

fn hsa_reply(h: &converge_core::discovery::HsaState) -> Reply {
    let mut t = String::new();
    for l in &h.levels {
        let _ = writeln!(t, "{}. {:<10} {:?}", l.level, l.name, l.status);
    }
    for r in &h.retroactions {
        let _ = writeln!(t, "  retroaction {} -> {}: {}", r.from_level, r.to_level, r.reason);
    }
    Reply::new(h, t.trim_end().to_string())
}

fn matrix_reply(p: &Project, min_severity: Option<Severity>) -> Result<Reply> {
    let m = p.matrix()?;
    let coverage = m.coverage_complete();
    let conc = p.concentration(min_severity)?;
    let mut t = format!("v{} matrix ({} x {})\n", m.arch_version, m.modules.len(), m.active_lenses.len());
    let width = m.modules.iter().map(|s| s.len()).max().unwrap_or(6).max(6);
    let _ = write!(t, "{:width$}", "");
    for (i, _) in m.active_lenses.iter().enumerate() {
        let _ = write!(t, " {:>3}", i + 1);
    }
    t.push('\n');
    for module in &m.modules {
        let _ = write!(t, "{module:width$}");
        for lens in &m.active_lenses {
            let mark = match m.cell(module, lens).map(|c| &c.outcome) {
                None => ".".to_string(),
                Some(CellOutcome::ExplicitNone) => "-".to_string(),
                Some(CellOutcome::Findings(ids)) => ids.len().to_string(),
            };
            let _ = write!(t, " {mark:>3}");
        }
        t.push('\n');
    }
    for (i, lens) in m.active_lenses.iter().enumerate() {
        let _ = writeln!(t, "  {:>2} {lens}", i + 1);
    }
    for f in conc.flag_keys() {
        let decided = conc.decisions.iter().find(|d| d.flag == f);
        let _ = writeln!(
            t,
            "flag {f}: {}",
            decided.map_or("undecided".to_string(), |d| d.decision.clone())
        );
    }
    Ok(Reply::new(
        json!({ "matrix": m, "coverage": coverage, "concentration": conc }),
        t.trim_end().to_string(),
    ))
}
