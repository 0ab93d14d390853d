#![allow(dead_code)]

//! Random project states shared by the store tests and the acceptance suite.

use chrono::{TimeZone, Utc};
use converge_core::convergence::{ArchitectureVersion, ModuleDecl};
use converge_core::critique::{CellAssessment, CellOutcome, Decision, Finding, FindingStatus, Severity};
use converge_core::discovery::{compute_score, TeachBackIteration, ValidationOutcome, RUBRIC_WEIGHTS};
use converge_core::gates::{evaluate_gate, gate_catalog, GateEvaluation, VaVerdict};
use converge_core::lens::{LensCatalog, ProjectContext};
use converge_core::phase::{edge_kind, EdgeKind};
use converge_core::store::{Artifact, CellRecord};
use converge_core::verdict::VerdictDetail;
use converge_core::{GateId, GateVerdict, PhaseId, ProjectState, Verdict};
use rand::rngs::StdRng;
use rand::Rng;

pub fn eval(gate: GateId, approved: bool, zero_findings: bool) -> GateEvaluation {
    let defn = &gate_catalog()[gate.phase().index() as usize];
    let verdicts = defn
        .va_list
        .iter()
        .map(|a| VaVerdict {
            va_id: a.va_id.clone(),
            verdict: Verdict::from_bool(approved),
            evidence: if approved { String::new() } else { "needs another pass".into() },
        })
        .collect();
    let detail = if gate == GateId::G2 {
        VerdictDetail::Critique {
            total_findings: if zero_findings { 0 } else { 3 },
            skip_phase3_allowed: zero_findings,
        }
    } else {
        VerdictDetail::None
    };
    evaluate_gate(defn, verdicts)
        .unwrap()
        .with_criteria(GateVerdict::from_failures(gate, vec![], detail))
}

/// A structurally valid state reached by a random legal walk.
pub fn random_state(rng: &mut StdRng) -> ProjectState {
    let ctx = ProjectContext::from_bits(rng.gen::<u16>() & 0x0fff);
    let mut s = ProjectState::new(&format!("p{}", rng.gen::<u32>()), ctx, LensCatalog::default().select(&ctx));
    let awards: Vec<u32> = RUBRIC_WEIGHTS.iter().map(|w| rng.gen_range(0..=*w)).collect();
    s.discovery.score = compute_score(&awards).unwrap();
    s.discovery.score.operator_confirmed = rng.gen();
    for cycle in 1..=rng.gen_range(0..3u32) {
        s.discovery.teachbacks.push(TeachBackIteration {
            cycle,
            collection_notes: format!("notes {cycle}"),
            synthesis: "restated".into(),
            validation_outcome: if rng.gen() {
                ValidationOutcome::Accepted
            } else {
                ValidationOutcome::Corrected("vocabulary gap".into())
            },
            score_snapshot: s.discovery.score.clone(),
        });
    }
    let n_arch = rng.gen_range(0..3u32);
    for v in 1..=n_arch {
        let modules = (0..rng.gen_range(1..5))
            .map(|i| ModuleDecl {
                name: format!("m{i}"),
                responsibility: format!("does {i} in v{v}"),
                renamed_from: None,
            })
            .collect();
        s.architectures
            .push(ArchitectureVersion::new(v, modules, vec![], vec!["a".into()], vec![]).unwrap());
        s.artifacts.push(Artifact {
            artifact_id: format!("A-{v:04}"),
            phase: PhaseId::ARCHITECTURE,
            version: v,
            relative_path: format!("specs/architecture/v{v}/manifest.toml"),
            checksum: "0".repeat(64),
            created_at: Utc::now(),
        });
    }
    if n_arch > 0 {
        for i in 0..rng.gen_range(0..4) {
            let sev = Severity::ALL[rng.gen_range(0..3)];
            s.findings.push(Finding {
                finding_id: format!("F-{:03}", i + 1),
                module_ref: "m0".into(),
                lens_ref: "security".into(),
                severity: sev,
                description: "unchecked input".into(),
                decision: (sev == Severity::Important).then(|| Decision::AcceptRisk("latency acceptable".into())),
                status: if sev == Severity::Important { FindingStatus::Accepted } else { FindingStatus::Open },
                arch_version: n_arch,
                resolution_note: None,
            });
        }
        s.cells.push(CellRecord {
            arch_version: n_arch,
            cell: CellAssessment {
                module_ref: "m0".into(),
                lens_ref: "assumptions".into(),
                outcome: CellOutcome::ExplicitNone,
                assessed_at: Utc::now(),
            },
        });
    }
    for _ in 0..rng.gen_range(0..14) {
        let from = s.current_phase;
        let options: Vec<PhaseId> = PhaseId::ALL.into_iter().filter(|t| edge_kind(from, *t).is_some()).collect();
        if options.is_empty() {
            break;
        }
        let to = options[rng.gen_range(0..options.len())];
        let e = match edge_kind(from, to).unwrap() {
            EdgeKind::Forward => eval(from.exit_gate(), true, false),
            EdgeKind::LoopBack => eval(GateId::G4, false, false),
            EdgeKind::SkipSimplification => eval(GateId::G2, true, true),
        };
        if rng.gen_bool(0.3) {
            s.log_evaluation(eval(from.exit_gate(), false, false));
        }
        let id = s.log_evaluation(e);
        s.apply_transition(to, &id, Utc::now()).unwrap();
    }
    // a float that needs exact round trip
    if rng.gen() && s.current_phase == PhaseId::CONVERGENCE {
        let mut e = eval(GateId::G4, true, false);
        let ratio = rng.gen::<f64>() * 0.15;
        if let Some(c) = e.criteria.as_mut() {
            c.detail = VerdictDetail::Convergence { change_ratio: ratio, threshold: 0.15 };
        }
        s.log_evaluation(e);
    }
    s.updated_at = Utc.timestamp_opt(1_700_000_000 + rng.gen_range(0..1_000_000), rng.gen_range(0..1_000_000_000)).unwrap();
    s
}
