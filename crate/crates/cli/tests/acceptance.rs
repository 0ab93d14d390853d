//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::Utc;
use converge_core::convergence::{diff_versions, evaluate_g4, ArchitectureVersion, InterfaceDecl, ModuleDecl};
use converge_core::critique::{
    concentration_analysis, AssessmentInput, CoverageMatrix, Finding, NewFinding, Severity,
};
use converge_core::discovery::{compute_score, evaluate_g0, RUBRIC_WEIGHTS};
use converge_core::gates::{
    evaluate_gate, scope_inventory_check, CommandSpec, GateDefinition, VaVerdict, VerificationAgent,
};
use converge_core::lens::{builtin_catalog, select_lenses, LensCategory, ProjectContext};
use converge_core::phase::edge_kind;
use converge_core::runner::{run_automatic_va, RunLimits};
use converge_core::store::{decode_state, encode_state, load_state, replay, save_state, save_state_with};
use converge_core::{Error, GateId, PhaseId, ProjectState, Verdict};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

mod common;
#[path = "../../core/tests/support/mod.rs"]
mod support;

const SEED: u64 = 0x1ACD_2026;

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(cond: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed: cond, detail: detail.into() }
}

/// Run `f`, adding a wall-clock budget to its verdict.
fn timed(budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if let Some(b) = budget {
        if took >= b {
            o.passed = false;
            o.detail = format!("{}; took {:?}, budget {:?}", o.detail, took, b);
            return o;
        }
    }
    o.detail = format!("{} ({} ms)", o.detail, took.as_millis());
    o
}

fn rubric_constants() -> Outcome {
    let weights_ok = RUBRIC_WEIGHTS == [10, 15, 10, 15, 10, 10, 10, 5, 10, 5] && RUBRIC_WEIGHTS.iter().sum::<u32>() == 100;
    let mut mismatches = 0;
    for total in 0..=100u32 {
        // fill criteria greedily to reach `total`
        let mut left = total;
        let awards: Vec<u32> = RUBRIC_WEIGHTS
            .iter()
            .map(|w| {
                let a = left.min(*w);
                left -= a;
                a
            })
            .collect();
        for confirmed in [true, false] {
            let mut s = compute_score(&awards).unwrap();
            s.operator_confirmed = confirmed;
            let approved = evaluate_g0(&s).verdict == Verdict::Approved;
            if s.total != total || approved != (total >= 90 && confirmed) {
                mismatches += 1;
            }
        }
    }
    check(weights_ok && mismatches == 0, format!("weights ok: {weights_ok}; 202 table rows, {mismatches} mismatches"))
}

fn lens_cardinalities() -> Outcome {
    let cat = builtin_catalog();
    let count = |c: LensCategory| cat.iter().filter(|l| l.category == c).count();
    let shape = (count(LensCategory::Universal), count(LensCategory::Situational), count(LensCategory::DomainTransfer));
    let mut bad = 0;
    for bits in 0u16..4096 {
        let active = select_lenses(&ProjectContext::from_bits(bits)).iter().filter(|a| a.active).count();
        if active != 7 + bits.count_ones() as usize {
            bad += 1;
        }
    }
    check(
        cat.len() == 19 && shape == (7, 8, 4) && bad == 0,
        format!("catalog {} lenses, categories {shape:?}; 4096 contexts, {bad} wrong counts", cat.len()),
    )
}

fn gate_conjunction() -> Outcome {
    let mut cases = 0;
    let mut bad = 0;
    for n in 1..=5usize {
        let defn = GateDefinition {
            gate_id: GateId::G6,
            phase: PhaseId::TESTS,
            name: "conjunction".into(),
            va_list: (0..n).map(|i| VerificationAgent::human(&format!("va{i}"))).collect(),
            criteria_text: String::new(),
        };
        for mask in 0u32..(1 << n) {
            let verdicts = (0..n)
                .map(|i| VaVerdict {
                    va_id: format!("va{i}"),
                    verdict: Verdict::from_bool(mask & (1 << i) != 0),
                    evidence: String::new(),
                })
                .collect();
            let e = evaluate_gate(&defn, verdicts).unwrap();
            let all = mask == (1 << n) - 1;
            cases += 1;
            if e.is_approved() != all || e.feedback.is_some() != !all {
                bad += 1;
            }
        }
    }
    check(bad == 0, format!("{cases} verdict vectors for n = 1..5, {bad} violations"))
}

fn coverage_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED);
    let lens_ids: Vec<String> = builtin_catalog().into_iter().map(|l| l.lens_id).collect();
    let mut disagreements = 0;
    let mut complete_seen = 0;
    for _ in 0..500 {
        let nm = rng.gen_range(1..=6);
        let nl = rng.gen_range(1..=19);
        let modules: Vec<String> = (0..nm).map(|i| format!("m{i}")).collect();
        let lenses: Vec<String> = lens_ids[..nl].to_vec();
        let mut m = CoverageMatrix::new(1, modules.clone(), lenses.clone());
        let p = rng.gen::<f64>().powf(0.25);
        let mut assessed = BTreeSet::new();
        let mut next = 0;
        for mo in &modules {
            for l in &lenses {
                if rng.gen_bool(p) {
                    let input = if rng.gen_bool(0.2) {
                        AssessmentInput::Findings(vec![NewFinding { severity: Severity::Suggestion, description: "x".into() }])
                    } else {
                        AssessmentInput::ExplicitNone
                    };
                    m.record_assessment(mo, l, input, || {
                        next += 1;
                        format!("F-{next:03}")
                    })
                    .unwrap();
                    assessed.insert((mo.clone(), l.clone()));
                }
            }
        }
        let brute_missing: Vec<(String, String)> = modules
            .iter()
            .flat_map(|mo| lenses.iter().map(move |l| (mo.clone(), l.clone())))
            .filter(|k| !assessed.contains(k))
            .collect();
        let c = m.coverage_complete();
        if c.complete {
            complete_seen += 1;
        }
        let got: BTreeSet<_> = c.missing.iter().cloned().collect();
        let want: BTreeSet<_> = brute_missing.iter().cloned().collect();
        if c.complete != brute_missing.is_empty() || got != want || c.expected_cells != nm * nl {
            disagreements += 1;
        }
    }
    check(
        disagreements == 0,
        format!("500 matrices ({complete_seen} complete), {disagreements} disagreements with brute force"),
    )
}

fn concentration_flags() -> Outcome {
    let modules: Vec<String> = ["ingest", "index", "query"].map(String::from).to_vec();
    let lenses: Vec<String> = ["security", "performance", "assumptions", "scientific"].map(String::from).to_vec();
    let mut m = CoverageMatrix::new(1, modules.clone(), lenses.clone());
    let mut findings: Vec<Finding> = Vec::new();
    let mut n = 0;
    for mo in &modules {
        for l in &lenses {
            // `ingest` fails under every lens; `performance` fails under every module
            let hit = mo == "ingest" || l == "performance";
            let input = if hit {
                AssessmentInput::Findings(vec![NewFinding { severity: Severity::Important, description: format!("{mo}/{l}") }])
            } else {
                AssessmentInput::ExplicitNone
            };
            findings.extend(
                m.record_assessment(mo, l, input, || {
                    n += 1;
                    format!("F-{n:03}")
                })
                .unwrap(),
            );
        }
    }
    let r = concentration_analysis(&m, &findings, None, &[]).unwrap();
    check(
        r.module_flags == ["ingest"] && r.lens_flags == ["performance"],
        format!("module flags {:?}, lens flags {:?}", r.module_flags, r.lens_flags),
    )
}

fn module(name: &str, resp: &str) -> ModuleDecl {
    ModuleDecl { name: name.into(), responsibility: resp.into(), renamed_from: None }
}

fn arch(version: u32, modules: Vec<ModuleDecl>, assumptions: Vec<String>) -> ArchitectureVersion {
    ArchitectureVersion::new(version, modules, vec![], assumptions, vec![]).unwrap()
}

fn random_arch(rng: &mut StdRng, version: u32) -> ArchitectureVersion {
    let names: Vec<String> = (0..8).filter(|_| rng.gen_bool(0.6)).map(|i| format!("m{i}")).collect();
    let modules: Vec<ModuleDecl> = names.iter().map(|n| module(n, &format!("r{}", rng.gen_range(0..2)))).collect();
    let mut interfaces = Vec::new();
    for a in &names {
        for b in &names {
            if a < b && rng.gen_bool(0.2) {
                interfaces.push(InterfaceDecl { provider: a.clone(), consumer: b.clone(), contract: format!("c{}", rng.gen_range(0..2)) });
            }
        }
    }
    let assumptions = (0..4).filter(|_| rng.gen_bool(0.5)).map(|i| format!("assumption {i}")).collect();
    let negative = (0..3).filter(|_| rng.gen_bool(0.5)).map(|i| format!("excluded {i}")).collect();
    ArchitectureVersion::new(version, modules, interfaces, assumptions, negative).unwrap()
}

fn structural_diff_checks() -> Outcome {
    let ten: Vec<ModuleDecl> = (0..10).map(|i| module(&format!("m{i}"), "r")).collect();
    let a = arch(1, ten.clone(), vec![]);
    let identity = diff_versions(&a, &arch(2, ten.clone(), vec![])).change_ratio;
    let other: Vec<ModuleDecl> = (0..10).map(|i| module(&format!("n{i}"), "r")).collect();
    let disjoint = diff_versions(&a, &arch(2, other, vec![])).change_ratio;
    let mut two = ten.clone();
    two[3].responsibility = "changed".into();
    two[7].responsibility = "changed".into();
    let point_two = diff_versions(&a, &arch(2, two, vec![])).change_ratio;

    let mut rng = StdRng::seed_from_u64(SEED ^ 4);
    let mut bad_pairs = 0;
    for _ in 0..200 {
        let (p, q) = (random_arch(&mut rng, 1), random_arch(&mut rng, 2));
        let (d1, d2) = (diff_versions(&p, &q), diff_versions(&q, &p));
        let in_range = (0.0..=1.0).contains(&d1.change_ratio);
        let symmetric = d1.change_ratio == d2.change_ratio && d1.changed == d2.changed;
        if !in_range || !symmetric {
            bad_pairs += 1;
        }
    }

    // 3 of 20 elements modified: exactly 0.15
    let twenty: Vec<ModuleDecl> = (0..20).map(|i| module(&format!("m{i}"), "r")).collect();
    let mut three = twenty.clone();
    for i in [2, 9, 15] {
        three[i].responsibility = "changed".into();
    }
    let boundary = diff_versions(&arch(1, twenty.clone(), vec![]), &arch(2, three, vec![]));
    let at_boundary = evaluate_g4(&boundary, &[]).verdict;
    let mut below = boundary.clone();
    below.change_ratio = f64::from_bits(0.15f64.to_bits() - 1);
    let below_boundary = evaluate_g4(&below, &[]).verdict;

    check(
        identity == 0.0
            && disjoint == 1.0
            && point_two == 0.2
            && bad_pairs == 0
            && boundary.change_ratio == 0.15
            && at_boundary == Verdict::Rejected
            && below_boundary == Verdict::Approved,
        format!(
            "identity {identity}, disjoint {disjoint}, 2 of 10 {point_two}; 200 random pairs, {bad_pairs} out of range or asymmetric; \
             G4 at {} {at_boundary}, at {:.17} {below_boundary}",
            boundary.change_ratio, below.change_ratio
        ),
    )
}

fn state_machine() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED ^ 7);
    let mut replay_mismatch = 0;
    let mut illegal_tried = 0;
    let mut illegal_accepted = 0;
    let mut loop_without_rejection = 0;
    let mut loops = 0;
    for _ in 0..1000 {
        let mut s = ProjectState::new("walk", ProjectContext::default(), select_lenses(&ProjectContext::default()));
        for _ in 0..rng.gen_range(1..40) {
            let from = s.current_phase;
            // an illegal target, refused even with an approved exit gate
            let illegal: Vec<PhaseId> = PhaseId::ALL.into_iter().filter(|t| edge_kind(from, *t).is_none()).collect();
            let bad_to = illegal[rng.gen_range(0..illegal.len())];
            let id = s.log_evaluation(support::eval(from.exit_gate(), true, rng.gen()));
            let before = s.clone();
            illegal_tried += 1;
            if s.apply_transition(bad_to, &id, Utc::now()).is_ok() || s != before {
                illegal_accepted += 1;
            }
            if from == PhaseId::CONVERGENCE {
                loops += 1;
                // an approved G4 does not authorize 4 -> 2
                let approved = s.log_evaluation(support::eval(GateId::G4, true, false));
                if !matches!(s.apply_transition(PhaseId::CRITIQUE, &approved, Utc::now()), Err(Error::GateVerdictMismatch(_))) {
                    loop_without_rejection += 1;
                }
            }
            let options: Vec<PhaseId> = PhaseId::ALL.into_iter().filter(|t| edge_kind(from, *t).is_some()).collect();
            if options.is_empty() {
                break;
            }
            let to = options[rng.gen_range(0..options.len())];
            let e = match edge_kind(from, to).unwrap() {
                converge_core::phase::EdgeKind::Forward => support::eval(from.exit_gate(), true, false),
                converge_core::phase::EdgeKind::LoopBack => support::eval(GateId::G4, false, false),
                converge_core::phase::EdgeKind::SkipSimplification => support::eval(GateId::G2, true, true),
            };
            let id = s.log_evaluation(e);
            s.apply_transition(to, &id, Utc::now()).unwrap();
        }
        match replay(&s.transitions) {
            Ok((phase, iters)) if phase == s.current_phase && iters == s.iteration_count => {}
            _ => replay_mismatch += 1,
        }
    }
    check(
        replay_mismatch == 0 && illegal_accepted == 0 && loop_without_rejection == 0,
        format!(
            "1000 walks, {replay_mismatch} replay mismatches; {illegal_tried} illegal edges, {illegal_accepted} accepted; \
             {loops} visits to phase 4, {loop_without_rejection} loop-backs authorized by an approved G4"
        ),
    )
}

fn persistence() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED ^ 11);
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut round_trip_bad = 0;
    let mut fault_bad = 0;
    let mut torn_loadable = 0;
    let mut torn_checked = 0;
    for i in 0..200 {
        let a = support::random_state(&mut rng);
        let b = support::random_state(&mut rng);
        if decode_state(&encode_state(&a)).ok().as_ref() != Some(&a) {
            round_trip_bad += 1;
        }
        save_state(root, &a).unwrap();
        if load_state(root).ok().as_ref() != Some(&a) {
            round_trip_bad += 1;
        }
        // writer dies after the temp file is written, before the rename;
        // every other run it dies mid-write
        let torn = i % 2 == 1;
        let res = save_state_with(root, &b, |tmp| {
            if torn {
                let bytes = fs::read(tmp)?;
                fs::write(tmp, &bytes[..bytes.len() / 2])?;
            }
            Err(std::io::Error::other("killed"))
        });
        match (res, load_state(root)) {
            (Err(_), Ok(loaded)) if loaded == a && loaded.consistency_problems().is_empty() => {}
            _ => fault_bad += 1,
        }
        // a torn state file never loads
        let bytes = encode_state(&b);
        for cut in (0..bytes.len() - 1).step_by(97) {
            torn_checked += 1;
            if decode_state(&bytes[..cut]).is_ok() {
                torn_loadable += 1;
            }
        }
    }
    check(
        round_trip_bad == 0 && fault_bad == 0 && torn_loadable == 0,
        format!(
            "200 states, {round_trip_bad} round-trip failures; 200 interrupted saves, {fault_bad} left a different or inconsistent state; \
             {torn_checked} torn prefixes, {torn_loadable} loadable"
        ),
    )
}

fn runner_stubs() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let limits = RunLimits { timeout: Duration::from_secs(30), output_limit: 64 * 1024 };
    let stub = |id: &str, script: &str, timeout: Option<u64>, veto: Option<&str>| {
        let mut spec = CommandSpec::new("sh", &["-c", script]);
        spec.timeout_secs = timeout;
        spec.veto_pattern = veto.map(String::from);
        VerificationAgent::automatic(id, spec)
    };
    let pass = run_automatic_va(&stub("pass", "exit 0", None, None), dir.path(), &limits);
    let fail = run_automatic_va(&stub("fail", "exit 1", None, None), dir.path(), &limits);
    let started = Instant::now();
    let slow = run_automatic_va(&stub("slow", "sleep 10", Some(1), None), dir.path(), &limits);
    let slow_took = started.elapsed();
    let veto = run_automatic_va(&stub("veto", "echo 'warning: unused'; exit 0", None, Some("warning:")), dir.path(), &limits);
    let v = |r: &converge_core::Result<converge_core::runner::RunOutcome>| match r {
        Ok(o) => o.verdict.to_string(),
        Err(e) => e.code().to_lowercase(),
    };
    let ok = matches!(&pass, Ok(o) if o.verdict == Verdict::Approved)
        && matches!(&fail, Ok(o) if o.verdict == Verdict::Rejected)
        && matches!(&slow, Err(Error::Timeout(_)))
        && slow_took < Duration::from_secs(5)
        && matches!(&veto, Ok(o) if o.verdict == Verdict::Rejected && o.vetoed);
    check(
        ok,
        format!("exit 0 {}, exit 1 {}, timeout {} after {:?}, veto on exit 0 {}", v(&pass), v(&fail), v(&slow), slow_took, v(&veto)),
    )
}

fn scope_inventory() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("parser.rs"), "").unwrap();
    let declared = vec!["parser".to_string(), "store".to_string()];
    let paths = [("parser", "parser.rs"), ("store", "store.rs")]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let reqs = vec!["R1".to_string(), "R2".to_string()];
    let claims = [("R1".to_string(), vec!["parser".to_string()])].into_iter().collect();
    let inv = scope_inventory_check(&declared, dir.path(), &paths, &reqs, &claims);
    let failures = inv.failures();
    check(
        !inv.passed
            && inv.absent_modules == ["store"]
            && inv.uncovered_requirements == ["R2"]
            && failures.len() == 2
            && failures.iter().any(|f| f.contains("store"))
            && failures.iter().any(|f| f.contains("R2")),
        format!("failures {failures:?}"),
    )
}

fn end_to_end(root: &Path) -> Outcome {
    let w = common::walkthrough(root);
    let approved: BTreeSet<&str> = w.gate_log.iter().filter(|(_, r)| r == "approved").map(|(g, _)| g.as_str()).collect();
    let every_gate = GateId::ALL.iter().all(|g| approved.contains(g.as_str()));
    let g4_rejected = w.gate_log.iter().any(|(g, r)| g == "G4" && r == "rejected");
    let looped = w.transitions.contains(&(4, 2));
    let state = load_state(root).unwrap();
    let refs_logged = state.transitions.iter().all(|t| state.evaluation(&t.gate_ref).is_some());
    check(
        every_gate && g4_rejected && looped && refs_logged && w.final_phase == 7 && state.consistency_problems().is_empty(),
        format!(
            "{} gate evaluations, {} transitions incl. 4 -> 2, iteration count {}, final phase {}",
            w.gate_log.len(),
            w.transitions.len(),
            w.iteration_count,
            w.final_phase
        ),
    )
}

type Criterion<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

fn main() {
    let e2e_dir = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("rubric constants and G0 truth table", Box::new(|| timed(Some(Duration::from_secs(1)), rubric_constants))),
        ("lens cardinalities", Box::new(|| timed(Some(Duration::from_secs(5)), lens_cardinalities))),
        ("gate conjunction", Box::new(|| timed(Some(Duration::from_secs(1)), gate_conjunction))),
        ("coverage completeness oracle", Box::new(|| timed(Some(Duration::from_secs(10)), coverage_oracle))),
        ("concentration flags", Box::new(|| timed(None, concentration_flags))),
        ("structural diff", Box::new(|| timed(Some(Duration::from_secs(10)), structural_diff_checks))),
        ("state-machine soundness", Box::new(|| timed(None, state_machine))),
        ("persistence round trip", Box::new(|| timed(None, persistence))),
        ("automatic-VA runner", Box::new(|| timed(None, runner_stubs))),
        ("scope inventory", Box::new(|| timed(None, scope_inventory))),
        (
            "end-to-end walkthrough",
            Box::new(|| timed(Some(Duration::from_secs(30)), || end_to_end(e2e_dir.path()))),
        ),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)) {
            Ok(o) => o,
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Outcome { passed: false, detail: format!("panicked: {msg}") }
            }
        };
        if !o.passed {
            failed += 1;
        }
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
