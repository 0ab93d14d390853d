use std::fs;
use std::path::Path;

use chrono::Utc;
use converge_core::lens::{ContextFlag, ProjectContext};
use converge_core::store::{
    decode_state, encode_state, load_state, save_state, save_state_with, state_path, PhaseTransition, STATE_FILE,
};
use converge_core::{Error, GateId, PhaseId, Project, ProjectState};
use rand::rngs::StdRng;
use rand::SeedableRng;

mod support;

use support::{eval, random_state};

#[test]
fn init_creates_layout_and_phase_zero() {
    let dir = tempfile::tempdir().unwrap();
    let p = Project::init(dir.path(), "demo", ProjectContext::default()).unwrap();
    assert_eq!(p.state().current_phase, PhaseId::DISCOVERY);
    assert_eq!(p.state().iteration_count, 0);
    assert!(p.state().gate_log.is_empty());
    for s in ["problem", "architecture", "findings", "validation", "lessons", "prompts"] {
        assert!(dir.path().join("specs").join(s).is_dir(), "{s}");
    }
    assert!(dir.path().join(STATE_FILE).is_file());
    drop(p);
    assert!(matches!(
        Project::init(dir.path(), "again", ProjectContext::default()),
        Err(Error::LocationOccupied(_))
    ));
}

#[test]
fn context_round_trips_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut ctx = ProjectContext::default();
    ctx.set(ContextFlag::ExternalDependencies, true);
    let p = Project::init(dir.path(), "demo", ctx).unwrap();
    let before = serde_json::to_vec(&p.state().context).unwrap();
    drop(p);
    let reopened = Project::open(dir.path()).unwrap();
    assert_eq!(serde_json::to_vec(&reopened.state().context).unwrap(), before);
    assert_eq!(reopened.state().active_lens_ids().len(), 8);
    assert!(reopened.state().active_lens_ids().contains(&"resilience".to_string()));
}

#[test]
fn missing_and_corrupt_state() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_state(dir.path()), Err(Error::MissingProject(_))));
    drop(Project::init(dir.path(), "demo", ProjectContext::default()).unwrap());
    let path = state_path(dir.path());
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_state(dir.path()), Err(Error::CorruptStateFile(_))));
    // body edited without updating the checksum
    let text = String::from_utf8(bytes).unwrap().replace("\"demo\"", "\"dem0\"");
    fs::write(&path, text).unwrap();
    match load_state(dir.path()) {
        Err(Error::CorruptStateFile(m)) => assert!(m.contains("checksum")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn writer_lock_is_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let p = Project::init(dir.path(), "demo", ProjectContext::default()).unwrap();
    assert!(matches!(Project::open_locked(dir.path()), Err(Error::Locked(_))));
    // readers are not blocked
    assert_eq!(Project::open(dir.path()).unwrap().state().name, "demo");
    drop(p);
    let mut ro = Project::open(dir.path()).unwrap();
    assert!(matches!(ro.set_confirmation(true), Err(Error::NotLocked)));
    assert!(Project::open_locked(dir.path()).is_ok());
}

#[test]
fn transition_examples() {
    let mut s = ProjectState::new("t", ProjectContext::default(), vec![]);
    let g0 = s.log_evaluation(eval(GateId::G0, true, false));
    s.apply_transition(PhaseId::ARCHITECTURE, &g0, Utc::now()).unwrap();
    assert_eq!(s.current_phase, PhaseId::ARCHITECTURE);

    let g1 = s.log_evaluation(eval(GateId::G1, true, false));
    assert!(matches!(
        s.apply_transition(PhaseId::SIMPLIFICATION, &g1, Utc::now()),
        Err(Error::IllegalEdge { from: 1, to: 3 })
    ));
    s.apply_transition(PhaseId::CRITIQUE, &g1, Utc::now()).unwrap();

    // 2 -> 4 needs a zero-finding G2
    let g2 = s.log_evaluation(eval(GateId::G2, true, false));
    assert!(matches!(
        s.apply_transition(PhaseId::CONVERGENCE, &g2, Utc::now()),
        Err(Error::GateVerdictMismatch(_))
    ));
    s.apply_transition(PhaseId::SIMPLIFICATION, &g2, Utc::now()).unwrap();
    let g3 = s.log_evaluation(eval(GateId::G3, true, false));
    s.apply_transition(PhaseId::CONVERGENCE, &g3, Utc::now()).unwrap();
    assert_eq!(s.iteration_count, 1);

    let approved_g4 = s.log_evaluation(eval(GateId::G4, true, false));
    assert!(matches!(
        s.apply_transition(PhaseId::CRITIQUE, &approved_g4, Utc::now()),
        Err(Error::GateVerdictMismatch(_))
    ));
    let rejected_g4 = s.log_evaluation(eval(GateId::G4, false, false));
    s.apply_transition(PhaseId::CRITIQUE, &rejected_g4, Utc::now()).unwrap();
    assert_eq!(s.current_phase, PhaseId::CRITIQUE);

    // an evaluation from an earlier visit cannot be reused
    assert!(matches!(
        s.apply_transition(PhaseId::SIMPLIFICATION, &g2, Utc::now()),
        Err(Error::GateVerdictMismatch(_))
    ));
    let skip = s.log_evaluation(eval(GateId::G2, true, true));
    s.apply_transition(PhaseId::CONVERGENCE, &skip, Utc::now()).unwrap();
    assert_eq!(s.iteration_count, 1);
    assert!(s.consistency_problems().is_empty());
}

#[test]
fn randomized_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for _ in 0..200 {
        let s = random_state(&mut rng);
        assert!(s.consistency_problems().is_empty(), "{:?}", s.consistency_problems());
        save_state(dir.path(), &s).unwrap();
        assert_eq!(load_state(dir.path()).unwrap(), s);
    }
}

#[test]
fn interrupted_save_keeps_previous_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(7);
    for round in 0..40 {
        let a = random_state(&mut rng);
        let b = random_state(&mut rng);
        save_state(dir.path(), &a).unwrap();
        let res = save_state_with(dir.path(), &b, |tmp: &Path| {
            match round % 3 {
                0 => {}
                1 => {
                    let bytes = fs::read(tmp)?;
                    fs::write(tmp, &bytes[..bytes.len() / 3])?;
                }
                _ => fs::write(tmp, b"{\"schema_version\": 1")?,
            }
            Err(std::io::Error::new(std::io::ErrorKind::Interrupted, "killed"))
        });
        assert!(res.is_err());
        assert_eq!(load_state(dir.path()).unwrap(), a);
    }
    // the next save replaces the leftover temp file
    let c = random_state(&mut rng);
    save_state(dir.path(), &c).unwrap();
    assert_eq!(load_state(dir.path()).unwrap(), c);
}

#[test]
fn torn_state_file_never_loads() {
    let mut rng = StdRng::seed_from_u64(11);
    let s = random_state(&mut rng);
    let bytes = encode_state(&s);
    for len in 0..bytes.len() {
        // a trailing newline is the only byte that may be dropped
        if len == bytes.len() - 1 {
            continue;
        }
        assert!(decode_state(&bytes[..len]).is_err(), "prefix {len} loaded");
    }
    assert_eq!(decode_state(&bytes).unwrap(), s);
}

#[test]
fn inconsistent_body_is_rejected_even_with_valid_checksum() {
    let mut s = ProjectState::new("t", ProjectContext::default(), vec![]);
    s.current_phase = PhaseId::CODE;
    assert!(matches!(decode_state(&encode_state(&s)), Err(Error::CorruptStateFile(_))));
    let mut s = ProjectState::new("t", ProjectContext::default(), vec![]);
    s.transitions.push(PhaseTransition {
        from_phase: PhaseId::DISCOVERY,
        to_phase: PhaseId::ARCHITECTURE,
        gate_ref: "GE-0099".into(),
        timestamp: Utc::now(),
    });
    s.current_phase = PhaseId::ARCHITECTURE;
    assert!(matches!(decode_state(&encode_state(&s)), Err(Error::CorruptStateFile(_))));
}

#[test]
fn artifacts_are_indexed_ordered_and_unique() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Project::init(dir.path(), "demo", ProjectContext::default()).unwrap();
    assert!(p.list_artifacts(PhaseId::ARCHITECTURE).is_empty());
    let notes = dir.path().join("specs/problem/statement.md");
    fs::write(&notes, "the problem").unwrap();
    let a2 = p.register_artifact(PhaseId::DISCOVERY, 2, &notes).unwrap();
    let a1 = p.register_artifact(PhaseId::DISCOVERY, 1, &notes).unwrap();
    assert_eq!(a1.relative_path, "specs/problem/statement.md");
    let listed: Vec<u32> = p.list_artifacts(PhaseId::DISCOVERY).iter().map(|a| a.version).collect();
    assert_eq!(listed, vec![1, 2]);
    assert!(matches!(
        p.register_artifact(PhaseId::DISCOVERY, 2, &notes),
        Err(Error::DuplicateArtifact { version: 2, .. })
    ));
    assert!(p.verify_artifacts().iter().all(|c| c.status == converge_core::store::ArtifactStatus::Ok));
    fs::write(&notes, "edited by the operator").unwrap();
    assert!(matches!(p.check_artifact(&a2), Err(Error::ArtifactIntegrity(_))));
    let outside = tempfile::NamedTempFile::new().unwrap();
    assert!(p.register_artifact(PhaseId::DISCOVERY, 3, outside.path()).is_err());
    assert!(matches!(
        p.register_artifact(PhaseId::DISCOVERY, 3, Path::new("specs/problem/nope.md")),
        Err(Error::ArtifactMissing(_))
    ));
}

#[test]
fn failed_mutation_leaves_state_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Project::init(dir.path(), "demo", ProjectContext::default()).unwrap();
    let before = p.state().clone();
    assert!(matches!(p.set_award(2, 16), Err(Error::AwardExceedsWeight { .. })));
    assert_eq!(p.state(), &before);
    assert_eq!(load_state(dir.path()).unwrap(), before);
}
