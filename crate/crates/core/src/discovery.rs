//! Phase 0: the weighted discovery rubric, the G0 predicate, teach-back
//! iterations and the five-level HSA ladder.
//!
//! Criterion 9 ("operator confirmed") is scored like any other criterion,
//! and G0 additionally demands the separate `operator_confirmed` flag.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::GateId;
use crate::verdict::{GateVerdict, VerdictDetail};

/// Builtin points per criterion, criteria 1..=10.
pub const RUBRIC_WEIGHTS: [u32; 10] = [10, 15, 10, 15, 10, 10, 10, 5, 10, 5];

pub const CRITERION_NAMES: [&str; 10] = [
    "problem clarity",
    "complete use cases",
    "defined vocabulary",
    "resolved ambiguities",
    "explicit out-of-scope",
    "measurable success criteria",
    "validated assumptions",
    "research and specs/ populated",
    "operator confirmed",
    "AI confident",
];

/// Minimum rubric total for G0.
pub const G0_THRESHOLD: u32 = 90;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricCriterion {
    pub criterion_id: u8,
    pub name: String,
    pub max_points: u32,
    pub awarded: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryScore {
    pub criteria: Vec<RubricCriterion>,
    pub total: u32,
    pub operator_confirmed: bool,
}

impl Default for DiscoveryScore {
    fn default() -> Self {
        compute_score(&[0; 10]).expect("zero awards are valid")
    }
}

impl DiscoveryScore {
    pub fn awards(&self) -> Vec<u32> {
        self.criteria.iter().map(|c| c.awarded).collect()
    }

    /// Set one criterion's award (1-based id) and recompute the total.
    pub fn set_award(&mut self, criterion_id: u8, points: u32) -> Result<()> {
        let c = self
            .criteria
            .iter_mut()
            .find(|c| c.criterion_id == criterion_id)
            .ok_or(Error::UnknownCriterion(criterion_id))?;
        if points > c.max_points {
            return Err(Error::AwardExceedsWeight {
                criterion: criterion_id,
                awarded: points,
                max: c.max_points,
            });
        }
        c.awarded = points;
        self.total = self.criteria.iter().map(|c| c.awarded).sum();
        Ok(())
    }
}

/// Build a score from ten point awards, validated against the builtin weights.
pub fn compute_score(awards: &[u32]) -> Result<DiscoveryScore> {
    if awards.len() != RUBRIC_WEIGHTS.len() {
        return Err(Error::WrongArity(awards.len()));
    }
    let mut criteria = Vec::with_capacity(10);
    for (i, (&awarded, &max_points)) in awards.iter().zip(RUBRIC_WEIGHTS.iter()).enumerate() {
        let criterion_id = i as u8 + 1;
        if awarded > max_points {
            return Err(Error::AwardExceedsWeight {
                criterion: criterion_id,
                awarded,
                max: max_points,
            });
        }
        criteria.push(RubricCriterion {
            criterion_id,
            name: CRITERION_NAMES[i].to_string(),
            max_points,
            awarded,
        });
    }
    Ok(DiscoveryScore {
        total: awards.iter().sum(),
        criteria,
        operator_confirmed: false,
    })
}

pub fn evaluate_g0(score: &DiscoveryScore) -> GateVerdict {
    let mut failures = Vec::new();
    if score.total < G0_THRESHOLD {
        failures.push(format!(
            "score below threshold ({} < {G0_THRESHOLD})",
            score.total
        ));
    }
    if !score.operator_confirmed {
        failures.push("confirmation missing".to_string());
    }
    GateVerdict::from_failures(
        GateId::G0,
        failures,
        VerdictDetail::Discovery {
            total: score.total,
            operator_confirmed: score.operator_confirmed,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "notes", rename_all = "snake_case")]
pub enum ValidationOutcome {
    Accepted,
    Corrected(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeachBackIteration {
    pub cycle: u32,
    pub collection_notes: String,
    pub synthesis: String,
    pub validation_outcome: ValidationOutcome,
    pub score_snapshot: DiscoveryScore,
}

/// Append an iteration, enforcing consecutive cycle numbers from 1.
pub fn append_teachback(log: &mut Vec<TeachBackIteration>, it: TeachBackIteration) -> Result<()> {
    let expected = log.last().map_or(1, |l| l.cycle + 1);
    if it.cycle != expected {
        return Err(Error::NonConsecutiveCycle {
            expected,
            got: it.cycle,
        });
    }
    log.push(it);
    Ok(())
}

pub const HSA_LEVEL_NAMES: [&str; 5] = ["Domain", "Problem", "Elements", "Processes", "Product"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelStatus {
    Open,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HsaLevel {
    pub level: u8,
    pub name: String,
    pub status: LevelStatus,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Retroaction {
    pub from_level: u8,
    pub to_level: u8,
    pub reason: String,
    pub timestamp: DateTime<Utc>,
}

/// The five-level ladder. Converged levels always form a prefix of 1..=5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HsaState {
    pub levels: Vec<HsaLevel>,
    pub retroactions: Vec<Retroaction>,
}

impl Default for HsaState {
    fn default() -> Self {
        HsaState {
            levels: HSA_LEVEL_NAMES
                .iter()
                .enumerate()
                .map(|(i, name)| HsaLevel {
                    level: i as u8 + 1,
                    name: name.to_string(),
                    status: LevelStatus::Open,
                    notes: String::new(),
                })
                .collect(),
            retroactions: Vec::new(),
        }
    }
}

fn check_level(level: u8) -> Result<usize> {
    if (1..=5).contains(&level) {
        Ok(level as usize - 1)
    } else {
        Err(Error::InvalidLevel(level))
    }
}

impl HsaState {
    pub fn status(&self, level: u8) -> Option<LevelStatus> {
        self.levels.get(level.checked_sub(1)? as usize).map(|l| l.status)
    }

    /// Number of converged levels; they always occupy 1..=n.
    pub fn converged_depth(&self) -> u8 {
        self.levels
            .iter()
            .take_while(|l| l.status == LevelStatus::Converged)
            .count() as u8
    }

    pub fn mark_level_converged(&mut self, level: u8) -> Result<()> {
        let idx = check_level(level)?;
        if let Some(open) = self.levels[..idx]
            .iter()
            .find(|l| l.status == LevelStatus::Open)
        {
            return Err(Error::FoundationNotConverged {
                level,
                open: open.level,
            });
        }
        self.levels[idx].status = LevelStatus::Converged;
        Ok(())
    }

    pub fn set_notes(&mut self, level: u8, notes: impl Into<String>) -> Result<()> {
        let idx = check_level(level)?;
        self.levels[idx].notes = notes.into();
        Ok(())
    }

    /// Revise upward: reopen `to_level` and every deeper level.
    pub fn record_retroaction(
        &mut self,
        from_level: u8,
        to_level: u8,
        reason: impl Into<String>,
    ) -> Result<()> {
        check_level(from_level)?;
        let to_idx = check_level(to_level)?;
        if to_level >= from_level {
            return Err(Error::DownwardRetroaction {
                from: from_level,
                to: to_level,
            });
        }
        if self.converged_depth() + 1 < from_level {
            return Err(Error::LevelNotReached(from_level));
        }
        for l in &mut self.levels[to_idx..] {
            l.status = LevelStatus::Open;
        }
        self.retroactions.push(Retroaction {
            from_level,
            to_level,
            reason: reason.into(),
            timestamp: Utc::now(),
        });
        Ok(())
    }
}

/// Everything phase 0 records, persisted inside the project state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryRecord {
    /// Weight vector in force when the project was scored.
    pub weights: Vec<u32>,
    pub score: DiscoveryScore,
    pub teachbacks: Vec<TeachBackIteration>,
    pub hsa: HsaState,
}

impl Default for DiscoveryRecord {
    fn default() -> Self {
        DiscoveryRecord {
            weights: RUBRIC_WEIGHTS.to_vec(),
            score: DiscoveryScore::default(),
            teachbacks: Vec::new(),
            hsa: HsaState::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full() -> Vec<u32> {
        RUBRIC_WEIGHTS.to_vec()
    }

    #[test]
    fn weights_sum_to_100() {
        assert_eq!(RUBRIC_WEIGHTS.iter().sum::<u32>(), 100);
    }

    #[test]
    fn score_examples() {
        assert_eq!(compute_score(&full()).unwrap().total, 100);
        assert_eq!(compute_score(&[0; 10]).unwrap().total, 0);
        let mut a = full();
        a[3] = 0;
        assert_eq!(compute_score(&a).unwrap().total, 100 - 15);
        assert!(!compute_score(&a).unwrap().operator_confirmed);
    }

    #[test]
    fn score_errors() {
        assert!(matches!(compute_score(&[0; 9]), Err(Error::WrongArity(9))));
        let mut a = full();
        a[7] = 6;
        assert!(matches!(
            compute_score(&a),
            Err(Error::AwardExceedsWeight { criterion: 8, awarded: 6, max: 5 })
        ));
    }

    #[test]
    fn set_award_updates_total() {
        let mut s = DiscoveryScore::default();
        s.set_award(2, 15).unwrap();
        s.set_award(10, 4).unwrap();
        assert_eq!(s.total, 19);
        assert!(matches!(s.set_award(11, 1), Err(Error::UnknownCriterion(11))));
        assert!(s.set_award(1, 11).is_err());
        assert_eq!(s.total, 19);
    }

    fn score_with(total: u32, confirmed: bool) -> DiscoveryScore {
        let mut s = DiscoveryScore::default();
        let mut left = total;
        for id in 1..=10u8 {
            let take = left.min(RUBRIC_WEIGHTS[id as usize - 1]);
            s.set_award(id, take).unwrap();
            left -= take;
        }
        s.operator_confirmed = confirmed;
        s
    }

    #[test]
    fn g0_examples() {
        assert!(evaluate_g0(&score_with(92, true)).is_approved());
        let v = evaluate_g0(&score_with(95, false));
        assert!(!v.is_approved());
        assert_eq!(v.failures, vec!["confirmation missing".to_string()]);
        let v = evaluate_g0(&score_with(89, true));
        assert!(!v.is_approved());
        assert!(v.failures[0].contains("score below threshold"));
    }

    #[test]
    fn hsa_restriction_and_induction() {
        let mut h = HsaState::default();
        h.mark_level_converged(1).unwrap();
        assert_eq!(h.status(1), Some(LevelStatus::Converged));
        assert!(matches!(
            HsaState::default().mark_level_converged(3),
            Err(Error::FoundationNotConverged { level: 3, open: 1 })
        ));
        for l in 2..=5 {
            h.mark_level_converged(l).unwrap();
        }
        assert_eq!(h.converged_depth(), 5);
        assert!(matches!(h.mark_level_converged(6), Err(Error::InvalidLevel(6))));
    }

    #[test]
    fn retroaction_examples() {
        let mut h = HsaState::default();
        for l in 1..=4 {
            h.mark_level_converged(l).unwrap();
        }
        h.record_retroaction(4, 2, "element misunderstood").unwrap();
        assert_eq!(h.converged_depth(), 1);
        assert_eq!(h.retroactions.len(), 1);
        assert!(matches!(
            h.record_retroaction(2, 2, "x"),
            Err(Error::DownwardRetroaction { from: 2, to: 2 })
        ));
        // only level 1 converged, so level 5 was never reached
        assert!(matches!(h.record_retroaction(5, 1, "x"), Err(Error::LevelNotReached(5))));

        let mut h = HsaState::default();
        for l in 1..=5 {
            h.mark_level_converged(l).unwrap();
        }
        h.record_retroaction(5, 1, "domain vocabulary wrong").unwrap();
        assert_eq!(h.converged_depth(), 0);
    }

    #[test]
    fn teachback_cycles() {
        let mk = |cycle| TeachBackIteration {
            cycle,
            collection_notes: String::new(),
            synthesis: "restated".into(),
            validation_outcome: ValidationOutcome::Accepted,
            score_snapshot: DiscoveryScore::default(),
        };
        let mut log = Vec::new();
        append_teachback(&mut log, mk(1)).unwrap();
        assert!(matches!(
            append_teachback(&mut log, mk(3)),
            Err(Error::NonConsecutiveCycle { expected: 2, got: 3 })
        ));
        let mut it = mk(2);
        it.validation_outcome = ValidationOutcome::Corrected("vocabulary gap".into());
        it.score_snapshot = score_with(72, false);
        append_teachback(&mut log, it.clone()).unwrap();
        let json = serde_json::to_string(&log).unwrap();
        let back: Vec<TeachBackIteration> = serde_json::from_str(&json).unwrap();
        assert_eq!(back[1], it);
        assert_eq!(back[1].score_snapshot.total, 72);
    }

    fn awards() -> impl Strategy<Value = Vec<u32>> {
        RUBRIC_WEIGHTS
            .iter()
            .map(|&w| 0..=w)
            .collect::<Vec<_>>()
    }

    proptest! {
        #[test]
        fn total_is_bounded_and_monotone(a in awards(), idx in 0usize..10) {
            let s = compute_score(&a).unwrap();
            prop_assert!(s.total <= 100);
            prop_assert_eq!(s.total, a.iter().sum::<u32>());
            if a[idx] < RUBRIC_WEIGHTS[idx] {
                let mut b = a.clone();
                b[idx] += 1;
                prop_assert!(compute_score(&b).unwrap().total > s.total);
            }
        }

        #[test]
        fn ladder_converged_set_is_prefix(ops in proptest::collection::vec((0u8..3, 1u8..=5, 1u8..=5), 0..40)) {
            let mut h = HsaState::default();
            for (kind, a, b) in ops {
                let _ = match kind {
                    0 | 1 => h.mark_level_converged(a),
                    _ => h.record_retroaction(a, b, "r").map(|_| {
                        for l in b..=5 {
                            assert_eq!(h.status(l), Some(LevelStatus::Open));
                        }
                    }),
                };
                let depth = h.converged_depth() as usize;
                prop_assert!(h.levels[depth..].iter().all(|l| l.status == LevelStatus::Open));
            }
        }
    }
}
