//! Phase identifiers, gate identifiers and the transition relation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the eight phases, 0 (discovery) through 7 (post-review).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PhaseId(u8);

impl PhaseId {
    pub const DISCOVERY: PhaseId = PhaseId(0);
    pub const ARCHITECTURE: PhaseId = PhaseId(1);
    pub const CRITIQUE: PhaseId = PhaseId(2);
    pub const SIMPLIFICATION: PhaseId = PhaseId(3);
    pub const CONVERGENCE: PhaseId = PhaseId(4);
    pub const CODE: PhaseId = PhaseId(5);
    pub const TESTS: PhaseId = PhaseId(6);
    pub const POST_REVIEW: PhaseId = PhaseId(7);

    pub const ALL: [PhaseId; 8] = [
        PhaseId(0),
        PhaseId(1),
        PhaseId(2),
        PhaseId(3),
        PhaseId(4),
        PhaseId(5),
        PhaseId(6),
        PhaseId(7),
    ];

    pub fn new(n: u8) -> Result<Self> {
        if n <= 7 {
            Ok(PhaseId(n))
        } else {
            Err(Error::InvalidPhase(n.to_string()))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            0 => "Problem Discovery",
            1 => "Architecture",
            2 => "Adversarial Critique",
            3 => "Simplification",
            4 => "Convergence Gate",
            5 => "Code Implementation",
            6 => "Tests",
            _ => "Post-Review",
        }
    }

    /// The gate that exits this phase.
    pub fn exit_gate(self) -> GateId {
        GateId::ALL[self.0 as usize]
    }
}

impl TryFrom<u8> for PhaseId {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        PhaseId::new(n)
    }
}

impl From<PhaseId> for u8 {
    fn from(p: PhaseId) -> u8 {
        p.0
    }
}

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for PhaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidPhase(s.to_string()))?;
        PhaseId::new(n)
    }
}

/// Gate `Gk` exits phase `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GateId {
    G0,
    G1,
    G2,
    G3,
    G4,
    G5,
    G6,
    G7,
}

impl GateId {
    pub const ALL: [GateId; 8] = [
        GateId::G0,
        GateId::G1,
        GateId::G2,
        GateId::G3,
        GateId::G4,
        GateId::G5,
        GateId::G6,
        GateId::G7,
    ];

    pub fn phase(self) -> PhaseId {
        PhaseId(self as u8)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GateId::G0 => "G0",
            GateId::G1 => "G1",
            GateId::G2 => "G2",
            GateId::G3 => "G3",
            GateId::G4 => "G4",
            GateId::G5 => "G5",
            GateId::G6 => "G6",
            GateId::G7 => "G7",
        }
    }
}

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        GateId::ALL
            .iter()
            .copied()
            .find(|g| g.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::UnknownGate(s.to_string()))
    }
}

/// What kind of edge a (from, to) pair is, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// k -> k+1
    Forward,
    /// 4 -> 2, re-entering the critique loop.
    LoopBack,
    /// 2 -> 4, skipping simplification after a zero-finding critique.
    SkipSimplification,
}

pub fn edge_kind(from: PhaseId, to: PhaseId) -> Option<EdgeKind> {
    match (from.0, to.0) {
        (f, t) if f < 7 && t == f + 1 => Some(EdgeKind::Forward),
        (4, 2) => Some(EdgeKind::LoopBack),
        (2, 4) => Some(EdgeKind::SkipSimplification),
        _ => None,
    }
}

pub fn is_legal_edge(from: PhaseId, to: PhaseId) -> bool {
    edge_kind(from, to).is_some()
}
