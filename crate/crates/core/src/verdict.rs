use serde::{Deserialize, Serialize};

use crate::convergence::ComplexityMeasure;
use crate::phase::GateId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approved,
    Rejected,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Approved
        } else {
            Verdict::Rejected
        }
    }

    pub fn is_approved(self) -> bool {
        self == Verdict::Approved
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Approved => "approved",
            Verdict::Rejected => "rejected",
        })
    }
}

impl std::str::FromStr for Verdict {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "approved" | "approve" => Ok(Verdict::Approved),
            "rejected" | "reject" => Ok(Verdict::Rejected),
            other => Err(crate::Error::InvalidArgument(format!("unknown verdict {other:?}"))),
        }
    }
}

/// Gate-specific numbers carried alongside a builtin criteria verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictDetail {
    None,
    Discovery {
        total: u32,
        operator_confirmed: bool,
    },
    Critique {
        total_findings: usize,
        skip_phase3_allowed: bool,
    },
    Complexity {
        previous: ComplexityMeasure,
        next: ComplexityMeasure,
    },
    Convergence {
        change_ratio: f64,
        threshold: f64,
    },
}

/// Outcome of one of the builtin gate predicates (G0..G6 criteria).
///
/// `failures` lists every clause that failed; `advisories` are warnings that
/// never affect the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub gate_id: GateId,
    pub verdict: Verdict,
    pub failures: Vec<String>,
    #[serde(default)]
    pub advisories: Vec<String>,
    pub detail: VerdictDetail,
}

impl GateVerdict {
    pub fn from_failures(gate_id: GateId, failures: Vec<String>, detail: VerdictDetail) -> Self {
        GateVerdict {
            gate_id,
            verdict: Verdict::from_bool(failures.is_empty()),
            failures,
            advisories: Vec::new(),
            detail,
        }
    }

    pub fn is_approved(&self) -> bool {
        self.verdict.is_approved()
    }

    pub fn skip_phase3_allowed(&self) -> bool {
        matches!(
            self.detail,
            VerdictDetail::Critique {
                skip_phase3_allowed: true,
                ..
            }
        )
    }
}
