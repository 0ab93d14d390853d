use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log file under `specs/lessons/`, one JSON object per line.
pub const METRICS_LOG: &str = "metrics.log";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextEfficiency {
    pub relevant_tokens: u64,
    pub total_tokens: u64,
    pub efficiency: f64,
}

/// E = I0 / C. Token counts are supplied by the operator.
pub fn context_efficiency(relevant_tokens: u64, total_tokens: u64) -> Result<ContextEfficiency> {
    if total_tokens == 0 {
        return Err(Error::ZeroTotalTokens);
    }
    if relevant_tokens > total_tokens {
        return Err(Error::RelevantExceedsTotal {
            relevant: relevant_tokens,
            total: total_tokens,
        });
    }
    Ok(ContextEfficiency {
        relevant_tokens,
        total_tokens,
        efficiency: relevant_tokens as f64 / total_tokens as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateCost {
    pub gate_id: String,
    pub cost: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorScenario {
    pub label: String,
    pub probability: f64,
    pub cost: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdoptionEstimate {
    pub gate_costs: Vec<GateCost>,
    pub error_scenarios: Vec<ErrorScenario>,
    pub lhs: f64,
    pub rhs: f64,
    /// lhs < rhs, strictly.
    pub satisfied: bool,
}

fn check_cost(c: f64) -> Result<()> {
    if c.is_finite() && c >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidCost(c))
    }
}

/// Sum of gate costs against expected cost of undetected errors.
pub fn adoption_check(gate_costs: Vec<GateCost>, error_scenarios: Vec<ErrorScenario>) -> Result<AdoptionEstimate> {
    for g in &gate_costs {
        check_cost(g.cost)?;
    }
    for s in &error_scenarios {
        if !(0.0..=1.0).contains(&s.probability) {
            return Err(Error::ProbabilityOutOfRange(s.probability));
        }
        check_cost(s.cost)?;
    }
    let units: BTreeSet<&str> = gate_costs
        .iter()
        .map(|g| g.unit.as_str())
        .chain(error_scenarios.iter().map(|s| s.unit.as_str()))
        .collect();
    if units.len() > 1 {
        return Err(Error::MixedUnits(units.into_iter().map(String::from).collect()));
    }
    let lhs: f64 = gate_costs.iter().map(|g| g.cost).sum();
    let rhs: f64 = error_scenarios.iter().map(|s| s.probability * s.cost).sum();
    Ok(AdoptionEstimate {
        gate_costs,
        error_scenarios,
        lhs,
        rhs,
        satisfied: lhs < rhs,
    })
}

/// Input file for `metrics adoption --config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdoptionInput {
    #[serde(default)]
    pub unit: Option<String>,
    #[serde(default)]
    pub gates: Vec<AdoptionGate>,
    #[serde(default)]
    pub scenarios: Vec<AdoptionScenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdoptionGate {
    pub gate_id: String,
    pub cost: f64,
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdoptionScenario {
    pub label: String,
    pub probability: f64,
    pub cost: f64,
    pub unit: Option<String>,
}

impl AdoptionInput {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("adoption input: {e}")))
    }

    /// Entries without a unit inherit the file-level unit.
    pub fn evaluate(self) -> Result<AdoptionEstimate> {
        let default = self.unit.unwrap_or_else(|| "unit".to_string());
        let gates = self
            .gates
            .into_iter()
            .map(|g| GateCost {
                gate_id: g.gate_id,
                cost: g.cost,
                unit: g.unit.unwrap_or_else(|| default.clone()),
            })
            .collect();
        let scenarios = self
            .scenarios
            .into_iter()
            .map(|s| ErrorScenario {
                label: s.label,
                probability: s.probability,
                cost: s.cost,
                unit: s.unit.unwrap_or_else(|| default.clone()),
            })
            .collect();
        adoption_check(gates, scenarios)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum MetricRecord {
    ContextEfficiency(ContextEfficiency),
    Adoption(AdoptionEstimate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLogLine {
    pub recorded_at: DateTime<Utc>,
    #[serde(flatten)]
    pub record: MetricRecord,
}

/// Append one record, inputs included verbatim.
pub fn append_metric(log_path: &Path, record: MetricRecord) -> Result<MetricLogLine> {
    let line = MetricLogLine {
        recorded_at: Utc::now(),
        record,
    };
    let mut text = serde_json::to_string(&line).expect("metric record serializes");
    text.push('\n');
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(log_path)
        .map_err(|e| Error::io(format!("open {}", log_path.display()), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(format!("append {}", log_path.display()), e))?;
    Ok(line)
}
