//! `<root>/iacdm-config.toml`: verifier commands, run limits, threshold
//! overrides and the module-to-path map for the scope inventory.
//!
//! ```toml
//! [limits]
//! timeout_secs = 600
//! output_limit_bytes = 1048576
//!
//! [thresholds]
//! change_ratio = 0.15
//!
//! [gates.G5]
//! human = []
//! [[gates.G5.automatic]]
//! id = "compile-lint"
//! program = "cargo"
//! args = ["clippy", "--", "-D", "warnings"]
//! veto_pattern = "warning:"
//!
//! [scope]
//! codebase_root = "src"
//! [scope.modules]
//! parser = "parser.rs"
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::convergence::DEFAULT_CHANGE_THRESHOLD;
use crate::error::{Error, Result};
use crate::gates::{gate_catalog, CommandSpec, GateDefinition, VerificationAgent};
use crate::phase::GateId;
use crate::runner::RunLimits;

pub const CONFIG_FILE: &str = "iacdm-config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub timeout_secs: Option<u64>,
    pub output_limit_bytes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub change_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutomaticEntry {
    pub id: String,
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    pub workdir: Option<String>,
    pub timeout_secs: Option<u64>,
    pub output_limit_bytes: Option<usize>,
    pub veto_pattern: Option<String>,
    #[serde(default = "default_true")]
    pub retain_output: bool,
}

fn default_true() -> bool {
    true
}

/// Replaces the builtin agent list of one gate when present. `human`
/// absent keeps the builtin human agents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    pub human: Option<Vec<String>>,
    #[serde(default)]
    pub automatic: Vec<AutomaticEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScopeConfig {
    pub codebase_root: Option<String>,
    #[serde(default)]
    pub modules: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub gates: BTreeMap<String, GateConfig>,
    #[serde(default)]
    pub scope: ScopeConfig,
}

impl EngineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: EngineConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Missing file means builtin defaults.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(CONFIG_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(format!("read {}", path.display()), e)),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(t) = self.thresholds.change_ratio {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "thresholds.change_ratio must be in (0, 1], got {t}"
                )));
            }
        }
        for (key, g) in &self.gates {
            let gate: GateId = key.parse()?;
            let mut ids: Vec<&str> = g.automatic.iter().map(|a| a.id.as_str()).collect();
            ids.extend(g.human.iter().flatten().map(String::as_str));
            if ids.is_empty() {
                return Err(Error::InvalidConfig(format!("gate {gate} would have no verifiers")));
            }
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidConfig(format!("gate {gate}: duplicate verifier id {}", w[0])));
            }
            let builtin_human = gate_catalog()[gate.phase().index() as usize]
                .human_agents()
                .next()
                .is_some();
            if builtin_human && g.human.as_ref().is_some_and(|h| h.is_empty()) {
                return Err(Error::InvalidConfig(format!(
                    "gate {gate} requires at least one human verifier"
                )));
            }
            if ids.iter().any(|i| i.trim().is_empty()) {
                return Err(Error::InvalidConfig(format!("gate {gate}: empty verifier id")));
            }
            for a in &g.automatic {
                if a.program.trim().is_empty() {
                    return Err(Error::InvalidConfig(format!("gate {gate}: verifier {} has no program", a.id)));
                }
                if let Some(p) = &a.veto_pattern {
                    regex::Regex::new(p)
                        .map_err(|e| Error::InvalidConfig(format!("veto pattern for {}: {e}", a.id)))?;
                }
            }
        }
        Ok(())
    }

    pub fn change_threshold(&self) -> f64 {
        self.thresholds.change_ratio.unwrap_or(DEFAULT_CHANGE_THRESHOLD)
    }

    pub fn threshold_overridden(&self) -> bool {
        self.thresholds.change_ratio.is_some()
    }

    pub fn run_limits(&self) -> RunLimits {
        let d = RunLimits::default();
        RunLimits {
            timeout: self.limits.timeout_secs.map(Duration::from_secs).unwrap_or(d.timeout),
            output_limit: self.limits.output_limit_bytes.unwrap_or(d.output_limit),
        }
    }

    /// Builtin catalog with configured gates applied.
    pub fn gate_definitions(&self) -> Vec<GateDefinition> {
        let mut defs = gate_catalog();
        for d in &mut defs {
            let Some(g) = self
                .gates
                .iter()
                .find(|(k, _)| k.parse::<GateId>().ok() == Some(d.gate_id))
                .map(|(_, g)| g)
            else {
                continue;
            };
            let mut list: Vec<VerificationAgent> = g
                .automatic
                .iter()
                .map(|a| {
                    VerificationAgent::automatic(
                        &a.id,
                        CommandSpec {
                            program: a.program.clone(),
                            args: a.args.clone(),
                            workdir: a.workdir.clone(),
                            timeout_secs: a.timeout_secs,
                            output_limit: a.output_limit_bytes,
                            veto_pattern: a.veto_pattern.clone(),
                            retain_output: a.retain_output,
                        },
                    )
                })
                .collect();
            match &g.human {
                Some(labels) => list.extend(labels.iter().map(|l| VerificationAgent::human(l))),
                None => list.extend(d.human_agents().cloned()),
            }
            d.va_list = list;
        }
        defs
    }

    pub fn gate_definition(&self, gate: GateId) -> GateDefinition {
        self.gate_definitions()
            .into_iter()
            .find(|d| d.gate_id == gate)
            .expect("catalog covers every gate")
    }
}
