//! The adversarial lens catalog, project context flags and lens activation.
//!
//! Each conditional lens is activated by exactly one context flag, and every
//! flag activates exactly one builtin lens. Operators may add lenses through
//! `.lens` files; builtin lenses can be supplemented but never replaced.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::PhaseId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LensCategory {
    Universal,
    Situational,
    DomainTransfer,
}

impl LensCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            LensCategory::Universal => "universal",
            LensCategory::Situational => "situational",
            LensCategory::DomainTransfer => "domain_transfer",
        }
    }
}

impl FromStr for LensCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "universal" => Ok(LensCategory::Universal),
            "situational" => Ok(LensCategory::Situational),
            "domain_transfer" | "domain-transfer" => Ok(LensCategory::DomainTransfer),
            other => Err(Error::InvalidLensFile {
                source_name: String::new(),
                message: format!("unknown category {other:?}"),
            }),
        }
    }
}

/// The twelve project context flags, one per conditional lens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextFlag {
    ExternalDependencies,
    UserFacingInterface,
    ReplacesProductionSystem,
    SignificantComputeCosts,
    AutomatedDecisionsAffectingPeople,
    MultiActorWorkflows,
    MultiTeamOrCompliance,
    ProductionOperability,
    FeedbackOrStateSynchronization,
    MultipleIndependentActors,
    InterComponentContracts,
    LongLivedMaintenance,
}

impl ContextFlag {
    pub const ALL: [ContextFlag; 12] = [
        ContextFlag::ExternalDependencies,
        ContextFlag::UserFacingInterface,
        ContextFlag::ReplacesProductionSystem,
        ContextFlag::SignificantComputeCosts,
        ContextFlag::AutomatedDecisionsAffectingPeople,
        ContextFlag::MultiActorWorkflows,
        ContextFlag::MultiTeamOrCompliance,
        ContextFlag::ProductionOperability,
        ContextFlag::FeedbackOrStateSynchronization,
        ContextFlag::MultipleIndependentActors,
        ContextFlag::InterComponentContracts,
        ContextFlag::LongLivedMaintenance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContextFlag::ExternalDependencies => "external_dependencies",
            ContextFlag::UserFacingInterface => "user_facing_interface",
            ContextFlag::ReplacesProductionSystem => "replaces_production_system",
            ContextFlag::SignificantComputeCosts => "significant_compute_costs",
            ContextFlag::AutomatedDecisionsAffectingPeople => {
                "automated_decisions_affecting_people"
            }
            ContextFlag::MultiActorWorkflows => "multi_actor_workflows",
            ContextFlag::MultiTeamOrCompliance => "multi_team_or_compliance",
            ContextFlag::ProductionOperability => "production_operability",
            ContextFlag::FeedbackOrStateSynchronization => "feedback_or_state_synchronization",
            ContextFlag::MultipleIndependentActors => "multiple_independent_actors",
            ContextFlag::InterComponentContracts => "inter_component_contracts",
            ContextFlag::LongLivedMaintenance => "long_lived_maintenance",
        }
    }

    /// When to set the flag.
    pub fn help(self) -> &'static str {
        match self {
            ContextFlag::ExternalDependencies => "external dependencies (APIs, DBs, queues)",
            ContextFlag::UserFacingInterface => "the system has a user-facing interface",
            ContextFlag::ReplacesProductionSystem => {
                "replacing or modifying an existing production system"
            }
            ContextFlag::SignificantComputeCosts => {
                "significant compute costs (AI/ML, data, cloud)"
            }
            ContextFlag::AutomatedDecisionsAffectingPeople => {
                "automated decisions affecting people"
            }
            ContextFlag::MultiActorWorkflows => {
                "multi-actor flows, state machines, business processes"
            }
            ContextFlag::MultiTeamOrCompliance => {
                "any of: multiple teams, multiple data domains, compliance requirements"
            }
            ContextFlag::ProductionOperability => {
                "production system with operational requirements"
            }
            ContextFlag::FeedbackOrStateSynchronization => {
                "state synchronization, runtime configuration affecting behavior, feedback-driven behavior"
            }
            ContextFlag::MultipleIndependentActors => {
                "multiple independent actors, public API, marketplace or platform design"
            }
            ContextFlag::InterComponentContracts => {
                "inter-component communication, message formats, contracts between independent teams"
            }
            ContextFlag::LongLivedMaintenance => {
                "module maintenance, long-lived system, technical debt accumulation"
            }
        }
    }
}

impl fmt::Display for ContextFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().replace('-', "_");
        ContextFlag::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == t)
            .ok_or_else(|| Error::UnknownFlag(s.to_string()))
    }
}

/// Operator-declared project characteristics. All flags are explicit booleans.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectContext {
    pub external_dependencies: bool,
    pub user_facing_interface: bool,
    pub replaces_production_system: bool,
    pub significant_compute_costs: bool,
    pub automated_decisions_affecting_people: bool,
    pub multi_actor_workflows: bool,
    pub multi_team_or_compliance: bool,
    pub production_operability: bool,
    pub feedback_or_state_synchronization: bool,
    pub multiple_independent_actors: bool,
    pub inter_component_contracts: bool,
    pub long_lived_maintenance: bool,
}

impl ProjectContext {
    fn slot(&mut self, flag: ContextFlag) -> &mut bool {
        match flag {
            ContextFlag::ExternalDependencies => &mut self.external_dependencies,
            ContextFlag::UserFacingInterface => &mut self.user_facing_interface,
            ContextFlag::ReplacesProductionSystem => &mut self.replaces_production_system,
            ContextFlag::SignificantComputeCosts => &mut self.significant_compute_costs,
            ContextFlag::AutomatedDecisionsAffectingPeople => {
                &mut self.automated_decisions_affecting_people
            }
            ContextFlag::MultiActorWorkflows => &mut self.multi_actor_workflows,
            ContextFlag::MultiTeamOrCompliance => &mut self.multi_team_or_compliance,
            ContextFlag::ProductionOperability => &mut self.production_operability,
            ContextFlag::FeedbackOrStateSynchronization => {
                &mut self.feedback_or_state_synchronization
            }
            ContextFlag::MultipleIndependentActors => &mut self.multiple_independent_actors,
            ContextFlag::InterComponentContracts => &mut self.inter_component_contracts,
            ContextFlag::LongLivedMaintenance => &mut self.long_lived_maintenance,
        }
    }

    pub fn get(&self, flag: ContextFlag) -> bool {
        *self.clone().slot(flag)
    }

    pub fn set(&mut self, flag: ContextFlag, value: bool) {
        *self.slot(flag) = value;
    }

    /// Context from a 12-bit mask, bit i = `ContextFlag::ALL[i]`.
    pub fn from_bits(bits: u16) -> Self {
        let mut ctx = ProjectContext::default();
        for (i, f) in ContextFlag::ALL.iter().enumerate() {
            ctx.set(*f, bits & (1 << i) != 0);
        }
        ctx
    }

    pub fn true_count(&self) -> usize {
        ContextFlag::ALL.iter().filter(|f| self.get(**f)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lens {
    pub lens_id: String,
    pub name: String,
    pub category: LensCategory,
    pub central_question: String,
    pub failure_class: String,
    pub activation_condition: Option<ContextFlag>,
}

impl Lens {
    pub fn is_active(&self, ctx: &ProjectContext) -> bool {
        match self.activation_condition {
            None => true,
            Some(flag) => ctx.get(flag),
        }
    }
}

struct BuiltinLens {
    id: &'static str,
    name: &'static str,
    category: LensCategory,
    question: &'static str,
    failure: &'static str,
    condition: Option<ContextFlag>,
}

const fn lens(
    id: &'static str,
    name: &'static str,
    category: LensCategory,
    question: &'static str,
    failure: &'static str,
    condition: Option<ContextFlag>,
) -> BuiltinLens {
    BuiltinLens {
        id,
        name,
        category,
        question,
        failure,
        condition,
    }
}

use ContextFlag as F;
use LensCategory::{DomainTransfer, Situational, Universal};

const BUILTIN: [BuiltinLens; 19] = [
    lens(
        "assumptions",
        "Assumptions",
        Universal,
        "What does this design assume without declaring?",
        "Failures from flawed/outdated system models",
        None,
    ),
    lens(
        "architectural",
        "Architectural",
        Universal,
        "Can each module be replaced, removed, or tested in isolation?",
        "Hidden coupling, circular dependencies",
        None,
    ),
    lens(
        "implementability",
        "Implementability",
        Universal,
        "Can I code this module in one session with available context?",
        "Incomplete specs, insufficient granularization",
        None,
    ),
    lens(
        "scientific",
        "Scientific",
        Universal,
        "Does every value, formula, and algorithm have a verifiable reference?",
        "Invented parameters, plausibility-based logic",
        None,
    ),
    lens(
        "security",
        "Security",
        Universal,
        "How would an attacker exploit this surface with minimum effort?",
        "Unanalyzed attack surface",
        None,
    ),
    lens(
        "performance",
        "Performance",
        Universal,
        "Where are the bottlenecks and what is the asymptotic behavior?",
        "Hidden bottlenecks, scale degradation",
        None,
    ),
    lens(
        "regulatory",
        "Regulatory",
        Universal,
        "Does every regulatory requirement trace to a module?",
        "Regulatory non-compliance",
        None,
    ),
    lens(
        "resilience",
        "Resilience",
        Situational,
        "What happens when an external dependency (API, DB, queue) is slow, down, or misbehaving?",
        "Cascading failures, retry storms",
        Some(F::ExternalDependencies),
    ),
    lens(
        "ui_ux",
        "UI/UX",
        Situational,
        "Can every user reach their goal, recover from errors, and access every flow?",
        "Confusing flows, dead-end states, accessibility failures",
        Some(F::UserFacingInterface),
    ),
    lens(
        "migration",
        "Migration / Coexistence",
        Situational,
        "How does this design coexist with, migrate from, and roll back to the existing production system?",
        "Data loss, regression vs. legacy, impossible rollback",
        Some(F::ReplacesProductionSystem),
    ),
    lens(
        "sustainability",
        "Sustainability",
        Situational,
        "Which compute, storage, and retention costs grow without bound?",
        "Overprovisioned infrastructure, infinite data retention",
        Some(F::SignificantComputeCosts),
    ),
    lens(
        "ethical",
        "Ethical / Human Impact",
        Situational,
        "Who is affected by automated decisions, and what recourse do they have?",
        "Algorithmic bias, absence of human recourse",
        Some(F::AutomatedDecisionsAffectingPeople),
    ),
    lens(
        "process",
        "Process / Workflow",
        Situational,
        "Does every state have an exit, every step an actor, and every failure path a handler?",
        "Orphaned states, missing actors, happy-path bias",
        Some(F::MultiActorWorkflows),
    ),
    lens(
        "governance",
        "Governance / Accountability",
        Situational,
        "Who owns each piece of data, and where does it flow without accountability?",
        "No data ownership, shadow data flows",
        Some(F::MultiTeamOrCompliance),
    ),
    lens(
        "observability",
        "Observability / Operability",
        Situational,
        "Can an operator diagnose this system in production from its outputs alone?",
        "Opaque systems that cannot be diagnosed in production",
        Some(F::ProductionOperability),
    ),
    lens(
        "control_engineering",
        "Control Engineering",
        DomainTransfer,
        "Where does the system generate an error signal and correct it? Risk of oscillation or state drift?",
        "Systems that react to events but do not regulate state: oscillation, drift, runaway feedback",
        Some(F::FeedbackOrStateSynchronization),
    ),
    lens(
        "game_theory",
        "Game Theory",
        DomainTransfer,
        "Do system actors have aligned incentives? Where does the design assume cooperation and may encounter strategic defection?",
        "Architectures that work under cooperation assumptions but collapse under adversarial or strategic behavior",
        Some(F::MultipleIndependentActors),
    ),
    lens(
        "linguistics",
        "Linguistics / Grammar",
        DomainTransfer,
        "Is the interface contract unambiguous? Can two correct implementations of the same contract produce incompatible behaviors?",
        "Protocol ambiguity: two correct implementations that are mutually incompatible",
        Some(F::InterComponentContracts),
    ),
    lens(
        "mechanical_engineering",
        "Mechanical Engineering",
        DomainTransfer,
        "Where are the tolerances? Does the system work only at exact specification or does it tolerate variation?",
        "Rigid coupling disguised as tolerance: failure from small deviations in dependency versions, environment, or load",
        Some(F::LongLivedMaintenance),
    ),
];

/// The 19 builtin lenses: universal, then situational, then domain transfer.
pub fn builtin_catalog() -> Vec<Lens> {
    BUILTIN
        .iter()
        .map(|b| Lens {
            lens_id: b.id.to_string(),
            name: b.name.to_string(),
            category: b.category,
            central_question: b.question.to_string(),
            failure_class: b.failure.to_string(),
            activation_condition: b.condition,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LensActivation {
    pub lens_id: String,
    pub active: bool,
    pub rationale: String,
    pub decided_at_phase: PhaseId,
}

/// Builtin catalog plus operator extensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LensCatalog {
    lenses: Vec<Lens>,
}

impl Default for LensCatalog {
    fn default() -> Self {
        LensCatalog {
            lenses: builtin_catalog(),
        }
    }
}

impl LensCatalog {
    pub fn lenses(&self) -> &[Lens] {
        &self.lenses
    }

    pub fn get(&self, lens_id: &str) -> Option<&Lens> {
        self.lenses.iter().find(|l| l.lens_id == lens_id)
    }

    pub fn lens_for_flag(&self, flag: ContextFlag) -> impl Iterator<Item = &Lens> {
        self.lenses
            .iter()
            .filter(move |l| l.activation_condition == Some(flag))
    }

    /// Add operator lenses; ids must not collide with existing entries.
    pub fn extend(&mut self, extra: Vec<Lens>) -> Result<()> {
        for l in extra {
            if self.get(&l.lens_id).is_some() {
                return Err(Error::InvalidLensFile {
                    source_name: l.lens_id.clone(),
                    message: "lens id already defined".into(),
                });
            }
            self.lenses.push(l);
        }
        Ok(())
    }

    /// Load `*.lens` files from `dir` (missing directory = no extensions).
    pub fn load_extensions(&mut self, dir: &Path) -> Result<()> {
        if !dir.is_dir() {
            return Ok(());
        }
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(format!("read {}", dir.display()), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "lens"))
            .collect();
        paths.sort();
        let mut extra = Vec::new();
        for p in paths {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| Error::io(format!("read {}", p.display()), e))?;
            extra.push(parse_lens_file(&p.display().to_string(), &text)?);
        }
        self.extend(extra)
    }

    pub fn select(&self, ctx: &ProjectContext) -> Vec<LensActivation> {
        self.lenses
            .iter()
            .map(|l| LensActivation {
                lens_id: l.lens_id.clone(),
                active: l.is_active(ctx),
                rationale: if l.category == LensCategory::Universal {
                    "universal lens: always applied".to_string()
                } else {
                    String::new()
                },
                decided_at_phase: PhaseId::ARCHITECTURE,
            })
            .collect()
    }

    pub fn validate(&self, activations: &[LensActivation]) -> ActivationReport {
        let mut violations = Vec::new();
        for l in &self.lenses {
            let found = activations.iter().find(|a| a.lens_id == l.lens_id);
            match (l.category, found) {
                (LensCategory::Universal, None) => {
                    violations.push(ActivationViolation::UniversalMissing(l.lens_id.clone()))
                }
                (LensCategory::Universal, Some(a)) if !a.active => {
                    violations.push(ActivationViolation::UniversalInactive(l.lens_id.clone()))
                }
                (LensCategory::Universal, Some(_)) => {}
                (_, None) => {
                    violations.push(ActivationViolation::DecisionMissing(l.lens_id.clone()))
                }
                (_, Some(a)) if a.rationale.trim().is_empty() => {
                    violations.push(ActivationViolation::RationaleRequired(l.lens_id.clone()))
                }
                _ => {}
            }
        }
        let mut seen = BTreeSet::new();
        for a in activations {
            if self.get(&a.lens_id).is_none() {
                violations.push(ActivationViolation::UnknownLens(a.lens_id.clone()));
            } else if !seen.insert(a.lens_id.as_str()) {
                violations.push(ActivationViolation::Duplicate(a.lens_id.clone()));
            }
        }
        ActivationReport { violations }
    }
}

/// Activations for the builtin catalog.
pub fn select_lenses(ctx: &ProjectContext) -> Vec<LensActivation> {
    LensCatalog::default().select(ctx)
}

pub fn validate_activation(activations: &[LensActivation]) -> ActivationReport {
    LensCatalog::default().validate(activations)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", content = "lens_id", rename_all = "snake_case")]
pub enum ActivationViolation {
    UniversalMissing(String),
    UniversalInactive(String),
    DecisionMissing(String),
    RationaleRequired(String),
    UnknownLens(String),
    Duplicate(String),
}

impl fmt::Display for ActivationViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationViolation::UniversalMissing(id) => write!(f, "universal lens missing: {id}"),
            ActivationViolation::UniversalInactive(id) => {
                write!(f, "universal lens marked inactive: {id}")
            }
            ActivationViolation::DecisionMissing(id) => {
                write!(f, "activation decision missing: {id}")
            }
            ActivationViolation::RationaleRequired(id) => write!(f, "rationale required: {id}"),
            ActivationViolation::UnknownLens(id) => write!(f, "unknown lens: {id}"),
            ActivationViolation::Duplicate(id) => write!(f, "duplicate activation: {id}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationReport {
    pub violations: Vec<ActivationViolation>,
}

impl ActivationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Parse a `.lens` file: `key: value` lines, `#` comments.
///
/// Keys: id, name (optional), category, question, failure_class, condition
/// (required unless universal, must name a context flag).
pub fn parse_lens_file(source_name: &str, text: &str) -> Result<Lens> {
    let err = |message: String| Error::InvalidLensFile {
        source_name: source_name.to_string(),
        message,
    };
    let (mut id, mut name, mut category, mut question, mut failure, mut condition) =
        (None, None, None, None, None, None);
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| err(format!("line {}: expected `key: value`", n + 1)))?;
        let v = v.trim().to_string();
        match k.trim() {
            "id" => id = Some(v),
            "name" => name = Some(v),
            "category" => category = Some(v),
            "question" => question = Some(v),
            "failure_class" => failure = Some(v),
            "condition" => condition = Some(v),
            other => return Err(err(format!("line {}: unknown key {other:?}", n + 1))),
        }
    }
    let id = id.filter(|s| !s.is_empty()).ok_or_else(|| err("missing id".into()))?;
    let category: LensCategory = category
        .ok_or_else(|| err("missing category".into()))?
        .parse()
        .map_err(|_| err("unknown category".into()))?;
    let question = question
        .filter(|s| !s.is_empty())
        .ok_or_else(|| err("missing question".into()))?;
    let failure = failure
        .filter(|s| !s.is_empty())
        .ok_or_else(|| err("missing failure_class".into()))?;
    let activation_condition = match (category, condition) {
        (LensCategory::Universal, None) => None,
        (LensCategory::Universal, Some(_)) => {
            return Err(err("universal lenses take no condition".into()))
        }
        (_, None) => return Err(err("conditional lenses need a condition".into())),
        (_, Some(c)) => Some(c.parse::<ContextFlag>().map_err(|_| err(format!("unknown flag {c:?}")))?),
    };
    Ok(Lens {
        name: name.unwrap_or_else(|| id.clone()),
        lens_id: id,
        category,
        central_question: question,
        failure_class: failure,
        activation_condition,
    })
}
