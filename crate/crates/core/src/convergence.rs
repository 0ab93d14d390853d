//! Architecture versions, the structural diff between consecutive versions,
//! the complexity measure, and the G3/G4 predicates.
//!
//! Elements are keyed per class:
//!
//! | class      | key                                   | content              |
//! |------------|---------------------------------------|----------------------|
//! | module     | name (or declared `renamed_from`)     | name + responsibility|
//! | interface  | provider, consumer, contract hash     | the key              |
//! | assumption | normalized text hash                  | the key              |
//! | exclusion  | normalized text hash                  | the key              |
//!
//! A key present on both sides with different content is "modified". The
//! change ratio is `|added ∪ removed ∪ modified| / |keys(prev) ∪ keys(next)|`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::critique::{Finding, FindingStatus, Severity};
use crate::error::{Error, Result};
use crate::hash::{normalize_text, sha256_hex};
use crate::phase::GateId;
use crate::verdict::{GateVerdict, VerdictDetail};

/// G4 requires the change ratio strictly below this.
pub const DEFAULT_CHANGE_THRESHOLD: f64 = 0.15;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModuleDecl {
    pub name: String,
    #[serde(default)]
    pub responsibility: String,
    /// Declared rename: this module continues `renamed_from` of the previous version.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renamed_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InterfaceDecl {
    pub provider: String,
    pub consumer: String,
    pub contract: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureVersion {
    pub version: u32,
    pub modules: Vec<ModuleDecl>,
    pub interfaces: Vec<InterfaceDecl>,
    pub assumptions: Vec<String>,
    pub negative_scope: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    version: u32,
    #[serde(default)]
    assumptions: Vec<String>,
    #[serde(default)]
    negative_scope: Vec<String>,
    #[serde(default)]
    modules: Vec<ModuleDecl>,
    #[serde(default)]
    interfaces: Vec<InterfaceDecl>,
}

impl ArchitectureVersion {
    /// Validate and canonicalize (sorted, set semantics for texts).
    pub fn new(
        version: u32,
        modules: Vec<ModuleDecl>,
        interfaces: Vec<InterfaceDecl>,
        assumptions: Vec<String>,
        negative_scope: Vec<String>,
    ) -> Result<Self> {
        if version == 0 {
            return Err(Error::InvalidManifest("version must be positive".into()));
        }
        let mut names = BTreeSet::new();
        for m in &modules {
            if m.name.trim().is_empty() {
                return Err(Error::InvalidManifest("module with empty name".into()));
            }
            if !names.insert(m.name.as_str()) {
                return Err(Error::InvalidManifest(format!("duplicate module {:?}", m.name)));
            }
        }
        for i in &interfaces {
            for end in [&i.provider, &i.consumer] {
                if !names.contains(end.as_str()) {
                    return Err(Error::InvalidManifest(format!(
                        "interface {} -> {} references undeclared module {end:?}",
                        i.provider, i.consumer
                    )));
                }
            }
        }
        let canon = |v: Vec<String>| -> Vec<String> {
            let mut seen = BTreeMap::new();
            for t in v {
                let n = normalize_text(&t);
                if !n.is_empty() {
                    seen.entry(n).or_insert(t);
                }
            }
            seen.into_keys().collect()
        };
        let mut modules = modules;
        modules.sort();
        let mut interfaces = interfaces;
        interfaces.sort();
        interfaces.dedup();
        Ok(ArchitectureVersion {
            version,
            modules,
            interfaces,
            assumptions: canon(assumptions),
            negative_scope: canon(negative_scope),
        })
    }

    pub fn parse_manifest(text: &str) -> Result<Self> {
        let doc: ManifestDoc =
            toml::from_str(text).map_err(|e| Error::InvalidManifest(e.to_string()))?;
        ArchitectureVersion::new(
            doc.version,
            doc.modules,
            doc.interfaces,
            doc.assumptions,
            doc.negative_scope,
        )
    }

    pub fn load_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::parse_manifest(&text)
    }

    pub fn module_names(&self) -> Vec<String> {
        self.modules.iter().map(|m| m.name.clone()).collect()
    }

    pub fn has_module(&self, name: &str) -> bool {
        self.modules.iter().any(|m| m.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementClass {
    Module,
    Interface,
    Assumption,
    Exclusion,
}

/// Canonical element map: key -> content hash.
fn elements(v: &ArchitectureVersion, renames: &BTreeMap<String, String>) -> BTreeMap<(ElementClass, String), String> {
    let rename = |n: &str| renames.get(n).cloned().unwrap_or_else(|| n.to_string());
    let mut out = BTreeMap::new();
    for m in &v.modules {
        let content = sha256_hex(format!("{}\n{}", m.name, normalize_text(&m.responsibility)).as_bytes());
        out.insert((ElementClass::Module, rename(&m.name)), content);
    }
    for i in &v.interfaces {
        let key = format!(
            "{}->{}#{}",
            rename(&i.provider),
            rename(&i.consumer),
            sha256_hex(normalize_text(&i.contract).as_bytes())
        );
        out.insert((ElementClass::Interface, key.clone()), key);
    }
    for (class, texts) in [
        (ElementClass::Assumption, &v.assumptions),
        (ElementClass::Exclusion, &v.negative_scope),
    ] {
        for t in texts {
            let h = sha256_hex(normalize_text(t).as_bytes());
            out.insert((class, h.clone()), h);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub added: usize,
    pub removed: usize,
    pub modified: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralDiff {
    pub from_version: u32,
    pub to_version: u32,
    pub modules: ClassDelta,
    pub interfaces: ClassDelta,
    pub assumptions: ClassDelta,
    pub negative_scope: ClassDelta,
    /// |changed elements|
    pub changed: usize,
    /// |keys(prev) ∪ keys(next)|
    pub union_size: usize,
    pub change_ratio: f64,
}

impl StructuralDiff {
    pub fn delta(&self, class: ElementClass) -> &ClassDelta {
        match class {
            ElementClass::Module => &self.modules,
            ElementClass::Interface => &self.interfaces,
            ElementClass::Assumption => &self.assumptions,
            ElementClass::Exclusion => &self.negative_scope,
        }
    }
}

/// Diff without the consecutive-version precondition. Renames declared in
/// `next` re-key the matching modules of `prev`.
pub fn diff_versions(prev: &ArchitectureVersion, next: &ArchitectureVersion) -> StructuralDiff {
    let renames: BTreeMap<String, String> = next
        .modules
        .iter()
        .filter_map(|m| {
            m.renamed_from
                .as_ref()
                .filter(|old| prev.has_module(old))
                .map(|old| (old.clone(), m.name.clone()))
        })
        .collect();
    let a = elements(prev, &renames);
    let b = elements(next, &BTreeMap::new());
    let mut deltas: BTreeMap<ElementClass, ClassDelta> = BTreeMap::new();
    let mut changed = 0;
    let keys: BTreeSet<_> = a.keys().chain(b.keys()).collect();
    for key in &keys {
        let d = deltas.entry(key.0).or_default();
        match (a.get(*key), b.get(*key)) {
            (Some(_), None) => d.removed += 1,
            (None, Some(_)) => d.added += 1,
            (Some(x), Some(y)) if x != y => d.modified += 1,
            _ => continue,
        }
        changed += 1;
    }
    let get = |c| deltas.get(&c).copied().unwrap_or_default();
    StructuralDiff {
        from_version: prev.version,
        to_version: next.version,
        modules: get(ElementClass::Module),
        interfaces: get(ElementClass::Interface),
        assumptions: get(ElementClass::Assumption),
        negative_scope: get(ElementClass::Exclusion),
        changed,
        union_size: keys.len(),
        change_ratio: if keys.is_empty() {
            0.0
        } else {
            changed as f64 / keys.len() as f64
        },
    }
}

fn check_consecutive(prev: &ArchitectureVersion, next: &ArchitectureVersion) -> Result<()> {
    if next.version != prev.version + 1 {
        return Err(Error::NonConsecutiveVersions {
            prev: prev.version,
            next: next.version,
        });
    }
    Ok(())
}

pub fn structural_diff(prev: &ArchitectureVersion, next: &ArchitectureVersion) -> Result<StructuralDiff> {
    check_consecutive(prev, next)?;
    Ok(diff_versions(prev, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityMeasure {
    pub module_count: usize,
    pub interface_count: usize,
    pub total: usize,
}

pub fn complexity(v: &ArchitectureVersion) -> ComplexityMeasure {
    ComplexityMeasure {
        module_count: v.modules.len(),
        interface_count: v.interfaces.len(),
        total: v.modules.len() + v.interfaces.len(),
    }
}

/// G3: the simplified version is no more complex than its predecessor.
pub fn evaluate_g3(prev: &ArchitectureVersion, next: &ArchitectureVersion) -> Result<GateVerdict> {
    check_consecutive(prev, next)?;
    let (p, n) = (complexity(prev), complexity(next));
    let mut failures = Vec::new();
    if n.total > p.total {
        failures.push(format!(
            "complexity increased: v{} total {} > v{} total {}",
            next.version, n.total, prev.version, p.total
        ));
    }
    Ok(GateVerdict::from_failures(
        GateId::G3,
        failures,
        VerdictDetail::Complexity { previous: p, next: n },
    ))
}

pub const COST_TIER_ADVISORY: &str = "architecture converged: phases 5-7 work on bounded, fully specified tasks; a less capable, cheaper model tier is usually sufficient from here";

pub fn evaluate_g4(diff: &StructuralDiff, findings: &[Finding]) -> GateVerdict {
    evaluate_g4_with_threshold(diff, findings, DEFAULT_CHANGE_THRESHOLD)
}

/// G4: change ratio strictly below the threshold, no open critical, every
/// important resolved, accepted with rationale, or deferred.
pub fn evaluate_g4_with_threshold(diff: &StructuralDiff, findings: &[Finding], threshold: f64) -> GateVerdict {
    let mut failures = Vec::new();
    // NaN never passes
    if diff.change_ratio.partial_cmp(&threshold) != Some(std::cmp::Ordering::Less) {
        failures.push(format!(
            "structural change {:.4} is not below {threshold} (v{} -> v{})",
            diff.change_ratio, diff.from_version, diff.to_version
        ));
    }
    let open_criticals: Vec<&str> = findings
        .iter()
        .filter(|f| f.is_open_critical())
        .map(|f| f.finding_id.as_str())
        .collect();
    if !open_criticals.is_empty() {
        failures.push(format!(
            "zero critical findings required; open: {}",
            open_criticals.join(", ")
        ));
    }
    for f in findings.iter().filter(|f| f.severity == Severity::Important) {
        let settled = match f.status {
            FindingStatus::Resolved | FindingStatus::Deferred => true,
            FindingStatus::Accepted => matches!(
                &f.decision,
                Some(crate::critique::Decision::AcceptRisk(r)) if !r.trim().is_empty()
            ),
            FindingStatus::Open => false,
        };
        if !settled {
            failures.push(format!(
                "important finding {} is neither resolved nor explicitly deferred with rationale",
                f.finding_id
            ));
        }
    }
    let mut v = GateVerdict::from_failures(
        GateId::G4,
        failures,
        VerdictDetail::Convergence {
            change_ratio: diff.change_ratio,
            threshold,
        },
    );
    if v.is_approved() {
        v.advisories.push(COST_TIER_ADVISORY.to_string());
    }
    v
}
