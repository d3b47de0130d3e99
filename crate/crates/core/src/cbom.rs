//! Capability bills of materials: per-package grants, the enforced and
//! presented views over them, update diffs, and extension from guard
//! violation logs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{capability_of_binding, capability_of_global, capability_of_import, Capability};
use crate::sbom::{DependencyGraph, PackageId, SbomError};

pub type CapabilitySet = BTreeSet<Capability>;

#[derive(Debug, Error)]
pub enum CbomError {
    #[error("malformed CBOM")]
    Format(#[from] serde_json::Error),
}

/// Grants per package. A package without an entry is granted nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CbomDocument {
    pub grants: BTreeMap<PackageId, CapabilitySet>,
}

impl CbomDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, CbomError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Canonical text: one `"name@version": [sorted capabilities]` entry per
    /// line, keys sorted.
    pub fn to_canonical_json(&self) -> String {
        if self.grants.is_empty() {
            return "{}\n".to_string();
        }
        let mut out = String::from("{\n");
        for (i, (pkg, caps)) in self.grants.iter().enumerate() {
            let key = serde_json::to_string(&pkg.to_string()).expect("string serializes");
            let values: Vec<String> = caps.iter().map(|c| format!("\"{c}\"")).collect();
            let sep = if i + 1 == self.grants.len() { "" } else { "," };
            let _ = writeln!(out, "  {key}: [{}]{sep}", values.join(", "));
        }
        out.push_str("}\n");
        out
    }

    pub fn grant(&mut self, pkg: PackageId, capability: Capability) -> bool {
        self.grants.entry(pkg).or_default().insert(capability)
    }

    pub fn enforced_view(&self, pkg: &PackageId) -> CapabilitySet {
        self.grants.get(pkg).cloned().unwrap_or_default()
    }

    /// Enforced view of `pkg` joined with the enforced views of everything it
    /// transitively depends on.
    pub fn presented_view(&self, graph: &DependencyGraph, pkg: &PackageId) -> Result<CapabilitySet, SbomError> {
        let mut view = self.enforced_view(pkg);
        for dep in graph.reachable(pkg)? {
            if let Some(caps) = self.grants.get(&dep) {
                view.extend(caps);
            }
        }
        Ok(view)
    }
}

/// Lifecycle of a package between two snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackageChange {
    /// `name@version` present only in the new snapshot, name new too.
    Added,
    /// Name present in both snapshots, this version only in the new one.
    Updated,
    /// Same `name@version` in both snapshots.
    Unchanged,
    /// Name absent from the new snapshot.
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapabilityChange {
    Gained,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiffEntry {
    pub package: PackageId,
    pub capability: Capability,
    pub package_change: PackageChange,
    pub change: CapabilityChange,
}

impl DiffEntry {
    pub fn is_reviewable(&self) -> bool {
        self.change == CapabilityChange::Gained
            && matches!(self.package_change, PackageChange::Added | PackageChange::Updated)
    }

    pub fn is_update(&self) -> bool {
        self.change == CapabilityChange::Gained && self.package_change == PackageChange::Updated
    }
}

/// Capability changes between two snapshots.
///
/// `total` counts every gained or lost capability, `reviewable` the gains on
/// added or updated packages, `updated` the gains on updated packages only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbomDiff {
    pub total: usize,
    pub reviewable: usize,
    pub updated: usize,
    pub details: Vec<DiffEntry>,
}

impl CbomDiff {
    fn from_details(mut details: Vec<DiffEntry>) -> Self {
        details.sort();
        Self {
            total: details.len(),
            reviewable: details.iter().filter(|d| d.is_reviewable()).count(),
            updated: details.iter().filter(|d| d.is_update()).count(),
            details,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<40} {:<12} {:<10} {:<7}", "PACKAGE", "CAPABILITY", "PACKAGE", "CHANGE");
        for d in &self.details {
            let pkg_change = serde_json::to_value(d.package_change).expect("enum serializes");
            let change = serde_json::to_value(d.change).expect("enum serializes");
            let _ = writeln!(
                out,
                "{:<40} {:<12} {:<10} {:<7}",
                d.package.to_string(),
                d.capability.name(),
                pkg_change.as_str().unwrap_or_default(),
                change.as_str().unwrap_or_default(),
            );
        }
        let _ = writeln!(out, "total={} reviewable={} updated={}", self.total, self.reviewable, self.updated);
        out
    }
}

/// Classifies every capability change between two snapshots.
///
/// An updated package is compared against the union of the grants of every
/// old version with the same name.
pub fn diff_cboms(
    old: &CbomDocument,
    new: &CbomDocument,
    old_graph: &DependencyGraph,
    new_graph: &DependencyGraph,
) -> CbomDiff {
    let old_names = old_graph.names();
    let new_names = new_graph.names();
    let old_by_name = |name: &str| -> CapabilitySet {
        old_graph.nodes().filter(|p| p.name() == name).flat_map(|p| old.enforced_view(p)).collect()
    };

    let mut details = Vec::new();
    let mut push = |pkg: &PackageId, status, change, caps: &mut dyn Iterator<Item = &Capability>| {
        for &capability in caps {
            details.push(DiffEntry { package: pkg.clone(), capability, package_change: status, change });
        }
    };

    for pkg in new_graph.nodes() {
        let (status, baseline) = if old_graph.contains(pkg) {
            (PackageChange::Unchanged, old.enforced_view(pkg))
        } else if old_names.contains(pkg.name()) {
            (PackageChange::Updated, old_by_name(pkg.name()))
        } else {
            (PackageChange::Added, CapabilitySet::new())
        };
        let current = new.enforced_view(pkg);
        push(pkg, status, CapabilityChange::Gained, &mut current.difference(&baseline));
        push(pkg, status, CapabilityChange::Lost, &mut baseline.difference(&current));
    }
    for pkg in old_graph.nodes().filter(|p| !new_names.contains(p.name())) {
        push(pkg, PackageChange::Removed, CapabilityChange::Lost, &mut old.enforced_view(pkg).iter());
    }
    CbomDiff::from_details(details)
}

/// What a denied access attempt went after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Import,
    Global,
    Binding,
    Codegen,
}

/// One line of the guard runtime's NDJSON violation log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRecord {
    #[serde(default)]
    pub timestamp: String,
    pub package: PackageId,
    #[serde(default)]
    pub file: String,
    pub kind: ViolationKind,
    pub subject: String,
    #[serde(default)]
    pub mode: String,
}

impl ViolationRecord {
    /// The capability the denied access needs, if the access was privileged.
    pub fn capability(&self) -> Option<Capability> {
        match self.kind {
            ViolationKind::Import => capability_of_import(&self.subject),
            ViolationKind::Global => capability_of_global(&self.subject),
            ViolationKind::Binding => capability_of_binding(&self.subject),
            ViolationKind::Codegen => Some(Capability::Code),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("violation log line {line}: {message}")]
pub struct LogLineError {
    pub line: usize,
    pub message: String,
}

/// Parses an NDJSON violation log. Blank lines are ignored; malformed lines
/// are returned as errors alongside the records that did parse.
pub fn parse_violation_log(text: &str) -> (Vec<ViolationRecord>, Vec<LogLineError>) {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            Err(e) => errors.push(LogLineError { line: i + 1, message: e.to_string() }),
        }
    }
    (records, errors)
}

/// Outcome of dynamic inference over a violation log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extension {
    pub cbom: CbomDocument,
    /// Records naming something that maps to no capability, e.g. an
    /// undeclared third-party package.
    pub unresolved: Vec<ViolationRecord>,
}

pub fn extend_from_violations(cbom: &CbomDocument, log: &[ViolationRecord]) -> Extension {
    let mut out = cbom.clone();
    let mut unresolved = Vec::new();
    for record in log {
        match record.capability() {
            Some(c) => {
                out.grant(record.package.clone(), c);
            }
            None => {
                if !unresolved.contains(record) {
                    unresolved.push(record.clone());
                }
            }
        }
    }
    Extension { cbom: out, unresolved }
}
