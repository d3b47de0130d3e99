//! SBOM ingest: a CycloneDX-shaped JSON subset parsed into a dependency graph.
//!
//! Accepted shape:
//!
//! ```json
//! {
//!   "bomFormat": "CycloneDX",
//!   "metadata": { "component": { "bom-ref": "app@1.0.0", "name": "app", "version": "1.0.0" } },
//!   "components": [ { "bom-ref": "dep@2.0.0", "name": "dep", "version": "2.0.0" } ],
//!   "dependencies": [ { "ref": "app@1.0.0", "dependsOn": ["dep@2.0.0"] } ]
//! }
//! ```
//!
//! `bom-ref` defaults to `name@version`; an optional `group` is joined to the
//! name with `/` (npm scopes).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SbomError {
    #[error("malformed SBOM JSON: {0}")]
    Json(String),
    #[error("unknown SBOM schema: expected bomFormat \"CycloneDX\", found {0:?}")]
    UnknownSchema(Option<String>),
    #[error("SBOM has no root component (metadata.component)")]
    MissingRoot,
    #[error("undeclared component `{0}` referenced by the dependency list")]
    UndeclaredComponent(String),
    #[error("duplicate bom-ref `{0}`")]
    DuplicateRef(String),
    #[error("invalid package id: {0}")]
    InvalidPackageId(String),
    #[error("unknown package `{0}`")]
    UnknownPackage(PackageId),
}

/// A registry package at one version, written `name@version`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PackageId {
    name: String,
    version: String,
}

impl PackageId {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Result<Self, SbomError> {
        let (name, version) = (name.into(), version.into());
        if name.is_empty() || version.is_empty() {
            return Err(SbomError::InvalidPackageId(format!("{name}@{version}")));
        }
        Ok(Self { name, version })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> &str {
        &self.version
    }
}

impl fmt::Display for PackageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

impl FromStr for PackageId {
    type Err = SbomError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // a leading '@' belongs to the scope, not the version separator
        let split = s
            .char_indices()
            .skip(1)
            .filter(|&(_, c)| c == '@')
            .map(|(i, _)| i)
            .last()
            .ok_or_else(|| SbomError::InvalidPackageId(s.to_string()))?;
        PackageId::new(&s[..split], &s[split + 1..]).map_err(|_| SbomError::InvalidPackageId(s.to_string()))
    }
}

impl Serialize for PackageId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PackageId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Packages and their depends-on edges. Cycles are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    root: PackageId,
    edges: BTreeMap<PackageId, BTreeSet<PackageId>>,
}

impl DependencyGraph {
    pub fn new(root: PackageId) -> Self {
        let mut edges = BTreeMap::new();
        edges.insert(root.clone(), BTreeSet::new());
        Self { root, edges }
    }

    pub fn add_node(&mut self, pkg: PackageId) {
        self.edges.entry(pkg).or_default();
    }

    /// Adds `dependent -> dependency`, inserting both endpoints.
    pub fn add_edge(&mut self, dependent: PackageId, dependency: PackageId) {
        self.add_node(dependency.clone());
        self.edges.entry(dependent).or_default().insert(dependency);
    }

    pub fn root(&self) -> &PackageId {
        &self.root
    }

    pub fn contains(&self, pkg: &PackageId) -> bool {
        self.edges.contains_key(pkg)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PackageId> {
        self.edges.keys()
    }

    pub fn node_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&PackageId, &PackageId)> {
        self.edges.iter().flat_map(|(from, tos)| tos.iter().map(move |to| (from, to)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum()
    }

    /// Distinct package names present in the graph.
    pub fn names(&self) -> BTreeSet<&str> {
        self.edges.keys().map(PackageId::name).collect()
    }

    pub fn direct_dependencies(&self, pkg: &PackageId) -> Result<&BTreeSet<PackageId>, SbomError> {
        self.edges.get(pkg).ok_or_else(|| SbomError::UnknownPackage(pkg.clone()))
    }

    /// Every package reachable through one or more edges. `pkg` itself is
    /// included only when it lies on a cycle.
    pub fn reachable(&self, pkg: &PackageId) -> Result<BTreeSet<PackageId>, SbomError> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&PackageId> = self.direct_dependencies(pkg)?.iter().collect();
        while let Some(next) = queue.pop_front() {
            if !seen.insert(next.clone()) {
                continue;
            }
            queue.extend(self.edges[next].iter().filter(|d| !seen.contains(*d)));
        }
        Ok(seen)
    }

    /// Normalized SBOM JSON for this graph; `parse_sbom` reads it back to the
    /// same node and edge sets.
    pub fn to_sbom_json(&self) -> String {
        let component =
            |p: &PackageId| serde_json::json!({ "bom-ref": p.to_string(), "name": p.name(), "version": p.version() });
        let doc = serde_json::json!({
            "bomFormat": "CycloneDX",
            "specVersion": "1.5",
            "metadata": { "component": component(&self.root) },
            "components": self.edges.keys().filter(|p| **p != self.root).map(component).collect::<Vec<_>>(),
            "dependencies": self.edges.iter().map(|(from, tos)| serde_json::json!({
                "ref": from.to_string(),
                "dependsOn": tos.iter().map(ToString::to_string).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("SBOM value serializes");
        text.push('\n');
        text
    }
}

#[derive(Deserialize)]
struct RawBom {
    #[serde(rename = "bomFormat")]
    bom_format: Option<String>,
    metadata: Option<RawMetadata>,
    #[serde(default)]
    components: Vec<RawComponent>,
    #[serde(default)]
    dependencies: Vec<RawDependency>,
}

#[derive(Deserialize)]
struct RawMetadata {
    component: Option<RawComponent>,
}

#[derive(Deserialize)]
struct RawComponent {
    #[serde(rename = "bom-ref")]
    bom_ref: Option<String>,
    group: Option<String>,
    name: String,
    version: String,
}

impl RawComponent {
    fn id(&self) -> Result<PackageId, SbomError> {
        let name = match self.group.as_deref() {
            Some(group) if !group.is_empty() => format!("{group}/{}", self.name),
            _ => self.name.clone(),
        };
        PackageId::new(name, self.version.clone())
    }
}

#[derive(Deserialize)]
struct RawDependency {
    #[serde(rename = "ref")]
    reference: String,
    #[serde(rename = "dependsOn", default)]
    depends_on: Vec<String>,
}

pub fn parse_sbom(document: &[u8]) -> Result<DependencyGraph, SbomError> {
    let raw: RawBom = serde_json::from_slice(document).map_err(|e| SbomError::Json(e.to_string()))?;
    if raw.bom_format.as_deref() != Some("CycloneDX") {
        return Err(SbomError::UnknownSchema(raw.bom_format));
    }
    let root_component = raw.metadata.and_then(|m| m.component).ok_or(SbomError::MissingRoot)?;

    let mut refs: BTreeMap<String, PackageId> = BTreeMap::new();
    let mut declare = |c: &RawComponent| -> Result<PackageId, SbomError> {
        let id = c.id()?;
        let key = c.bom_ref.clone().unwrap_or_else(|| id.to_string());
        if refs.insert(key.clone(), id.clone()).is_some() {
            return Err(SbomError::DuplicateRef(key));
        }
        Ok(id)
    };
    let root = declare(&root_component)?;
    let mut graph = DependencyGraph::new(root);
    for component in &raw.components {
        let id = declare(component)?;
        graph.add_node(id);
    }

    let resolve = |r: &str| refs.get(r).cloned().ok_or_else(|| SbomError::UndeclaredComponent(r.to_string()));
    for dep in &raw.dependencies {
        let from = resolve(&dep.reference)?;
        for to in &dep.depends_on {
            graph.add_edge(from.clone(), resolve(to)?);
        }
    }
    Ok(graph)
}
