//! Per-package policies: which specifiers a package may import, which native
//! bindings it may reach, which globals its evaluation context receives, and
//! whether it may generate code at runtime.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{
    capability_of_binding, capability_of_import, is_lexically_bound_global, privileged_bindings, privileged_globals,
    privileged_specifiers, strip_node_prefix, Capability, CapabilityMap, ADDON_SUFFIX, BINDING_RULES, CJS_SYNTHETIC,
    STANDARD_GLOBALS,
};
use crate::cbom::{CapabilitySet, CbomDocument};
use crate::layout::{package_boundary, slash_path, PackageLocations, ProjectLayout, UnitKind};
use crate::sbom::{DependencyGraph, PackageId, SbomError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error(transparent)]
    Sbom(#[from] SbomError),
    #[error("{file} is outside the directory of {package} ({dir})")]
    FileOutsidePackage { file: String, package: PackageId, dir: String },
}

/// Guard reaction to a denied access.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnforcementMode {
    Log,
    Throw,
    #[default]
    Exit,
}

impl fmt::Display for EnforcementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnforcementMode::Log => "log",
            EnforcementMode::Throw => "throw",
            EnforcementMode::Exit => "exit",
        })
    }
}

impl FromStr for EnforcementMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(EnforcementMode::Log),
            "throw" => Ok(EnforcementMode::Throw),
            "exit" => Ok(EnforcementMode::Exit),
            other => Err(format!("unknown enforcement mode `{other}` (expected log, throw or exit)")),
        }
    }
}

/// File extensions a package may import from its own directory.
pub const LOCAL_EXTENSIONS: [&str; 5] = ["js", "cjs", "mjs", "json", "node"];

/// The import allowlist, kept split by origin.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportAllowlist {
    /// Files in the package, relative to its directory.
    pub local: BTreeSet<String>,
    /// Direct dependencies by package name.
    pub dependencies: BTreeSet<String>,
    /// Non-privileged builtins, both spellings.
    pub default_builtins: BTreeSet<String>,
    /// Privileged builtins whose capability is granted, both spellings.
    pub granted_builtins: BTreeSet<String>,
}

impl ImportAllowlist {
    /// Every entry, as one sorted set.
    pub fn entries(&self) -> BTreeSet<&str> {
        self.local
            .iter()
            .chain(&self.dependencies)
            .chain(&self.default_builtins)
            .chain(&self.granted_builtins)
            .map(String::as_str)
            .collect()
    }
}

/// Bindings outside the capability table are allowed by default, so the
/// allowlist is represented by the privileged names and the subset granted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingAllowlist {
    pub granted: BTreeSet<String>,
    pub denied: BTreeSet<String>,
}

impl BindingAllowlist {
    pub fn allows(&self, name: &str) -> bool {
        !self.denied.contains(name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalSpec {
    pub standard: BTreeSet<String>,
    pub granted: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulePolicy {
    pub package: PackageId,
    /// Package directory relative to the project root (`""` for the root).
    pub directory: String,
    pub grants: CapabilitySet,
    pub imports: ImportAllowlist,
    pub bindings: BindingAllowlist,
    pub globals: GlobalSpec,
    pub codegen_allowed: bool,
    pub mode: EnforcementMode,
}

impl ModulePolicy {
    /// Canonical JSON: sorted keys and sorted arrays.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("policy serializes");
        let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn is_granted(&self, capability: Capability) -> bool {
        self.grants.contains(&capability)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Allow,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    LocalFile,
    SbomDependency,
    DefaultBuiltin,
    GrantedBuiltin,
    NotInAllowlist,
    CapabilityMissing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub reason: Reason,
    pub matched_entry: Option<String>,
}

impl Verdict {
    fn allow(reason: Reason, entry: impl Into<String>) -> Self {
        Self { decision: Decision::Allow, reason, matched_entry: Some(entry.into()) }
    }

    fn deny(reason: Reason) -> Self {
        Self { decision: Decision::Deny, reason, matched_entry: None }
    }

    pub fn is_allowed(&self) -> bool {
        self.decision == Decision::Allow
    }
}

/// Compiles the policy of `pkg`, whose directory is `package_dir` and whose
/// files (all project-relative) are `files`.
pub fn compile_policy(
    pkg: &PackageId,
    graph: &DependencyGraph,
    cbom: &CbomDocument,
    package_dir: &Path,
    files: &[PathBuf],
    mode: EnforcementMode,
    map: &CapabilityMap,
) -> Result<ModulePolicy, PolicyError> {
    let dependencies = graph.direct_dependencies(pkg)?;
    let grants = cbom.enforced_view(pkg);

    let mut local = BTreeSet::new();
    for file in files {
        let outside = || PolicyError::FileOutsidePackage {
            file: slash_path(file),
            package: pkg.clone(),
            dir: slash_path(package_dir),
        };
        let rel = file.strip_prefix(package_dir).map_err(|_| outside())?;
        if package_boundary(file) != package_dir {
            return Err(outside());
        }
        let eligible = file.extension().and_then(|e| e.to_str()).is_some_and(|e| LOCAL_EXTENSIONS.contains(&e));
        if eligible {
            local.insert(slash_path(rel));
        }
    }

    let mut imports = ImportAllowlist {
        local,
        dependencies: dependencies.iter().map(|d| d.name().to_string()).collect(),
        default_builtins: map.default_allowed_specifiers(),
        granted_builtins: BTreeSet::new(),
    };
    let mut bindings = BindingAllowlist::default();
    let mut globals =
        GlobalSpec { standard: STANDARD_GLOBALS.iter().map(|s| s.to_string()).collect(), granted: BTreeSet::new() };
    for &capability in &grants {
        imports.granted_builtins.extend(privileged_specifiers(capability));
        bindings.granted.extend(privileged_bindings(capability).map(str::to_string));
        globals.granted.extend(privileged_globals(capability).map(str::to_string));
    }
    bindings.denied =
        BINDING_RULES.iter().map(|(n, _)| n.to_string()).filter(|n| !bindings.granted.contains(n)).collect();

    Ok(ModulePolicy {
        package: pkg.clone(),
        directory: slash_path(package_dir),
        codegen_allowed: grants.contains(&Capability::Code),
        grants,
        imports,
        bindings,
        globals,
        mode,
    })
}

/// Policies of every located package, each over the files inside its
/// package boundary.
pub fn compile_project_policies(
    layout: &ProjectLayout,
    locations: &PackageLocations,
    graph: &DependencyGraph,
    cbom: &CbomDocument,
    mode: EnforcementMode,
    map: &CapabilityMap,
) -> Result<BTreeMap<PackageId, ModulePolicy>, PolicyError> {
    let by_dir = locations.by_dir();
    let mut files: BTreeMap<&PackageId, Vec<PathBuf>> = BTreeMap::new();
    for f in layout.files() {
        if let Some(pkg) = by_dir.get(package_boundary(f).as_path()) {
            files.entry(*pkg).or_default().push(f.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (pkg, dir) in &locations.dirs {
        let own = files.get(pkg).map(Vec::as_slice).unwrap_or_default();
        out.insert(pkg.clone(), compile_policy(pkg, graph, cbom, dir, own, mode, map)?);
    }
    Ok(out)
}

/// Name of the package a bare specifier refers to (`@scope/name` or `name`).
pub fn bare_package_name(specifier: &str) -> &str {
    let mut ends = specifier.match_indices('/').map(|(i, _)| i);
    let end = if specifier.starts_with('@') { ends.nth(1) } else { ends.next() };
    &specifier[..end.unwrap_or(specifier.len())]
}

fn is_relative(specifier: &str) -> bool {
    specifier == "." || specifier == ".." || specifier.starts_with("./") || specifier.starts_with("../")
}

/// Resolves `specifier` against the directory of `importing_file` (both
/// relative to the package directory). `None` when it escapes the package.
fn resolve_relative(importing_file: &Path, specifier: &str) -> Option<Vec<String>> {
    let mut parts: Vec<String> = importing_file
        .parent()
        .map(|p| p.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    for comp in Path::new(specifier).components() {
        match comp {
            Component::CurDir => {}
            Component::ParentDir => {
                parts.pop()?;
            }
            Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
            Component::RootDir | Component::Prefix(_) => return None,
        }
    }
    Some(parts)
}

/// Candidate files a relative specifier may name, in resolution order.
fn local_candidates(parts: &[String], specifier: &str) -> Vec<String> {
    let base = parts.join("/");
    let mut out = Vec::new();
    if !specifier.ends_with('/') && !base.is_empty() {
        out.push(base.clone());
        for ext in LOCAL_EXTENSIONS {
            out.push(format!("{base}.{ext}"));
        }
    }
    let prefix = if base.is_empty() { String::new() } else { format!("{base}/") };
    for ext in LOCAL_EXTENSIONS {
        out.push(format!("{prefix}index.{ext}"));
    }
    out
}

pub fn check_import(policy: &ModulePolicy, specifier: &str, importing_file: &Path) -> Verdict {
    if specifier.is_empty() {
        return Verdict::deny(Reason::NotInAllowlist);
    }
    if specifier.ends_with(ADDON_SUFFIX) && !policy.is_granted(Capability::Addon) {
        return Verdict::deny(Reason::CapabilityMissing);
    }
    if is_relative(specifier) {
        let Some(parts) = resolve_relative(importing_file, specifier) else {
            return Verdict::deny(Reason::NotInAllowlist);
        };
        return local_candidates(&parts, specifier)
            .into_iter()
            .find(|c| policy.imports.local.contains(c))
            .map_or_else(|| Verdict::deny(Reason::NotInAllowlist), |c| Verdict::allow(Reason::LocalFile, c));
    }
    if specifier.starts_with('/') || specifier.contains(':') && !specifier.starts_with("node:") {
        return Verdict::deny(Reason::NotInAllowlist);
    }
    if let Some(capability) = capability_of_import(specifier).filter(|&c| c != Capability::Addon) {
        return if policy.is_granted(capability) {
            Verdict::allow(Reason::GrantedBuiltin, specifier)
        } else {
            Verdict::deny(Reason::CapabilityMissing)
        };
    }
    if policy.imports.default_builtins.contains(specifier) {
        return Verdict::allow(Reason::DefaultBuiltin, specifier);
    }
    if specifier.starts_with("node:") {
        return Verdict::deny(Reason::NotInAllowlist);
    }
    let name = bare_package_name(specifier);
    if policy.imports.dependencies.contains(name) {
        return Verdict::allow(Reason::SbomDependency, name);
    }
    Verdict::deny(Reason::NotInAllowlist)
}

pub fn check_binding(policy: &ModulePolicy, name: &str) -> Verdict {
    match capability_of_binding(name) {
        Some(c) if policy.is_granted(c) => Verdict::allow(Reason::GrantedBuiltin, name),
        Some(_) => Verdict::deny(Reason::CapabilityMissing),
        None => Verdict::allow(Reason::DefaultBuiltin, name),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlobalProvenance {
    Standard,
    Granted,
    CjsSynthetic,
}

/// Globals of a unit's evaluation context: standard names, then granted
/// privileged names, then (CommonJS only) the loader variables.
pub fn globals_for(policy: &ModulePolicy, kind: UnitKind) -> Vec<(String, GlobalProvenance)> {
    let mut out: Vec<_> = policy.globals.standard.iter().map(|g| (g.clone(), GlobalProvenance::Standard)).collect();
    out.extend(policy.globals.granted.iter().map(|g| (g.clone(), GlobalProvenance::Granted)));
    if kind == UnitKind::Cjs {
        out.extend(CJS_SYNTHETIC.iter().map(|g| (g.to_string(), GlobalProvenance::CjsSynthetic)));
    }
    out
}

/// Globals handed to guest code through one-time accessors and bound
/// lexically by the preamble: granted privileged globals (except the code
/// intrinsics) plus, for CommonJS, the loader variables.
pub fn sensitive_globals_for(policy: &ModulePolicy, kind: UnitKind) -> Vec<String> {
    globals_for(policy, kind)
        .into_iter()
        .filter(|(name, prov)| match prov {
            GlobalProvenance::Standard => false,
            GlobalProvenance::Granted => is_lexically_bound_global(name),
            GlobalProvenance::CjsSynthetic => true,
        })
        .map(|(name, _)| name)
        .collect()
}

/// `node:`-folded form used when matching builtins.
pub fn normalize_specifier(specifier: &str) -> &str {
    strip_node_prefix(specifier)
}
