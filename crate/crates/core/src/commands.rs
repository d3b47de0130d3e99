//! The four subcommands as library functions. Each returns a structured
//! result; rendering and exit codes live in the binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::capability::CapabilityMap;
use crate::cbom::{diff_cboms, extend_from_violations, parse_violation_log, CapabilitySet, CbomDiff, CbomDocument};
use crate::inference::{infer_cbom, Inference};
use crate::layout::{locate_packages, Diagnostic, ProjectLayout};
use crate::outline::{build_clone, CloneManifest};
use crate::policy::{compile_project_policies, EnforcementMode, ModulePolicy};
use crate::sbom::{parse_sbom, DependencyGraph, PackageId};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_REVIEW: u8 = 2;

pub fn load_sbom(path: &Path) -> Result<DependencyGraph> {
    let bytes = fs::read(path).with_context(|| format!("cannot read SBOM {}", path.display()))?;
    parse_sbom(&bytes).with_context(|| format!("invalid SBOM {}", path.display()))
}

pub fn load_cbom(path: &Path) -> Result<CbomDocument> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read CBOM {}", path.display()))?;
    CbomDocument::parse(&text).with_context(|| format!("invalid CBOM {}", path.display()))
}

pub fn load_capability_map(path: Option<&Path>) -> Result<CapabilityMap> {
    match path {
        Some(p) => CapabilityMap::from_manifest_file(p).with_context(|| p.display().to_string()),
        None => Ok(CapabilityMap::default()),
    }
}

/// Renders a capability set as `a, b` (or `-` when empty).
pub fn caps_cell(caps: &CapabilitySet) -> String {
    if caps.is_empty() {
        return "-".into();
    }
    caps.iter().map(|c| c.name()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub inference: Inference,
    /// Violation records whose subject maps to no capability.
    pub unresolved_violations: usize,
    pub malformed_log_lines: usize,
}

impl InferOutcome {
    pub fn table(&self) -> String {
        let mut out = format!("{:<40} {}\n", "PACKAGE", "CAPABILITIES");
        for (pkg, caps) in &self.inference.cbom.grants {
            let _ = writeln!(out, "{:<40} {}", pkg.to_string(), caps_cell(caps));
        }
        out
    }
}

/// Static inference over `root`, optionally extended from guard logs.
pub fn cmd_infer(sbom: &Path, root: &Path, violation_logs: &[PathBuf]) -> Result<InferOutcome> {
    let graph = load_sbom(sbom)?;
    let layout = ProjectLayout::scan(root, None)?;
    let mut inference = infer_cbom(&layout, &graph)?;
    let mut records = Vec::new();
    let mut malformed = 0;
    for log in violation_logs {
        let text = fs::read_to_string(log).with_context(|| format!("cannot read violation log {}", log.display()))?;
        let (recs, errors) = parse_violation_log(&text);
        for e in &errors {
            inference.diagnostics.push(Diagnostic(format!("{}: {e}", log.display())));
        }
        malformed += errors.len();
        records.extend(recs);
    }
    let extension = extend_from_violations(&inference.cbom, &records);
    inference.cbom = extension.cbom;
    Ok(InferOutcome { inference, unresolved_violations: extension.unresolved.len(), malformed_log_lines: malformed })
}

/// Where the CBOM of a command comes from.
pub enum CbomSource<'a> {
    File(&'a Path),
    Infer,
}

fn resolve_cbom(
    source: CbomSource<'_>,
    graph: &DependencyGraph,
    layout: &ProjectLayout,
) -> Result<(CbomDocument, Vec<Diagnostic>)> {
    match source {
        CbomSource::File(p) => Ok((load_cbom(p)?, Vec::new())),
        CbomSource::Infer => {
            let inf = infer_cbom(layout, graph)?;
            Ok((inf.cbom, inf.diagnostics))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OutlineSummary {
    pub outlined: usize,
    pub copied: usize,
    pub skipped: usize,
    pub policies: usize,
    pub mode: EnforcementMode,
    pub out: PathBuf,
    #[serde(skip)]
    pub diagnostics: Vec<Diagnostic>,
}

pub struct OutlineRequest<'a> {
    pub sbom: &'a Path,
    pub cbom: Option<&'a Path>,
    pub root: &'a Path,
    pub out: &'a Path,
    pub mode: EnforcementMode,
    pub builtin_manifest: Option<&'a Path>,
    pub runtime: Option<&'a Path>,
}

pub fn plan_outline(req: &OutlineRequest<'_>) -> Result<(CloneManifest, Vec<Diagnostic>)> {
    let graph = load_sbom(req.sbom)?;
    let map = load_capability_map(req.builtin_manifest)?;
    let layout = ProjectLayout::scan(req.root, Some(req.out))?;
    let source = req.cbom.map_or(CbomSource::Infer, CbomSource::File);
    let (cbom, mut diagnostics) = resolve_cbom(source, &graph, &layout)?;
    let manifest = build_clone(&layout, &graph, &cbom, req.mode, &map)?;
    diagnostics.extend(manifest.diagnostics.iter().cloned());
    Ok((manifest, diagnostics))
}

pub fn cmd_outline(req: &OutlineRequest<'_>) -> Result<OutlineSummary> {
    let (manifest, diagnostics) = plan_outline(req)?;
    if let Some(rt) = req.runtime {
        if !rt.is_dir() {
            bail!("runtime directory {} does not exist", rt.display());
        }
    }
    manifest.write(req.out, req.runtime)?;
    Ok(OutlineSummary {
        outlined: manifest.outlined.len(),
        copied: manifest.copied.len(),
        skipped: manifest.skipped.len(),
        policies: manifest.policies.len(),
        mode: req.mode,
        out: req.out.to_path_buf(),
        diagnostics,
    })
}

pub fn cmd_diff(old_sbom: &Path, old_cbom: &Path, new_sbom: &Path, new_cbom: &Path) -> Result<CbomDiff> {
    let old_graph = load_sbom(old_sbom)?;
    let new_graph = load_sbom(new_sbom)?;
    let old = load_cbom(old_cbom)?;
    let new = load_cbom(new_cbom)?;
    Ok(diff_cboms(&old, &new, &old_graph, &new_graph))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ViewRow {
    pub package: PackageId,
    pub direct: bool,
    pub enforced: CapabilitySet,
    pub presented: CapabilitySet,
    /// Presented minus enforced: what the package's dependencies add.
    pub delta: CapabilitySet,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_presented: Option<CapabilitySet>,
    /// Presented capabilities absent from the baseline presented view.
    pub gained: CapabilitySet,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ViewReport {
    pub rows: Vec<ViewRow>,
    pub flagged: Vec<PackageId>,
}

impl ViewReport {
    pub fn table(&self) -> String {
        let with_baseline = self.rows.iter().any(|r| r.baseline_presented.is_some());
        let mut header = vec!["PACKAGE", "DIRECT", "ENFORCED", "PRESENTED", "DELTA"];
        if with_baseline {
            header.extend(["GAINED", ""]);
        }
        let mut rows = vec![header.into_iter().map(String::from).collect::<Vec<_>>()];
        for r in &self.rows {
            let mut row = vec![
                r.package.to_string(),
                if r.direct { "yes" } else { "no" }.to_string(),
                caps_cell(&r.enforced),
                caps_cell(&r.presented),
                caps_cell(&r.delta),
            ];
            if with_baseline {
                row.push(caps_cell(&r.gained));
                row.push(if r.flagged { "REVIEW" } else { "" }.to_string());
            }
            rows.push(row);
        }
        render_columns(&rows)
    }
}

/// Left-aligned columns separated by two spaces, trailing blanks trimmed.
fn render_columns(rows: &[Vec<String>]) -> String {
    let mut widths = Vec::new();
    for row in rows {
        widths.resize(widths.len().max(row.len()), 0);
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (cell, w) in row.iter().zip(&widths) {
            let _ = write!(line, "{cell:<w$}  ");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Presented view of `pkg` in a baseline: the same version if present,
/// otherwise the union over every baseline version with the same name.
fn baseline_presented(graph: &DependencyGraph, cbom: &CbomDocument, pkg: &PackageId) -> CapabilitySet {
    if graph.contains(pkg) {
        return cbom.presented_view(graph, pkg).expect("node of graph");
    }
    graph
        .nodes()
        .filter(|p| p.name() == pkg.name())
        .flat_map(|p| cbom.presented_view(graph, p).expect("node of graph"))
        .collect()
}

/// Enforced and presented views of every package. With a baseline, direct
/// dependencies of the root whose presented view gained capabilities are
/// flagged for review.
pub fn view_report(
    graph: &DependencyGraph,
    cbom: &CbomDocument,
    baseline: Option<(&DependencyGraph, &CbomDocument)>,
) -> ViewReport {
    let direct = graph.direct_dependencies(graph.root()).expect("root is a node");
    let mut rows = Vec::new();
    for pkg in graph.nodes() {
        let enforced = cbom.enforced_view(pkg);
        let presented = cbom.presented_view(graph, pkg).expect("node of graph");
        let base = baseline.map(|(g, c)| baseline_presented(g, c, pkg));
        let gained: CapabilitySet = match &base {
            Some(b) => presented.difference(b).copied().collect(),
            None => CapabilitySet::new(),
        };
        let is_direct = direct.contains(pkg);
        rows.push(ViewRow {
            package: pkg.clone(),
            direct: is_direct,
            delta: presented.difference(&enforced).copied().collect(),
            enforced,
            presented,
            baseline_presented: base,
            flagged: is_direct && !gained.is_empty(),
            gained,
        });
    }
    let flagged = rows.iter().filter(|r| r.flagged).map(|r| r.package.clone()).collect();
    ViewReport { rows, flagged }
}

pub struct ReportRequest<'a> {
    pub sbom: &'a Path,
    pub cbom: Option<&'a Path>,
    pub root: Option<&'a Path>,
    pub baseline_sbom: Option<&'a Path>,
    pub baseline_cbom: Option<&'a Path>,
    pub policies_out: Option<&'a Path>,
    pub mode: EnforcementMode,
    pub builtin_manifest: Option<&'a Path>,
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub report: ViewReport,
    pub policies: BTreeMap<PackageId, ModulePolicy>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn cmd_report(req: &ReportRequest<'_>) -> Result<ReportOutcome> {
    let graph = load_sbom(req.sbom)?;
    let layout = match req.root {
        Some(r) => Some(ProjectLayout::scan(r, None)?),
        None => None,
    };
    let mut diagnostics = Vec::new();
    let cbom = match (req.cbom, &layout) {
        (Some(p), _) => load_cbom(p)?,
        (None, Some(layout)) => {
            let (c, d) = resolve_cbom(CbomSource::Infer, &graph, layout)?;
            diagnostics.extend(d);
            c
        }
        (None, None) => bail!("report needs --cbom or --root to infer one"),
    };
    let baseline = match (req.baseline_cbom, req.baseline_sbom) {
        (Some(c), Some(s)) => Some((load_sbom(s)?, load_cbom(c)?)),
        (Some(c), None) => Some((graph.clone(), load_cbom(c)?)),
        (None, Some(_)) => bail!("--baseline-sbom needs --baseline-cbom"),
        (None, None) => None,
    };
    let report = view_report(&graph, &cbom, baseline.as_ref().map(|(g, c)| (g, c)));

    let mut policies = BTreeMap::new();
    if let Some(dir) = req.policies_out {
        let Some(layout) = &layout else { bail!("--policies needs --root") };
        let map = load_capability_map(req.builtin_manifest)?;
        let locations = locate_packages(layout, &graph);
        let compiled = compile_project_policies(layout, &locations, &graph, &cbom, req.mode, &map)?;
        diagnostics.extend(locations.diagnostics.iter().cloned());
        diagnostics.extend(
            locations.unresolved.iter().map(|p| Diagnostic(format!("{p} is not installed; no policy compiled"))),
        );
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (pkg, policy) in &compiled {
            let path = dir.join(crate::outline::policy_file(pkg).trim_start_matches("policies/"));
            fs::write(&path, policy.to_json()).with_context(|| format!("cannot write {}", path.display()))?;
        }
        policies = compiled;
    }
    Ok(ReportOutcome { report, policies, diagnostics })
}
