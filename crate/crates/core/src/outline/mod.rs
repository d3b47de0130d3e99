//! Guarded clones. Every code file of the project is replaced by a small
//! module that loads the guard runtime, builds an evaluation context from
//! its package's policy and evaluates the original text, embedded verbatim
//! as a string literal, inside that context.

pub mod toplevel;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::capability::CapabilityMap;
use crate::cbom::CbomDocument;
use crate::inference::{InferenceError, SourceUnit};
use crate::layout::{locate_packages, package_boundary, slash_path, Diagnostic, LayoutError, ProjectLayout, UnitKind};
use crate::lexer::LexError;
use crate::policy::{
    compile_project_policies, globals_for, sensitive_globals_for, EnforcementMode, ModulePolicy, PolicyError,
};
use crate::sbom::{DependencyGraph, PackageId};

pub use toplevel::{scan_module_names, scan_top_level_names, ModuleNames};

/// Directory of generated files inside a clone.
pub const GENERATED_DIR: &str = "__capguard__";
pub const SKIP_NON_CODE: &str = "non-code, resolved via working directory";
pub const SKIP_SYMLINK: &str = "symbolic link";
pub const SKIP_UNATTRIBUTED: &str = "not attributed to any SBOM package";
pub const MAX_SUFFIX_ATTEMPTS: u32 = 16;

const LAUNCHER: &str = r#""use strict";
const path = require("node:path");
const { pathToFileURL } = require("node:url");
const config = require("./config.json");
process.chdir(config.workingDirectory);
require("./runtime/index.cjs").configure(config);
const entry = path.join(__dirname, "..", config.entry);
if (config.entryKind === "esm") import(pathToFileURL(entry).href);
else require(entry);
"#;

#[derive(Debug, Error)]
pub enum OutlineError {
    #[error("{path}")]
    Lex {
        path: PathBuf,
        #[source]
        source: LexError,
    },
    #[error("{path}: no collision-free alias suffix after {attempts} attempts")]
    SuffixCollision { path: PathBuf, attempts: u32 },
    #[error("{0} collides with the generated `{GENERATED_DIR}` directory")]
    Collision(PathBuf),
    #[error(transparent)]
    Load(#[from] InferenceError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("refusing to replace {0}: it is not a guarded clone")]
    NotAClone(PathBuf),
    #[error("output directory {0} would contain or replace the project root")]
    OutputOverlapsRoot(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutlineError + '_ {
    move |source| OutlineError::Io { path: path.to_path_buf(), source }
}

/// Stable digest of a unit: its project-relative path and its bytes.
pub fn unit_digest(path: &Path, bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(slash_path(path).as_bytes());
    h.update([0]);
    h.update(bytes);
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preamble {
    pub text: String,
    pub postamble: String,
    /// Global name and its one-time alias, in binding order.
    pub one_time: Vec<(String, String)>,
    pub suffix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no collision-free alias suffix after {attempts} attempts")]
pub struct SuffixExhausted {
    pub attempts: u32,
}

fn suffix_candidate(digest: &[u8; 32], attempt: u32) -> String {
    if attempt == 0 {
        return hex::encode(&digest[..3]);
    }
    let mut h = Sha256::new();
    h.update(digest);
    h.update(attempt.to_le_bytes());
    hex::encode(&h.finalize()[..3])
}

/// Builds the hardening preamble. `excluded` names are left unbound: for
/// ES modules the unit's own top-level names, for CommonJS its top-level
/// `var` names (a `let` in an enclosing block would clash with them).
pub fn generate_preamble(
    kind: UnitKind,
    sensitive_globals: &[String],
    excluded: &BTreeSet<String>,
    digest: &[u8; 32],
    source: &str,
) -> Result<Preamble, SuffixExhausted> {
    let bound: Vec<&String> = sensitive_globals.iter().filter(|g| !excluded.contains(*g)).collect();
    let suffix = (0..MAX_SUFFIX_ATTEMPTS)
        .map(|a| suffix_candidate(digest, a))
        .find(|s| bound.iter().all(|g| !source.contains(&format!("{g}${s}"))))
        .ok_or(SuffixExhausted { attempts: MAX_SUFFIX_ATTEMPTS })?;
    let one_time: Vec<(String, String)> = bound.iter().map(|g| (g.to_string(), format!("{g}${suffix}"))).collect();
    let bindings = one_time.iter().map(|(g, a)| format!("{g} = {a}")).collect::<Vec<_>>().join(", ");
    let (text, postamble) = match kind {
        UnitKind::Esm if one_time.is_empty() => (String::new(), String::new()),
        UnitKind::Esm => (format!("let {bindings};"), String::new()),
        _ if one_time.is_empty() => ("{{".to_string(), "\n}}".to_string()),
        _ => (format!("{{ let {bindings}; {{"), "\n}}".to_string()),
    };
    Ok(Preamble { text, postamble, one_time, suffix })
}

/// Arrow function that installs the self-deleting accessors on a context
/// global `G`, given the values to hand over.
pub fn accessor_installer(one_time: &[(String, String)]) -> String {
    let params = one_time.iter().map(|(g, _)| g.as_str()).collect::<Vec<_>>().join(", ");
    let mut out = format!("(G, {{ {params} }}) => {{\n");
    for (g, alias) in one_time {
        out.push_str(&format!(
            "    Object.defineProperty(G, \"{alias}\", {{ configurable: true, get() {{ delete G[\"{alias}\"]; return {g} }} }});\n"
        ));
    }
    out.push_str("  }");
    out
}

fn skip_trivia(src: &str, mut pos: usize) -> usize {
    loop {
        let rest = &src[pos..];
        let trimmed = rest.trim_start();
        pos += rest.len() - trimmed.len();
        if trimmed.starts_with("//") {
            pos += trimmed.find(['\n', '\r', '\u{2028}', '\u{2029}']).unwrap_or(trimmed.len());
        } else if let Some(comment) = trimmed.strip_prefix("/*") {
            match comment.find("*/") {
                Some(end) => pos += end + 4,
                None => return pos,
            }
        } else {
            return pos;
        }
    }
}

/// Byte length of the unit header: a hashbang line and a following
/// `"use strict"` directive, if present.
pub fn header_len(src: &str) -> usize {
    let mut header = 0;
    if src.starts_with("#!") {
        header = src.find(['\n', '\r', '\u{2028}', '\u{2029}']).unwrap_or(src.len());
    }
    let pos = skip_trivia(src, header);
    let rest = &src[pos..];
    if !(rest.starts_with("\"use strict\"") || rest.starts_with("'use strict'")) {
        return header;
    }
    let mut end = pos + 12;
    let after = &src[end..];
    let spaces = after.len() - after.trim_start_matches([' ', '\t']).len();
    let next = &after[spaces..];
    if next.starts_with(';') {
        end += spaces + 1;
    } else if !(next.is_empty()
        || next.starts_with(['\n', '\r', '\u{2028}', '\u{2029}', '}'])
        || next.starts_with("//")
        || next.starts_with("/*"))
    {
        return header;
    }
    end
}

/// The rewritten form of one source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutlinedUnit {
    pub original_path: PathBuf,
    pub output_path: PathBuf,
    pub kind: UnitKind,
    pub preamble_text: String,
    pub postamble_text: String,
    pub embedded_source: String,
    pub one_time_names: Vec<(String, String)>,
    pub policy_ref: PackageId,
    /// Export names mirrored by an outlined ES module.
    pub exports: Vec<String>,
    pub text: String,
}

/// File name of a package policy inside the generated directory.
pub fn policy_file(pkg: &PackageId) -> String {
    format!("policies/{}@{}.json", pkg.name().replace('/', "+"), pkg.version())
}

fn generated_dir_from(file: &Path) -> String {
    let depth = file.parent().map_or(0, |p| p.components().count());
    if depth == 0 {
        format!("./{GENERATED_DIR}")
    } else {
        format!("{}{GENERATED_DIR}", "../".repeat(depth))
    }
}

fn js_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn utf16_len(s: &str) -> usize {
    s.encode_utf16().count()
}

pub fn outline_file(
    unit: &SourceUnit,
    policy: &ModulePolicy,
    working_directory: &Path,
) -> Result<OutlinedUnit, OutlineError> {
    let source = unit.text.as_str();
    let names = scan_module_names(source).map_err(|e| OutlineError::Lex { path: unit.path.clone(), source: e })?;
    let excluded = match unit.kind {
        UnitKind::Esm => names.top_level(),
        _ => names.var_names.clone(),
    };
    let sensitive = sensitive_globals_for(policy, unit.kind);
    let digest = unit_digest(&unit.path, source.as_bytes());
    let preamble = generate_preamble(unit.kind, &sensitive, &excluded, &digest, source)
        .map_err(|e| OutlineError::SuffixCollision { path: unit.path.clone(), attempts: e.attempts })?;

    let header = &source[..header_len(source)];
    let filename = working_directory.join(&unit.path);
    let dirname = filename.parent().unwrap_or(working_directory);
    let exports: Vec<String> =
        if unit.kind == UnitKind::Esm { names.exports.iter().cloned().collect() } else { Vec::new() };
    let one_time: serde_json::Map<String, Value> =
        preamble.one_time.iter().map(|(g, a)| (g.clone(), Value::String(a.clone()))).collect();
    let kind_name = if unit.kind == UnitKind::Esm { "esm" } else { "cjs" };
    let descriptor = json!({
        "codegen": policy.codegen_allowed,
        "dirname": slash_path(dirname),
        "exports": exports,
        "file": slash_path(&unit.path),
        "filename": slash_path(&filename),
        "globals": globals_for(policy, unit.kind).into_iter().map(|(g, _)| g).collect::<Vec<_>>(),
        "headerLength": utf16_len(header),
        "kind": kind_name,
        "mode": policy.mode,
        "oneTime": one_time,
        "package": policy.package.to_string(),
        "policy": policy_file(&policy.package),
        "postamble": preamble.postamble,
        "preamble": preamble.text,
        "source": source,
        "starExports": names.star_sources,
    });

    let gen = generated_dir_from(&unit.path);
    let policy_path = js_string(&format!("{gen}/{}", policy_file(&policy.package)));
    let mut text = String::new();
    if !header.is_empty() {
        text.push_str(header);
        text.push('\n');
    }
    match unit.kind {
        UnitKind::Esm => {
            text.push_str(&format!("import __capguard__ from {};\n", js_string(&format!("{gen}/runtime/index.mjs"))));
            text.push_str(&format!(
                "const __capguard_policy__ = __capguard__.loadPolicy(import.meta.url, {policy_path});\n"
            ));
        }
        _ => {
            text.push_str(&format!(
                "const __capguard__ = require({});\n",
                js_string(&format!("{gen}/runtime/index.cjs"))
            ));
            text.push_str(&format!(
                "const __capguard_policy__ = __capguard__.loadPolicy(__filename, {policy_path});\n"
            ));
        }
    }
    text.push_str("const __capguard_unit__ = ");
    text.push_str(&serde_json::to_string_pretty(&descriptor).expect("descriptor serializes"));
    text.push_str(";\n");
    text.push_str(
        "const __capguard_context__ = __capguard__.createContext(__capguard_policy__, __capguard_unit__, {\n",
    );
    text.push_str("  importHook: __capguard__.importHook(__capguard_policy__, __capguard_unit__),\n");
    text.push_str("  linkHook: __capguard__.linkHook(__capguard_policy__, __capguard_unit__),\n");
    text.push_str(&format!("  install: {},\n", accessor_installer(&preamble.one_time)));
    text.push_str("});\n");
    match unit.kind {
        UnitKind::Esm => {
            text.push_str(
                "const __capguard_ns__ = await __capguard__.evaluateModule(__capguard_context__, __capguard_unit__);\n",
            );
            for (i, name) in exports.iter().enumerate() {
                text.push_str(&format!("const __capguard_e{i}__ = __capguard_ns__[{}];\n", js_string(name)));
            }
            if !exports.is_empty() {
                let list = exports
                    .iter()
                    .enumerate()
                    .map(|(i, n)| format!("__capguard_e{i}__ as {}", js_string(n)))
                    .collect::<Vec<_>>()
                    .join(", ");
                text.push_str(&format!("export {{ {list} }};\n"));
            }
        }
        _ => {
            text.push_str("__capguard__.evaluateCommonJs(__capguard_context__, __capguard_unit__, module, require);\n")
        }
    }

    Ok(OutlinedUnit {
        original_path: unit.path.clone(),
        output_path: unit.path.clone(),
        kind: unit.kind,
        preamble_text: preamble.text,
        postamble_text: preamble.postamble,
        embedded_source: source.to_string(),
        one_time_names: preamble.one_time,
        policy_ref: policy.package.clone(),
        exports,
        text,
    })
}

/// Unit descriptor embedded in an outlined file.
pub fn extract_descriptor(outlined: &str) -> Option<Value> {
    const MARK: &str = "const __capguard_unit__ = ";
    let start = outlined.find(MARK)? + MARK.len();
    serde_json::Deserializer::from_str(&outlined[start..]).into_iter::<Value>().next()?.ok()
}

/// Original source text embedded in an outlined file.
pub fn extract_embedded_source(outlined: &str) -> Option<String> {
    extract_descriptor(outlined)?.get("source")?.as_str().map(str::to_string)
}

/// How each scanned file is treated in the clone.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClonePlan {
    pub copied: Vec<PathBuf>,
    pub scheduled: Vec<(PathBuf, UnitKind)>,
    pub skipped: Vec<(PathBuf, String)>,
    pub working_directory: PathBuf,
}

pub fn clone_project(layout: &ProjectLayout) -> Result<ClonePlan, OutlineError> {
    let mut plan = ClonePlan { working_directory: layout.root().to_path_buf(), ..ClonePlan::default() };
    for file in layout.files().iter().chain(layout.symlinks()) {
        if file.components().next().is_some_and(|c| c.as_os_str() == GENERATED_DIR) {
            return Err(OutlineError::Collision(file.clone()));
        }
    }
    for file in layout.files() {
        match layout.unit_kind(file) {
            Some(kind @ (UnitKind::Cjs | UnitKind::Esm)) => plan.scheduled.push((file.clone(), kind)),
            Some(UnitKind::Json | UnitKind::Addon) => plan.copied.push(file.clone()),
            None => plan.skipped.push((file.clone(), SKIP_NON_CODE.to_string())),
        }
    }
    plan.skipped.extend(layout.symlinks().iter().map(|s| (s.clone(), SKIP_SYMLINK.to_string())));
    plan.skipped.sort();
    Ok(plan)
}

/// A fully outlined project, ready to be written.
#[derive(Debug, Clone)]
pub struct CloneManifest {
    pub copied: Vec<(PathBuf, PathBuf)>,
    pub outlined: Vec<OutlinedUnit>,
    pub skipped: Vec<(PathBuf, String)>,
    pub working_directory: PathBuf,
    pub policies: BTreeMap<PackageId, ModulePolicy>,
    pub package_dirs: BTreeMap<PackageId, PathBuf>,
    pub root: PackageId,
    pub entry: Option<(PathBuf, UnitKind)>,
    pub mode: EnforcementMode,
    pub diagnostics: Vec<Diagnostic>,
}

fn find_entry(layout: &ProjectLayout, scheduled: &BTreeMap<&Path, UnitKind>) -> Option<(PathBuf, UnitKind)> {
    let main = layout.manifest(Path::new("")).and_then(|m| m.main.clone());
    let mut candidates = Vec::new();
    if let Some(main) = main {
        let main = main.trim_start_matches("./").trim_end_matches('/').to_string();
        candidates.push(main.clone());
        for ext in ["js", "cjs", "mjs"] {
            candidates.push(format!("{main}.{ext}"));
        }
        for ext in ["js", "cjs", "mjs"] {
            candidates.push(format!("{main}/index.{ext}"));
        }
    }
    candidates.extend(["index.js", "index.cjs", "index.mjs"].map(String::from));
    candidates.into_iter().find_map(|c| scheduled.get(Path::new(&c)).map(|&k| (PathBuf::from(c), k)))
}

/// Compiles the policy of every installed package and outlines every code
/// file.
pub fn build_clone(
    layout: &ProjectLayout,
    graph: &DependencyGraph,
    cbom: &CbomDocument,
    mode: EnforcementMode,
    map: &CapabilityMap,
) -> Result<CloneManifest, OutlineError> {
    let locations = locate_packages(layout, graph);
    let mut diagnostics = locations.diagnostics.clone();
    diagnostics
        .extend(locations.unresolved.iter().map(|p| Diagnostic(format!("{p} is not installed; no policy emitted"))));
    let plan = clone_project(layout)?;
    let by_dir = locations.by_dir();
    let owner = |file: &Path| by_dir.get(package_boundary(file).as_path()).copied();
    let policies = compile_project_policies(layout, &locations, graph, cbom, mode, map)?;

    let mut skipped = plan.skipped;
    let mut work = Vec::new();
    for (file, kind) in &plan.scheduled {
        match owner(file) {
            Some(pkg) => work.push((file, *kind, &policies[pkg])),
            None => skipped.push((file.clone(), SKIP_UNATTRIBUTED.to_string())),
        }
    }
    skipped.sort();
    let outlined = work
        .into_par_iter()
        .map(|(file, kind, policy)| {
            let unit = SourceUnit::load(layout.root(), file, kind)?;
            outline_file(&unit, policy, layout.root())
        })
        .collect::<Result<Vec<_>, OutlineError>>()?;

    let scheduled: BTreeMap<&Path, UnitKind> = outlined.iter().map(|u| (u.original_path.as_path(), u.kind)).collect();
    let entry = find_entry(layout, &scheduled);
    Ok(CloneManifest {
        copied: plan.copied.iter().map(|f| (f.clone(), f.clone())).collect(),
        outlined,
        skipped,
        working_directory: plan.working_directory,
        policies,
        package_dirs: locations.dirs.clone(),
        root: graph.root().clone(),
        entry,
        mode,
        diagnostics,
    })
}

impl CloneManifest {
    /// Contents of `__capguard__/config.json`.
    pub fn config_json(&self) -> String {
        let packages: serde_json::Map<String, Value> =
            self.package_dirs.iter().map(|(pkg, dir)| (slash_path(dir), Value::String(policy_file(pkg)))).collect();
        let value = json!({
            "entry": self.entry.as_ref().map(|(p, _)| slash_path(p)),
            "entryKind": self.entry.as_ref().map(|(_, k)| if *k == UnitKind::Esm { "esm" } else { "cjs" }),
            "logSink": "stderr",
            "mode": self.mode,
            "packages": packages,
            "root": self.root.to_string(),
            "workingDirectory": slash_path(&self.working_directory),
        });
        let mut text = serde_json::to_string_pretty(&value).expect("config serializes");
        text.push('\n');
        text
    }

    /// Every generated or copied file of the clone, relative to its root.
    fn write_into(&self, dir: &Path, runtime: Option<&Path>) -> Result<(), OutlineError> {
        let write = |rel: &Path, bytes: &[u8]| -> Result<(), OutlineError> {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::write(&path, bytes).map_err(io_err(&path))
        };
        for (src, dst) in &self.copied {
            let from = self.working_directory.join(src);
            let bytes = fs::read(&from).map_err(io_err(&from))?;
            write(dst, &bytes)?;
        }
        for unit in &self.outlined {
            write(&unit.output_path, unit.text.as_bytes())?;
        }
        let gen = Path::new(GENERATED_DIR);
        for (pkg, policy) in &self.policies {
            write(&gen.join(policy_file(pkg)), policy.to_json().as_bytes())?;
        }
        write(&gen.join("config.json"), self.config_json().as_bytes())?;
        write(&gen.join("launch.cjs"), LAUNCHER.as_bytes())?;
        if let Some(runtime) = runtime {
            for entry in walkdir::WalkDir::new(runtime).sort_by_file_name() {
                let entry = entry.map_err(|e| OutlineError::Io { path: runtime.to_path_buf(), source: e.into() })?;
                if entry.file_type().is_file() {
                    let rel = entry.path().strip_prefix(runtime).expect("walk stays under runtime dir");
                    let bytes = fs::read(entry.path()).map_err(io_err(entry.path()))?;
                    write(&gen.join("runtime").join(rel), &bytes)?;
                }
            }
        }
        Ok(())
    }

    /// Writes the clone to `out`. The tree is assembled next to `out` and
    /// moved into place; an existing `out` is replaced only if it is a
    /// guarded clone itself.
    pub fn write(&self, out: &Path, runtime: Option<&Path>) -> Result<(), OutlineError> {
        let out_abs = absolute(out).map_err(io_err(out))?;
        if self.working_directory.starts_with(&out_abs) {
            return Err(OutlineError::OutputOverlapsRoot(out.to_path_buf()));
        }
        if out_abs.exists() && !out_abs.join(GENERATED_DIR).join("config.json").is_file() {
            return Err(OutlineError::NotAClone(out.to_path_buf()));
        }
        let parent = out_abs.parent().ok_or_else(|| OutlineError::OutputOverlapsRoot(out.to_path_buf()))?;
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let name = out_abs.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let staging = parent.join(format!(".{name}.{}.partial", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        let result = self.write_into(&staging, runtime).and_then(|()| {
            if out_abs.exists() {
                fs::remove_dir_all(&out_abs).map_err(io_err(&out_abs))?;
            }
            fs::rename(&staging, &out_abs).map_err(io_err(&out_abs))
        });
        if result.is_err() {
            let _ = fs::remove_dir_all(&staging);
        }
        result
    }
}

fn absolute(path: &Path) -> std::io::Result<PathBuf> {
    if let Ok(p) = path.canonicalize() {
        return Ok(p);
    }
    let abs = std::path::absolute(path)?;
    match (abs.parent(), abs.file_name()) {
        (Some(parent), Some(name)) => Ok(absolute(parent)?.join(name)),
        _ => Ok(abs),
    }
}
