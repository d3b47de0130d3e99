//! On-disk project layout: which files exist, where each SBOM package is
//! installed, which package owns a file, and whether a `.js` file is
//! CommonJS or an ES module.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Component, Path, PathBuf};

use thiserror::Error;
use walkdir::WalkDir;

use crate::sbom::{DependencyGraph, PackageId};

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("cannot read project root {path}")]
    Root {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}")]
    Walk {
        path: PathBuf,
        #[source]
        source: walkdir::Error,
    },
}

/// Kind of a source unit, decided by extension and package manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Cjs,
    Esm,
    Json,
    Addon,
}

impl UnitKind {
    pub fn is_code(self) -> bool {
        matches!(self, UnitKind::Cjs | UnitKind::Esm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic(pub String);

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Minimal view of a `package.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub name: Option<String>,
    pub version: Option<String>,
    pub module_type: Option<String>,
    pub main: Option<String>,
}

impl Manifest {
    fn read(path: &Path) -> Option<Manifest> {
        let text = std::fs::read_to_string(path).ok()?;
        let value: serde_json::Value = serde_json::from_str(&text).ok()?;
        let field = |k: &str| value.get(k).and_then(|v| v.as_str()).map(str::to_string);
        Some(Manifest {
            name: field("name"),
            version: field("version"),
            module_type: field("type"),
            main: field("main"),
        })
    }
}

/// A scanned project: every regular file (relative, `/`-separated, sorted)
/// plus the parsed `package.json` manifests among them.
#[derive(Debug, Clone)]
pub struct ProjectLayout {
    root: PathBuf,
    files: Vec<PathBuf>,
    symlinks: Vec<PathBuf>,
    manifests: BTreeMap<PathBuf, Manifest>,
}

impl ProjectLayout {
    /// Walks `root`, skipping `exclude` (typically an output directory that
    /// lives inside the project).
    pub fn scan(root: &Path, exclude: Option<&Path>) -> Result<Self, LayoutError> {
        let root = root.canonicalize().map_err(|source| LayoutError::Root { path: root.to_path_buf(), source })?;
        if !root.is_dir() {
            return Err(LayoutError::Root {
                path: root.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
            });
        }
        let exclude = exclude.and_then(|e| e.canonicalize().ok());
        let mut files = Vec::new();
        let mut symlinks = Vec::new();
        let walker = WalkDir::new(&root)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| exclude.as_deref().is_none_or(|ex| e.path() != ex));
        for entry in walker {
            let entry = entry.map_err(|source| LayoutError::Walk {
                path: source.path().map(Path::to_path_buf).unwrap_or_else(|| root.clone()),
                source,
            })?;
            let rel = entry.path().strip_prefix(&root).expect("walk stays under root").to_path_buf();
            if entry.file_type().is_symlink() {
                symlinks.push(rel);
            } else if entry.file_type().is_file() {
                files.push(rel);
            }
        }
        files.sort();
        let manifests = files
            .iter()
            .filter(|f| f.file_name().is_some_and(|n| n == "package.json"))
            .filter_map(|f| Manifest::read(&root.join(f)).map(|m| (f.clone(), m)))
            .collect();
        Ok(Self { root, files, symlinks, manifests })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn symlinks(&self) -> &[PathBuf] {
        &self.symlinks
    }

    pub fn manifest(&self, dir: &Path) -> Option<&Manifest> {
        self.manifests.get(&dir.join("package.json"))
    }

    /// Kind of a file by extension; `.js` follows the nearest manifest's
    /// `type` field and defaults to CommonJS. `None` for non-code files.
    pub fn unit_kind(&self, file: &Path) -> Option<UnitKind> {
        match file.extension()?.to_str()? {
            "mjs" => Some(UnitKind::Esm),
            "cjs" => Some(UnitKind::Cjs),
            "json" => Some(UnitKind::Json),
            "node" => Some(UnitKind::Addon),
            "js" => {
                let module_type =
                    file.ancestors().skip(1).find_map(|dir| self.manifest(dir)).and_then(|m| m.module_type.as_deref());
                Some(if module_type == Some("module") { UnitKind::Esm } else { UnitKind::Cjs })
            }
            _ => None,
        }
    }
}

/// Directory of the innermost installed package containing `file`:
/// the prefix ending at the last `node_modules/<name>` (or
/// `node_modules/@scope/<name>`), or the project root.
pub fn package_boundary(file: &Path) -> PathBuf {
    let parts: Vec<Component<'_>> = file.components().collect();
    let mut boundary = 0;
    let mut i = 0;
    // the last component is the file itself
    while i + 1 < parts.len() {
        if parts[i].as_os_str() == "node_modules" && i + 2 < parts.len() {
            let scoped = parts[i + 1].as_os_str().to_str().is_some_and(|s| s.starts_with('@'));
            let end = if scoped { i + 3 } else { i + 2 };
            if end < parts.len() {
                boundary = end;
                i = end;
                continue;
            }
        }
        i += 1;
    }
    parts[..boundary].iter().collect()
}

/// Where each SBOM package is installed, relative to the project root.
#[derive(Debug, Clone, Default)]
pub struct PackageLocations {
    pub dirs: BTreeMap<PackageId, PathBuf>,
    pub unresolved: Vec<PackageId>,
    pub diagnostics: Vec<Diagnostic>,
}

impl PackageLocations {
    /// Owner of a file: the package installed at the file's boundary.
    pub fn owner_of(&self, file: &Path) -> Option<&PackageId> {
        let boundary = package_boundary(file);
        self.by_dir().remove(boundary.as_path())
    }

    pub fn by_dir(&self) -> BTreeMap<&Path, &PackageId> {
        self.dirs.iter().map(|(p, d)| (d.as_path(), p)).collect()
    }
}

/// Resolves every graph package to a directory by walking nested
/// `node_modules` directories from the dependent's directory upward,
/// nearest match first. A nearest match whose installed version differs
/// from the SBOM is reported, not accepted.
pub fn locate_packages(layout: &ProjectLayout, graph: &DependencyGraph) -> PackageLocations {
    let mut out = PackageLocations::default();
    let root = graph.root().clone();
    if let Some(m) = layout.manifest(Path::new("")) {
        if m.name.as_deref().is_some_and(|n| n != root.name())
            || m.version.as_deref().is_some_and(|v| v != root.version())
        {
            out.diagnostics.push(Diagnostic(format!(
                "root package.json declares {}@{}, SBOM root is {root}",
                m.name.as_deref().unwrap_or("?"),
                m.version.as_deref().unwrap_or("?"),
            )));
        }
    }
    out.dirs.insert(root.clone(), PathBuf::new());

    let mut mismatched = BTreeSet::new();
    let mut queue = VecDeque::from([root]);
    while let Some(pkg) = queue.pop_front() {
        let from = out.dirs[&pkg].clone();
        let deps = graph.direct_dependencies(&pkg).expect("queued packages are graph nodes");
        for dep in deps {
            if out.dirs.contains_key(dep) {
                continue;
            }
            match resolve_from(layout, &from, dep.name()) {
                Some((dir, manifest)) if manifest.version.as_deref() == Some(dep.version()) => {
                    out.dirs.insert(dep.clone(), dir);
                    queue.push_back(dep.clone());
                }
                Some((dir, manifest)) if mismatched.insert((dep.clone(), dir.clone())) => {
                    out.diagnostics.push(Diagnostic(format!(
                        "{dep} (needed by {pkg}) resolves to {} which is version {}",
                        dir.display(),
                        manifest.version.as_deref().unwrap_or("?"),
                    )));
                }
                _ => {}
            }
        }
    }

    // packages the root cannot reach: fall back to a top-level install
    for pkg in graph.nodes() {
        if out.dirs.contains_key(pkg) {
            continue;
        }
        let dir = Path::new("node_modules").join(pkg.name());
        match layout.manifest(&dir) {
            Some(m) if m.version.as_deref() == Some(pkg.version()) => {
                out.dirs.insert(pkg.clone(), dir);
            }
            _ => out.unresolved.push(pkg.clone()),
        }
    }
    out
}

fn resolve_from<'a>(layout: &'a ProjectLayout, from: &Path, name: &str) -> Option<(PathBuf, &'a Manifest)> {
    for dir in from.ancestors() {
        if dir.file_name().is_some_and(|n| n == "node_modules") {
            continue;
        }
        let candidate = dir.join("node_modules").join(name);
        if let Some(m) = layout.manifest(&candidate) {
            return Some((candidate, m));
        }
    }
    None
}

/// Relative path rendered with `/` separators.
pub fn slash_path(path: &Path) -> String {
    let mut out = String::new();
    for c in path.components() {
        if !out.is_empty() && !out.ends_with('/') {
            out.push('/');
        }
        match c {
            Component::RootDir => out.push('/'),
            other => out.push_str(&other.as_os_str().to_string_lossy()),
        }
    }
    out
}
