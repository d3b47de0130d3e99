//! Static capability inference over package sources.
//!
//! The trigger vocabulary is the capability table: privileged builtin
//! specifiers in `require(...)`, `import(...)` and `import`/`export ... from`
//! position, `.node` addon specifiers, capability-bearing global names and
//! `process.binding(...)` names. Matching runs over tokens, so occurrences
//! inside comments, strings and template text never trigger. Specifiers
//! computed at runtime are not inferred.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::capability::{capability_of_binding, capability_of_global, capability_of_import, Capability, GLOBAL_RULES};
use crate::cbom::{CapabilitySet, CbomDocument};
use crate::layout::{locate_packages, slash_path, Diagnostic, PackageLocations, ProjectLayout, UnitKind};
use crate::lexer::{tokenize, LexError, Token, TokenKind};
use crate::sbom::{DependencyGraph, PackageId};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("{path}: not valid UTF-8")]
    Undecodable { path: PathBuf },
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One file of a package, decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceUnit {
    /// Project-relative path.
    pub path: PathBuf,
    pub kind: UnitKind,
    /// Empty for addons.
    pub text: String,
}

impl SourceUnit {
    pub fn load(root: &Path, path: &Path, kind: UnitKind) -> Result<Self, InferenceError> {
        if kind == UnitKind::Addon {
            return Ok(Self { path: path.to_path_buf(), kind, text: String::new() });
        }
        let bytes =
            std::fs::read(root.join(path)).map_err(|source| InferenceError::Io { path: path.to_path_buf(), source })?;
        let text = String::from_utf8(bytes).map_err(|_| InferenceError::Undecodable { path: path.to_path_buf() })?;
        Ok(Self { path: path.to_path_buf(), kind, text })
    }
}

/// Capabilities found in one unit. When the tokenizer rejects the text the
/// scan falls back to plain word matching, which over-approximates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitScan {
    pub capabilities: CapabilitySet,
    pub fallback: Option<LexError>,
}

pub fn scan_unit(unit: &SourceUnit) -> UnitScan {
    match unit.kind {
        UnitKind::Json => UnitScan { capabilities: CapabilitySet::new(), fallback: None },
        UnitKind::Addon => UnitScan { capabilities: [Capability::Addon].into(), fallback: None },
        UnitKind::Cjs | UnitKind::Esm => match tokenize(&unit.text) {
            Ok(tokens) => UnitScan { capabilities: scan_tokens(&tokens), fallback: None },
            Err(e) => UnitScan { capabilities: scan_words(&unit.text), fallback: Some(e) },
        },
    }
}

fn scan_tokens(tokens: &[Token<'_>]) -> CapabilitySet {
    let mut caps = CapabilitySet::new();
    let at = |i: usize| tokens.get(i);
    let punct = |i: usize, p: &str| at(i).is_some_and(|t| t.is_punct(p));
    let member = |i: usize| i > 0 && (punct(i - 1, ".") || punct(i - 1, "?."));
    let string_arg = |i: usize| -> Option<String> {
        // `(` string followed by `)` or `,`
        if punct(i, "(") && (punct(i + 2, ")") || punct(i + 2, ",")) {
            at(i + 1)?.string_value()
        } else {
            None
        }
    };

    for (i, tok) in tokens.iter().enumerate() {
        let mut specifier = None;
        match tok.kind {
            TokenKind::Ident => {
                let Some(name) = tok.ident() else { continue };
                match &*name {
                    "require" if !member(i) || (i >= 2 && at(i - 2).is_some_and(|t| t.is_ident("module"))) => {
                        specifier = string_arg(i + 1);
                    }
                    "import" if !member(i) => {
                        specifier = string_arg(i + 1).or_else(|| at(i + 1).and_then(Token::string_value));
                    }
                    "from" => {
                        specifier = at(i + 1).filter(|t| t.kind == TokenKind::String).and_then(Token::string_value)
                    }
                    "binding" | "_linkedBinding" if member(i) => {
                        if let Some(c) = string_arg(i + 1).as_deref().and_then(capability_of_binding) {
                            caps.insert(c);
                        }
                    }
                    _ => {}
                }
                if let Some(c) = capability_of_global(&name) {
                    let object_key = punct(i + 1, ":") && i > 0 && (punct(i - 1, "{") || punct(i - 1, ","));
                    if !member(i) && !object_key {
                        caps.insert(c);
                    }
                }
            }
            _ => continue,
        }
        if let Some(c) = specifier.as_deref().and_then(capability_of_import) {
            caps.insert(c);
        }
    }
    caps
}

/// Word-level matching used when tokenization fails.
fn scan_words(text: &str) -> CapabilitySet {
    let mut caps = CapabilitySet::new();
    let words = text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '$'));
    for word in words {
        if let Some(c) = GLOBAL_RULES.iter().find(|(n, _)| *n == word).map(|&(_, c)| c) {
            caps.insert(c);
        }
    }
    for quoted in text.split(['"', '\'', '`']).skip(1).step_by(2) {
        if let Some(c) = capability_of_import(quoted) {
            caps.insert(c);
        }
    }
    caps
}

/// Inferred CBOM plus what was noticed on the way.
#[derive(Debug, Clone)]
pub struct Inference {
    pub cbom: CbomDocument,
    /// Per-file triggers, for the table printed by the CLI.
    pub per_file: BTreeMap<PathBuf, CapabilitySet>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Grants each graph package the union of what its own files trigger.
/// Packages that are not installed get no grants and a diagnostic.
pub fn infer_cbom(layout: &ProjectLayout, graph: &DependencyGraph) -> Result<Inference, InferenceError> {
    let locations = locate_packages(layout, graph);
    infer_with_locations(layout, graph, &locations)
}

pub fn infer_with_locations(
    layout: &ProjectLayout,
    graph: &DependencyGraph,
    locations: &PackageLocations,
) -> Result<Inference, InferenceError> {
    let mut diagnostics = locations.diagnostics.clone();
    diagnostics
        .extend(locations.unresolved.iter().map(|p| Diagnostic(format!("{p} is not installed; nothing to scan"))));
    let mut owned = Vec::new();
    for file in layout.files() {
        let Some(kind) = layout.unit_kind(file) else { continue };
        match locations.owner_of(file) {
            Some(pkg) => owned.push((pkg.clone(), file.clone(), kind)),
            None => {
                diagnostics.push(Diagnostic(format!("{} belongs to no package declared in the SBOM", slash_path(file))))
            }
        }
    }

    let scans: Vec<(PackageId, PathBuf, UnitScan)> = owned
        .into_par_iter()
        .map(|(pkg, file, kind)| {
            let unit = SourceUnit::load(layout.root(), &file, kind)?;
            Ok((pkg, file, scan_unit(&unit)))
        })
        .collect::<Result<_, InferenceError>>()?;

    let mut cbom = CbomDocument::new();
    for pkg in graph.nodes() {
        cbom.grants.insert(pkg.clone(), CapabilitySet::new());
    }
    let mut per_file = BTreeMap::new();
    for (pkg, file, scan) in scans {
        if let Some(e) = &scan.fallback {
            diagnostics.push(Diagnostic(format!("{}: {e}; fell back to word matching", slash_path(&file))));
        }
        cbom.grants.entry(pkg).or_default().extend(scan.capabilities.iter().copied());
        per_file.insert(file, scan.capabilities);
    }
    Ok(Inference { cbom, per_file, diagnostics })
}
