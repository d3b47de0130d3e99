//! Reference oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use capguard::capability::{Capability, CapabilityMap};
use capguard::cbom::CbomDocument;
use capguard::inference::SourceUnit;
use capguard::layout::UnitKind;
use capguard::outline::{extract_embedded_source, header_len, outline_file, scan_module_names, OutlinedUnit};
use capguard::policy::{compile_policy, EnforcementMode, ModulePolicy};
use capguard::sbom::{DependencyGraph, PackageId};
use oxc_allocator::Allocator;
use oxc_ast::ast::Expression;
use oxc_ast::AstKind;
use oxc_parser::Parser;
use oxc_semantic::SemanticBuilder;
use oxc_span::SourceType;
use oxc_syntax::module_record::ExportExportName;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

/// What the reference parser reports about one source text.
#[derive(Debug, Default)]
pub struct OracleParse {
    pub errors: Vec<String>,
    pub root_bindings: BTreeSet<String>,
    pub exports: BTreeSet<String>,
    /// Values of `"key": "string"` object properties, by key.
    pub string_props: Vec<(String, String)>,
}

pub fn oracle_parse(src: &str, module: bool) -> OracleParse {
    let allocator = Allocator::default();
    let source_type = if module { SourceType::mjs() } else { SourceType::cjs() };
    let ret = Parser::new(&allocator, src, source_type).parse();
    let mut out = OracleParse { errors: ret.diagnostics.iter().map(|d| d.to_string()).collect(), ..Default::default() };
    for entry in ret.module_record.local_export_entries.iter().chain(ret.module_record.indirect_export_entries.iter()) {
        match &entry.export_name {
            ExportExportName::Name(n) => {
                out.exports.insert(n.name.to_string());
            }
            ExportExportName::Default(_) => {
                out.exports.insert("default".into());
            }
            ExportExportName::Null => {}
        }
    }
    for entry in ret.module_record.star_export_entries.iter() {
        if let ExportExportName::Name(n) = &entry.export_name {
            out.exports.insert(n.name.to_string());
        }
    }
    let semantic = SemanticBuilder::new().with_build_nodes(true).with_check_syntax_error(true).build(&ret.program);
    out.errors.extend(semantic.diagnostics.iter().map(|d| d.to_string()));
    let scoping = semantic.semantic.scoping();
    let root = scoping.root_scope_id();
    out.root_bindings = scoping.iter_bindings_in(root).map(|id| scoping.symbol_name(id).to_string()).collect();
    for node in semantic.semantic.nodes().iter() {
        if let AstKind::ObjectProperty(p) = node.kind() {
            if let (Some(key), Expression::StringLiteral(lit)) = (p.key.static_name(), &p.value) {
                out.string_props.push((key.into_owned(), lit.value.to_string()));
            }
        }
    }
    out
}

/// Corpus files, sorted by name.
pub fn corpus() -> Vec<(String, String)> {
    let mut out: Vec<_> = std::fs::read_dir(fixture("corpus"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

/// Brute-force presented view: union of own grants over a BFS from `pkg`.
pub fn bfs_presented(graph: &DependencyGraph, cbom: &CbomDocument, pkg: &PackageId) -> BTreeSet<Capability> {
    let mut seen = BTreeSet::from([pkg.clone()]);
    let mut queue = VecDeque::from([pkg.clone()]);
    let mut caps = BTreeSet::new();
    while let Some(p) = queue.pop_front() {
        caps.extend(cbom.grants.get(&p).into_iter().flatten().copied());
        for (from, to) in graph.edges() {
            if *from == p && seen.insert(to.clone()) {
                queue.push_back(to.clone());
            }
        }
    }
    caps
}

/// Diff counts recomputed package by package, straight from the metric
/// definitions: a capability is counted once per package version of the
/// new graph that gains it, and once per old version that loses it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub total: usize,
    pub reviewable: usize,
    pub updated: usize,
}

pub fn brute_force_counts(
    old: &CbomDocument,
    new: &CbomDocument,
    old_graph: &DependencyGraph,
    new_graph: &DependencyGraph,
) -> Counts {
    let grants =
        |c: &CbomDocument, p: &PackageId| -> BTreeSet<Capability> { c.grants.get(p).cloned().unwrap_or_default() };
    let mut old_by_name: BTreeMap<&str, Vec<&PackageId>> = BTreeMap::new();
    for p in old_graph.nodes() {
        old_by_name.entry(p.name()).or_default().push(p);
    }
    let new_names: BTreeSet<&str> = new_graph.nodes().map(|p| p.name()).collect();
    let mut counts = Counts::default();
    for p in new_graph.nodes() {
        let now = grants(new, p);
        let before: BTreeSet<Capability>;
        let (is_added, is_updated);
        if old_graph.contains(p) {
            before = grants(old, p);
            is_added = false;
            is_updated = false;
        } else if let Some(olds) = old_by_name.get(p.name()) {
            before = olds.iter().flat_map(|o| grants(old, o)).collect();
            is_added = false;
            is_updated = true;
        } else {
            before = BTreeSet::new();
            is_added = true;
            is_updated = false;
        }
        for c in Capability::ALL {
            let gained = now.contains(&c) && !before.contains(&c);
            let lost = before.contains(&c) && !now.contains(&c);
            if gained {
                counts.total += 1;
                if is_added || is_updated {
                    counts.reviewable += 1;
                }
                if is_updated {
                    counts.updated += 1;
                }
            }
            if lost {
                counts.total += 1;
            }
        }
    }
    for p in old_graph.nodes() {
        if !new_names.contains(p.name()) {
            counts.total += grants(old, p).len();
        }
    }
    counts
}

fn random_grants(rng: &mut ChaCha8Rng, cbom: &mut CbomDocument, pkg: &PackageId) {
    cbom.grants.entry(pkg.clone()).or_default();
    for c in Capability::ALL {
        if rng.gen_bool(0.25) {
            cbom.grant(pkg.clone(), c);
        }
    }
}

/// A graph of 1..=`max_nodes` packages with random edges (cycles and self
/// loops included) and random grants, determined by `seed`.
pub fn random_graph(seed: u64, max_nodes: usize) -> (DependencyGraph, CbomDocument) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_nodes);
    let ids: Vec<PackageId> = (0..n).map(|i| PackageId::new(format!("p{i}"), "1.0.0").unwrap()).collect();
    let mut graph = DependencyGraph::new(ids[0].clone());
    let mut cbom = CbomDocument::new();
    for id in &ids {
        graph.add_node(id.clone());
        random_grants(&mut rng, &mut cbom, id);
    }
    let density = rng.gen_range(0.0..0.3);
    for a in &ids {
        for b in &ids {
            if rng.gen_bool(density) {
                graph.add_edge(a.clone(), b.clone());
            }
        }
    }
    (graph, cbom)
}

/// Two snapshots of one project. Packages of the old snapshot survive
/// unchanged, are bumped to a new version, or disappear; the new snapshot
/// also adds fresh packages. Some names appear in several versions.
pub fn random_snapshots(seed: u64) -> ((DependencyGraph, CbomDocument), (DependencyGraph, CbomDocument)) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root_old = PackageId::new("root", "1.0.0").unwrap();
    let root_new = PackageId::new("root", if rng.gen_bool(0.5) { "1.0.0" } else { "1.1.0" }).unwrap();

    let mut old_ids = vec![root_old.clone()];
    for i in 0..rng.gen_range(0..10) {
        old_ids.push(PackageId::new(format!("n{i}"), "1.0.0").unwrap());
        if rng.gen_bool(0.2) {
            old_ids.push(PackageId::new(format!("n{i}"), "0.9.0").unwrap());
        }
    }
    let mut new_ids = vec![root_new.clone()];
    for id in &old_ids[1..] {
        match rng.gen_range(0..4) {
            0 => {}
            1 => new_ids.push(PackageId::new(id.name(), "2.0.0").unwrap()),
            _ => new_ids.push(id.clone()),
        }
    }
    new_ids.dedup();
    for i in 0..rng.gen_range(0..4) {
        new_ids.push(PackageId::new(format!("a{i}"), "1.0.0").unwrap());
    }

    let mut build = |ids: &[PackageId], inherit: Option<&CbomDocument>| {
        let mut graph = DependencyGraph::new(ids[0].clone());
        let mut cbom = CbomDocument::new();
        for id in ids {
            graph.add_node(id.clone());
            match inherit.and_then(|c| c.grants.get(id)) {
                Some(g) if rng.gen_bool(0.7) => {
                    cbom.grants.insert(id.clone(), g.clone());
                }
                _ => random_grants(&mut rng, &mut cbom, id),
            }
        }
        for _ in 0..ids.len() * 2 {
            let a = ids.choose(&mut rng).unwrap();
            let b = ids.choose(&mut rng).unwrap();
            graph.add_edge(a.clone(), b.clone());
        }
        (graph, cbom)
    };
    let old = build(&old_ids, None);
    let new = build(&new_ids, Some(&old.1));
    (old, new)
}

/// Hash over every file below `dir`: sorted relative paths and contents.
pub fn tree_hash(dir: &Path) -> String {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(&f).unwrap());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

pub type TableRow = (&'static str, &'static [&'static str], &'static [&'static str], &'static [&'static str]);

/// The capability table, row by row: (capability, modules, globals, bindings).
/// Modules are listed in `node:` form; the bare form maps the same way.
/// `*.node` is a file pattern.
pub const CAPABILITY_TABLE: &[TableRow] = &[
    ("addon", &["*.node"], &[], &[]),
    ("code", &["node:vm"], &["eval", "Function"], &[]),
    ("command", &["node:child_process", "node:worker_threads"], &[], &["spawn", "spawn_sync"]),
    ("crypto", &["node:crypto"], &["Crypto", "crypto", "CryptoKey", "SubtleCrypto"], &["crypto"]),
    ("file-system", &["node:fs", "node:fs/promises"], &[], &[]),
    (
        "network",
        &[
            "node:net",
            "node:http",
            "node:http2",
            "node:https",
            "node:dns",
            "node:dns/promises",
            "node:tls",
            "node:dgram",
        ],
        &["fetch"],
        &[],
    ),
    ("system", &["node:os", "node:process"], &["process"], &[]),
];

/// Every privileged module specifier of the capability table, both spellings.
pub fn table_modules() -> BTreeMap<String, &'static str> {
    let mut out = BTreeMap::new();
    for (cap, modules, _, _) in CAPABILITY_TABLE {
        for m in modules.iter().filter_map(|m| m.strip_prefix("node:")) {
            out.insert(format!("node:{m}"), *cap);
            out.insert(m.to_string(), *cap);
        }
    }
    out
}

/// Policy of a lone package with the given grants and no files.
pub fn bare_policy(grants: &[Capability]) -> ModulePolicy {
    let root: PackageId = "corpus@1.0.0".parse().unwrap();
    let graph = DependencyGraph::new(root.clone());
    let mut cbom = CbomDocument::new();
    for &c in grants {
        cbom.grant(root.clone(), c);
    }
    compile_policy(&root, &graph, &cbom, Path::new(""), &[], EnforcementMode::Throw, &CapabilityMap::default()).unwrap()
}

pub fn corpus_kind(name: &str) -> UnitKind {
    if name.ends_with(".mjs") {
        UnitKind::Esm
    } else {
        UnitKind::Cjs
    }
}

/// The text the guard evaluates: header, preamble, body, postamble.
pub fn evaluated_text(unit: &OutlinedUnit) -> String {
    let src = &unit.embedded_source;
    let h = header_len(src);
    format!("{}{}{}{}", &src[..h], unit.preamble_text, &src[h..], unit.postamble_text)
}

/// Disagreements between the scanner and the oracle on one file.
pub fn scanner_mismatches(name: &str, src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let ours = match scan_module_names(src) {
        Ok(n) => n,
        Err(e) => return vec![format!("{name}: {e}")],
    };
    let oracle = oracle_parse(src, true);
    if ours.top_level() != oracle.root_bindings {
        out.push(format!("{name}: ours {:?} oracle {:?}", ours.top_level(), oracle.root_bindings));
    }
    if ours.exports != oracle.exports {
        out.push(format!("{name}: exports ours {:?} oracle {:?}", ours.exports, oracle.exports));
    }
    out
}

/// Outlines one corpus file under an empty and a full grant set and checks
/// the result with the oracle.
pub fn outline_mismatches(name: &str, src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let kind = corpus_kind(name);
    let module = kind == UnitKind::Esm;
    let unit = SourceUnit { path: PathBuf::from("lib").join(name), kind, text: src.to_string() };
    for p in [bare_policy(&[]), bare_policy(&Capability::ALL)] {
        let o = match outline_file(&unit, &p, Path::new("/project")) {
            Ok(o) => o,
            Err(e) => {
                out.push(format!("{name}: {e}"));
                continue;
            }
        };
        let parsed = oracle_parse(&o.text, module);
        if !parsed.errors.is_empty() {
            out.push(format!("{name}: outlined output: {:?}", parsed.errors));
        }
        let embedded: Vec<_> = parsed.string_props.iter().filter(|(k, _)| k == "source").collect();
        if embedded.len() != 1 || embedded[0].1.as_bytes() != src.as_bytes() {
            out.push(format!("{name}: embedded source differs from the original"));
        }
        if extract_embedded_source(&o.text).as_deref() != Some(src) {
            out.push(format!("{name}: extracted source differs from the original"));
        }
        let evaluated = evaluated_text(&o);
        let parsed = oracle_parse(&evaluated, module);
        if !parsed.errors.is_empty() {
            out.push(format!("{name}: evaluated text: {:?}", parsed.errors));
        }
        for (_, alias) in &o.one_time_names {
            if src.contains(alias.as_str()) {
                out.push(format!("{name}: alias {alias} occurs in the source"));
            }
        }
        if !o.text.starts_with(&src[..header_len(src)]) {
            out.push(format!("{name}: header not hoisted"));
        }
    }
    out
}
