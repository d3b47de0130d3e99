mod common;

use std::collections::BTreeSet;
use std::path::Path;

use capguard::capability::{Capability, CapabilityMap};
use capguard::cbom::CbomDocument;
use capguard::layout::{locate_packages, ProjectLayout};
use capguard::policy::{
    check_binding, check_import, compile_project_policies, Decision, EnforcementMode, ModulePolicy, Reason,
};
use capguard::sbom::{parse_sbom, DependencyGraph, PackageId};
use common::{fixture, table_modules, CAPABILITY_TABLE};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn rate_map() -> (DependencyGraph, CbomDocument, ProjectLayout) {
    let graph = parse_sbom(&std::fs::read(fixture("rate-map/sbom.json")).unwrap()).unwrap();
    let cbom = CbomDocument::parse(&std::fs::read_to_string(fixture("rate-map/cbom.json")).unwrap()).unwrap();
    let layout = ProjectLayout::scan(&fixture("rate-map/project"), None).unwrap();
    (graph, cbom, layout)
}

fn rate_map_policy(cbom: &CbomDocument) -> ModulePolicy {
    let (graph, _, layout) = rate_map();
    let locations = locate_packages(&layout, &graph);
    let map = CapabilityMap::default();
    let mut policies =
        compile_project_policies(&layout, &locations, &graph, cbom, EnforcementMode::Exit, &map).unwrap();
    policies.remove(graph.root()).unwrap()
}

fn strings(v: &Value) -> BTreeSet<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[test]
fn rate_map_allowlists() {
    let (_, cbom, _) = rate_map();
    let policy = rate_map_policy(&cbom);
    assert_eq!(policy.imports.local, set(&["index.js", "package.json"]));
    assert_eq!(policy.imports.dependencies, set(&["append-type", "terser"]));
    assert!(policy.imports.granted_builtins.is_empty());
    assert!(policy.imports.default_builtins.contains("assert"));
    assert!(policy.imports.default_builtins.contains("node:console"));
    assert!(policy.bindings.granted.is_empty());
    assert!(policy.globals.standard.contains("atob") && policy.globals.standard.contains("console"));
    assert!(policy.globals.granted.is_empty());
    assert!(!policy.codegen_allowed);
}

#[test]
fn rate_map_verdicts() {
    let (_, cbom, _) = rate_map();
    let policy = rate_map_policy(&cbom);
    let from = Path::new("index.js");
    let v = check_import(&policy, "dl-tar", from);
    assert_eq!((v.decision, v.reason), (Decision::Deny, Reason::NotInAllowlist));
    let v = check_import(&policy, "fs", from);
    assert_eq!((v.decision, v.reason), (Decision::Deny, Reason::CapabilityMissing));
    let v = check_import(&policy, "node:fs", from);
    assert_eq!((v.decision, v.reason), (Decision::Deny, Reason::CapabilityMissing));
    let v = check_import(&policy, "terser/package.json", from);
    assert_eq!(
        (v.decision, v.reason, v.matched_entry.as_deref()),
        (Decision::Allow, Reason::SbomDependency, Some("terser"))
    );
    let v = check_import(&policy, "./package.json", from);
    assert_eq!((v.decision, v.reason), (Decision::Allow, Reason::LocalFile));
    let v = check_import(&policy, ".", from);
    assert_eq!(v.matched_entry.as_deref(), Some("index.js"));
    assert!(!check_import(&policy, "../rate-map/index.js", from).is_allowed());
    assert!(!check_import(&policy, "./missing", from).is_allowed());
    assert!(check_import(&policy, "path", from).is_allowed());
    assert_eq!(check_binding(&policy, "spawn_sync").reason, Reason::CapabilityMissing);
    assert!(check_binding(&policy, "fs").is_allowed());
}

#[test]
fn granting_file_system_allows_fs() {
    let (_, mut cbom, _) = rate_map();
    cbom.grant("rate-map@1.0.3".parse().unwrap(), Capability::FileSystem);
    let policy = rate_map_policy(&cbom);
    for spec in ["fs", "node:fs", "fs/promises", "node:fs/promises"] {
        let v = check_import(&policy, spec, Path::new("index.js"));
        assert_eq!((v.decision, v.reason), (Decision::Allow, Reason::GrantedBuiltin), "{spec}");
    }
    assert!(!check_import(&policy, "dl-tar", Path::new("index.js")).is_allowed());
}

#[test]
fn serialized_policy_round_trips() {
    let (_, cbom, _) = rate_map();
    let policy = rate_map_policy(&cbom);
    let text = policy.to_json();
    assert_eq!(ModulePolicy::from_json(&text).unwrap(), policy);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["mode"], "exit");
    assert_eq!(v["package"], "rate-map@1.0.3");
    assert_eq!(strings(&v["imports"]["local"]), set(&["index.js", "package.json"]));
}

/// Decision derived only from the serialized allowlists and the capability table.
fn oracle_allows(policy: &Value, specifier: &str) -> bool {
    let imports = &policy["imports"];
    if strings(&imports["default_builtins"]).contains(specifier)
        || strings(&imports["granted_builtins"]).contains(specifier)
    {
        return true;
    }
    if specifier.contains(':') || table_modules().contains_key(specifier) {
        return false;
    }
    let name = match specifier.strip_prefix('@') {
        Some(rest) => format!("@{}", rest.splitn(3, '/').take(2).collect::<Vec<_>>().join("/")),
        None => specifier.split('/').next().unwrap().to_string(),
    };
    strings(&imports["dependencies"]).contains(&name)
}

fn specifier_pool(policy: &Value) -> Vec<String> {
    let mut pool: Vec<String> = table_modules().into_keys().collect();
    pool.extend(strings(&policy["imports"]["default_builtins"]));
    for dep in ["append-type", "terser", "dl-tar", "@scope/pkg", "rate-map"] {
        pool.push(dep.to_string());
        pool.push(format!("{dep}/lib/x.js"));
    }
    pool.extend(
        ["node:nope", "node:fs/x", "https://example.com/x.js", "data:text/javascript,1", "terser2"].map(String::from),
    );
    pool
}

#[test]
fn random_specifiers_follow_serialized_allowlist() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (_, base, _) = rate_map();
    let pkg: PackageId = "rate-map@1.0.3".parse().unwrap();
    let mut checked = 0;
    for round in 0..10 {
        let mut cbom = base.clone();
        for c in Capability::ALL {
            if round > 0 && rng.gen_bool(0.4) {
                cbom.grant(pkg.clone(), c);
            }
        }
        let policy = rate_map_policy(&cbom);
        let serialized: Value = serde_json::from_str(&policy.to_json()).unwrap();
        let pool = specifier_pool(&serialized);
        for _ in 0..100 {
            let spec = pool.choose(&mut rng).unwrap();
            let verdict = check_import(&policy, spec, Path::new("index.js"));
            assert_eq!(verdict.is_allowed(), oracle_allows(&serialized, spec), "{spec} under {:?}", policy.grants);
            checked += 1;
        }
    }
    assert_eq!(checked, 1000);
}

#[test]
fn granted_builtins_are_exactly_table_rows() {
    let pkg: PackageId = "rate-map@1.0.3".parse().unwrap();
    for (cap, modules, globals, bindings) in CAPABILITY_TABLE {
        let mut cbom = CbomDocument::new();
        cbom.grant(pkg.clone(), cap.parse().unwrap());
        let policy = rate_map_policy(&cbom);
        let mut expected: BTreeSet<String> = modules.iter().map(|m| m.to_string()).collect();
        expected.extend(modules.iter().filter_map(|m| m.strip_prefix("node:")).map(String::from));
        assert_eq!(policy.imports.granted_builtins, expected, "{cap}");
        assert_eq!(policy.globals.granted, globals.iter().map(|g| g.to_string()).collect(), "{cap}");
        assert_eq!(policy.bindings.granted, bindings.iter().map(|b| b.to_string()).collect(), "{cap}");
        assert_eq!(policy.codegen_allowed, *cap == "code");
    }
}

fn caps_strategy() -> impl Strategy<Value = BTreeSet<Capability>> {
    proptest::collection::btree_set(proptest::sample::select(Capability::ALL.to_vec()), 0..=7)
}

proptest! {
    /// More grants never turn an allowed import into a denied one.
    #[test]
    fn grants_are_monotone(small in caps_strategy(), extra in caps_strategy(), idx in 0usize..64) {
        let pkg: PackageId = "rate-map@1.0.3".parse().unwrap();
        let mut a = CbomDocument::new();
        let mut b = CbomDocument::new();
        for &c in &small {
            a.grant(pkg.clone(), c);
            b.grant(pkg.clone(), c);
        }
        for &c in &extra {
            b.grant(pkg.clone(), c);
        }
        let pa = rate_map_policy(&a);
        let pb = rate_map_policy(&b);
        let serialized: Value = serde_json::from_str(&pa.to_json()).unwrap();
        let pool = specifier_pool(&serialized);
        let spec = &pool[idx % pool.len()];
        let from = Path::new("index.js");
        prop_assert!(!check_import(&pa, spec, from).is_allowed() || check_import(&pb, spec, from).is_allowed());
        prop_assert!(pa.imports.entries().is_subset(&pb.imports.entries()));
        prop_assert!(pa.globals.granted.is_subset(&pb.globals.granted));
        prop_assert!(pa.bindings.granted.is_subset(&pb.bindings.granted));
    }
}
