mod common;

use std::path::PathBuf;

use capguard::capability::Capability;
use capguard::cbom::{diff_cboms, CapabilityChange, PackageChange};
use capguard::commands::{cmd_diff, cmd_report, ReportRequest};
use capguard::policy::EnforcementMode;
use capguard::sbom::PackageId;
use common::{bfs_presented, brute_force_counts, fixture, random_graph, random_snapshots, Counts};
use proptest::prelude::*;

fn es(rel: &str) -> PathBuf {
    fixture(&format!("event-stream/{rel}"))
}

#[test]
fn event_stream_update_diff() {
    let diff = cmd_diff(
        &es("benign/sbom.json"),
        &es("benign/cbom.json"),
        &es("malicious/sbom.json"),
        &es("malicious/cbom.json"),
    )
    .unwrap();
    assert_eq!((diff.total, diff.reviewable, diff.updated), (1, 1, 0));
    let d = &diff.details[0];
    assert_eq!(d.package.to_string(), "flatmap-stream@0.1.1");
    assert_eq!(
        (d.capability, d.package_change, d.change),
        (Capability::System, PackageChange::Added, CapabilityChange::Gained)
    );
}

#[test]
fn event_stream_rollback_diff() {
    let diff = cmd_diff(
        &es("malicious/sbom.json"),
        &es("malicious/cbom.json"),
        &es("benign/sbom.json"),
        &es("benign/cbom.json"),
    )
    .unwrap();
    assert_eq!((diff.total, diff.reviewable, diff.updated), (1, 0, 0));
    assert_eq!(diff.details[0].package_change, PackageChange::Removed);
}

fn report(cbom: &str) -> capguard::commands::ReportOutcome {
    let sbom = es("malicious/sbom.json");
    let cbom = es(cbom);
    let baseline_sbom = es("benign/sbom.json");
    let baseline_cbom = es("benign/cbom.json");
    cmd_report(&ReportRequest {
        sbom: &sbom,
        cbom: Some(&cbom),
        root: None,
        baseline_sbom: Some(&baseline_sbom),
        baseline_cbom: Some(&baseline_cbom),
        policies_out: None,
        mode: EnforcementMode::Exit,
        builtin_manifest: None,
    })
    .unwrap()
}

#[test]
fn deobfuscated_update_flags_ps_tree() {
    let outcome = report("malicious/cbom-deobfuscated.json");
    let ps_tree: PackageId = "ps-tree@1.2.0".parse().unwrap();
    assert_eq!(outcome.report.flagged, vec![ps_tree.clone()]);
    let row = outcome.report.rows.iter().find(|r| r.package == ps_tree).unwrap();
    assert_eq!(row.gained, [Capability::Crypto, Capability::Network].into());
    assert!(row.direct);
}

#[test]
fn obfuscated_update_flags_nothing() {
    let outcome = report("malicious/cbom.json");
    assert!(outcome.report.flagged.is_empty());
}

#[test]
fn report_infers_when_cbom_is_absent() {
    let sbom = es("benign/sbom.json");
    let root = es("benign/project");
    let out = tempfile::tempdir().unwrap();
    let outcome = cmd_report(&ReportRequest {
        sbom: &sbom,
        cbom: None,
        root: Some(&root),
        baseline_sbom: None,
        baseline_cbom: None,
        policies_out: Some(out.path()),
        mode: EnforcementMode::Log,
        builtin_manifest: None,
    })
    .unwrap();
    let root_row = outcome.report.rows.iter().find(|r| r.package.name() == "npm-run-all").unwrap();
    assert_eq!(root_row.presented, [Capability::Command, Capability::FileSystem, Capability::System].into());
    let mut written: Vec<_> = std::fs::read_dir(out.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    written.sort();
    assert_eq!(written.len(), 5);
    assert_eq!(written[0], "event-stream@3.3.4.json");
}

proptest! {
    #[test]
    fn presented_view_matches_bfs(seed in any::<u64>()) {
        let (graph, cbom) = random_graph(seed, 20);
        for pkg in graph.nodes() {
            prop_assert_eq!(cbom.presented_view(&graph, pkg).unwrap(), bfs_presented(&graph, &cbom, pkg));
            prop_assert!(cbom.enforced_view(pkg).is_subset(&cbom.presented_view(&graph, pkg).unwrap()));
        }
    }

    #[test]
    fn reachability_is_monotone_along_edges(seed in any::<u64>()) {
        let (graph, cbom) = random_graph(seed, 20);
        for (from, to) in graph.edges() {
            let r_from = graph.reachable(from).unwrap();
            prop_assert!(graph.reachable(to).unwrap().is_subset(&r_from));
            prop_assert!(cbom.presented_view(&graph, to).unwrap().is_subset(&cbom.presented_view(&graph, from).unwrap()));
        }
    }

    #[test]
    fn diff_counts_match_brute_force(seed in any::<u64>()) {
        let ((og, oc), (ng, nc)) = random_snapshots(seed);
        let diff = diff_cboms(&oc, &nc, &og, &ng);
        let counts = Counts { total: diff.total, reviewable: diff.reviewable, updated: diff.updated };
        prop_assert_eq!(counts, brute_force_counts(&oc, &nc, &og, &ng));
        prop_assert!(diff.updated <= diff.reviewable && diff.reviewable <= diff.total);
    }

    #[test]
    fn identical_snapshots_have_no_changes(seed in any::<u64>()) {
        let (g, c) = random_graph(seed, 12);
        let diff = diff_cboms(&c, &c, &g, &g);
        prop_assert_eq!(diff.total, 0);
    }
}
