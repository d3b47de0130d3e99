mod common;

use std::process::{Command, Output};

use common::fixture;
use serde_json::Value;

fn capguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capguard")).args(args).output().unwrap()
}

fn path(rel: &str) -> String {
    fixture(rel).to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn diff_exits_two_when_review_is_needed() {
    let o = capguard(&[
        "diff",
        "--old-sbom",
        &path("event-stream/benign/sbom.json"),
        "--old-cbom",
        &path("event-stream/benign/cbom.json"),
        "--new-sbom",
        &path("event-stream/malicious/sbom.json"),
        "--new-cbom",
        &path("event-stream/malicious/cbom.json"),
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((v["total"].as_u64(), v["reviewable"].as_u64(), v["updated"].as_u64()), (Some(1), Some(1), Some(0)));
}

#[test]
fn diff_of_identical_snapshots_exits_zero() {
    let sbom = path("event-stream/benign/sbom.json");
    let cbom = path("event-stream/benign/cbom.json");
    let o = capguard(&["diff", "--old-sbom", &sbom, "--old-cbom", &cbom, "--new-sbom", &sbom, "--new-cbom", &cbom]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("total=0 reviewable=0 updated=0"));
}

#[test]
fn infer_prints_canonical_cbom() {
    let o = capguard(&[
        "infer",
        "--sbom",
        &path("event-stream/benign/sbom.json"),
        "--root",
        &path("event-stream/benign/project"),
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), std::fs::read_to_string(fixture("event-stream/benign/cbom.json")).unwrap());
}

#[test]
fn missing_sbom_is_an_error() {
    let o = capguard(&["infer", "--sbom", "/nonexistent/sbom.json", "--root", &path("rate-map/project")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(capguard(&["diff"]).status.code(), Some(1));
    assert_eq!(capguard(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(capguard(&["--help"]).status.code(), Some(0));
}

#[test]
fn report_flags_ps_tree() {
    let o = capguard(&[
        "report",
        "--sbom",
        &path("event-stream/malicious/sbom.json"),
        "--cbom",
        &path("event-stream/malicious/cbom-deobfuscated.json"),
        "--baseline-sbom",
        &path("event-stream/benign/sbom.json"),
        "--baseline-cbom",
        &path("event-stream/benign/cbom.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let flagged: Vec<_> = stdout(&o).lines().filter(|l| l.ends_with("REVIEW")).map(String::from).collect();
    assert_eq!(flagged.len(), 1);
    assert!(flagged[0].starts_with("ps-tree@1.2.0"));
}

#[test]
fn outline_writes_a_clone() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("guarded");
    let o = capguard(&[
        "outline",
        "--sbom",
        &path("rate-map/sbom.json"),
        "--cbom",
        &path("rate-map/cbom.json"),
        "--root",
        &path("rate-map/project"),
        "--out",
        &out.to_string_lossy(),
        "--mode",
        "log",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((v["outlined"].as_u64(), v["copied"].as_u64(), v["skipped"].as_u64()), (Some(1), Some(1), Some(0)));
    assert_eq!(v["mode"], "log");
    assert!(out.join("__capguard__/launch.cjs").is_file());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("append-type@1.0.2 is not installed"), "{stderr}");
}

#[test]
fn bad_builtin_manifest_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("builtins.json");
    std::fs::write(&manifest, "{\"not\": \"an array\"}").unwrap();
    let o = capguard(&[
        "report",
        "--sbom",
        &path("rate-map/sbom.json"),
        "--cbom",
        &path("rate-map/cbom.json"),
        "--root",
        &path("rate-map/project"),
        "--policies",
        &tmp.path().join("p").to_string_lossy(),
        "--builtin-manifest",
        &manifest.to_string_lossy(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("not a JSON array of strings"), "{stderr}");
}
