use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use serde_json::Value;

use epas_cli::document::{revalidate_solution, InstanceDocument, SolutionDocument};
use epas_cli::generate::{generate_instance, Family, GenerateSpec, VariantKind};

fn epas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epas")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn generate_then_solve_with_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.json");
    let out = epas(&[
        "generate", "--family", "clustered-gaussian", "--n", "9", "--f", "5", "--k", "2", "--variant", "capacitated", "--seed", "4",
        "--out", path(&inst),
    ]);
    assert!(out.status.success());
    let sol = dir.path().join("s.json");
    let out = epas(&["solve", "--instance", path(&inst), "--with-oracle", "--out", path(&sol)]);
    assert_eq!(out.status.code(), Some(0));
    let doc = SolutionDocument::parse(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    let instance = InstanceDocument::parse(&std::fs::read_to_string(&inst).unwrap()).unwrap().to_instance().unwrap();
    assert!(revalidate_solution(&instance, &doc).unwrap().is_empty());
    let gap = doc.oracle_gap.unwrap();
    assert!((1.0 - 1e-9..=1.0 + 30.0 * 0.5).contains(&gap));
}

#[test]
fn solve_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.json");
    epas(&["generate", "--family", "random-metric", "--n", "8", "--f", "5", "--k", "3", "--variant", "matroid", "--out", path(&inst)]);
    let a = epas(&["solve", "--instance", path(&inst)]);
    let b = epas(&["solve", "--instance", path(&inst)]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn infeasible_instance_exits_2_with_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "i.json",
        r#"{"metric":{"kind":"euclidean","clients":[[0.0],[1.0],[2.0]],"facilities":[[0.0],[2.0]]},"k":2,
           "variant":{"type":"capacitated","caps":[1,1]}}"#,
    );
    let out = epas(&["solve", "--instance", path(&inst)]);
    assert_eq!(out.status.code(), Some(2));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["status"], "infeasible");
    assert!(doc["certificate"].as_str().unwrap().starts_with("capacity:"));
    let out = epas(&["oracle", "--instance", path(&inst)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn schema_error_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "i.json", r#"{"metric":{"kind":"euclidean","clients":[[0.0],["x"]]},"k":1}"#);
    let out = epas(&["solve", "--instance", path(&inst)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "schema");
    assert_eq!(err["path"], "metric.clients[1][0]");
}

#[test]
fn usage_errors_exit_1() {
    let out = epas(&["solve"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "usage");
    let out = epas(&["solve", "--instance", "/nonexistent/i.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "io");
}

#[test]
fn node_budget_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.json");
    epas(&["generate", "--family", "euclidean-uniform", "--n", "10", "--f", "6", "--k", "3", "--z", "2", "--epsilon", "0.2", "--out", path(&inst)]);
    let out = epas(&["solve", "--instance", path(&inst), "--node-budget", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["budgets_hit"]["nodes"], true);
}

#[test]
fn variant_override_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.json");
    epas(&["generate", "--family", "grid-graph", "--n", "7", "--f", "4", "--k", "2", "--out", path(&inst)]);
    let trace = dir.path().join("t.json");
    let out = epas(&["solve", "--instance", path(&inst), "--variant", "fault-tolerant:2", "--trace", path(&trace)]);
    assert_eq!(out.status.code(), Some(0));
    let records: Value = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert!(!records.as_array().unwrap().is_empty());
    let out = epas(&["solve", "--instance", path(&inst), "--variant", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn randomized_mode_on_vanilla() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.json");
    epas(&["generate", "--family", "euclidean-uniform", "--n", "8", "--f", "5", "--k", "2", "--out", path(&inst)]);
    let a = epas(&["solve", "--instance", path(&inst), "--mode", "rand", "--seed", "9"]);
    let b = epas(&["solve", "--instance", path(&inst), "--mode", "rand", "--seed", "9"]);
    assert_ne!(a.status.code(), Some(1));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn audit_and_scatter_probe() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.json");
    epas(&["generate", "--family", "euclidean-uniform", "--n", "6", "--f", "4", "--k", "2", "--out", path(&inst)]);
    let out = epas(&["audit-coreset", "--instance", path(&inst), "--coreset", "identity"]);
    assert!(out.status.success());
    let rec: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec["max_error"], 0.0);
    let out = epas(&["scatter-probe", "--instance", path(&inst)]);
    assert!(out.status.success());
    let rec: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec["exhaustive"], true);
    assert!(rec["length"].as_u64().unwrap() >= 1);
}

#[test]
fn bench_csv_is_reproducible() {
    let a = epas(&["bench", "--count", "6", "--with-oracle"]);
    let b = epas(&["bench", "--count", "6", "--with-oracle"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("id,family,variant,"));
    let threaded = Command::new(env!("CARGO_BIN_EXE_epas")).args(["bench", "--count", "6", "--with-oracle"]).env("EPAS_THREADS", "2").output().unwrap();
    assert_eq!(threaded.stdout, text.as_bytes());
}

fn specs() -> impl Strategy<Value = GenerateSpec> {
    let families = prop::sample::select(vec![Family::EuclideanUniform, Family::ClusteredGaussian, Family::RandomMetric, Family::GridGraph]);
    let variants = prop::sample::select(VariantKind::ALL.to_vec());
    (families, variants, 1usize..=3, 3usize..=10, 0usize..=4, any::<u64>()).prop_map(|(family, variant, k, n, extra, seed)| {
        GenerateSpec::new(family, n, k.max(2) + extra, k, variant, seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn instance_documents_round_trip(spec in specs()) {
        let doc = generate_instance(&spec).unwrap();
        let text = doc.to_json();
        let back = InstanceDocument::parse(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_json(), text);
        back.to_instance().unwrap();
    }
}
