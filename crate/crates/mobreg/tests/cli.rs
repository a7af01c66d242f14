use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mobreg::experiments::directory_entry;
use mobreg_core::registry::{Entry, RegistryStore, ServiceEntry};

fn mobreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobreg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn manifest(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn run_scenario(rel: &str, out: &Path, extra: &[&str]) -> Output {
    let scn = manifest(rel);
    let mut args = vec!["run", "--scenario", scn.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    mobreg(&args)
}

#[test]
fn smoke_passes_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario("scenarios/smoke.scn", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,node,time_us,value\n"));
    assert!(metrics.contains("reg_latency_us,"));
    let log = fs::read_to_string(dir.path().join("traffic.log")).unwrap();
    assert!(log.lines().all(|l| l.split('\t').count() == 5));
    let verdicts = fs::read_to_string(dir.path().join("verdicts.txt")).unwrap();
    assert_eq!(verdicts.lines().count(), 4);
    assert!(verdicts.lines().all(|l| l.contains("\tPASS")));
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario("scenarios/churn.scn", a.path(), &["--seed", "42"]);
    run_scenario("scenarios/churn.scn", b.path(), &["--seed", "42"]);
    for f in ["metrics.csv", "traffic.log", "verdicts.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    run_scenario("scenarios/churn.scn", c.path(), &["--seed", "43"]);
    assert_ne!(
        fs::read(a.path().join("traffic.log")).unwrap(),
        fs::read(c.path().join("traffic.log")).unwrap()
    );
    assert_eq!(
        fs::read(a.path().join("verdicts.txt")).unwrap(),
        fs::read(c.path().join("verdicts.txt")).unwrap()
    );
}

#[test]
fn unknown_node_exits_2_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario("tests/fixtures/unknown_node.scn", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown node `ghost`"));
}

#[test]
fn missing_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario("tests/fixtures/absent.scn", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unhealed_partition_exits_1_naming_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario("tests/fixtures/split_forever.scn", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let verdicts = fs::read_to_string(dir.path().join("verdicts.txt")).unwrap();
    assert!(verdicts.contains("election-safety\tFAIL"), "{verdicts}");
}

#[test]
fn taxonomy_flag_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let tax = dir.path().join("tax.tsv");
    // without a hospital group the providers create one named after their description
    fs::write(&tax, "food\tdining\tpizza,menu\n").unwrap();
    let out = run_scenario("scenarios/smoke.scn", &dir.path().join("o"), &["--taxonomy", tax.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let snaps: Vec<String> = fs::read_dir(dir.path().join("o/snapshots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(snaps.len(), 1);
    assert!(!snaps[0].starts_with("hospital-"), "{snaps:?}");
}

fn line(e: &ServiceEntry) -> String {
    let mut s = String::new();
    e.to_element().write(&mut s);
    s
}

#[test]
fn inspect_empty_snapshot_prints_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.snap");
    fs::write(&p, RegistryStore::<ServiceEntry>::new().snapshot()).unwrap();
    for q in [["--by-id", "s1"], ["--by-name", "doctor"], ["--by-group", "hospital"]] {
        let out = mobreg(&["inspect", "--snapshot", p.to_str().unwrap(), q[0], q[1]]);
        assert_eq!(out.status.code(), Some(0));
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn inspect_by_id_returns_exactly_that_entry() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("dir.snap");
    let entries: Vec<ServiceEntry> = (0..1000).map(directory_entry).collect();
    let mut store = RegistryStore::new();
    for e in &entries {
        store.upsert(e.clone()).unwrap();
    }
    fs::write(&p, store.snapshot()).unwrap();
    for id in ["s1", "s437", "s1000"] {
        let out = mobreg(&["inspect", "--snapshot", p.to_str().unwrap(), "--by-id", id]);
        assert_eq!(out.status.code(), Some(0));
        // linear scan over what was stored
        let want: Vec<String> = store
            .entries()
            .filter(|e| e.service_id == id)
            .map(line)
            .collect();
        assert_eq!(want.len(), 1);
        assert_eq!(String::from_utf8(out.stdout).unwrap(), format!("{}\n", want[0]));
    }
    let out = mobreg(&["inspect", "--snapshot", p.to_str().unwrap(), "--by-name", "record 00012"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 10);
}

#[test]
fn inspect_corrupt_snapshot_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.snap");
    let mut bytes = {
        let mut s = RegistryStore::new();
        s.upsert(directory_entry(0)).unwrap();
        s.snapshot()
    };
    let last = bytes.len() - 5;
    bytes[last] ^= 0x01;
    fs::write(&p, bytes).unwrap();
    let out = mobreg(&["inspect", "--snapshot", p.to_str().unwrap(), "--by-id", "s1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn inspect_needs_exactly_one_query() {
    let out = mobreg(&["inspect", "--snapshot", "x.snap"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mobreg(&["inspect", "--snapshot", "x.snap", "--by-id", "a", "--by-group", "b"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_experiment_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mobreg(&["experiment", "warp-speed", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown experiment"));
}

#[test]
fn registry_growth_experiment_writes_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = mobreg(&["experiment", "registry-growth", "--seed", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("registry-growth.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "size,snapshot_bytes");
    assert_eq!(rows.len(), 7);
    assert!(rows[6].starts_with("100000,"));
}

#[test]
fn failover_experiment_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = mobreg(&["experiment", "failover", "--seed", "3", "--out", d.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    let csv = fs::read(a.path().join("failover.csv")).unwrap();
    assert_eq!(csv, fs::read(b.path().join("failover.csv")).unwrap());
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 101);
}
