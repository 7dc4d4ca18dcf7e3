use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use skycat::archive::Archive;
use skycat::harness::strip_wall;
use skycat::ingest::{write_batch_ndjson, DetectionBatch, ServerId};
use skycat::types::{Filter, SourceRecord};

fn skycat(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skycat"))
        .arg("--store")
        .arg(store)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON value")
}

fn error_code(out: &Output) -> String {
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"]["code"].as_str().unwrap().to_string()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("night.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

fn batch(visit: u64, ccd: u16, server: ServerId, n: u64) -> DetectionBatch {
    let records = (0..n)
        .map(|i| SourceRecord {
            source_id: visit * 1000 + ccd as u64 * 100 + i,
            visit_id: visit,
            ccd_id: ccd,
            ra: 10.0 + i as f64 * 7.0,
            dec: -20.0 + i as f64 * 3.0,
            epoch: 100.0 + visit as f64 * 13.0,
            flux: 50.0 + i as f64,
            filter: Filter::R,
        })
        .collect();
    DetectionBatch {
        visit_id: visit,
        ccd_id: ccd,
        server_id: server,
        records,
        received_at: 0.0,
    }
}

fn ingest_file(dir: &Path, b: &DetectionBatch) -> String {
    let p = dir.join(format!("b{}_{}_{:?}.ndjson", b.visit_id, b.ccd_id, b.server_id));
    std::fs::write(&p, write_batch_ndjson(b)).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn fresh_store_reports_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("s");
    let init = ok_json(&skycat(&store, &["init"]));
    assert_eq!(init["partitions"], 0);
    let st = ok_json(&skycat(&store, &["status"]));
    assert_eq!(st["partitions"], 0);
    assert_eq!(st["nodes"], 0);
    assert_eq!(st["night"]["phase"], "open");

    let again = skycat(&store, &["init"]);
    assert_eq!(again.status.code(), Some(1));
    assert_eq!(error_code(&again), "CONFIG");
}

#[test]
fn usage_and_missing_store_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("none");
    assert_eq!(skycat(&store, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(skycat(&store, &["--help"]).status.code(), Some(0));
    let st = skycat(&store, &["status"]);
    assert_eq!(st.status.code(), Some(1));
    assert_eq!(error_code(&st), "CONFIG");
}

#[test]
fn ingest_merge_export_release_query() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("s");
    ok_json(&skycat(&store, &["init"]));

    for ccd in 0..3 {
        for server in [ServerId::A, ServerId::B] {
            let f = ingest_file(dir.path(), &batch(1, ccd, server, 6));
            let r = ok_json(&skycat(&store, &["ingest", "--batch", &f, "--received-at", "120"]));
            assert_eq!(r["staged"]["duplicate"], server == ServerId::B);
        }
    }
    let bad = {
        let mut b = batch(2, 0, ServerId::A, 2);
        b.records[1].dec = 95.0;
        ingest_file(dir.path(), &b)
    };
    let r = ok_json(&skycat(&store, &["ingest", "--batch", &bad]));
    assert!(r["staged"].is_null());
    assert_eq!(r["validation"]["violations"][0]["kind"], "coordinate_range");

    let m = ok_json(&skycat(&store, &["merge"]));
    assert_eq!(m["merge"]["rows_merged"], 18);
    assert_eq!(m["merge"]["complete"], true);

    // export is a passthrough of the catalog's own export
    let archive = Archive::load(&store).unwrap();
    let keys = archive.catalog.keys();
    assert!(!keys.is_empty());
    let mut pre_release = String::new();
    for k in &keys {
        let out = skycat(&store, &["export", "--partition", &k.to_string()]);
        assert!(out.status.success());
        let expected = archive.catalog.export_ndjson(k).unwrap();
        assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);
        pre_release.push_str(&expected);
    }
    drop(archive);

    let rel = ok_json(&skycat(&store, &["release"]));
    assert_eq!(rel["release_id"], "r1");
    let q = skycat(
        &store,
        &["query", "--pool", "released:r1", "--epoch", "0,1000000"],
    );
    assert!(q.status.success(), "{}", String::from_utf8_lossy(&q.stderr));
    assert_eq!(String::from_utf8(q.stdout).unwrap(), pre_release);

    let frozen = skycat(&store, &["release"]);
    assert_eq!(frozen.status.code(), Some(2));
    assert_eq!(error_code(&frozen), "ALREADY_RELEASED");

    let missing = skycat(&store, &["query", "--pool", "released:r9", "--epoch", "0,1"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(error_code(&missing), "UNKNOWN_RELEASE");

    let bad_cone = skycat(&store, &["query", "--cone", "10,100,1"]);
    assert_eq!(bad_cone.status.code(), Some(1));
}

#[test]
fn node_verbs_and_unavailable_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("s");
    ok_json(&skycat(&store, &["init"]));
    for ccd in 0..2 {
        let f = ingest_file(dir.path(), &batch(1, ccd, ServerId::A, 4));
        ok_json(&skycat(&store, &["ingest", "--batch", &f, "--received-at", "120"]));
    }
    ok_json(&skycat(&store, &["merge"]));

    let n = ok_json(&skycat(&store, &["add-node", "a1", "--tier", "archive"]));
    assert_eq!(n["alive"], true);
    let dup = skycat(&store, &["add-node", "a1", "--tier", "archive"]);
    assert_eq!(error_code(&dup), "DUPLICATE_NODE");
    ok_json(&skycat(&store, &["distribute", "--tier", "archive", "--copies", "1"]));

    let q = skycat(&store, &["query", "--epoch", "0,1000"]);
    assert!(q.status.success());
    assert_eq!(String::from_utf8(q.stdout).unwrap().lines().count(), 8);

    let f = ok_json(&skycat(&store, &["fail-node", "a1"]));
    assert_eq!(f["alive"], false);
    let q = skycat(&store, &["query", "--epoch", "0,1000"]);
    assert_eq!(q.status.code(), Some(3));
    assert_eq!(error_code(&q), "UNAVAILABLE_PARTITION");
    ok_json(&skycat(&store, &["recover-node", "a1"]));
    assert!(skycat(&store, &["query", "--epoch", "0,1000"]).status.success());

    let unknown = skycat(&store, &["fail-node", "nope"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert_eq!(error_code(&unknown), "UNKNOWN_NODE");

    let reb = ok_json(&skycat(&store, &["rebalance", "--dry-run"]));
    assert!(reb["applied"].is_null());
    let low = skycat(&store, &["rebalance", "--factor", "0.5"]);
    assert_eq!(low.status.code(), Some(1));

    let explain = ok_json(&skycat(&store, &["query", "--cone", "10,-20,0.5", "--explain"]));
    assert!(explain["targets"].as_array().is_some());
}

#[test]
fn simulate_is_deterministic_modulo_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 9\nccd_count = 12\nvisits_per_night = 30\ntransient_rate = 0.4\nemit_alerts = true\n",
    );
    let cfg = cfg.to_string_lossy().into_owned();
    let mut streams = Vec::new();
    for run in ["a", "b"] {
        let store = dir.path().join(run);
        let metrics = dir.path().join(format!("{run}.ndjson"));
        let report = ok_json(&skycat(
            &store,
            &["simulate", "--config", &cfg, "--metrics", &metrics.to_string_lossy()],
        ));
        assert_eq!(report["visits"], 30);
        assert_eq!(report["reconciled"], true);
        let text = std::fs::read_to_string(&metrics).unwrap();
        let stripped: Vec<Value> = text.lines().map(|l| strip_wall(l).unwrap()).collect();
        streams.push(stripped);
        let st = ok_json(&skycat(&store, &["status"]));
        assert_eq!(st["night"]["night_id"], 1);
    }
    assert!(streams[0].len() > 30);
    assert_eq!(streams[0], streams[1]);

    let bad = write_config(dir.path(), "cadence = 0\n");
    let out = skycat(
        &dir.path().join("c"),
        &["simulate", "--config", &bad.to_string_lossy()],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_code(&out), "CONFIG");
}
