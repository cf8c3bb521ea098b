use std::path::Path;
use std::process::Command;

fn fsosr(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_fsosr")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn synth_diagnose_sample_run_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    write(
        &dir.path().join("synth.json"),
        r#"{"dim": 6, "n_classes": 25, "points_per_class": 20, "centroid_radius": 1.0,
            "within_std": 0.2, "seed": 3, "split_fractions": {"base": 0.2, "val": 0.4, "test": 0.4}}"#,
    );
    assert_eq!(fsosr(&["synth", "--spec", &d("synth.json"), "--out", &d("store.fsos")]).0, 0);
    assert!(dir.path().join("store.fsos.meta.json").exists());

    let (code, _) = fsosr(&["diagnose", "--store", &d("store.fsos"), "--split", "base", "--out", &d("diag.json")]);
    assert_eq!(code, 0);
    let diag: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d("diag.json")).unwrap()).unwrap();
    assert_eq!(diag["n_classes"], 5);

    assert_eq!(fsosr(&["sample", "--store", &d("store.fsos"), "--n", "2", "--dump", &d("eps")]).0, 0);
    assert!(dir.path().join("eps/episode_00001.json").exists());

    let config = format!(
        r#"{{"store": {:?}, "methods": ["ostim", "strong_baseline"], "n_episodes": 3,
            "ostim": {{"n_steps": 10}}, "output_dir": {:?}}}"#,
        d("store.fsos"),
        d("out")
    );
    write(&dir.path().join("run.json"), &config);
    assert_eq!(fsosr(&["run", "--config", &d("run.json")]).0, 0);
    assert!(dir.path().join("out/run_report.csv").exists());
    assert!(dir.path().join("out/run_report.json").exists());

    let (code, _) = fsosr(&["sweep", "--config", &d("run.json"), "--param", "ostim.alpha", "--grid", "0.5,1"]);
    assert_eq!(code, 0);
    let sweep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d("out/sweep_report.json")).unwrap()).unwrap();
    assert_eq!(sweep["table"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    write(&dir.path().join("bad.json"), r#"{"store": "x", "methods": []}"#);
    assert_eq!(fsosr(&["run", "--config", &d("bad.json")]).0, 2);
    write(&dir.path().join("missing.json"), r#"{"store": "/nonexistent/store", "methods": ["knn"]}"#);
    assert_eq!(fsosr(&["run", "--config", &d("missing.json")]).0, 3);
    write(&dir.path().join("junk.fsos"), "not a store");
    assert_eq!(fsosr(&["diagnose", "--store", &d("junk.fsos")]).0, 3);
    assert_eq!(fsosr(&["sweep", "--config", &d("missing.json"), "--param", "ostim.lr", "--grid", "1"]).0, 2);
}

#[test]
fn ingest_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let mut csv = String::new();
    for c in 0..3 {
        for i in 0..4 {
            csv.push_str(&format!("{c},{},{}\n", c as f32 + 0.1 * i as f32, -(c as f32)));
        }
    }
    write(&dir.path().join("f.csv"), &csv);
    write(&dir.path().join("splits.json"), r#"{"splits": {"base": [0], "val": [1], "test": [2]}}"#);
    let (code, _) = fsosr(&["ingest", "--csv", &d("f.csv"), "--splits", &d("splits.json"), "--out", &d("s.fsos")]);
    assert_eq!(code, 0);
    let fs = fsosr_core::load_feature_store(d("s.fsos")).unwrap();
    assert_eq!((fs.len(), fs.dim(), fs.n_classes()), (12, 2, 3));
}
