//! End-to-end runs of the `bcrl` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bcrl::dataset::DatasetBuilder;
use bcrl::manifest::{file_hash, RunManifest};

const SMALL: &str = r#"
[synth]
n_pairs = 2
sessions_per_pair = 1
duration_s = 20.0

[train]
epochs = 2
minibatch = 64
buffer_capacity = 256
target_sync = 10

[train.qnet]
hidden = [16, 8]
learning_rate = 1e-3

[ope.knn]
k = 10
"#;

fn bcrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcrl"))
        .args(args)
        .env("BCRL_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Checks that `output` has a manifest whose hash matches the file.
fn assert_manifest(output: &Path) {
    let m: RunManifest =
        serde_json::from_str(&fs::read_to_string(RunManifest::path_for(output)).unwrap()).unwrap();
    assert_eq!(m.outputs.len(), 1);
    if output.is_file() {
        assert_eq!(
            m.outputs.values().next().unwrap(),
            &file_hash(output).unwrap()
        );
    }
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = bcrl(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn help_exits_zero() {
    assert_eq!(bcrl(&["--help"]).status.code(), Some(0));
}

#[test]
fn empty_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.bin");
    bcrl::dataset::io::save(&DatasetBuilder::new(209, "x").build(), &data).unwrap();
    let out = dir.path().join("m.bin");
    let rep = dir.path().join("r.json");
    let o = bcrl(&[
        "train",
        "--algo",
        "nfq",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--report",
        s(&rep),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty dataset"), "{}", stderr(&o));
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    for (text, needle) in [("[train]\ngamma = 1.5\n", "gamma"), ("foo = 1\n", "foo")] {
        let cfg = dir.path().join("bad.toml");
        fs::write(&cfg, text).unwrap();
        let o = bcrl(&["synth", "--config", s(&cfg), "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains(needle), "{}", stderr(&o));
    }
}

#[test]
fn stage_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let corpus = d.join("corpus");
    let ok = |args: &[&str]| {
        let o = bcrl(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    };
    ok(&[
        "synth",
        "--config",
        s(&cfg),
        "--out",
        s(&corpus),
        "--seed",
        "3",
    ]);
    assert_manifest(&corpus);

    let data = d.join("data.bin");
    let (f, a) = (corpus.join("features"), corpus.join("annotations"));
    ok(&[
        "tuples",
        "--features",
        s(&f),
        "--annotations",
        s(&a),
        "--out",
        s(&data),
        "--config",
        s(&cfg),
    ]);
    assert_manifest(&data);
    let ds = bcrl::dataset::io::load(&data).unwrap();
    assert_eq!(ds.sessions().len(), 2);
    assert_eq!(ds.len(), 2 * (800 - 40 - 1));

    let model = d.join("model.bin");
    let report = d.join("train.json");
    ok(&[
        "train",
        "--algo",
        "batch-dqn",
        "--data",
        s(&data),
        "--fold",
        "0",
        "--config",
        s(&cfg),
        "--out",
        s(&model),
        "--report",
        s(&report),
    ]);
    assert_manifest(&model);
    assert_manifest(&report);

    for (cmd, name) in [
        ("residual", "residual.json"),
        ("ope", "ope.json"),
        ("stats", "stats.json"),
    ] {
        let out = d.join(name);
        ok(&[
            cmd,
            "--model",
            s(&model),
            "--data",
            s(&data),
            "--fold",
            "0",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
        ]);
        assert_manifest(&out);
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert!(v.is_object());
    }
    let out = d.join("ope_uniform.json");
    ok(&[
        "ope",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--baseline",
        "uniform",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["behavior"]["policy"], "uniform");
    assert_eq!(v["n_trajectories"], 2 * (759 - 100 + 1));

    let o = bcrl(&[
        "ope",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--baseline",
        "oracle",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

fn report_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && !p.to_string_lossy().ends_with(".manifest.json"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    // the thread count must not change any result
    for (r, threads) in runs.iter().zip(["1", "4"]) {
        let o = bcrl(&[
            "--threads",
            threads,
            "pipeline",
            "--config",
            s(&cfg),
            "--out",
            s(r),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = report_files(&runs[0]);
    let b = report_files(&runs[1]);
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        "report.json",
        "data.bin",
        "fold0_nfq_model.bin",
        "fold1_batch-dqn_ope.json",
        "fold1_nfq_stats.json",
    ] {
        assert!(names.contains(&expected), "{names:?}");
    }
    assert_eq!(a, b);
    for (name, _) in &a {
        assert_manifest(&runs[0].join(name));
    }
}
