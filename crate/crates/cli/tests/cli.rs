//! End-to-end runs of the `tf` binary in scratch directories.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/iscas85").join(format!("{name}.bench"))
}

/// Scratch directory holding `run.toml` with the given body; the circuit
/// line is prepended.
fn setup(circuit: &str, body: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("circuit = {:?}\n{body}", circuit);
    std::fs::write(dir.path().join("run.toml"), text).unwrap();
    dir
}

fn tf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tf"))
        .args(args)
        .arg("--config")
        .arg(dir.join("run.toml"))
        .env("TF_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn c880() -> String {
    data("c880").display().to_string()
}

const SMALL_RUN: &str = "timesteps = 2048\nn_instances = 3\n\
    [detectors]\nRANDOM = \"random:100:1\"\nBIG = \"random:5000:2\"\nD1 = \"absent.txt\"\n\
    [ppo]\nn_steps = 512\n";

#[test]
fn analyze_ranks_and_repeats_byte_for_byte() {
    let list = format!("[{:?}, {:?}, {:?}]", c880(), data("c1355").display().to_string(), data("c1908").display().to_string());
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), format!("circuit = {list}\nn_sim_vectors = 20000\n")).unwrap();
    let o = tf(dir.path(), &["analyze"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ranked: Vec<String> = stdout(&o).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().to_string()).collect();
    assert_eq!(ranked, ["c1355", "c1908", "c880"]);
    let first = read(dir.path(), "tf_out/c880.stats.csv");
    assert!(first.starts_with("# tf "));
    assert!(first.lines().nth(1).unwrap().starts_with("net,level,p1,rv,sw,cc0,cc1,hts,rare"));
    assert!(tf(dir.path(), &["analyze"]).status.success());
    assert_eq!(first, read(dir.path(), "tf_out/c880.stats.csv"));
}

#[test]
fn single_gate_circuit_has_no_rare_nets() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("g.bench"), "INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a, b)\n").unwrap();
    std::fs::write(dir.path().join("run.toml"), "circuit = \"g.bench\"\n").unwrap();
    let o = tf(dir.path(), &["analyze"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().nth(1).unwrap(), "1,g,0,0.0000");
}

#[test]
fn user_errors_exit_with_one() {
    let dir = setup(&c880(), "th_sw = 0.0\n");
    let o = tf(dir.path(), &["prune"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no candidate nets survive pruning"), "{}", stderr(&o));

    let dir = setup("nowhere.bench", "");
    assert_eq!(tf(dir.path(), &["analyze"]).status.code(), Some(1));

    let dir = setup(&c880(), "jsi_th = 2.0\n");
    assert_eq!(tf(dir.path(), &["prune"]).status.code(), Some(1));

    let dir = setup(&c880(), "no_such_key = 1\n");
    assert_eq!(tf(dir.path(), &["analyze"]).status.code(), Some(1));

    let dir = setup(&c880(), "train_detector = \"D7\"\n");
    assert_eq!(tf(dir.path(), &["train"]).status.code(), Some(1));
}

#[test]
fn prune_report_records_chain_and_diversification() {
    let c3540 = data("c3540").display().to_string();
    let dir = setup(&c3540, "n_sim_vectors = 20000\n");
    let o = tf(dir.path(), &["prune", "--diversify"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "tf_out/prune_report.json")).unwrap();
    assert_eq!(report["report"]["chain_inclusion"], true);
    let before = report["report"]["jsi_before"].as_f64().unwrap();
    let after = report["report"]["jsi_after"].as_f64().unwrap();
    assert!(after < before, "{before} -> {after}");
    assert!(!report["report"]["replaced"].as_array().unwrap().is_empty());
    let cands: serde_json::Value = serde_json::from_str(&read(dir.path(), "tf_out/candidates.json")).unwrap();
    assert_eq!(cands["candidates"]["members"].as_array().unwrap().len(), 20);
    assert_eq!(cands["diversified"], true);
}

#[test]
fn qcov_marks_missing_detector_and_counts_empty_one() {
    let dir = setup(&c880(), "train_detector = \"ALL\"\n[detectors]\nD1 = \"absent.txt\"\nEMPTY = \"random:0:1\"\nR = \"random:3000:4\"\n");
    let o = tf(dir.path(), &["qcov"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("absent.txt not found"));
    let csv = read(dir.path(), "tf_out/qcov.csv");
    let mut lines = csv.lines().skip(1);
    assert_eq!(lines.next().unwrap(), "circuit,D1,EMPTY,R,ALL");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], ["c880", "N/A", "0"]);
    assert_eq!(row[3], row[4], "ALL must equal the one non-empty detector");
}

#[test]
fn vector_file_detector_is_loaded() {
    let dir = setup(&c880(), "train_detector = \"ALL\"\n[detectors]\nFILE = \"v.txt\"\n");
    let width = 60;
    let text: String = (0..50).map(|k| format!("{}\n", if k % 2 == 0 { "0".repeat(width) } else { "1".repeat(width) })).collect();
    std::fs::write(dir.path().join("v.txt"), text).unwrap();
    let o = tf(dir.path(), &["qcov"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let prof: serde_json::Value = serde_json::from_str(&read(dir.path(), "tf_out/profiles/FILE.json")).unwrap();
    assert_eq!(prof["profile"]["vector_count"], 50);
}

#[test]
fn full_pipeline_is_reproducible_and_stamped() {
    let a = setup(&c880(), SMALL_RUN);
    for cmd in ["analyze", "prune", "qcov", "train", "generate", "evaluate"] {
        let o = tf(a.path(), &[cmd]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let inst: serde_json::Value = serde_json::from_str(&read(a.path(), "tf_out/instances.json")).unwrap();
    assert_eq!(inst["instances"].as_array().unwrap().len(), 3);
    let hash = inst["provenance"]["config_hash"].as_str().unwrap().to_string();
    for f in ["c880.stats.csv", "jsi_summary.csv", "candidates.json", "prune_report.json", "qcov.csv", "policy.json",
        "train_log.csv", "train_summary.json", "asp.csv", "asp.json", "instances/c880_ht000.bench", "instances/c880_ht000.json"]
    {
        assert!(read(a.path(), &format!("tf_out/{f}")).contains(&hash), "{f} lacks the config hash");
    }
    let bench = read(a.path(), "tf_out/instances/c880_ht000.bench");
    assert!(bench.contains("tf_pl = XOR(tf_trig,"));

    // the training detector is held out; the missing one is N/A
    let asp = read(a.path(), "tf_out/asp.csv");
    let mut lines = asp.lines().skip(1);
    assert_eq!(lines.next().unwrap(), "trained_on,note,BIG,D1,RANDOM,ALL");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..2], ["RANDOM", "held out RANDOM"]);
    assert_eq!(row[3], "N/A");
    assert_eq!(row[4], "N/A");
    let o = tf(a.path(), &["evaluate", "--include-trained"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().nth(1).unwrap().split(',').nth(4).unwrap(), "100.00");

    // one command from scratch recomputes everything upstream, identically
    let b = setup(&c880(), SMALL_RUN);
    let o = tf(b.path(), &["evaluate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(a.path(), "tf_out/instances.json"), read(b.path(), "tf_out/instances.json"));
    assert_eq!(
        read(a.path(), "tf_out/instances/c880_ht002.bench"),
        read(b.path(), "tf_out/instances/c880_ht002.bench")
    );

    // a different seed is a different config
    let o = tf(b.path(), &["generate", "--seed", "9", "--out", b.path().join("s9").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let other: serde_json::Value = serde_json::from_str(&read(b.path(), "s9/instances.json")).unwrap();
    assert_ne!(other["provenance"]["config_hash"].as_str().unwrap(), hash);
    assert_eq!(other["provenance"]["seeds"]["train"], 9);
}

#[test]
fn stalled_training_diversifies_and_restarts() {
    let c1908 = data("c1908").display().to_string();
    let dir = setup(
        &c1908,
        "timesteps = 2048\nm_size = 5\n[detectors]\nRANDOM = \"random:10000:1\"\n[ppo]\nn_steps = 512\nstall_window = 512\n",
    );
    let o = tf(dir.path(), &["train", "--workers", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("diversifying candidates and restarting"));
    let s: serde_json::Value = serde_json::from_str(&read(dir.path(), "tf_out/train_summary.json")).unwrap();
    assert_eq!(s["restarts"], 1);
    assert!(s["undetected"].as_u64().unwrap() > 0);
    let cands: serde_json::Value = serde_json::from_str(&read(dir.path(), "tf_out/candidates.json")).unwrap();
    assert_eq!(cands["diversified"], true);
    assert_eq!(
        s["provenance"]["candidates"],
        serde_json::from_str::<serde_json::Value>(&read(dir.path(), "tf_out/policy.json")).unwrap()["provenance"]["candidates"]
    );
}

#[test]
fn stale_artifacts_are_recomputed() {
    let dir = setup(&c880(), "m_size = 8\n");
    assert!(tf(dir.path(), &["prune"]).status.success());
    std::fs::write(dir.path().join("run.toml"), format!("circuit = {:?}\nm_size = 10\n", c880())).unwrap();
    let o = tf(dir.path(), &["qcov"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cands: serde_json::Value = serde_json::from_str(&read(dir.path(), "tf_out/candidates.json")).unwrap();
    assert_eq!(cands["candidates"]["members"].as_array().unwrap().len(), 10);
}
