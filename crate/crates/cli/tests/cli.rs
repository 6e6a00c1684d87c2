// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pretreat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pretreat"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const SPEC: &str = r#"
n_samples = 1200
signal_ids = ["T0", "P1", "F2"]
n_latent = 1
loadings_scale = 2.0
latent_period = 4000.0
segment_plan = [[[0, 10.0], [600, 13.0]], [[0, 5.0]], [[0, 20.0]]]
noise_sigma = [0.1, 0.1, 0.1]
spike_rate = 0.004
seed = 11

[[fault_windows]]
start = 900
end = 1000
signals = ["T0", "P1"]
value = 0.0
"#;

fn synth(dir: &Path) -> PathBuf {
    fs::write(dir.join("spec.toml"), SPEC).unwrap();
    let out = pretreat(&["synth", "--config", "spec.toml", "--out", "syn"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("syn")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_runs_twice_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    for run in ["a", "b"] {
        let out = pretreat(
            &["pipeline", "--input", "syn/data.csv", "--truth", "syn/truth.csv", "--out", run, "--seed", "5"],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b) = (files(&tmp.path().join("a")), files(&tmp.path().join("b")));
    assert!(a.len() >= 10 + 4, "{:?}", a.iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(a, b);
    let report = fs::read_to_string(tmp.path().join("a/report.toml")).unwrap();
    assert!(report.contains("overlaps_period = true"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pretreat(&["pipeline", "--input", "x.csv", "--frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = pretreat(&["pipeline", "--input", "x.csv", "--spread", "iqr"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = pretreat(&["pipeline", "--input", "x.csv", "--eps", "wide"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = pretreat(&["pipeline"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn parse_failure_exits_3_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.csv"), "timestamp,T0\n0,1.0\n1,abc\n2,3.0\n").unwrap();
    let out = pretreat(&["pipeline", "--input", "bad.csv", "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    let leftover = tmp.path().join("run");
    assert!(!leftover.exists() || fs::read_dir(&leftover).unwrap().count() == 0);
}

#[test]
fn numeric_failure_exits_4_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::from("timestamp,T0,T1\n");
    for i in 0..200 {
        text.push_str(&format!("{i},5.0,7.0\n"));
    }
    fs::write(tmp.path().join("flat.csv"), text).unwrap();
    let out = pretreat(&["pipeline", "--input", "flat.csv", "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let leftover = tmp.path().join("run");
    assert!(!leftover.exists() || fs::read_dir(&leftover).unwrap().count() == 0);
}

#[test]
fn stage_subcommands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let run = |args: &[&str]| {
        let out = pretreat(args, tmp.path());
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["segment", "--input", "syn/data.csv", "--out", "s"]);
    run(&["clean", "--input", "syn/data.csv", "--out", "c", "--spread", "mad", "--lmin", "30"]);
    run(&["pca", "--input", "c/cleaned.csv", "--out", "p", "--components", "2"]);
    run(&["cluster", "--input", "p/outlier_map.csv", "--out", "k", "--eps", "auto", "--min-pts", "auto"]);
    for f in ["s/changepoints.csv", "c/cleaned.csv", "c/outlier_mask.csv", "p/t2.csv", "p/periods.csv", "k/labels.csv"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let cps = fs::read_to_string(tmp.path().join("s/changepoints.csv")).unwrap();
    assert!(cps.starts_with("signal_id,index,timestamp,score\n"));
}

#[test]
fn plot_redraws_the_same_figures() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = pretreat(&["pipeline", "--input", "syn/data.csv", "--out", "run"], tmp.path());
    assert!(out.status.success());
    let before = files(&tmp.path().join("run/figures"));
    fs::remove_dir_all(tmp.path().join("run/figures")).unwrap();
    let out = pretreat(&["plot", "--out", "run"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files(&tmp.path().join("run/figures")), before);
    let out = pretreat(&["plot", "--out", "missing"], tmp.path());
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn config_file_and_flags_merge() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    fs::write(tmp.path().join("run.toml"), "input = \"syn/data.csv\"\nout = \"cfg\"\nmin_pts = 5\nrender = false\n").unwrap();
    let out = pretreat(&["pipeline", "--config", "run.toml", "--alpha", "0.01"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(tmp.path().join("cfg/report.toml")).unwrap();
    assert!(report.contains("alpha = 0.01") && report.contains("min_pts = 5"));
    assert!(!tmp.path().join("cfg/figures").exists());
    fs::write(tmp.path().join("bad.toml"), "input = \"syn/data.csv\"\nunknown_key = 1\n").unwrap();
    assert_eq!(pretreat(&["pipeline", "--config", "bad.toml"], tmp.path()).status.code(), Some(2));
}
