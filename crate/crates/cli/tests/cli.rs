//! End-to-end behaviour of the `clfa` binary.

use std::path::Path;
use std::process::{Command, Output};

fn clfa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clfa")).args(args).current_dir(cwd).env_remove("CLFA_SEED").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Exit status nonzero and exactly one `kind: message` line on stderr.
fn assert_fails_with(o: &Output, kind: &str) {
    assert!(!o.status.success());
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("{kind}: ")), "{err}");
}

fn tiny_setup(d: &Path, classes: usize, per_class: usize, iters: usize) {
    std::fs::write(
        d.join("s.toml"),
        format!("num_classes = {classes}\nimage_size = 16\ntrain_per_class = {per_class}\ntest_per_class = {per_class}\n"),
    )
    .unwrap();
    std::fs::write(
        d.join("c.toml"),
        format!(
            "profile = \"synthetic\"\nmax_iters = {iters}\ncheckpoint_every = 5\nlog_every = 1\ntriples_per_class = 1\n\
             [weights]\nlambda_samples = 1\n[model]\nnum_classes = {classes}\nimage_size = 16\nfeature_dim = 16\nz_dim = 4\n"
        ),
    )
    .unwrap();
    assert!(clfa(&["synth", "--spec", "s.toml", "--out", "data"], d).status.success());
}

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = clfa(&["--help"], dir.path());
    assert!(o.status.success());
    for sub in ["train", "eval", "probe", "export", "synth", "report"] {
        assert!(stdout(&o).contains(sub));
    }
}

#[test]
fn usage_errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    assert_fails_with(&clfa(&["frobnicate"], dir.path()), "usage");
    assert_fails_with(&clfa(&["eval", "--checkpoint", "x"], dir.path()), "usage");
}

#[test]
fn missing_checkpoint_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_fails_with(&clfa(&["eval", "--checkpoint", "nope.safetensors", "--targets", "t"], dir.path()), "io");
}

#[test]
fn bad_arguments_are_typed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_setup(d, 3, 10, 2);
    assert_fails_with(&clfa(&["train", "--config", "c.toml", "--data", "data", "--out", "r", "--transforms", "warp"], d), "config");
    assert!(clfa(&["train", "--config", "c.toml", "--data", "data", "--out", "r"], d).status.success());
    assert_fails_with(&clfa(&["probe", "--checkpoint", "r/final.safetensors", "--data", "data", "--target", "both"], d), "argument");
    assert_fails_with(&clfa(&["eval", "--checkpoint", "r/final.safetensors", "--targets", "data", "--protocol", "odd"], d), "argument");
    std::fs::write(d.join("bad.toml"), "max_iters = \"many\"\n").unwrap();
    assert_fails_with(&clfa(&["train", "--config", "bad.toml", "--data", "data", "--out", "r2"], d), "config");
}

#[test]
fn class_count_mismatch_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_setup(d, 3, 10, 2);
    std::fs::write(d.join("c4.toml"), "profile = \"synthetic\"\nmax_iters = 2\n[model]\nnum_classes = 4\nimage_size = 16\n").unwrap();
    assert_fails_with(&clfa(&["train", "--config", "c4.toml", "--data", "data", "--out", "r"], d), "config");
}

#[test]
fn report_names_directories_without_records() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("empty_run")).unwrap();
    let o = clfa(&["report", "--runs", "empty_run", "--out", "rep"], dir.path());
    assert_fails_with(&o, "data");
    assert!(stderr(&o).contains("empty_run"));
}

#[test]
fn synth_writes_train_and_test_folders() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_setup(d, 3, 10, 1);
    for split in ["train", "test"] {
        let classes: Vec<_> = std::fs::read_dir(d.join("data").join(split)).unwrap().flatten().collect();
        assert_eq!(classes.len(), 3);
        for c in classes {
            assert_eq!(std::fs::read_dir(c.path()).unwrap().count(), 10);
        }
    }
}

#[test]
fn seeds_list_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_setup(d, 3, 10, 2);
    let o = clfa(&["train", "--config", "c.toml", "--data", "data", "--out", "multi", "--seeds", "3,4"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    for s in [3, 4] {
        let snap = std::fs::read_to_string(d.join(format!("multi/seed_{s}/config.toml"))).unwrap();
        assert!(snap.contains(&format!("seed = {s}")));
    }
    let o = Command::new(env!("CARGO_BIN_EXE_clfa"))
        .args(["train", "--config", "c.toml", "--data", "data", "--out", "envrun"])
        .current_dir(d)
        .env("CLFA_SEED", "9")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(std::fs::read_to_string(d.join("envrun/config.toml")).unwrap().contains("seed = 9"));
}

#[test]
fn resume_continues_to_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_setup(d, 3, 10, 10);
    assert!(clfa(&["train", "--config", "c.toml", "--data", "data", "--out", "straight"], d).status.success());
    // a full-budget run cut short after its step-5 checkpoint, then resumed from it
    let o = clfa(&["train", "--config", "c.toml", "--data", "data", "--out", "part", "--max-iters", "10"], d);
    assert!(o.status.success());
    let o = clfa(&["train", "--data", "data", "--out", "part", "--resume", "part/ckpt_5.safetensors"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("\"iterations\":10"));
    let read = |p: &str| std::fs::read_to_string(d.join(p).join("metrics.jsonl")).unwrap();
    let straight: Vec<String> = read("straight").lines().map(String::from).collect();
    let part: Vec<String> = read("part").lines().map(String::from).collect();
    // the resumed lines repeat iterations 6..10 of the uninterrupted run
    assert_eq!(&part[10..], &straight[5..]);
    let o = clfa(&["train", "--data", "data", "--out", "part", "--resume", "part/ckpt_5.safetensors", "--max-iters", "50"], d);
    assert_fails_with(&o, "argument");
}

#[test]
fn eval_probe_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_setup(d, 3, 10, 3);
    assert!(clfa(&["train", "--config", "c.toml", "--data", "data", "--out", "run"], d).status.success());
    let o = clfa(&["eval", "--checkpoint", "run/final.safetensors", "--targets", "data/test,data/train"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(rec["protocol"], "single_dg");
    assert_eq!(rec["per_target"].as_object().unwrap().len(), 2);
    assert!(d.join("run/records.jsonl").exists());

    let o = clfa(&["probe", "--checkpoint", "run/final.safetensors", "--data", "data", "--target", "full"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(rep["probe_target"], "full");
    assert_eq!(rep["n_train"].as_u64().unwrap() + rep["n_heldout"].as_u64().unwrap(), 30);

    assert!(clfa(&["export", "--checkpoint", "run/final.safetensors", "--data", "data", "--out", "a.csv"], d).status.success());
    assert!(clfa(&["export", "--checkpoint", "run/final.safetensors", "--data", "data", "--out", "b.csv"], d).status.success());
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    let mut r = csv::Reader::from_path(d.join("a.csv")).unwrap();
    assert_eq!(r.headers().unwrap().len(), 3 + 16);
    assert_eq!(r.records().count(), 30);

    let o = clfa(&["report", "--runs", "run", "--out", "rep", "--population", "--loss-curve"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(d.join("rep/loss_curve.svg")).unwrap().contains("<polyline"));
    assert!(std::fs::read_to_string(d.join("rep/report.md")).unwrap().contains("population"));
}

/// Copies `data/<split>` class folders under `dst`.
fn copy_tree(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap();
    for e in std::fs::read_dir(src).unwrap().flatten() {
        let to = dst.join(e.file_name());
        if e.path().is_dir() {
            copy_tree(&e.path(), &to);
        } else {
            std::fs::copy(e.path(), to).unwrap();
        }
    }
}

#[test]
fn leave_one_out_records_selection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_setup(d, 3, 10, 2);
    copy_tree(&d.join("data/train"), &d.join("domains/alpha"));
    copy_tree(&d.join("data/test"), &d.join("domains/beta"));
    copy_tree(&d.join("data/test"), &d.join("domains/gamma"));
    let o = clfa(&["train", "--config", "c.toml", "--data", "domains", "--out", "loo", "--holdout", "gamma"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = std::fs::read_to_string(d.join("loo/records.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(rec["protocol"], "leave_one_out");
    assert!(rec["per_target"].get("gamma").is_some());
    assert!(rec["selection"].as_str().unwrap().contains("training-domain validation"));
    assert_fails_with(&clfa(&["train", "--config", "c.toml", "--data", "domains", "--out", "x", "--holdout", "delta"], d), "argument");
}

#[test]
fn severity_sweep_pools_corruptions_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_setup(d, 3, 10, 2);
    for level in ["level1", "level2"] {
        for corruption in ["fog", "noise"] {
            copy_tree(&d.join("data/test"), &d.join("sev").join(level).join(corruption));
        }
    }
    assert!(clfa(&["train", "--config", "c.toml", "--data", "data", "--out", "run"], d).status.success());
    let o = clfa(&["eval", "--checkpoint", "run/final.safetensors", "--targets", "sev", "--protocol", "severity-sweep"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(rec["protocol"], "severity_sweep");
    let keys: Vec<&String> = rec["per_target"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["level1", "level2"]);
}
