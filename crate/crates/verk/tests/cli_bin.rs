//! End-to-end checks through the compiled binary: argument parsing, exit
//! codes, and the train -> report pipeline as a user would run it.

use std::io::Write;
use std::process::{Command, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_verk"))
}

#[test]
fn help_prints_usage() {
    let out = bin().arg("help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("USAGE"));
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown subcommand"));
}

#[test]
fn train_then_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "[chain]\nn_hubs = 2\nm = 3\nlocal_window = 2\nseed = 7\n\n\
         [policy]\ninit_sharpness = 1.5\n\n\
         [train]\nestimator = cal\nk = 2\nsteps = 10\nn = 4\nbatch = 2\n\
         eval_every = 5\neval_starts = 8\nseed = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = out_dir.join("metrics.csv");
    assert!(metrics.exists());
    assert!(out_dir.join("policy.txt").exists());
    assert!(out_dir.join("run_manifest.cfg").exists());

    let out = bin().arg("report").arg(&metrics).output().unwrap();
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("metrics"));
    assert!(table.contains("final_ver"));
}

#[test]
fn train_with_missing_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[chain]\nm = 3\n\n[train]\nk = 2\nsteps = 5\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chain.n_hubs"));
}

#[test]
fn advantages_pipe_roundtrip_and_strict_failure() {
    let mut child = bin()
        .args(["advantages", "--mode", "tl", "--norm", "loo"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(
            br#"{"group_id":"g","k":1,"trajectories":[{"attempts":[{"reward":1}]},{"attempts":[{"reward":0}]}]}
"#,
        )
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.contains("\"advantage\":1.0"));
    assert!(line.contains("\"advantage\":-1.0"));

    let mut child = bin()
        .args(["advantages", "--mode", "cal", "--norm", "meanstd", "--strict"])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"not json\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn maze_gen_writes_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["maze-gen", "--size", "4", "--train", "6", "--test", "2", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let train = std::fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 6);
}
