use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mapreader(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mapreader")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mazes = dir.path().join("mazes");
    let run = dir.path().join("run");
    let out = mapreader(&["gen-mazes", "--sizes", "5", "--count", "6", "--seed", "3", "--out", s(&mazes)]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(fs::read_dir(mazes.join("5")).unwrap().count(), 6);

    let cfg = dir.path().join("train.toml");
    fs::write(
        &cfg,
        "workers = [5]\ndeterministic = true\nmode = \"both\"\n\
         [[curriculum]]\nsize = 5\nthreshold = 60.0\n\
         [losses]\nvlm = 0.0\nloc_xent = 0.0\nloc_dist = 0.0\nloc_local_map = 0.0\nreward_map = 0.0\n\
         [budget]\nenv_steps = 4000\n",
    )
    .unwrap();
    let out = mapreader(&["train", "--config", s(&cfg), "--seed", "4", "--out", s(&run)]);
    assert!(out.status.success(), "{out:?}");
    let ckpt = run.join("checkpoint.ckpt");
    assert!(ckpt.exists());
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("worker,size,episode,steps,success,intrinsic_mean\n"));
    assert!(fs::read_to_string(run.join("config.toml")).unwrap().contains("seed = 4"));

    let ev = dir.path().join("eval");
    let out = mapreader(&["eval", "--checkpoint", s(&ckpt), "--mazes", s(&mazes), "--step-cap", "300", "--out", s(&ev)]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(fs::read_to_string(ev.join("episodes.csv")).unwrap().lines().count(), 7);
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.starts_with("size,episodes,successes,targets_found_pct,mean_steps,mean_moves"));

    let out = mapreader(&["oracle-eval", "--mode", "both", "--checkpoint", s(&ckpt), "--mazes", s(&mazes), "--step-cap", "300"]);
    assert!(out.status.success(), "{out:?}");

    let tr = dir.path().join("trace");
    let maze = mazes.join("5").join("0.maze");
    let out = mapreader(&["trace", "--checkpoint", s(&ckpt), "--maze", s(&maze), "--mode", "both", "--seed", "2", "--out", s(&tr)]);
    assert!(out.status.success(), "{out:?}");
    let text = fs::read_to_string(tr.join("trace.jsonl")).unwrap();
    assert!(!text.is_empty());
    mapreader::harness::parse_trace(&text).unwrap();
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let out = mapreader(&["eval", "--checkpoint", s(&missing), "--mazes", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "workers = [4]\n").unwrap();
    let out = mapreader(&["train", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("worker start size 4"));
    assert_eq!(mapreader(&["frobnicate"]).status.code(), Some(2));
}
