use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k")
}

fn tiny() -> Vec<String> {
    [
        "model=lenet-s".to_string(),
        "dataset=mnist".to_string(),
        format!("data_dir={}", data_dir().display()),
        "train_subset=300".to_string(),
        "test_subset=100".to_string(),
        "parent_epochs=1".to_string(),
        "batch_size=50".to_string(),
    ]
    .into_iter()
    .flat_map(|kv| ["--set".to_string(), kv])
    .collect()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prune-tune"))
        .args(args)
        .args(tiny())
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn checkpoint_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let parent = dir.path().join("parent.ckpt");
    let kids = dir.path().join("kids");
    let report = dir.path().join("report.jsonl");

    let out = ok(&["train-parent", "--out", s(&parent), "--report", s(&report)]);
    assert!(out.contains("parent: accuracy"));

    let out = ok(&[
        "spawn", "--parent", s(&parent), "--mode", "anti-random-pairs", "--n", "4", "--out-dir", s(&kids),
    ]);
    assert!(out.contains("2 complement pairs"), "{out}");
    for i in 0..4 {
        assert!(kids.join(format!("child_{i}.ckpt")).exists());
    }

    let tuned = dir.path().join("t0.ckpt");
    ok(&[
        "tune", "--child", s(&kids.join("child_0.ckpt")), "--id", "0", "--out", s(&tuned), "--report", s(&report),
    ]);

    let (c1, c2) = (kids.join("child_1.ckpt"), kids.join("child_2.ckpt"));
    let members = [s(&tuned), s(&c1), s(&c2)];
    let mut args = vec!["ensemble-eval", "--members"];
    args.extend(members);
    let out = ok(&args);
    assert!(out.contains("ensemble of 3"));

    let mut args = vec!["diversity", "--measure", "corr", "--report", s(&report), "--members"];
    args.extend(members);
    let out = ok(&args);
    assert!(out.contains("d_corr"));

    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&report)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let phases: Vec<&str> = lines.iter().map(|v| v["phase"].as_str().unwrap()).collect();
    assert_eq!(phases, ["parent", "child", "diversity"]);
    let matrix = lines[2]["matrix"].as_array().unwrap();
    assert_eq!(matrix.len(), 3);
    for i in 0..3 {
        let at = |i: usize, j: usize| matrix[i][j].as_f64().unwrap();
        assert!((at(i, i) - 1.0).abs() < 1e-9);
        for j in 0..3 {
            assert!((at(i, j) - at(j, i)).abs() < 1e-12);
        }
    }

    let csv = dir.path().join("grid.csv");
    ok(&[
        "landscape", "--model", s(&tuned), "--out", s(&csv), "--resolution", "3", "--subset", "50",
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with('#'));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4, "alpha header plus one row per beta:\n{text}");
    assert!(rows.iter().all(|r| r.split(',').count() == 4));
}

#[test]
fn experiment_and_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# tiny run\nmethod = pat\nnum_children = 2\nchild_epochs = 1\nprune_mode = anti-random-pairs\n",
    )
    .unwrap();
    let report = dir.path().join("r.jsonl");
    let out = ok(&["experiment", "--config", s(&cfg), "--report", s(&report)]);
    assert!(out.contains("pat (budget 3 epochs)"), "{out}");
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 4, "parent, two children, ensemble:\n{text}");

    let out = ok(&["experiment", "--config", s(&cfg), "--dry-run"]);
    assert!(out.contains("num_children = 2"), "{out}");

    let out = ok(&[
        "ablation", "--axis", "sparsity", "--values", "0.25,0.75", "--set", "num_children=1",
    ]);
    assert_eq!(out.lines().count(), 2, "{out}");
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();

    let out = run(&["eval", "--model", "x.ckpt", "--set", "sparsity=1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["eval", "--model", "x.ckpt", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["eval", "--model", s(&dir.path().join("missing.ckpt"))]);
    assert_eq!(out.status.code(), Some(3));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"definitely not a checkpoint").unwrap();
    let out = run(&["eval", "--model", s(&junk)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));

    let out = run(&["eval", "--model", "x.ckpt", "--set", "data_dir=/nonexistent"]);
    assert_eq!(out.status.code(), Some(3));
}
