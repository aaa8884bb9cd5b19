use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gcniii(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcniii"))
        .args(args)
        .env_remove("GCNIII_DATA")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(dir: &Path, nodes: usize) -> PathBuf {
    let out = dir.join(format!("csbm{nodes}"));
    let o = gcniii(&[
        "generate",
        "--out",
        out.to_str().unwrap(),
        "--nodes",
        &nodes.to_string(),
        "--features",
        "30",
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

/// Short training run arguments for a bundle.
fn short(dataset: &Path, out: &Path, preset: &str, seeds: &str, epochs: usize) -> Vec<String> {
    let e = epochs.to_string();
    vec![
        "--preset".into(),
        preset.into(),
        "--dataset".into(),
        dataset.to_str().unwrap().into(),
        "--out".into(),
        out.to_str().unwrap().into(),
        "--seeds".into(),
        seeds.into(),
        "--set".into(),
        format!("train.max_epochs={e}"),
        "--set".into(),
        format!("train.patience={e}"),
    ]
}

fn run_train(cmd: &str, args: &[String], extra: &[&str]) -> Output {
    let mut all: Vec<&str> = vec![cmd];
    all.extend(args.iter().map(String::as_str));
    all.extend_from_slice(extra);
    gcniii(&all)
}

#[test]
fn inspect_prints_statistics_and_missing_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let big = generate(tmp.path(), 1700);
    let o = gcniii(&["inspect", "--dataset", big.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    let first: Vec<&str> = text.lines().next().unwrap().split(' ').collect();
    assert_eq!(first.len(), 4);
    assert_eq!((first[0], first[2], first[3]), ("1700", "30", "3"));
    assert!(text.contains("split semi: 60/500/1000"), "{text}");

    let small = generate(tmp.path(), 100);
    let o = gcniii(&["inspect", "--dataset", small.to_str().unwrap()]);
    assert!(stdout(&o).contains("no splits"));
}

#[test]
fn unknown_preset_exits_with_two_and_lists_presets() {
    let o = gcniii(&["train", "--preset", "atlantis-gcniii-semi"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("cora-gcniii-semi") && err.contains("texas-gcniii-full"),
        "{err}"
    );
}

#[test]
fn missing_dataset_is_a_diagnosed_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gcniii(&[
        "train",
        "--dataset",
        tmp.path().join("absent").to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing bundle"), "{}", stderr(&o));
    assert!(!tmp.path().join("o").join("summary.txt").exists());
}

#[test]
fn train_writes_artifacts_and_replays_from_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), 1700);
    let out = tmp.path().join("run");
    let o = run_train("train", &short(&data, &out, "cora-gcn2-semi", "2", 15), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("test accuracy:") && stdout(&o).contains('±'));
    for f in [
        "config.resolved",
        "summary.txt",
        "seed_42/epochs.csv",
        "seed_42/summary.txt",
        "seed_43/model.ckpt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("hidden = 16"));

    // Re-running from the resolved file reproduces the run bit for bit.
    let again = tmp.path().join("again");
    let o = gcniii(&[
        "train",
        "--config",
        out.join("config.resolved").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["summary.txt", "seed_42/summary.txt", "seed_43/epochs.csv"] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }

    // A parallel sweep produces the same per-seed results.
    let sweep = tmp.path().join("sweep");
    let o = run_train(
        "sweep",
        &short(&data, &sweep, "cora-gcn2-semi", "2", 15),
        &["--workers", "2"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["seed_42/summary.txt", "seed_43/summary.txt"] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(sweep.join(f)).unwrap(),
            "{f}"
        );
    }

    // Evaluating the checkpoints reproduces the recorded test accuracy.
    let o = gcniii(&["eval", "--run", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("seed_42/summary.txt")).unwrap();
    let recorded = summary
        .lines()
        .find_map(|l| l.strip_prefix("test_accuracy: "))
        .unwrap();
    assert!(
        stdout(&o).contains(&format!("seed 42: {recorded}")),
        "{}",
        stdout(&o)
    );
}

#[test]
fn overgen_flags_short_runs_and_names_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), 1700);
    let out = tmp.path().join("run");
    let o = run_train("train", &short(&data, &out, "cora-gcn2-semi", "1", 2), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = gcniii(&["analyze", "overgen", "--run", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("short_series: true"));
    let written = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .any(|e| e.file_name().to_string_lossy().starts_with("overgen."));
    assert!(written);

    fs::remove_file(out.join("seed_42/epochs.csv")).unwrap();
    let o = gcniii(&["analyze", "overgen", "--run", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed_42/epochs.csv"), "{}", stderr(&o));
}

#[test]
fn full_preset_uses_its_table_depth() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), 300);
    let out = tmp.path().join("texas");
    let o = run_train(
        "train",
        &short(&data, &out, "texas-gcniii-full", "2", 5),
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(
        resolved.contains("layers = 2") && resolved.contains("task = \"full\""),
        "{resolved}"
    );
    assert!(fs::read_to_string(out.join("seed_42/summary.txt"))
        .unwrap()
        .contains("layers: 2"));
}

#[test]
fn analyses_run_on_a_synthetic_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), 1700);
    let d = data.to_str().unwrap();

    let o = gcniii(&[
        "analyze",
        "density",
        "--dataset",
        d,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(value("ghat_density: ") < value("ppr_density: "), "{text}");

    let o = gcniii(&["analyze", "spectral", "--dataset", d]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = gcniii(&[
        "analyze",
        "theorem1",
        "--dataset",
        d,
        "--kmax",
        "6",
        "--hidden",
        "8",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_dir(tmp.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| {
            e.file_name()
                .to_string_lossy()
                .starts_with("theorem1.csbm.")
        })
        .expect("probe csv written");
    assert_eq!(fs::read_to_string(csv.path()).unwrap().lines().count(), 6);

    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(
        run_train("train", &short(&data, &a, "cora-gcn2-semi", "1", 5), &[])
            .status
            .success()
    );
    assert!(
        run_train("train", &short(&data, &b, "cora-mlp-study", "1", 5), &[])
            .status
            .success()
    );
    let o = gcniii(&[
        "analyze",
        "degrees",
        "--run",
        &format!("gcn={}", a.display()),
        "--run",
        &format!("mlp={}", b.display()),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("gcn: ") && stdout(&o).contains("mlp: "));

    let ab = tmp.path().join("ablate");
    let o = run_train(
        "ablate",
        &short(&data, &ab, "cora-gcn-wide", "42,43", 5),
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("+wide"));
}
