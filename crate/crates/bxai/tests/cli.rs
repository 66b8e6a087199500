use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bxai::cli;

const SMALL: &str = r#"
seed = 7

[synth]
class_counts = [24, 24, 24]
signal_len = 2048

[spectrum]
bins = 256

[model]
channels = [4, 8, 8]
kernels = [5, 5, 3]

[train]
max_epochs = 4
batch_size = 16

[removal]
fractions = [0.2, 0.4]
repeats = 2
"#;

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("bxai").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace(config: &str) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cfg = root.join("small.toml");
    fs::write(&cfg, config).unwrap();
    Workspace {
        _dir: dir,
        root,
        config: cfg,
    }
}

#[test]
fn full_pipeline() {
    let ws = workspace(SMALL);
    let c = p(&ws.config);
    let data = ws.root.join("data");
    let model_dir = ws.root.join("model");
    let lib_dir = ws.root.join("lib");
    let explain_dir = ws.root.join("explain");
    let removal_dir = ws.root.join("removal");

    assert_eq!(run(&["--config", c, "synth", "--out", p(&data)]), 0);
    let train = data.join("train.bxai");
    let test = data.join("test.bxai");
    let ds = bxai::formats::load_dataset(&train).unwrap();
    assert_eq!(ds.samples.len(), 57);
    assert_eq!(ds.grid.n_bins, 256);
    assert_eq!(bxai::formats::load_dataset(&test).unwrap().samples.len(), 15);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("synth.json")).unwrap()).unwrap();
    assert_eq!(meta["n_train"], 57);
    assert!((meta["bpfo_order"].as_f64().unwrap() - 3.05).abs() < 1e-12);

    assert_eq!(
        run(&["--config", c, "train", "--train", p(&train), "--test", p(&test), "--out", p(&model_dir)]),
        0
    );
    let model = model_dir.join("model.bxmw");
    let history = fs::read_to_string(model_dir.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n"));
    assert_eq!(history.lines().count(), 5);
    assert!(model_dir.join("confusion_test.csv").exists());
    assert!(model_dir.join("resolved_config.toml").exists());

    assert_eq!(
        run(&["--config", c, "build-library", "--model", p(&model), "--train", p(&train), "--out", p(&lib_dir)]),
        0
    );
    let library = lib_dir.join("library.bxhl");
    assert_eq!(bxai::formats::load_library(&library, None).unwrap().len(), 57);

    let test_ds = bxai::formats::load_dataset(&test).unwrap();
    let ids: Vec<String> = test_ds.samples.iter().map(|s| s.sample_id.to_string()).collect();
    let id_list = ids.join(",");
    assert_eq!(
        run(&[
            "--config", c, "--top-k", "3", "--algo", "cam-sub", "explain", "--model", p(&model), "--library",
            p(&library), "--train", p(&train), "--test", p(&test), "--ids", &id_list, "--out", p(&explain_dir),
        ]),
        0
    );
    let report = fs::read_to_string(explain_dir.join("report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), ids.len());
    for line in report.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let basis = v["basis"].as_array().unwrap();
        assert_eq!(basis.len(), 3);
        let d: Vec<f64> = basis.iter().map(|b| b["distance"].as_f64().unwrap()).collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        assert!(basis.iter().all(|b| b["class"] == v["predicted_class"]));
        assert_eq!(v["fallback_to_full"], v["predicted_class"] == "healthy");
        let svg = fs::read_to_string(explain_dir.join(format!("explain_{}.svg", v["sample_id"]))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
    let resolved = fs::read_to_string(explain_dir.join("resolved_config.toml")).unwrap();
    let resolved: bxai::config::Config = toml::from_str(&resolved).unwrap();
    assert_eq!(resolved.explain.top_k, 3);

    assert_eq!(
        run(&[
            "--config", c, "eval-removal", "--model", p(&model), "--train", p(&train), "--test", p(&test),
            "--library", p(&library), "--out", p(&removal_dir),
        ]),
        0
    );
    let csv = fs::read_to_string(removal_dir.join("removal.csv")).unwrap();
    assert!(csv.starts_with("method,fraction,repeat,seed,test_accuracy,test_loss\n"));
    assert_eq!(csv.lines().count(), 1 + 2 + 3 * 2 * 2);
    assert!(csv.lines().any(|l| l.starts_with("cam-sub,0.4,1,")));
    let summary = fs::read_to_string(removal_dir.join("removal_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 1 + 3 * 2);
    for f in [
        "removal.svg",
        "importance.csv",
        "confusion_baseline_0.00.csv",
        "confusion_random_0.20.csv",
        "confusion_cam-full_0.40.csv",
        "confusion_cam-sub_0.20.csv",
    ] {
        assert!(removal_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn synth_is_reproducible() {
    let ws = workspace(SMALL);
    let (a, b) = (ws.root.join("a"), ws.root.join("b"));
    assert_eq!(run(&["--config", p(&ws.config), "synth", "--out", p(&a)]), 0);
    assert_eq!(run(&["--config", p(&ws.config), "synth", "--out", p(&b)]), 0);
    for f in ["train.bxai", "test.bxai", "synth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = ws.root.join("c");
    assert_eq!(run(&["--config", p(&ws.config), "--seed", "8", "synth", "--out", p(&c)]), 0);
    assert_ne!(fs::read(a.join("train.bxai")).unwrap(), fs::read(c.join("train.bxai")).unwrap());
}

#[test]
fn usage_errors_exit_one() {
    let ws = workspace(SMALL);
    let out = ws.root.join("o");
    let o = p(&out);
    assert_eq!(run(&["synth"]), 1);
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["--epsilon", "0.5", "synth", "--out", o]), 1);
    assert_eq!(run(&["--epsilon", "0", "synth", "--out", o]), 1);
    assert_eq!(run(&["--top-k", "0", "synth", "--out", o]), 1);
    assert_eq!(run(&["--algo", "cam-half", "synth", "--out", o]), 1);
    assert_eq!(run(&["--bins", "100", "synth", "--out", o]), 1);
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
    let bad = ws.root.join("bad.toml");
    fs::write(&bad, "[removal]\nmethods = [\"cam-half\"]\n").unwrap();
    assert_eq!(run(&["--config", p(&bad), "synth", "--out", o]), 1);
}

#[test]
fn data_errors_exit_two() {
    let ws = workspace(SMALL);
    let out = ws.root.join("o");
    let missing = ws.root.join("missing.bxai");
    assert_eq!(run(&["train", "--train", p(&missing), "--out", p(&out)]), 2);
    let junk = ws.root.join("junk.bxai");
    fs::write(&junk, b"not a dataset").unwrap();
    assert_eq!(run(&["train", "--train", p(&junk), "--out", p(&out)]), 2);
    let cfg = ws.root.join("typo.toml");
    fs::write(&cfg, "[train]\nlearning_rat = 0.1\n").unwrap();
    assert_eq!(run(&["--config", p(&cfg), "synth", "--out", p(&out)]), 2);
    let geom = ws.root.join("geom.toml");
    fs::write(&geom, "[geometry]\ninner_diameter = 2.0\n").unwrap();
    assert_ne!(run(&["--config", p(&geom), "synth", "--out", p(&out)]), 0);
}

#[test]
fn stale_library_is_rejected() {
    let ws = workspace(SMALL);
    let c = p(&ws.config);
    let data = ws.root.join("data");
    assert_eq!(run(&["--config", c, "synth", "--out", p(&data)]), 0);
    let train = data.join("train.bxai");
    let test = data.join("test.bxai");
    let (m1, m2, lib) = (ws.root.join("m1"), ws.root.join("m2"), ws.root.join("lib"));
    assert_eq!(run(&["--config", c, "train", "--train", p(&train), "--out", p(&m1)]), 0);
    assert_eq!(run(&["--config", c, "--seed", "9", "train", "--train", p(&train), "--out", p(&m2)]), 0);
    let model1 = m1.join("model.bxmw");
    let model2 = m2.join("model.bxmw");
    assert_eq!(
        run(&["--config", c, "build-library", "--model", p(&model1), "--train", p(&train), "--out", p(&lib)]),
        0
    );
    let args = |model: &Path| {
        vec![
            "--config".to_string(),
            c.to_string(),
            "explain".into(),
            "--model".into(),
            p(model).into(),
            "--library".into(),
            p(&lib.join("library.bxhl")).into(),
            "--train".into(),
            p(&train).into(),
            "--test".into(),
            p(&test).into(),
            "--no-plots".into(),
            "--out".into(),
            p(&ws.root.join("x")).into(),
        ]
    };
    let run_vec = |v: Vec<String>| cli::run(std::iter::once("bxai".to_string()).chain(v));
    assert_eq!(run_vec(args(&model2)), 2);
    assert_eq!(run_vec(args(&model1)), 0);
    assert!(!ws.root.join("x").join("explain_0.svg").exists());
}

#[test]
fn divergence_exits_three() {
    let ws = workspace(&format!("{SMALL}\n[train]\nlearning_rate = 1e30\n").replace(
        "[train]\nmax_epochs = 4\nbatch_size = 16\n",
        "",
    ));
    let c = p(&ws.config);
    let data = ws.root.join("data");
    assert_eq!(run(&["--config", c, "synth", "--out", p(&data)]), 0);
    let out = ws.root.join("m");
    assert_eq!(
        run(&["--config", c, "train", "--train", p(&data.join("train.bxai")), "--out", p(&out)]),
        3
    );
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_bxai");
    let status = Command::new(bin).arg("--bogus").status().unwrap();
    assert_eq!(status.code(), Some(1));
    let output = Command::new(bin)
        .args(["train", "--train", "/nonexistent/x.bxai", "--out", "/tmp"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("error:"));
    assert_eq!(Command::new(bin).arg("--help").status().unwrap().code(), Some(0));
}
