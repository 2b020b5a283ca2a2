//! End-to-end CLI behavior: exit codes, file atomicity, determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_onlineboost"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn onlineboost")
}

fn synth_csv(dir: &Path, name: &str, rows: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let out = run(&[
        "synth",
        "--out",
        path.to_str().unwrap(),
        "--rows",
        &rows.to_string(),
        "--features",
        "5",
        "--classes",
        "3",
        "--quantize",
        "32",
        "--seed",
        &seed.to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn train(dir: &Path, data: &Path, model: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(model);
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        path.to_str().unwrap(),
        "--iters",
        "5",
        "--leaves",
        "6",
        "--bins",
        "64",
        "--seed",
        "9",
    ];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn train_is_deterministic_and_writes_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 400, 1);
    let m1 = train(dir.path(), &data, "a.bin", &[]);
    let m2 = train(dir.path(), &data, "b.bin", &[]);
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
}

#[test]
fn missing_data_flag_is_usage_error() {
    let out = run(&["train", "--out", "x.bin"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_of_range_alpha_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 100, 2);
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("m.bin").to_str().unwrap(),
        "--alpha",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("alpha"), "{msg}");
}

#[test]
fn add_and_delete_report_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 500, 3);
    let extra = synth_csv(dir.path(), "extra.csv", 20, 4);
    let model = train(dir.path(), &data, "m.bin", &[]);

    let report = dir.path().join("add.json");
    let out = run(&[
        "add",
        "--model",
        model.to_str().unwrap(),
        "--rows",
        extra.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["batch_size"], 20);
    assert_eq!(json["added_ids"][0], 500);
    assert_eq!(json["added_ids"][1], 520);
    assert_eq!(json["retrained_per_iteration"].as_array().unwrap().len(), 5);

    // Delete the added rows again.
    let ids = dir.path().join("ids.txt");
    fs::write(&ids, (500..520).map(|i| i.to_string()).collect::<Vec<_>>().join("\n")).unwrap();
    let out = run(&[
        "delete",
        "--model",
        model.to_str().unwrap(),
        "--ids",
        ids.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn delete_with_unknown_id_leaves_model_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 300, 5);
    let model = train(dir.path(), &data, "m.bin", &[]);
    let before = fs::read(&model).unwrap();

    let ids = dir.path().join("bad.txt");
    fs::write(&ids, "3\n999999\n").unwrap();
    let out = run(&[
        "delete",
        "--model",
        model.to_str().unwrap(),
        "--ids",
        ids.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("999999"), "{msg}");
    assert_eq!(before, fs::read(&model).unwrap(), "model file must be unchanged");
}

#[test]
fn delete_empty_id_file_is_noop() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 300, 6);
    let model = train(dir.path(), &data, "m.bin", &[]);
    let before = fs::read(&model).unwrap();
    let ids = dir.path().join("empty.txt");
    fs::write(&ids, "").unwrap();
    let out = run(&[
        "delete",
        "--model",
        model.to_str().unwrap(),
        "--ids",
        ids.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(before, fs::read(&model).unwrap());
}

#[test]
fn slim_and_full_predict_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 400, 7);
    let test = synth_csv(dir.path(), "t.csv", 60, 8);
    let full = train(dir.path(), &data, "full.bin", &[]);
    let slim = train(dir.path(), &data, "slim.bin", &["--export", "slim"]);
    assert!(fs::metadata(&slim).unwrap().len() < fs::metadata(&full).unwrap().len());

    for (model, out_name) in [(&full, "p_full.csv"), (&slim, "p_slim.csv")] {
        let out = run(&[
            "predict",
            "--model",
            model.to_str().unwrap(),
            "--data",
            test.to_str().unwrap(),
            "--out",
            dir.path().join(out_name).to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read_to_string(dir.path().join("p_full.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("p_slim.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 60);

    // Online updates on a slim model are rejected.
    let ids = dir.path().join("one.txt");
    fs::write(&ids, "0\n").unwrap();
    let out = run(&[
        "delete",
        "--model",
        slim.to_str().unwrap(),
        "--ids",
        ids.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prediction"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 200, 9);
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "iters = 3\nleaves = 4\nseed = 21\n").unwrap();

    // Config only.
    let m_cfg = dir.path().join("cfg.bin");
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        m_cfg.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("M=3"), "{stdout}");

    // Flag overrides the file.
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("flag.bin").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--iters",
        "7",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("M=7"));
}

#[test]
fn env_seed_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 300, 10);
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    // alpha < 1 so the candidate sampling depends on the seed.
    for (path, env_seed) in [(&a, None), (&b, Some("12345"))] {
        let mut cmd = bin();
        cmd.args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            path.to_str().unwrap(),
            "--iters",
            "4",
            "--leaves",
            "6",
            "--bins",
            "64",
            "--alpha",
            "0.3",
            "--seed",
            "9",
        ]);
        if let Some(seed) = env_seed {
            cmd.env("ONLINEBOOST_SEED", seed);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
    }
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn similarity_of_model_with_itself_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 300, 11);
    let test = synth_csv(dir.path(), "t.csv", 50, 12);
    let model = train(dir.path(), &data, "m.bin", &[]);
    let report = dir.path().join("phi.json");
    let out = run(&[
        "eval",
        "similarity",
        "--a",
        model.to_str().unwrap(),
        "--b",
        model.to_str().unwrap(),
        "--test",
        test.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["phi"], 1.0);
}

#[test]
fn predictions_are_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 300, 13);
    let model = train(dir.path(), &data, "m.bin", &[]);
    for name in ["p1.csv", "p2.csv"] {
        let out = run(&[
            "predict",
            "--model",
            model.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            dir.path().join(name).to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(
        fs::read(dir.path().join("p1.csv")).unwrap(),
        fs::read(dir.path().join("p2.csv")).unwrap()
    );
}

#[test]
fn eval_and_bench_subcommands_produce_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_csv(dir.path(), "d.csv", 400, 14);
    let test = synth_csv(dir.path(), "t.csv", 80, 15);
    let model = train(dir.path(), &data, "m.bin", &[]);

    let bd = dir.path().join("bd.json");
    let out = run(&[
        "eval", "backdoor",
        "--data", data.to_str().unwrap(),
        "--test", test.to_str().unwrap(),
        "--iters", "4", "--leaves", "6", "--bins", "64",
        "--poison-frac", "0.05",
        "--out", bd.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&bd).unwrap()).unwrap();
    assert_eq!(json["phases"].as_array().unwrap().len(), 4);

    let rb = dir.path().join("rb.json");
    let out = run(&[
        "eval", "robustness",
        "--model", model.to_str().unwrap(),
        "--lambda", "0.01",
        "--out", rb.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&rb).unwrap()).unwrap();
    assert!(!json.as_array().unwrap().is_empty());

    let sched = dir.path().join("sched.json");
    let out = run(&[
        "eval", "schedule",
        "--data", data.to_str().unwrap(),
        "--test", test.to_str().unwrap(),
        "--iters", "3", "--leaves", "4", "--bins", "64",
        "--parts", "3",
        "--out", sched.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&sched).unwrap()).unwrap();
    assert_eq!(json["steps"].as_array().unwrap().len(), 4); // ramp up 2 + down 2

    let speed = dir.path().join("speed.json");
    let out = run(&[
        "bench", "speedup",
        "--data", data.to_str().unwrap(),
        "--iters", "3", "--leaves", "4", "--bins", "64",
        "--sizes", "1,0.05",
        "--out", speed.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&speed).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);

    let le = dir.path().join("leaf.json");
    let out = run(&[
        "eval", "leaf-error",
        "--model", model.to_str().unwrap(),
        "--out", le.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&le).unwrap()).unwrap();
    assert!(json["error"].as_f64().unwrap() < 1e-9); // fresh model, nothing stale
}
