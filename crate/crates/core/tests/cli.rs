use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::io::Write;

use gripforge::cli::{sha256_file, RunManifest};
use gripforge::dataset::make_windows;
use gripforge::models::load_checkpoint;
use gripforge::signals::read_table_csv;

fn gripforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gripforge"))
        .args(args)
        .env_remove("GRIPFORGE_OUT")
        .output()
        .expect("spawn gripforge")
}

fn ok(args: &[&str]) -> Output {
    let out = gripforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two short synthetic subjects, preprocessed.
fn prepared(root: &Path) -> (PathBuf, PathBuf) {
    let raw = root.join("raw");
    let pp = root.join("pp");
    ok(&["synth", "--out", s(&raw), "--subjects", "2", "--duration-s", "8", "--seed", "4"]);
    ok(&["preprocess", "--out", s(&pp), s(&raw.join("subject01.csv")), s(&raw.join("subject02.csv"))]);
    (raw, pp)
}

fn train_mlp(pp: &Path, out: &Path, extra: &[&str]) {
    let data = pp.join("processed.csv");
    let mut args = vec!["train", "--out", s(out), "--data", s(&data), "--arch", "mlp", "--epochs", "1", "--window", "6"];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn usage_errors_exit_with_code_2() {
    let out = gripforge(&["train", "--data", "x.csv", "--arch", "cnn"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mlp, rnn, lstm, gru"), "{err}");
    assert_eq!(gripforge(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(gripforge(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(gripforge(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let out = gripforge(&["preprocess", "--out", s(dir.path()), s(&missing)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn preprocess_is_idempotent_and_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, pp) = prepared(dir.path());
    let again = dir.path().join("pp2");
    ok(&["preprocess", "--out", s(&again), s(&raw.join("subject01.csv")), s(&raw.join("subject02.csv"))]);
    for f in ["processed.csv", "scaler.json", "preprocess.json"] {
        assert_eq!(fs::read(pp.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    let table = read_table_csv(&pp.join("processed.csv")).unwrap();
    assert_eq!(table.rows(), 2 * 1600);
    assert_eq!(table.segments().len(), 2);
    assert!(table.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn manifest_hashes_outputs_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let (_, pp) = prepared(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[train]\nepochs = 3\nbatch_size = 64\n").unwrap();
    let tr = dir.path().join("tr");
    let data = pp.join("processed.csv");
    ok(&["train", "--out", s(&tr), "--data", s(&data), "--arch", "mlp", "--config", s(&cfg), "--epochs", "2"]);
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(tr.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.config["train"]["epochs"], 2);
    assert_eq!(m.config["train"]["batch_size"], 64);
    assert_eq!(m.seeds["train"], 0);
    assert!(m.inputs.iter().any(|f| f.path.ends_with("processed.csv")));
    for f in &m.outputs {
        assert_eq!(sha256_file(Path::new(&f.path)).unwrap(), f.sha256, "{}", f.path);
    }
    let history: serde_json::Value = serde_json::from_str(&fs::read_to_string(tr.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["train_loss"].as_array().unwrap().len(), 2);
}

#[test]
fn eval_reproduces_metrics_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (_, pp) = prepared(dir.path());
    let data = pp.join("processed.csv");
    let mut tables = Vec::new();
    for run in ["a", "b"] {
        let tr = dir.path().join(format!("tr_{run}"));
        let ev = dir.path().join(format!("ev_{run}"));
        train_mlp(&pp, &tr, &["--seed", "9"]);
        ok(&["eval", "--out", s(&ev), "--data", s(&data), "--checkpoint", s(&tr.join("model.json"))]);
        tables.push(fs::read(ev.join("metrics.csv")).unwrap());
        assert!(ev.join("report.json").exists() && ev.join("plot_data.csv").exists());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn streaming_predict_matches_offline_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, pp) = prepared(dir.path());
    let tr = dir.path().join("tr");
    train_mlp(&pp, &tr, &["--horizon", "2"]);
    let ckpt = tr.join("model.json");
    let pred = dir.path().join("pred.csv");
    let input = raw.join("subject01.csv");
    ok(&["predict", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&pred)]);

    let text = fs::read_to_string(&pred).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,predicted_force_n");
    let rows = 1600;
    let w = 6;
    assert_eq!(lines.len() - 1, rows - (w - 1));
    let raw_text = fs::read_to_string(&input).unwrap();
    let raw_rows: Vec<&str> = raw_text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(lines[1].split(',').next(), raw_rows[w - 1].split(',').next());

    let ck = load_checkpoint(&ckpt).unwrap();
    let model = ck.to_model().unwrap();
    let scaler = ck.scaler.clone().unwrap();
    let table = read_table_csv(&pp.join("processed.csv")).unwrap();
    let ds = make_windows(&table, w, 2).unwrap();
    let n = ds.len() / 2;
    for i in 0..n {
        let sample = ds.sample(i);
        let mut flat = Vec::new();
        for t in 0..w {
            flat.extend_from_slice(sample.timestep(t));
        }
        let offline = scaler.invert_value(scaler.force_column(), model.predict_batch(&flat, 1).unwrap()[0]);
        let streamed: f64 = lines[1 + i].split(',').nth(1).unwrap().parse().unwrap();
        assert!(
            (offline - streamed).abs() <= 1e-9 * (1.0 + offline.abs()),
            "row {i}: offline {offline} streamed {streamed}"
        );
    }
}

#[test]
fn predict_skips_or_rejects_malformed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, pp) = prepared(dir.path());
    let tr = dir.path().join("tr");
    train_mlp(&pp, &tr, &[]);
    let ckpt = tr.join("model.json");
    let text = fs::read_to_string(raw.join("subject01.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines.insert(20, "0.5,abc,1,2".into());
    let corrupted = lines.join("\n");

    let run = |strict: bool| {
        let mut args = vec!["predict", "--checkpoint", s(&ckpt)];
        if strict {
            args.push("--strict");
        }
        let mut child = Command::new(env!("CARGO_BIN_EXE_gripforge"))
            .args(&args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        // Strict mode may exit before reading everything.
        let _ = child.stdin.take().unwrap().write_all(corrupted.as_bytes());
        child.wait_with_output().unwrap()
    };
    let lenient = run(false);
    assert!(lenient.status.success());
    assert!(String::from_utf8_lossy(&lenient.stderr).contains("skipped 1"));
    let out = String::from_utf8_lossy(&lenient.stdout);
    assert_eq!(out.lines().count() - 1, 1600 - 5);
    let strict = run(true);
    assert_eq!(strict.status.code(), Some(3));
}
