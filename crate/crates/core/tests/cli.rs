//! End-to-end tests of the `reckon` binary: exit codes, artifacts and
//! configuration precedence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use reckon::harness::checkpoint::Checkpoint;
use reckon::harness::config::{Overrides, RunConfig};
use reckon::harness::run::{initial_weights, run_trial, TrialSource};
use reckon::snn::SnnEngine;
use reckon::task::aev::load_trial;

/// Small network on the short navigation task so every run takes well
/// under a second.
const SMALL: &str = r#"
[network]
n_rec = 16

[task.navigation]
n_cues = 3
cue_steps = 10
gap_steps = 5
delay_steps = 40
recall_steps = 20
n_steps = 100
channels_per_group = 4
cue_rate = 0.2
recall_rate = 0.2
noise_rate = 0.02
dt_us = 1000

[train]
epochs = 3
trials_per_epoch = 8
heldout_trials = 32
threads = 1
"#;

fn reckon(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reckon"));
    cmd.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("RECKON_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(envs.iter().copied());
    cmd.output().expect("spawn reckon")
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{SMALL}\n{extra}")).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn load_cfg(path: &Path) -> RunConfig {
    RunConfig::load(Some(path), Vec::<(String, String)>::new(), &Overrides::default()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[output]\nbogus = 1\n");
    let out = reckon(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))], &[]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("bogus"));
}

#[test]
fn missing_config_file_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = reckon(&["train", "--config", s(&tmp.path().join("absent.toml"))], &[]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = reckon(&["train", "--config", s(&cfg), "--out", s(&blocker)], &[]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn zero_epochs_writes_header_and_initial_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "");
    let dir = tmp.path().join("o");
    let out = reckon(
        &["train", "--config", s(&cfg_path), "--out", s(&dir)],
        &[("RECKON_TRAIN_EPOCHS", "0")],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics = fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].contains("\"header\""));

    let cfg = load_cfg(&cfg_path);
    let source = TrialSource::from_config(&cfg).unwrap();
    let net = cfg.network_config(source.n_in()).unwrap();
    let ck = Checkpoint::load(&dir.join("checkpoint.bin")).unwrap();
    assert_eq!(ck.weights, initial_weights(&cfg, &net));
}

#[test]
fn eval_reproduces_train_and_rejects_other_networks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let train_dir = tmp.path().join("train");
    let out = reckon(&["train", "--config", s(&cfg), "--out", s(&train_dir)], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ck = train_dir.join("checkpoint.bin");

    let eval_dir = tmp.path().join("eval");
    let out = reckon(&["eval", "--config", s(&cfg), "--out", s(&eval_dir), "--checkpoint", s(&ck)], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trained = json(&train_dir.join("summary.json"));
    let evaluated = json(&eval_dir.join("eval.json"));
    assert_eq!(trained["heldout"], evaluated["heldout"]);
    assert!(eval_dir.join("eval_accuracy_vs_latency.csv").is_file());

    let out = reckon(
        &["eval", "--config", s(&cfg), "--out", s(&eval_dir), "--checkpoint", s(&ck)],
        &[("RECKON_NETWORK_THRESHOLD", "12.0")],
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("hash"));
}

#[test]
fn gen_writes_labelled_trials_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");

    let empty = tmp.path().join("empty");
    let out = reckon(&["gen", "--config", s(&cfg), "--out", s(&empty), "--n-trials", "0"], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let names: Vec<_> = fs::read_dir(&empty).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["manifest.json"]);

    let dir = tmp.path().join("gen");
    let out = reckon(&["gen", "--config", s(&cfg), "--out", s(&dir), "--n-trials", "20"], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest = json(&dir.join("manifest.json"));
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 20);
    let mut counts = [0u64; 2];
    for f in files {
        let trial = load_trial(dir.join(f["file"].as_str().unwrap())).unwrap();
        assert_eq!(trial.label as u64, f["label"].as_u64().unwrap());
        assert_eq!(trial.stream.events.len() as u64, f["n_events"].as_u64().unwrap());
        counts[trial.label] += 1;
    }
    let listed: Vec<u64> = manifest["label_counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(listed, counts.to_vec());
}

#[test]
fn gen_converts_csv_events() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[gen]\ncsv_channels = 8\n");
    let csv = tmp.path().join("events.csv");
    fs::write(&csv, "timestamp_us,channel\n0,1\n1500,3\n1700,7\n4200,0\n").unwrap();
    let dir = tmp.path().join("conv");
    let out = reckon(&["gen", "--config", s(&cfg), "--out", s(&dir), "--from-csv", s(&csv)], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.join("events.aev").is_file());
    assert_eq!(json(&dir.join("manifest.json"))["files"][0]["n_events"], 4);

    fs::write(&csv, "0,1\nnot,a row\n").unwrap();
    let out = reckon(&["gen", "--config", s(&cfg), "--out", s(&dir), "--from-csv", s(&csv)], &[]);
    assert_ne!(code(&out), 0);
}

#[test]
fn untrained_network_is_at_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let train_dir = tmp.path().join("init");
    let envs = [("RECKON_TRAIN_EPOCHS", "0"), ("RECKON_TRAIN_HELDOUT_TRIALS", "1000")];
    let out = reckon(&["train", "--config", s(&cfg), "--out", s(&train_dir), "--threads", "0"], &envs);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let heldout = &json(&train_dir.join("summary.json"))["heldout"];
    assert_eq!(heldout["trials"], 1000);
    let acc = heldout["accuracy"].as_f64().unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "untrained accuracy {acc}");
}

#[test]
fn disabled_learning_keeps_weights_and_scores_forward_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "[learning]\nenabled = false\n");
    let dir = tmp.path().join("frozen");
    let out = reckon(&["train", "--config", s(&cfg_path), "--out", s(&dir)], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let cfg = load_cfg(&cfg_path);
    let source = TrialSource::from_config(&cfg).unwrap();
    let net = cfg.network_config(source.n_in()).unwrap();
    let init = initial_weights(&cfg, &net);
    assert_eq!(Checkpoint::load(&dir.join("checkpoint.bin")).unwrap().weights, init);

    let mut engine = SnnEngine::new(net, init).unwrap();
    let metrics = fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    let records: Vec<Value> = metrics.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), cfg.train.epochs as usize);
    for (epoch, r) in records.iter().enumerate() {
        let n = source.trials_per_epoch(&cfg);
        let correct = (0..n)
            .filter(|&i| {
                let trial = source.train_trial(epoch as u32, i).unwrap();
                let o = run_trial(&mut engine, None, &trial, cfg.train.decision_window).unwrap();
                o.prediction == o.label
            })
            .count();
        assert_eq!(r["accuracy"].as_f64().unwrap(), correct as f64 / n as f64);
        assert_eq!(r["applied"], 0);
    }
}

#[test]
fn cli_flags_beat_environment_which_beats_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let dir = tmp.path().join("prec");
    let envs = [("RECKON_TRAIN_EPOCHS", "1"), ("RECKON_TRAIN_SEED", "5")];
    let out = reckon(&["train", "--config", s(&cfg), "--out", s(&dir), "--seed", "9"], &envs);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let header: Value = serde_json::from_str(
        fs::read_to_string(dir.join("metrics.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    assert_eq!(header["seed"], 9);
    assert_eq!(json(&dir.join("summary.json"))["epochs_run"], 1);
}

#[test]
fn validate_passes_and_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("val");
    let out = reckon(&["validate", "--out", s(&dir)], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&dir.join("validate.json"))["passed"], true);
}
