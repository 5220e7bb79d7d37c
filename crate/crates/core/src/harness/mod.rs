//! Command implementations behind the `reckon` binary.
//!
//! Artifacts written by `train` (all deterministic except `timing.jsonl`):
//!
//! | file | content |
//! |------|---------|
//! | `metrics.jsonl` | header line, then one record per epoch |
//! | `timing.jsonl` | wall-clock seconds per epoch |
//! | `summary.json` | held-out accuracy, skip rate, memory report |
//! | `checkpoint.bin` | final weights |
//! | `accuracy_vs_epoch.csv`, `skip_rate_vs_epoch.csv`, `accuracy_vs_latency.csv` | plot data |
//! | `config.toml` | resolved configuration |

pub mod checkpoint;
pub mod config;
pub mod run;
pub mod validate;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::fixedpoint::derive_seed;
use crate::snn::{memory_report, MemoryModel, MemoryWidths, SnnEngine};
use crate::task::{store_events, store_trial, EventStream, gen_navigation_trial};
use checkpoint::Checkpoint;
use config::{RunConfig, SEED_GEN};
use run::{evaluate, train, EpochRecord, HeldoutResult, TrialSource};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const EVAL_FILE: &str = "eval.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Input(format!("{}: {other:?}", path.display())),
    }
}

fn epoch_line(record: &EpochRecord) -> String {
    let mut v = serde_json::to_value(record).expect("serializable");
    v["type"] = json!("epoch");
    v.to_string()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub heldout: HeldoutResult,
    pub final_skip_rate: Option<f64>,
    pub overall_skip_rate: Option<f64>,
    pub candidates: u64,
    pub applied: u64,
    pub skipped_et: u64,
    pub skipped_ste: u64,
    pub memory: MemoryModel,
    pub memory_inference: MemoryModel,
}

#[derive(Serialize)]
struct EpochAccuracyRow {
    epoch: u32,
    accuracy: f64,
    loss: f64,
}

#[derive(Serialize)]
struct EpochSkipRow {
    epoch: u32,
    skip_rate: Option<f64>,
    skipped_et: u64,
    skipped_ste: u64,
    candidates: u64,
}

/// Train, write all artifacts to `cfg.output.dir`, return the summary.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    write_file(&dir.join("config.toml"), cfg.to_toml_string().as_bytes())?;

    let source = TrialSource::from_config(cfg)?;
    let n_in = source.n_in();
    let hash = cfg.network_hash(n_in);
    let net = cfg.network_config(n_in)?;
    let metrics_path = dir.join(METRICS_FILE);
    let timing_path = dir.join(TIMING_FILE);
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut timing = fs::File::create(&timing_path).map_err(|e| Error::io(&timing_path, e))?;
    let header = json!({
        "type": "header",
        "format": 1,
        "config_hash": hex::encode(hash),
        "n_in": n_in,
        "n_rec": net.n_rec,
        "n_out": net.n_out,
        "seed": cfg.train.seed,
    });
    writeln!(metrics, "{header}").map_err(|e| Error::io(&metrics_path, e))?;

    let mut io_err = None;
    let report = train(cfg, |record, secs| {
        let r = writeln!(metrics, "{}", epoch_line(record))
            .map_err(|e| Error::io(&metrics_path, e))
            .and_then(|_| {
                writeln!(timing, "{}", json!({"epoch": record.epoch, "seconds": secs}))
                    .map_err(|e| Error::io(&timing_path, e))
            });
        if let Err(e) = r {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }

    Checkpoint {
        config_hash: hash,
        weights: report.engine.weights.clone(),
    }
    .save(&dir.join(CHECKPOINT_FILE))?;

    let acc_rows: Vec<_> = report
        .epochs
        .iter()
        .map(|r| EpochAccuracyRow {
            epoch: r.epoch,
            accuracy: r.accuracy,
            loss: r.loss,
        })
        .collect();
    write_csv(&dir.join("accuracy_vs_epoch.csv"), &acc_rows)?;
    let skip_rows: Vec<_> = report
        .epochs
        .iter()
        .map(|r| EpochSkipRow {
            epoch: r.epoch,
            skip_rate: r.skip_rate,
            skipped_et: r.skipped_et,
            skipped_ste: r.skipped_ste,
            candidates: r.candidates,
        })
        .collect();
    write_csv(&dir.join("skip_rate_vs_epoch.csv"), &skip_rows)?;
    write_csv(&dir.join("accuracy_vs_latency.csv"), &report.heldout.latency)?;

    let s = report.stats;
    let summary = TrainSummary {
        epochs_run: report.epochs.len(),
        stopped_early: report.stopped_early,
        heldout: report.heldout,
        final_skip_rate: report.final_skip_rate,
        overall_skip_rate: crate::eprop::skip_rate(&s).ok(),
        candidates: s.candidates,
        applied: s.applied,
        skipped_et: s.skipped_et,
        skipped_ste: s.skipped_ste,
        memory: memory_report(&net, MemoryWidths::default(), true),
        memory_inference: memory_report(&net, MemoryWidths::default(), false),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub heldout: HeldoutResult,
    pub memory: MemoryModel,
}

/// Forward-only evaluation of a checkpoint on the held-out trials.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalSummary> {
    let source = TrialSource::from_config(cfg)?;
    let n_in = source.n_in();
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_hash(&cfg.network_hash(n_in))?;
    let net = cfg.network_config(n_in)?;
    let engine = SnnEngine::new(net.clone(), ck.weights)?;
    let heldout = evaluate(cfg, &engine, &source.heldout(cfg)?)?;
    let summary = EvalSummary {
        checkpoint: checkpoint.to_path_buf(),
        heldout,
        memory: memory_report(&net, MemoryWidths::default(), false),
    };
    create_dir(&cfg.output.dir)?;
    write_json(&cfg.output.dir.join(EVAL_FILE), &summary)?;
    write_csv(&cfg.output.dir.join("eval_accuracy_vs_latency.csv"), &summary.heldout.latency)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u32,
    pub label: usize,
    pub n_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub n_trials: u32,
    pub label_counts: Vec<usize>,
    pub files: Vec<ManifestEntry>,
}

/// Generate navigation trials (or convert a CSV) into `cfg.output.dir`.
pub fn cmd_gen(cfg: &RunConfig) -> Result<Manifest> {
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    if let Some(csv_path) = &cfg.gen.from_csv {
        return convert_csv(cfg, csv_path);
    }
    let params = &cfg.task.navigation;
    let mut files = Vec::new();
    let mut label_counts = vec![0usize; 2];
    for i in 0..cfg.gen.n_trials {
        let seed = derive_seed(cfg.train.seed, SEED_GEN, i as u64) as u32;
        let trial = gen_navigation_trial(params, seed)?;
        let file = format!("trial_{i:05}.aev");
        store_trial(&trial, dir.join(&file))?;
        label_counts[trial.label] += 1;
        files.push(ManifestEntry {
            file,
            seed,
            label: trial.label,
            n_events: trial.stream.events.len(),
        });
    }
    let manifest = Manifest {
        master_seed: cfg.train.seed,
        n_trials: cfg.gen.n_trials,
        label_counts,
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// `timestamp_us,channel` rows (an optional header is skipped) binned at
/// `network.dt_us` into `events.aev`.
fn convert_csv(cfg: &RunConfig, path: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut raw = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let parsed = (|| {
            let ts: u64 = rec.get(0)?.parse().ok()?;
            let ch: u16 = rec.get(1)?.parse().ok()?;
            Some((ts, ch))
        })();
        match parsed {
            Some(p) => raw.push(p),
            None if line == 0 => continue,
            None => {
                return Err(Error::Input(format!("{}: bad row {}", path.display(), line + 1)));
            }
        }
    }
    let stream = EventStream::from_timestamps(&raw, cfg.gen.csv_channels, cfg.network.dt_us, None)?;
    let file = "events.aev".to_string();
    store_events(&stream, cfg.output.dir.join(&file))?;
    let manifest = Manifest {
        master_seed: cfg.train.seed,
        n_trials: 1,
        label_counts: vec![],
        files: vec![ManifestEntry {
            file,
            seed: 0,
            label: 0,
            n_events: stream.events.len(),
        }],
    };
    write_json(&cfg.output.dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
