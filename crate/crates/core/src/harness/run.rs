//! Trial execution, training epochs and held-out evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{RunConfig, TaskKind, SEED_HELDOUT_TRIALS, SEED_INIT, SEED_TRAIN_TRIALS};
use crate::eprop::{skip_rate, EpropLearner, UpdateStats};
use crate::error::{Error, Result};
use crate::fixedpoint::{derive_seed, Prng, QFormat};
use crate::snn::{NetworkConfig, SnnEngine, Weights};
use crate::task::{decide, error_at_step, gen_navigation_trial, load_trial, truncate_window, SupervisedTrial};

const MEMBRANE_ONE: f64 = (1u32 << QFormat::MEMBRANE.frac_bits()) as f64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub label: usize,
    /// Decision over the configured leading fraction of the window.
    pub prediction: usize,
    /// Mean over supervised steps of `½ Σ_k e_k²`.
    pub loss: f64,
    pub sops: u64,
    /// Exposed readouts over the supervised window, one vector per step.
    pub window: Vec<Vec<i32>>,
}

impl TrialOutcome {
    pub fn prediction_at(&self, fraction: f64) -> Result<usize> {
        decide(&self.window[..truncate_window(self.window.len(), fraction)])
    }
}

/// One trial from reset. With a learner, traces are folded every step and
/// both update phases run at every supervised step.
pub fn run_trial(
    engine: &mut SnnEngine,
    mut learner: Option<&mut EpropLearner>,
    trial: &SupervisedTrial,
    decision_window: f64,
) -> Result<TrialOutcome> {
    if trial.stream.n_channels as usize != engine.config.n_in || trial.targets.n_out != engine.config.n_out {
        return Err(Error::Shape(format!(
            "trial ({} channels, {} outputs) does not fit network ({}, {})",
            trial.stream.n_channels, trial.targets.n_out, engine.config.n_in, engine.config.n_out
        )));
    }
    engine.reset_state();
    if let Some(l) = learner.as_deref_mut() {
        l.reset_traces();
    }
    let mut window = Vec::new();
    let mut loss = 0.0;
    let mut sops = 0;
    for (t, events) in trial.stream.per_step_channels().iter().enumerate() {
        let record = engine.step(events)?;
        sops += record.lif.sops + record.readout_sops;
        if let Some(l) = learner.as_deref_mut() {
            l.observe(&record);
        }
        if !trial.is_supervised(t) {
            continue;
        }
        let exposed: Vec<i32> = engine.exposed_readout().iter().map(|q| q.raw()).collect();
        let err = error_at_step(&exposed, trial, t)?;
        loss += err.iter().map(|&e| 0.5 * (e as f64 / MEMBRANE_ONE).powi(2)).sum::<f64>();
        if let Some(l) = learner.as_deref_mut() {
            l.update(engine, &record, &err, None)?;
        }
        window.push(exposed);
    }
    if window.is_empty() {
        return Err(Error::Input("trial has no supervised steps".into()));
    }
    loss /= window.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    let n = truncate_window(window.len(), decision_window);
    let prediction = decide(&window[..n])?;
    Ok(TrialOutcome {
        label: trial.label,
        prediction,
        loss,
        sops,
        window,
    })
}

/// Where trials come from.
#[derive(Debug, Clone)]
pub enum TrialSource {
    Navigation { cfg: RunConfig },
    Files { train: Vec<SupervisedTrial>, heldout: Vec<SupervisedTrial> },
}

fn load_dir(dir: &Path) -> Result<Vec<SupervisedTrial>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "aev"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no .aev files in {}", dir.display())));
    }
    paths.iter().map(load_trial).collect()
}

impl TrialSource {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        match cfg.task.kind {
            TaskKind::Navigation => Ok(TrialSource::Navigation { cfg: cfg.clone() }),
            TaskKind::Aev => {
                let dir = |d: &Option<PathBuf>, name: &str| {
                    d.clone()
                        .ok_or_else(|| Error::Config(format!("task.{name} is required for aev tasks")))
                };
                let train = load_dir(&dir(&cfg.task.aev_train_dir, "aev_train_dir")?)?;
                let heldout = load_dir(&dir(&cfg.task.aev_heldout_dir, "aev_heldout_dir")?)?;
                let n_in = train[0].stream.n_channels;
                if train.iter().chain(&heldout).any(|t| t.stream.n_channels != n_in) {
                    return Err(Error::Input("AEV files disagree on channel count".into()));
                }
                Ok(TrialSource::Files { train, heldout })
            }
        }
    }

    pub fn n_in(&self) -> usize {
        match self {
            TrialSource::Navigation { cfg } => cfg.task.navigation.n_channels(),
            TrialSource::Files { train, .. } => train[0].stream.n_channels as usize,
        }
    }

    pub fn train_trial(&self, epoch: u32, index: u32) -> Result<SupervisedTrial> {
        match self {
            TrialSource::Navigation { cfg } => {
                let n = epoch as u64 * cfg.train.trials_per_epoch as u64 + index as u64;
                let seed = derive_seed(cfg.train.seed, SEED_TRAIN_TRIALS, n) as u32;
                gen_navigation_trial(&cfg.task.navigation, seed)
            }
            TrialSource::Files { train, .. } => {
                let n = epoch as usize * train.len() + index as usize;
                Ok(train[n % train.len()].clone())
            }
        }
    }

    pub fn trials_per_epoch(&self, cfg: &RunConfig) -> u32 {
        match self {
            TrialSource::Navigation { .. } => cfg.train.trials_per_epoch,
            TrialSource::Files { train, .. } => train.len() as u32,
        }
    }

    pub fn heldout(&self, cfg: &RunConfig) -> Result<Vec<SupervisedTrial>> {
        match self {
            TrialSource::Navigation { cfg } => (0..cfg.train.heldout_trials)
                .map(|i| {
                    let seed = derive_seed(cfg.train.seed, SEED_HELDOUT_TRIALS, i as u64) as u32;
                    gen_navigation_trial(&cfg.task.navigation, seed)
                })
                .collect(),
            TrialSource::Files { heldout, .. } => {
                Ok(heldout.iter().take(cfg.train.heldout_trials as usize).cloned().collect())
            }
        }
    }
}

/// Seeded uniform integer initialization.
pub fn initial_weights(cfg: &RunConfig, net: &NetworkConfig) -> Weights {
    let mut prng = Prng::derive(cfg.train.seed, SEED_INIT, 0);
    Weights::random_uniform(net, cfg.train.init_bound, &mut prng)
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub accuracy: f64,
    pub loss: f64,
    /// `None` when no update was a candidate.
    pub skip_rate: Option<f64>,
    pub word_skip_rate: Option<f64>,
    pub sop_count: u64,
    pub candidates: u64,
    pub applied: u64,
    pub skipped_et: u64,
    pub skipped_ste: u64,
    pub nonzero_deltas: u64,
    pub update_steps: u64,
}

impl EpochRecord {
    fn new(epoch: u32, outcomes: &[TrialOutcome], stats: &UpdateStats) -> Self {
        let n = outcomes.len().max(1) as f64;
        let correct = outcomes.iter().filter(|o| o.prediction == o.label).count();
        EpochRecord {
            epoch,
            accuracy: correct as f64 / n,
            loss: outcomes.iter().map(|o| o.loss).sum::<f64>() / n,
            skip_rate: skip_rate(stats).ok(),
            word_skip_rate: (stats.word_candidates > 0)
                .then(|| stats.word_skipped as f64 / stats.word_candidates as f64),
            sop_count: outcomes.iter().map(|o| o.sops).sum(),
            candidates: stats.candidates,
            applied: stats.applied,
            skipped_et: stats.skipped_et,
            skipped_ste: stats.skipped_ste,
            nonzero_deltas: stats.nonzero_deltas,
            update_steps: stats.update_steps,
        }
    }
}

fn stats_delta(now: &UpdateStats, before: &UpdateStats) -> UpdateStats {
    UpdateStats {
        candidates: now.candidates - before.candidates,
        applied: now.applied - before.applied,
        skipped_et: now.skipped_et - before.skipped_et,
        skipped_ste: now.skipped_ste - before.skipped_ste,
        word_candidates: now.word_candidates - before.word_candidates,
        word_skipped: now.word_skipped - before.word_skipped,
        nonzero_deltas: now.nonzero_deltas - before.nonzero_deltas,
        update_steps: now.update_steps - before.update_steps,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyPoint {
    pub fraction: f64,
    pub latency_ms: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeldoutResult {
    pub trials: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub latency: Vec<LatencyPoint>,
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Forward-only evaluation; trials run in parallel, results are collected
/// in trial order.
pub fn evaluate(cfg: &RunConfig, engine: &SnnEngine, trials: &[SupervisedTrial]) -> Result<HeldoutResult> {
    if trials.is_empty() {
        return Err(Error::Input("no held-out trials".into()));
    }
    let outcomes: Vec<TrialOutcome> = pool(cfg.train.threads)?.install(|| {
        trials
            .par_iter()
            .map(|t| {
                let mut e = engine.clone();
                run_trial(&mut e, None, t, cfg.train.decision_window)
            })
            .collect::<Result<_>>()
    })?;
    let n = outcomes.len() as f64;
    let acc = |preds: &mut dyn Iterator<Item = Result<bool>>| -> Result<f64> {
        let mut c = 0usize;
        for p in preds {
            c += p? as usize;
        }
        Ok(c as f64 / n)
    };
    let accuracy = acc(&mut outcomes.iter().map(|o| Ok(o.prediction == o.label)))?;
    let window_len = outcomes[0].window.len();
    let dt_ms = engine.config.dt_us as f64 * 1e-3;
    let latency = cfg
        .train
        .latency_fractions
        .iter()
        .map(|&f| {
            let a = acc(&mut outcomes.iter().map(|o| Ok(o.prediction_at(f)? == o.label)))?;
            Ok(LatencyPoint {
                fraction: f,
                latency_ms: truncate_window(window_len, f) as f64 * dt_ms,
                accuracy: a,
            })
        })
        .collect::<Result<_>>()?;
    Ok(HeldoutResult {
        trials: outcomes.len(),
        accuracy,
        loss: outcomes.iter().map(|o| o.loss).sum::<f64>() / n,
        latency,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch (kept out of the metrics stream).
    pub epoch_seconds: Vec<f64>,
    pub initial_weights: Weights,
    pub engine: SnnEngine,
    pub stats: UpdateStats,
    pub stopped_early: bool,
    pub heldout: HeldoutResult,
    /// Skip rate over the last (up to) 10 epochs.
    pub final_skip_rate: Option<f64>,
}

/// Serial online training followed by held-out evaluation. `on_epoch` sees
/// each record as it is produced.
pub fn train(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochRecord, f64)) -> Result<TrainReport> {
    let source = TrialSource::from_config(cfg)?;
    let net = cfg.network_config(source.n_in())?;
    let initial = initial_weights(cfg, &net);
    let mut engine = SnnEngine::new(net.clone(), initial.clone())?;
    let mut learner = cfg.build_learner(&net)?;
    let per_epoch = source.trials_per_epoch(cfg);

    let mut epochs = Vec::new();
    let mut epoch_seconds = Vec::new();
    let mut history: Vec<UpdateStats> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.train.epochs {
        let start = std::time::Instant::now();
        let before = learner.stats;
        let mut outcomes = Vec::with_capacity(per_epoch as usize);
        for i in 0..per_epoch {
            let trial = source.train_trial(epoch, i)?;
            let l = cfg.learning.enabled.then_some(&mut learner);
            outcomes.push(run_trial(&mut engine, l, &trial, cfg.train.decision_window)?);
        }
        let delta = stats_delta(&learner.stats, &before);
        let record = EpochRecord::new(epoch, &outcomes, &delta);
        let secs = start.elapsed().as_secs_f64();
        on_epoch(&record, secs);
        history.push(delta);
        epoch_seconds.push(secs);
        epochs.push(record);
        let window = cfg.train.plateau_window as usize;
        if epochs.len() < window {
            continue;
        }
        let smoothed = epochs[epochs.len() - window..].iter().map(|r| r.accuracy).sum::<f64>() / window as f64;
        if smoothed > best {
            best = smoothed;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.train.patience > 0 && since_best >= cfg.train.patience {
            stopped_early = true;
            break;
        }
    }

    let mut tail = UpdateStats::default();
    for s in history.iter().rev().take(10) {
        tail.merge(s);
    }
    let heldout = evaluate(cfg, &engine, &source.heldout(cfg)?)?;
    Ok(TrainReport {
        epochs,
        epoch_seconds,
        initial_weights: initial,
        stats: learner.stats,
        engine,
        stopped_early,
        heldout,
        final_skip_rate: skip_rate(&tail).ok(),
    })
}
