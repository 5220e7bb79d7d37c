//! Run configuration: a TOML file with one table per section. Every field
//! has a default and unknown keys are rejected.
//!
//! Precedence, lowest first: defaults, file, `RECKON_<SECTION>_<KEY>`
//! environment variables, command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eprop::{EligibilityTraces, EpropLearner, Feedback, LearningParams, ReadoutGate, SteLut};
use crate::error::{Error, Result};
use crate::fixedpoint::{derive_seed, Prng, QFormat};
use crate::snn::{Decay, NetworkConfig, NeuronGroup};
use crate::task::NavTrialParams;

pub const ENV_PREFIX: &str = "RECKON_";
const SECTIONS: [&str; 6] = ["network", "learning", "task", "train", "gen", "output"];

const MEMBRANE_ONE: f64 = (1u32 << QFormat::MEMBRANE.frac_bits()) as f64;
const TRACE_ONE: f64 = (1u32 << QFormat::TRACE.frac_bits()) as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub n_rec: usize,
    pub n_out: usize,
    pub dt_us: u32,
    /// Membrane time constant, milliseconds.
    pub tau_mem_ms: f64,
    /// Threshold in membrane units.
    pub threshold: f64,
    /// Per-pair overrides, `ceil(n_rec/2)` entries each.
    pub tau_mem_ms_per_pair: Option<Vec<f64>>,
    pub threshold_per_pair: Option<Vec<f64>>,
    pub readout_tau_ms: f64,
    pub hard_sigmoid: bool,
    pub weight_frac_bits: u8,
    pub out_weight_frac_bits: u8,
    pub allow_self_recurrence: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            n_rec: 128,
            n_out: 2,
            dt_us: 1000,
            tau_mem_ms: 2000.0,
            threshold: 16.0,
            tau_mem_ms_per_pair: None,
            threshold_per_pair: None,
            readout_tau_ms: 20.0,
            hard_sigmoid: true,
            weight_frac_bits: 3,
            out_weight_frac_bits: 8,
            allow_self_recurrence: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackKind {
    Symmetric,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningSection {
    /// `false` freezes all weights (η = 0); trials still run and score.
    pub enabled: bool,
    pub eta_shift: i8,
    pub eta_out_shift: i8,
    /// Regularization strength (membrane units); 0 disables it.
    pub reg_lambda: f64,
    /// Target trace level (trace units).
    pub f_target: f64,
    /// Columns with a trace below this (trace units) are skipped.
    pub skip_threshold: f64,
    pub readout_gate: ReadoutGate,
    pub trace_tau_ms: f64,
    /// Trace increment per spike (trace units).
    pub trace_increment: f64,
    pub feedback: FeedbackKind,
    pub feedback_bound: i8,
    /// STE segment bounds as fractions of θ; `None` uses the triangle.
    pub ste_bounds: Option<[f64; 4]>,
    pub ste_values: Option<[i8; 5]>,
    /// Update rows on worker threads (results are identical).
    pub parallel_rows: bool,
}

impl Default for LearningSection {
    fn default() -> Self {
        LearningSection {
            enabled: true,
            eta_shift: 15,
            eta_out_shift: 10,
            reg_lambda: 8.0,
            f_target: 0.5,
            skip_threshold: 1.0 / 64.0,
            readout_gate: ReadoutGate::Saturation,
            trace_tau_ms: 2000.0,
            trace_increment: 0.0625,
            feedback: FeedbackKind::Random,
            feedback_bound: 16,
            ste_bounds: None,
            ste_values: None,
            parallel_rows: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Navigation,
    Aev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub navigation: NavTrialParams,
    /// Directories of `.aev` trials with target sections.
    pub aev_train_dir: Option<PathBuf>,
    pub aev_heldout_dir: Option<PathBuf>,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            kind: TaskKind::Navigation,
            navigation: NavTrialParams::default(),
            aev_train_dir: None,
            aev_heldout_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: u32,
    pub trials_per_epoch: u32,
    pub heldout_trials: u32,
    pub seed: u64,
    /// Leading fraction of the supervised window used for decisions.
    pub decision_window: f64,
    /// Stop after this many epochs without a new best smoothed accuracy;
    /// 0 disables.
    pub patience: u32,
    /// Epochs in the trailing mean that early stopping tracks.
    pub plateau_window: u32,
    /// Initial weights are uniform integers in `[−init_bound, init_bound]`.
    pub init_bound: i8,
    /// Worker threads for evaluation; 0 lets the pool decide.
    pub threads: usize,
    /// Fractions reported in the latency/accuracy export.
    pub latency_fractions: Vec<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 200,
            trials_per_epoch: 64,
            heldout_trials: 512,
            seed: 1,
            decision_window: 1.0,
            patience: 20,
            plateau_window: 20,
            init_bound: 16,
            threads: 0,
            latency_fractions: (1..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub n_trials: u32,
    /// Optional `timestamp_us,channel` CSV to convert instead of generating.
    pub from_csv: Option<PathBuf>,
    pub csv_channels: u16,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection {
            n_trials: 100,
            from_csv: None,
            csv_channels: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub learning: LearningSection,
    pub task: TaskSection,
    pub train: TrainSection,
    pub gen: GenSection,
    pub output: OutputSection,
}

/// Command-line values that override the file and environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dt_us: Option<u32>,
    pub decision_window: Option<f64>,
    pub threads: Option<usize>,
}

fn parse_scalar(text: &str) -> toml::Value {
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.into())),
        Err(_) => toml::Value::String(text.into()),
    }
}

/// Apply `RECKON_SECTION_KEY=value` pairs to a raw table. Dotted sub-tables
/// use a double underscore (`RECKON_TASK_NAVIGATION__CUE_RATE`).
pub fn apply_env<I>(table: &mut toml::Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (name, value) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let rest = rest.to_ascii_lowercase();
        let section = SECTIONS
            .iter()
            .find(|s| rest.starts_with(&format!("{s}_")))
            .ok_or_else(|| Error::Config(format!("{name}: unknown section")))?;
        let path: Vec<&str> = rest[section.len() + 1..].split("__").collect();
        let mut node = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        for key in &path[..path.len() - 1] {
            node = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{name}: not a table")))?
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        node.as_table_mut()
            .ok_or_else(|| Error::Config(format!("{name}: not a table")))?
            .insert(path[path.len() - 1].to_string(), parse_scalar(&value));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load `path` (or defaults), then environment, then `overrides`.
    pub fn load(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &Overrides,
    ) -> Result<Self> {
        let mut table = match path {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| Error::io(p, e))?
                .parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        apply_env(&mut table, env)?;
        let mut cfg = Self::from_table(table)?;
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(dt) = o.dt_us {
            self.network.dt_us = dt;
            self.task.navigation.dt_us = dt;
        }
        if let Some(w) = o.decision_window {
            self.train.decision_window = w;
        }
        if let Some(t) = o.threads {
            self.train.threads = t;
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.train.decision_window;
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::Config(format!("decision_window {w} outside (0, 1]")));
        }
        if self.train.init_bound < 0 {
            return Err(Error::Config("init_bound must be non-negative".into()));
        }
        if self.train.plateau_window == 0 {
            return Err(Error::Config("plateau_window must be at least 1".into()));
        }
        if self.task.kind == TaskKind::Navigation {
            self.task.navigation.validate()?;
            if self.network.n_out != 2 {
                return Err(Error::Config("navigation needs n_out = 2".into()));
            }
        }
        self.network_config(self.n_in_hint())?;
        self.learning_params()?;
        Ok(())
    }

    /// Input count implied by the task (AEV tasks read it from the files).
    pub fn n_in_hint(&self) -> usize {
        match self.task.kind {
            TaskKind::Navigation => self.task.navigation.n_channels(),
            TaskKind::Aev => self.gen.csv_channels as usize,
        }
    }

    pub fn network_config(&self, n_in: usize) -> Result<NetworkConfig> {
        let n = &self.network;
        let pairs = n.n_rec.div_ceil(2);
        let dt_s = n.dt_us as f64 * 1e-6;
        let per_pair = |v: &Option<Vec<f64>>, default: f64, name: &str| -> Result<Vec<f64>> {
            match v {
                Some(v) if v.len() != pairs => Err(Error::Config(format!(
                    "{name} has {} entries, {pairs} pairs needed",
                    v.len()
                ))),
                Some(v) => Ok(v.clone()),
                None => Ok(vec![default; pairs]),
            }
        };
        let taus = per_pair(&n.tau_mem_ms_per_pair, n.tau_mem_ms, "tau_mem_ms_per_pair")?;
        let thetas = per_pair(&n.threshold_per_pair, n.threshold, "threshold_per_pair")?;
        let groups = taus
            .iter()
            .zip(&thetas)
            .map(|(&tau, &th)| {
                let threshold = (th * MEMBRANE_ONE).round();
                if !(threshold >= 1.0 && threshold <= QFormat::MEMBRANE.max_raw() as f64) {
                    return Err(Error::Config(format!("threshold {th} not representable")));
                }
                Ok(NeuronGroup {
                    decay: Decay::from_time_constant(dt_s, tau * 1e-3)?,
                    threshold: threshold as i32,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = NetworkConfig {
            n_in,
            n_rec: n.n_rec,
            n_out: n.n_out,
            dt_us: n.dt_us,
            groups,
            readout_decay: Decay::from_time_constant(dt_s, n.readout_tau_ms * 1e-3)?,
            hard_sigmoid: n.hard_sigmoid,
            weight_frac_bits: n.weight_frac_bits,
            out_weight_frac_bits: n.out_weight_frac_bits,
            allow_self_recurrence: n.allow_self_recurrence,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn learning_params(&self) -> Result<LearningParams> {
        let l = &self.learning;
        let raw = |x: f64, one: f64, name: &str| -> Result<i32> {
            let r = (x * one).round();
            if !r.is_finite() || r.abs() > i32::MAX as f64 {
                return Err(Error::Config(format!("{name} out of range")));
            }
            Ok(r as i32)
        };
        Ok(LearningParams {
            eta_shift: l.eta_shift,
            eta_out_shift: l.eta_out_shift,
            reg_lambda: raw(l.reg_lambda, MEMBRANE_ONE, "reg_lambda")?,
            f_target: raw(l.f_target, TRACE_ONE, "f_target")?,
            skip_threshold: raw(l.skip_threshold, TRACE_ONE, "skip_threshold")?,
            readout_gate: l.readout_gate,
        })
    }

    pub fn ste_lut(&self, net: &NetworkConfig) -> Result<SteLut> {
        let theta = net.groups[0].threshold;
        match (self.learning.ste_bounds, self.learning.ste_values) {
            (None, None) => Ok(SteLut::triangular(theta)),
            (b, v) => {
                let tri = SteLut::triangular(theta);
                let bounds = match b {
                    Some(b) => b.map(|f| (f * theta as f64).round() as i32),
                    None => tri.bounds,
                };
                SteLut::new(bounds, v.unwrap_or(tri.values))
            }
        }
    }

    pub fn build_learner(&self, net: &NetworkConfig) -> Result<EpropLearner> {
        let l = &self.learning;
        let decay = Decay::from_time_constant(net.dt_s(), l.trace_tau_ms * 1e-3)?;
        let inc = (l.trace_increment * TRACE_ONE).round();
        if !(inc >= 1.0 && inc <= QFormat::TRACE.max_raw() as f64) {
            return Err(Error::Config(format!(
                "trace_increment {} not representable",
                l.trace_increment
            )));
        }
        let traces = EligibilityTraces::new(net.n_in, net.n_rec, decay, inc as i32);
        let feedback = match l.feedback {
            FeedbackKind::Symmetric => Feedback::Symmetric,
            FeedbackKind::Random => {
                let mut prng = Prng::derive(self.train.seed, SEED_FEEDBACK, 0);
                Feedback::random_fixed(net.n_rec, net.n_out, l.feedback_bound, &mut prng)
            }
        };
        let mut learner = EpropLearner::new(
            net,
            self.learning_params()?,
            self.ste_lut(net)?,
            traces,
            feedback,
            derive_seed(self.train.seed, SEED_UPDATES, 0),
        )?;
        learner.parallel = l.parallel_rows;
        Ok(learner)
    }

    /// Hash of everything that fixes the meaning of stored weights.
    pub fn network_hash(&self, n_in: usize) -> [u8; 32] {
        let text = serde_json::to_string(&(n_in, &self.network)).expect("serializable");
        Sha256::digest(text.as_bytes()).into()
    }
}

/// Stream labels for [`derive_seed`] / [`Prng::derive`].
pub const SEED_INIT: u64 = 0;
pub const SEED_TRAIN_TRIALS: u64 = 1;
pub const SEED_HELDOUT_TRIALS: u64 = 2;
pub const SEED_FEEDBACK: u64 = 3;
pub const SEED_UPDATES: u64 = 4;
pub const SEED_GEN: u64 = 5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml_str("[train]\nepochz = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_toml_str("[bogus]\nx = 1\n").is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml_str("[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.trials_per_epoch, 64);
    }

    #[test]
    fn env_then_flags() {
        let env = vec![
            ("RECKON_TRAIN_EPOCHS".to_string(), "7".to_string()),
            ("RECKON_TRAIN_SEED".to_string(), "9".to_string()),
            ("RECKON_TASK_NAVIGATION__CUE_RATE".to_string(), "0.05".to_string()),
            ("RECKON_LEARNING_READOUT_GATE".to_string(), "pass-through".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let o = Overrides {
            seed: Some(11),
            ..Overrides::default()
        };
        let cfg = RunConfig::load(None, env, &o).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.task.navigation.cue_rate, 0.05);
        assert_eq!(cfg.learning.readout_gate, ReadoutGate::PassThrough);

        let bad = vec![("RECKON_TRAIN_NOPE".to_string(), "1".to_string())];
        assert!(RunConfig::load(None, bad, &Overrides::default()).is_err());
        let bad = vec![("RECKON_NOPE".to_string(), "1".to_string())];
        assert!(RunConfig::load(None, bad, &Overrides::default()).is_err());
    }

    #[test]
    fn per_pair_arrays_checked() {
        let mut cfg = RunConfig::default();
        cfg.network.n_rec = 4;
        cfg.network.threshold_per_pair = Some(vec![16.0, 32.0]);
        let net = cfg.network_config(40).unwrap();
        assert_eq!(net.groups[1].threshold, 32 * 256);
        cfg.network.threshold_per_pair = Some(vec![16.0]);
        assert!(cfg.network_config(40).is_err());
    }

    #[test]
    fn hash_tracks_network_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.epochs = 1;
        assert_eq!(a.network_hash(40), b.network_hash(40));
        b.network.threshold = 8.0;
        assert_ne!(a.network_hash(40), b.network_hash(40));
    }
}
