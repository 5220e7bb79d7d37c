//! Modified e-prop learning datapath.
//!
//! Each weight update is the product of three locally available factors:
//! the pre-synaptic eligibility trace `ē_i`, the post-synaptic learning
//! signal `LS_j` and the straight-through estimate `ψ_j` of the spike
//! derivative. Because the pre- and post-synaptic factors are fully
//! decoupled, learning state is one trace per neuron plus one buffered
//! `(LS, ψ)` pair per hidden neuron; nothing is stored per synapse.
//!
//! An update step runs in two phases:
//!
//! 1. output weights `ΔW_out[k][j] = −η_out · e_k · ē_rec[j]`, while
//!    `LS_j` and `ψ_j` are buffered;
//! 2. input/recurrent weights `ΔW[j][i] = −η · LS_j · ψ_j · ē_i`.
//!
//! Rows with `ψ_j = 0` and columns with `ē_i < θ_skip` are skipped. Every
//! surviving update lands in a Q24.16 accumulator (units of one weight LSB)
//! and is stochastically rounded onto the 8-bit grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{
    add_sat_raw, rescale_raw, saturate_raw, stochastic_round_raw, Prng, QFormat, QValue,
};
use crate::snn::{
    hard_sigmoid_passes, Decay, NetworkConfig, SnnEngine, SparsityMap, StepRecord, Weights,
    WEIGHTS_PER_WORD, WEIGHT_MAX,
};

const TRACE_BITS: u8 = QFormat::TRACE.total_bits();
const TRACE_FRAC: u8 = QFormat::TRACE.frac_bits();
const MEMBRANE_FRAC: u8 = QFormat::MEMBRANE.frac_bits();
const LS_BITS: u8 = QFormat::LEARNING_SIGNAL.total_bits();
const LS_FRAC: u8 = QFormat::LEARNING_SIGNAL.frac_bits();
const UPDATE_BITS: u8 = QFormat::UPDATE.total_bits();
const UPDATE_FRAC: u8 = QFormat::UPDATE.frac_bits();

/// STE codes are read as `code / 16`.
pub const STE_FRAC: u8 = 4;
pub const STE_MIN: i8 = -16;
pub const STE_MAX: i8 = 15;

/// Per-neuron low-pass filtered spike trains, raw [`QFormat::TRACE`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EligibilityTraces {
    pub et_in: Vec<i32>,
    pub et_rec: Vec<i32>,
    pub decay: Decay,
    /// Amount added per spike, raw trace units.
    pub spike_increment: i32,
}

impl EligibilityTraces {
    pub fn new(n_in: usize, n_rec: usize, decay: Decay, spike_increment: i32) -> Self {
        EligibilityTraces {
            et_in: vec![0; n_in],
            et_rec: vec![0; n_rec],
            decay,
            spike_increment,
        }
    }

    /// Unit increment (one spike adds 1.0).
    pub fn unit(n_in: usize, n_rec: usize, decay: Decay) -> Self {
        Self::new(n_in, n_rec, decay, 1 << TRACE_FRAC)
    }

    pub fn reset(&mut self) {
        self.et_in.fill(0);
        self.et_rec.fill(0);
    }

    pub fn storage_len(&self) -> usize {
        self.et_in.len() + self.et_rec.len()
    }
}

/// `ē ← α_et·ē + z` for the maps consumed by the current forward step.
pub fn update_traces(traces: &mut EligibilityTraces, in_map: &SparsityMap, rec_map: &SparsityMap) {
    let decay = traces.decay;
    let inc = traces.spike_increment;
    for (et, map) in [(&mut traces.et_in, in_map), (&mut traces.et_rec, rec_map)] {
        for (i, e) in et.iter_mut().enumerate() {
            let mut x = decay.apply(*e);
            if map.get(i) {
                x = add_sat_raw(x, inc, TRACE_BITS);
            }
            *e = x;
        }
    }
}

/// Programmable 5-segment, 5-bit signed pseudo-derivative over `v − θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SteLut {
    /// Segment boundaries, raw membrane units, strictly increasing.
    pub bounds: [i32; 4],
    /// Codes in `[−16, 15]`, read as `code / 16`.
    pub values: [i8; 5],
}

impl SteLut {
    pub fn new(bounds: [i32; 4], values: [i8; 5]) -> Result<Self> {
        let lut = SteLut { bounds, values };
        lut.validate()?;
        Ok(lut)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bounds.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "STE boundaries must be strictly increasing: {:?}",
                self.bounds
            )));
        }
        if self.values.iter().any(|&v| !(STE_MIN..=STE_MAX).contains(&v)) {
            return Err(Error::Config(format!(
                "STE codes must lie in [-16, 15]: {:?}",
                self.values
            )));
        }
        Ok(())
    }

    /// Triangular pseudo-derivative `max(0, 1 − |v−θ|/θ)` sampled at the
    /// centre of each of five segments split at `±θ/3` and `±θ`.
    pub fn triangular(theta_raw: i32) -> Self {
        let third = theta_raw / 3;
        let bounds = [-theta_raw, -third, third, theta_raw];
        let scale = (1i32 << STE_FRAC) as f64;
        let code = |d_over_theta: f64| -> i8 {
            let tri = (1.0 - d_over_theta.abs()).max(0.0);
            (tri * scale).round().clamp(STE_MIN as f64, STE_MAX as f64) as i8
        };
        let shoulder = code(2.0 / 3.0);
        SteLut {
            bounds,
            values: [0, shoulder, code(0.0), shoulder, 0],
        }
    }

    pub fn segment(&self, d: i32) -> usize {
        self.bounds.iter().take_while(|&&b| d >= b).count()
    }
}

/// `ψ` code for membrane `v` (pre-reset) against threshold `theta`.
#[inline]
pub fn ste_eval(lut: &SteLut, v: i32, theta: i32) -> i8 {
    lut.values[lut.segment(v - theta)]
}

/// Source of the feedback matrix `B` (`n_rec × n_out`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Feedback {
    /// `B = W_outᵀ`, re-read every update step.
    Symmetric,
    /// Frozen seeded matrix, row-major `n_rec × n_out`.
    RandomFixed(Vec<i8>),
}

impl Feedback {
    pub fn random_fixed(n_rec: usize, n_out: usize, bound: i8, prng: &mut Prng) -> Self {
        let b = bound as i32;
        Feedback::RandomFixed(
            (0..n_rec * n_out)
                .map(|_| prng.uniform_int(-b, b) as i8)
                .collect(),
        )
    }

    #[inline]
    pub fn get(&self, weights: &Weights, j: usize, k: usize) -> i8 {
        match self {
            Feedback::Symmetric => weights.output(k, j),
            Feedback::RandomFixed(b) => b[j * weights.n_out + k],
        }
    }
}

/// How the readout non-linearity gates the output error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutGate {
    /// Zero the error of an output whose hard-sigmoid is clamped.
    Saturation,
    /// Use `e_k` unconditionally.
    PassThrough,
}

/// Static learning hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LearningParams {
    /// Hidden-layer rate `η = 2^-eta_shift`.
    pub eta_shift: i8,
    /// Output-layer rate `η_out = 2^-eta_out_shift`.
    pub eta_out_shift: i8,
    /// Regularization strength, raw [`QFormat::MEMBRANE`]; 0 disables it.
    pub reg_lambda: i32,
    /// Target trace level of a hidden neuron, raw trace units.
    pub f_target: i32,
    /// Columns whose trace is below this are skipped, raw trace units.
    pub skip_threshold: i32,
    pub readout_gate: ReadoutGate,
}

impl Default for LearningParams {
    fn default() -> Self {
        LearningParams {
            eta_shift: 10,
            eta_out_shift: 4,
            reg_lambda: 0,
            f_target: 0,
            skip_threshold: 1 << (TRACE_FRAC - 6),
            readout_gate: ReadoutGate::Saturation,
        }
    }
}

/// Per-step learning inputs.
#[derive(Debug, Clone)]
pub struct LearningContext<'a> {
    /// Effective output error `e_k`, raw [`QFormat::MEMBRANE`] (gate applied).
    pub error: Vec<i32>,
    pub feedback: &'a Feedback,
    pub params: &'a LearningParams,
}

impl<'a> LearningContext<'a> {
    /// Build from raw `o − y*` errors, applying the readout gate against the
    /// internal readout values `y`.
    pub fn new(
        config: &NetworkConfig,
        raw_error: &[i32],
        readout_y: &[i32],
        feedback: &'a Feedback,
        params: &'a LearningParams,
    ) -> Self {
        let error = raw_error
            .iter()
            .zip(readout_y)
            .map(|(&e, &y)| {
                let gated = config.hard_sigmoid
                    && params.readout_gate == ReadoutGate::Saturation
                    && !hard_sigmoid_passes(y);
                if gated {
                    0
                } else {
                    e
                }
            })
            .collect();
        LearningContext {
            error,
            feedback,
            params,
        }
    }
}

/// Update counters. `applied + skipped_et + skipped_ste == candidates`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub candidates: u64,
    pub applied: u64,
    pub skipped_et: u64,
    pub skipped_ste: u64,
    /// Same partition counted on 16-weight SRAM words.
    pub word_candidates: u64,
    pub word_skipped: u64,
    /// Applied updates whose rounded delta was non-zero.
    pub nonzero_deltas: u64,
    /// Number of update steps executed.
    pub update_steps: u64,
}

impl UpdateStats {
    pub fn merge(&mut self, other: &UpdateStats) {
        self.candidates += other.candidates;
        self.applied += other.applied;
        self.skipped_et += other.skipped_et;
        self.skipped_ste += other.skipped_ste;
        self.word_candidates += other.word_candidates;
        self.word_skipped += other.word_skipped;
        self.nonzero_deltas += other.nonzero_deltas;
        self.update_steps += other.update_steps;
    }

    pub fn is_partitioned(&self) -> bool {
        self.applied + self.skipped_et + self.skipped_ste == self.candidates
    }
}

/// Fraction of candidate updates skipped by either rule.
pub fn skip_rate(stats: &UpdateStats) -> Result<f64> {
    if stats.candidates == 0 {
        return Err(Error::UndefinedRate);
    }
    Ok((stats.skipped_et + stats.skipped_ste) as f64 / stats.candidates as f64)
}

/// `LS_j = Σ_k B[j][k]·e_k + λ·(ē_rec[j] − f_target)`, raw
/// [`QFormat::LEARNING_SIGNAL`].
pub fn learning_signals(
    ctx: &LearningContext<'_>,
    weights: &Weights,
    traces: &EligibilityTraces,
) -> Vec<i32> {
    let n_out = weights.n_out;
    (0..weights.n_rec)
        .map(|j| {
            // B is integer, e is Q.8 -> product is already on the LS grid
            let mut acc: i64 = 0;
            for k in 0..n_out {
                acc += ctx.feedback.get(weights, j, k) as i64 * ctx.error[k] as i64;
            }
            if ctx.params.reg_lambda != 0 {
                let dev = traces.et_rec[j] as i64 - ctx.params.f_target as i64;
                let reg = ctx.params.reg_lambda as i64 * dev;
                acc += rescale_raw(reg, MEMBRANE_FRAC + TRACE_FRAC, LS_FRAC);
            }
            saturate_raw(acc, LS_BITS) as i64
        })
        .map(|x| x as i32)
        .collect()
}

/// Post-synaptic terms buffered between the two phases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostTerms {
    pub ste: Vec<i8>,
    /// Raw [`QFormat::LEARNING_SIGNAL`].
    pub ls: Vec<i32>,
}

impl PostTerms {
    /// `LS_j·ψ_j` with `LS_FRAC + STE_FRAC` fractional bits.
    #[inline]
    pub fn product(&self, j: usize) -> i64 {
        self.ls[j] as i64 * self.ste[j] as i64
    }
}

/// Pre-rounding update value in Q24.16 for a product with `frac` fractional
/// bits, scaled by `2^-eta_shift` and negated (gradient descent).
#[inline]
pub fn pre_rounding_delta(product: i64, frac: u8, eta_shift: i8) -> i32 {
    let total_frac = frac as i32 + eta_shift as i32;
    let neg = -product;
    let scaled = if total_frac >= UPDATE_FRAC as i32 {
        neg >> (total_frac - UPDATE_FRAC as i32).min(63)
    } else {
        neg.saturating_mul(1i64 << (UPDATE_FRAC as i32 - total_frac).min(62))
    };
    saturate_raw(scaled, UPDATE_BITS)
}

#[inline]
fn apply_delta(w: &mut i8, pre: i32, prng: &mut Prng) -> bool {
    let delta = stochastic_round_raw(pre as i64, UPDATE_FRAC, prng);
    if delta == 0 {
        return false;
    }
    let next = (*w as i64 + delta).clamp(-(WEIGHT_MAX as i64), WEIGHT_MAX as i64);
    *w = next as i8;
    true
}

/// Optional shadow record of pre-rounding updates (Q24.16 raw summed into
/// `f64`), row-major like the weights. Skipped updates contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct PreRoundingTap {
    pub d_in: Vec<f64>,
    pub d_rec: Vec<f64>,
    pub d_out: Vec<f64>,
}

impl PreRoundingTap {
    pub fn new(n_in: usize, n_rec: usize, n_out: usize) -> Self {
        PreRoundingTap {
            d_in: vec![0.0; n_rec * n_in],
            d_rec: vec![0.0; n_rec * n_rec],
            d_out: vec![0.0; n_out * n_rec],
        }
    }
}

/// Row id used to derive the PRNG stream of an output row.
fn output_row_id(n_rec: usize, k: usize) -> u64 {
    (n_rec + k) as u64
}

/// Phase 1: update `w_out`, then buffer `ψ_j` and `LS_j` for phase 2.
///
/// `ls` must be computed from the pre-update `W_out`. Rows with zero
/// effective error count as STE-skipped (the readout gate is the output's
/// pass-through estimator); columns below `θ_skip` are ET-skipped.
#[allow(clippy::too_many_arguments)]
pub fn phase1_output_updates(
    config: &NetworkConfig,
    weights: &mut Weights,
    ctx: &LearningContext<'_>,
    traces: &EligibilityTraces,
    ls: Vec<i32>,
    v_pre: &[i32],
    lut: &SteLut,
    seed: (u64, u64),
    stats: &mut UpdateStats,
    mut tap: Option<&mut PreRoundingTap>,
) -> PostTerms {
    let n_rec = config.n_rec;
    let skip = ctx.params.skip_threshold;
    let cols: Vec<usize> = (0..n_rec).filter(|&j| traces.et_rec[j] >= skip).collect();
    let words = n_rec.div_ceil(WEIGHTS_PER_WORD) as u64;
    let live_words = live_word_count(&cols, n_rec);

    for k in 0..config.n_out {
        stats.candidates += n_rec as u64;
        stats.word_candidates += words;
        let e = ctx.error[k];
        if e == 0 {
            stats.skipped_ste += n_rec as u64;
            stats.word_skipped += words;
            continue;
        }
        stats.skipped_et += (n_rec - cols.len()) as u64;
        stats.applied += cols.len() as u64;
        stats.word_skipped += words - live_words;
        let mut prng = Prng::derive(seed.0, seed.1, output_row_id(n_rec, k));
        let row = &mut weights.w_out[k * n_rec..(k + 1) * n_rec];
        for &j in &cols {
            let product = e as i64 * traces.et_rec[j] as i64;
            let pre = pre_rounding_delta(product, MEMBRANE_FRAC + TRACE_FRAC, ctx.params.eta_out_shift);
            if let Some(t) = tap.as_deref_mut() {
                t.d_out[k * n_rec + j] += pre as f64;
            }
            if apply_delta(&mut row[j], pre, &mut prng) {
                stats.nonzero_deltas += 1;
            }
        }
    }

    let ste = (0..n_rec)
        .map(|j| ste_eval(lut, v_pre[j], config.group_of(j).threshold))
        .collect();
    PostTerms { ste, ls }
}

fn live_word_count(sorted_cols: &[usize], n: usize) -> u64 {
    let mut live = vec![false; n.div_ceil(WEIGHTS_PER_WORD)];
    for &c in sorted_cols {
        live[c / WEIGHTS_PER_WORD] = true;
    }
    live.iter().filter(|&&x| x).count() as u64
}

struct RowPlan<'a> {
    in_cols: &'a [usize],
    rec_cols: &'a [usize],
    et_in: &'a [i32],
    et_rec: &'a [i32],
    eta_shift: i8,
    master: u64,
    step: u64,
}

fn update_row(
    plan: &RowPlan<'_>,
    j: usize,
    post: i64,
    row_in: &mut [i8],
    row_rec: &mut [i8],
    mut tap: Option<(&mut [f64], &mut [f64])>,
) -> u64 {
    let mut prng = Prng::derive(plan.master, plan.step, j as u64);
    let frac = LS_FRAC + STE_FRAC + TRACE_FRAC;
    let mut nonzero = 0;
    for &i in plan.in_cols {
        let pre = pre_rounding_delta(post * plan.et_in[i] as i64, frac, plan.eta_shift);
        if let Some((t_in, _)) = tap.as_mut() {
            t_in[i] += pre as f64;
        }
        nonzero += apply_delta(&mut row_in[i], pre, &mut prng) as u64;
    }
    for &i in plan.rec_cols {
        let pre = pre_rounding_delta(post * plan.et_rec[i] as i64, frac, plan.eta_shift);
        if let Some((_, t_rec)) = tap.as_mut() {
            t_rec[i] += pre as f64;
        }
        nonzero += apply_delta(&mut row_rec[i], pre, &mut prng) as u64;
    }
    nonzero
}

/// Phase 2: `ΔW[j][i] = −η·LS_j·ψ_j·ē_i` on `w_in` and `w_rec`.
///
/// Each row draws from its own stream derived from `(seed.0, seed.1, j)`,
/// so `parallel` does not change the result.
#[allow(clippy::too_many_arguments)]
pub fn phase2_hidden_updates(
    config: &NetworkConfig,
    weights: &mut Weights,
    post: &PostTerms,
    traces: &EligibilityTraces,
    params: &LearningParams,
    seed: (u64, u64),
    stats: &mut UpdateStats,
    tap: Option<&mut PreRoundingTap>,
    parallel: bool,
) {
    let (n_in, n_rec) = (config.n_in, config.n_rec);
    let skip = params.skip_threshold;
    let in_cols: Vec<usize> = (0..n_in).filter(|&i| traces.et_in[i] >= skip).collect();
    let rec_cols: Vec<usize> = (0..n_rec).filter(|&i| traces.et_rec[i] >= skip).collect();
    let live_cols = (in_cols.len() + rec_cols.len()) as u64;
    let row_len = (n_in + n_rec) as u64;
    let row_words = (n_in.div_ceil(WEIGHTS_PER_WORD) + n_rec.div_ceil(WEIGHTS_PER_WORD)) as u64;
    let live_words = live_word_count(&in_cols, n_in) + live_word_count(&rec_cols, n_rec);

    let active_rows = post.ste.iter().filter(|&&s| s != 0).count() as u64;
    let idle_rows = n_rec as u64 - active_rows;
    stats.candidates += row_len * n_rec as u64;
    stats.skipped_ste += row_len * idle_rows;
    stats.skipped_et += (row_len - live_cols) * active_rows;
    stats.applied += live_cols * active_rows;
    stats.word_candidates += row_words * n_rec as u64;
    stats.word_skipped += row_words * idle_rows + (row_words - live_words) * active_rows;

    if active_rows == 0 || live_cols == 0 {
        return;
    }

    let plan = RowPlan {
        in_cols: &in_cols,
        rec_cols: &rec_cols,
        et_in: &traces.et_in,
        et_rec: &traces.et_rec,
        eta_shift: params.eta_shift,
        master: seed.0,
        step: seed.1,
    };
    let Weights { w_in, w_rec, .. } = weights;

    let nonzero: u64 = match tap {
        Some(tap) => w_in
            .chunks_mut(n_in)
            .zip(w_rec.chunks_mut(n_rec))
            .zip(tap.d_in.chunks_mut(n_in).zip(tap.d_rec.chunks_mut(n_rec)))
            .enumerate()
            .filter(|(j, _)| post.ste[*j] != 0)
            .map(|(j, ((ri, rr), (ti, tr)))| {
                update_row(&plan, j, post.product(j), ri, rr, Some((ti, tr)))
            })
            .sum(),
        None if parallel => w_in
            .par_chunks_mut(n_in)
            .zip(w_rec.par_chunks_mut(n_rec))
            .enumerate()
            .filter(|(j, _)| post.ste[*j] != 0)
            .map(|(j, (ri, rr))| update_row(&plan, j, post.product(j), ri, rr, None))
            .sum(),
        None => w_in
            .chunks_mut(n_in)
            .zip(w_rec.chunks_mut(n_rec))
            .enumerate()
            .filter(|(j, _)| post.ste[*j] != 0)
            .map(|(j, (ri, rr))| update_row(&plan, j, post.product(j), ri, rr, None))
            .sum(),
    };
    stats.nonzero_deltas += nonzero;
}

/// Learning state attached to an [`SnnEngine`]: traces, STE table, feedback
/// and counters. Holds nothing per synapse.
#[derive(Debug, Clone)]
pub struct EpropLearner {
    pub params: LearningParams,
    pub lut: SteLut,
    pub traces: EligibilityTraces,
    pub feedback: Feedback,
    pub stats: UpdateStats,
    pub parallel: bool,
    master_seed: u64,
    update_index: u64,
}

impl EpropLearner {
    pub fn new(
        config: &NetworkConfig,
        params: LearningParams,
        lut: SteLut,
        traces: EligibilityTraces,
        feedback: Feedback,
        master_seed: u64,
    ) -> Result<Self> {
        lut.validate()?;
        if traces.et_in.len() != config.n_in || traces.et_rec.len() != config.n_rec {
            return Err(Error::Shape("trace vectors do not match network".into()));
        }
        if let Feedback::RandomFixed(b) = &feedback {
            if b.len() != config.n_rec * config.n_out {
                return Err(Error::Shape("feedback matrix must be n_rec x n_out".into()));
            }
        }
        Ok(EpropLearner {
            params,
            lut,
            traces,
            feedback,
            stats: UpdateStats::default(),
            parallel: false,
            master_seed,
            update_index: 0,
        })
    }

    pub fn reset_traces(&mut self) {
        self.traces.reset();
    }

    /// Forward-phase bookkeeping: fold the consumed maps into the traces.
    pub fn observe(&mut self, record: &StepRecord) {
        update_traces(&mut self.traces, &record.in_map, &record.rec_map);
    }

    /// Run both update phases for one supervised step. `raw_error` is
    /// `o − y*` per output, raw [`QFormat::MEMBRANE`].
    pub fn update(
        &mut self,
        engine: &mut SnnEngine,
        record: &StepRecord,
        raw_error: &[i32],
        mut tap: Option<&mut PreRoundingTap>,
    ) -> Result<()> {
        if raw_error.len() != engine.config.n_out {
            return Err(Error::Shape("error vector must have n_out entries".into()));
        }
        let seed = (self.master_seed, self.update_index);
        self.update_index += 1;
        let ctx = LearningContext::new(
            &engine.config,
            raw_error,
            &engine.readout.y,
            &self.feedback,
            &self.params,
        );
        let ls = learning_signals(&ctx, &engine.weights, &self.traces);
        let post = phase1_output_updates(
            &engine.config,
            &mut engine.weights,
            &ctx,
            &self.traces,
            ls,
            &record.lif.v_pre,
            &self.lut,
            seed,
            &mut self.stats,
            tap.as_deref_mut(),
        );
        phase2_hidden_updates(
            &engine.config,
            &mut engine.weights,
            &post,
            &self.traces,
            &self.params,
            seed,
            &mut self.stats,
            tap,
            self.parallel,
        );
        if !engine.config.allow_self_recurrence {
            engine.weights.mask_self_recurrence();
        }
        self.stats.update_steps += 1;
        Ok(())
    }

    pub fn trace_value(&self, raw: i32) -> QValue {
        QValue::saturating_from_raw(raw as i64, QFormat::TRACE)
    }
}
