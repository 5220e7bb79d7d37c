//! Double-precision reference models: e-prop and unrolled BPTT sharing the
//! engine's forward semantics and a continuous triangular pseudo-derivative.
//!
//! Forward pass, step `t` (inputs `x(t)` are the map consumed at `t`):
//!
//! ```text
//! u(t) = α·(u(t−1) − θ·z(t−1)) + W_in·x(t) + W_rec·z(t−1)
//! z(t) = [u(t) ≥ θ]
//! y(t) = α_out·(y(t−1) + W_out·z(t−1))
//! o(t) = σ(y(t))                       (hard sigmoid, optional)
//! E    = ½ Σ_t m_t Σ_k (o_k(t) − y*_k(t))²
//! ```
//!
//! The reset term is treated as a constant when differentiating.

use crate::eprop::{EpropLearner, PreRoundingTap, ReadoutGate};
use crate::error::{Error, Result};
use crate::fixedpoint::{Prng, QFormat};
use crate::snn::{NetworkConfig, SnnEngine, Weights};
use crate::task::{error_at_step, SupervisedTrial, TARGET_FRAC};

pub const MAX_ORACLE_NEURONS: usize = 32;
pub const MAX_ORACLE_STEPS: usize = 200;

const MEMBRANE_SCALE: f64 = (1u32 << QFormat::MEMBRANE.frac_bits()) as f64;
const TRACE_SCALE: f64 = (1u32 << QFormat::TRACE.frac_bits()) as f64;

/// Learning-side constants of the modified rule.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatLearning {
    pub alpha_et: f64,
    pub trace_increment: f64,
    pub reg_lambda: f64,
    pub f_target: f64,
    pub gate: ReadoutGate,
}

impl Default for FloatLearning {
    fn default() -> Self {
        FloatLearning {
            alpha_et: 0.9,
            trace_increment: 1.0,
            reg_lambda: 0.0,
            f_target: 0.0,
            gate: ReadoutGate::Saturation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatNet {
    pub n_in: usize,
    pub n_rec: usize,
    pub n_out: usize,
    /// Row-major by post-synaptic neuron, like [`Weights`].
    pub w_in: Vec<f64>,
    pub w_rec: Vec<f64>,
    pub w_out: Vec<f64>,
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
    pub alpha_out: f64,
    pub hard_sigmoid: bool,
    /// `n_rec × n_out`; `None` means `B = W_outᵀ`.
    pub feedback: Option<Vec<f64>>,
    pub learning: FloatLearning,
}

impl FloatNet {
    /// Weights uniform in `[−scale, scale]`, shared `alpha` and `θ = 1`.
    pub fn random(
        n_in: usize,
        n_rec: usize,
        n_out: usize,
        alpha: f64,
        scale: (f64, f64, f64),
        seed: u32,
    ) -> Self {
        let mut prng = Prng::new(seed);
        let mut draw = |n: usize, s: f64| -> Vec<f64> {
            (0..n)
                .map(|_| s * (2.0 * (prng.next_u32() as f64 / 4294967296.0) - 1.0))
                .collect()
        };
        let w_in = draw(n_rec * n_in, scale.0);
        let w_rec = draw(n_rec * n_rec, scale.1);
        let w_out = draw(n_out * n_rec, scale.2);
        FloatNet {
            n_in,
            n_rec,
            n_out,
            w_in,
            w_rec,
            w_out,
            alpha: vec![alpha; n_rec],
            theta: vec![1.0; n_rec],
            alpha_out: alpha,
            hard_sigmoid: false,
            feedback: None,
            learning: FloatLearning::default(),
        }
    }

    /// Real-valued copy of a quantized network. Feedback is taken in the
    /// engine's units (raw integer weights).
    pub fn mirror(config: &NetworkConfig, weights: &Weights, learner: &EpropLearner) -> Self {
        let w_scale = (1u32 << config.weight_frac_bits) as f64;
        let out_scale = (1u32 << config.out_weight_frac_bits) as f64;
        let feedback = (0..config.n_rec)
            .flat_map(|j| (0..config.n_out).map(move |k| (j, k)))
            .map(|(j, k)| learner.feedback.get(weights, j, k) as f64)
            .collect();
        let p = &learner.params;
        FloatNet {
            n_in: config.n_in,
            n_rec: config.n_rec,
            n_out: config.n_out,
            w_in: weights.w_in.iter().map(|&w| w as f64 / w_scale).collect(),
            w_rec: weights.w_rec.iter().map(|&w| w as f64 / w_scale).collect(),
            w_out: weights.w_out.iter().map(|&w| w as f64 / out_scale).collect(),
            alpha: (0..config.n_rec).map(|j| config.group_of(j).decay.to_f64()).collect(),
            theta: (0..config.n_rec)
                .map(|j| config.group_of(j).threshold as f64 / MEMBRANE_SCALE)
                .collect(),
            alpha_out: config.readout_decay.to_f64(),
            hard_sigmoid: config.hard_sigmoid,
            feedback: Some(feedback),
            learning: FloatLearning {
                alpha_et: learner.traces.decay.to_f64(),
                trace_increment: learner.traces.spike_increment as f64 / TRACE_SCALE,
                reg_lambda: p.reg_lambda as f64 / MEMBRANE_SCALE,
                f_target: p.f_target as f64 / TRACE_SCALE,
                gate: p.readout_gate,
            },
        }
    }

    fn b(&self, j: usize, k: usize) -> f64 {
        match &self.feedback {
            Some(b) => b[j * self.n_out + k],
            None => self.w_out[k * self.n_rec + j],
        }
    }

    fn check(&self, trial: &FloatTrial) -> Result<()> {
        if self.n_rec > MAX_ORACLE_NEURONS || trial.n_steps() > MAX_ORACLE_STEPS {
            return Err(Error::Contract(format!(
                "oracle limited to {MAX_ORACLE_NEURONS} neurons and {MAX_ORACLE_STEPS} steps"
            )));
        }
        if trial.x.iter().any(|x| x.len() != self.n_in)
            || trial.targets.iter().flatten().any(|y| y.len() != self.n_out)
        {
            return Err(Error::Shape("trial does not match network".into()));
        }
        Ok(())
    }

    /// Unrolled forward pass.
    pub fn forward(&self, trial: &FloatTrial) -> Result<Trajectory> {
        self.check(trial)?;
        let (n_in, n_rec, n_out) = (self.n_in, self.n_rec, self.n_out);
        let mut u_prev = vec![0.0; n_rec];
        let mut z_prev = vec![0.0; n_rec];
        let mut y = vec![0.0; n_out];
        let mut traj = Trajectory::default();
        for x in &trial.x {
            let mut u = vec![0.0; n_rec];
            for j in 0..n_rec {
                let mut acc = self.alpha[j] * (u_prev[j] - self.theta[j] * z_prev[j]);
                for i in 0..n_in {
                    acc += self.w_in[j * n_in + i] * x[i];
                }
                for i in 0..n_rec {
                    acc += self.w_rec[j * n_rec + i] * z_prev[i];
                }
                u[j] = acc;
            }
            for (k, yk) in y.iter_mut().enumerate() {
                let mut acc = *yk;
                for j in 0..n_rec {
                    acc += self.w_out[k * n_rec + j] * z_prev[j];
                }
                *yk = self.alpha_out * acc;
            }
            let z: Vec<f64> = (0..n_rec)
                .map(|j| if u[j] >= self.theta[j] { 1.0 } else { 0.0 })
                .collect();
            traj.u.push(u.clone());
            traj.z.push(z.clone());
            traj.y.push(y.clone());
            u_prev = u;
            z_prev = z;
        }
        Ok(traj)
    }

    fn output(&self, y: f64) -> f64 {
        if self.hard_sigmoid {
            (y / 4.0 + 0.5).clamp(0.0, 1.0)
        } else {
            y
        }
    }

    fn output_slope(&self, y: f64) -> f64 {
        if !self.hard_sigmoid {
            1.0
        } else if y > -2.0 && y < 2.0 {
            0.25
        } else {
            0.0
        }
    }

    /// Triangular pseudo-derivative `max(0, 1 − |u − θ|/θ)`.
    pub fn psi(&self, j: usize, u: f64) -> f64 {
        let th = self.theta[j];
        (1.0 - (u - th).abs() / th).max(0.0)
    }

    pub fn loss(&self, trial: &FloatTrial) -> Result<f64> {
        let traj = self.forward(trial)?;
        let mut e = 0.0;
        for (t, target) in trial.targets.iter().enumerate() {
            if let Some(target) = target {
                for k in 0..self.n_out {
                    let d = self.output(traj.y[t][k]) - target[k];
                    e += 0.5 * d * d;
                }
            }
        }
        Ok(e)
    }

    /// Exact output-error term `∂E/∂y_k(t)` (direct part only).
    fn direct_grad(&self, trial: &FloatTrial, traj: &Trajectory, t: usize) -> Vec<f64> {
        match &trial.targets[t] {
            Some(target) => (0..self.n_out)
                .map(|k| {
                    let y = traj.y[t][k];
                    (self.output(y) - target[k]) * self.output_slope(y)
                })
                .collect(),
            None => vec![0.0; self.n_out],
        }
    }

    /// Error as seen by the on-chip rule: gated, no slope factor.
    fn gated_error(&self, trial: &FloatTrial, traj: &Trajectory, t: usize) -> Vec<f64> {
        match &trial.targets[t] {
            Some(target) => (0..self.n_out)
                .map(|k| {
                    let y = traj.y[t][k];
                    let closed = self.hard_sigmoid
                        && self.learning.gate == ReadoutGate::Saturation
                        && !(y > -2.0 && y < 2.0);
                    if closed {
                        0.0
                    } else {
                        self.output(y) - target[k]
                    }
                })
                .collect(),
            None => vec![0.0; self.n_out],
        }
    }
}

/// Inputs consumed per step and optional per-step targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatTrial {
    pub x: Vec<Vec<f64>>,
    pub targets: Vec<Option<Vec<f64>>>,
}

impl FloatTrial {
    pub fn n_steps(&self) -> usize {
        self.x.len()
    }

    /// Events of step `t` are consumed at `t + 1`, as in the engine.
    pub fn from_supervised(trial: &SupervisedTrial) -> Self {
        let n = trial.n_steps();
        let n_in = trial.stream.n_channels as usize;
        let mut x = vec![vec![0.0; n_in]; n];
        for e in &trial.stream.events {
            let t = e.timestep as usize + 1;
            if t < n {
                x[t][e.channel as usize] = 1.0;
            }
        }
        let scale = (1u32 << TARGET_FRAC) as f64;
        let targets = (0..n)
            .map(|t| {
                trial
                    .targets
                    .at(t)
                    .map(|v| v.iter().map(|&r| r as f64 / scale).collect())
            })
            .collect();
        FloatTrial { x, targets }
    }

    /// Bernoulli inputs; the last `supervised` steps carry targets in [0, 1].
    pub fn random(
        n_in: usize,
        n_out: usize,
        n_steps: usize,
        rate: f64,
        supervised: usize,
        seed: u32,
    ) -> Self {
        let mut prng = Prng::new(seed);
        let x = (0..n_steps)
            .map(|_| {
                (0..n_in)
                    .map(|_| if prng.bernoulli(rate) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let start = n_steps.saturating_sub(supervised);
        let targets = (0..n_steps)
            .map(|t| {
                (t >= start).then(|| {
                    (0..n_out)
                        .map(|_| prng.next_u32() as f64 / 4294967296.0)
                        .collect()
                })
            })
            .collect();
        FloatTrial { x, targets }
    }
}

/// Per-step forward quantities. `u` is the membrane before reset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub u: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl Trajectory {
    fn z_prev(&self, t: usize, n_rec: usize) -> Vec<f64> {
        if t == 0 {
            vec![0.0; n_rec]
        } else {
            self.z[t - 1].clone()
        }
    }
}

/// Gradient (or update) tensors, row-major like [`Weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub n_in: usize,
    pub n_rec: usize,
    pub n_out: usize,
    pub d_in: Vec<f64>,
    pub d_rec: Vec<f64>,
    pub d_out: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n_in: usize, n_rec: usize, n_out: usize) -> Self {
        Gradients {
            n_in,
            n_rec,
            n_out,
            d_in: vec![0.0; n_rec * n_in],
            d_rec: vec![0.0; n_rec * n_rec],
            d_out: vec![0.0; n_out * n_rec],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.d_in
            .iter()
            .chain(&self.d_rec)
            .chain(&self.d_out)
            .copied()
    }

    pub fn regions(&self) -> [&[f64]; 3] {
        [&self.d_in, &self.d_rec, &self.d_out]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let m = |v: &Vec<f64>| v.iter().map(|&x| f(x)).collect();
        Gradients {
            d_in: m(&self.d_in),
            d_rec: m(&self.d_rec),
            d_out: m(&self.d_out),
            ..*self
        }
    }

    pub fn from_tap(tap: &PreRoundingTap, n_in: usize, n_rec: usize, n_out: usize) -> Self {
        Gradients {
            n_in,
            n_rec,
            n_out,
            d_in: tap.d_in.clone(),
            d_rec: tap.d_rec.clone(),
            d_out: tap.d_out.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpropVariant {
    /// Per-synapse traces filtered through the readout; equals BPTT when
    /// `W_rec = 0` and `B = W_outᵀ`.
    Exact,
    /// The on-chip factorization `LS_j·ψ_j·ē_i` with per-neuron traces.
    Modified,
}

pub fn float_eprop_grads(net: &FloatNet, trial: &FloatTrial, variant: EpropVariant) -> Result<Gradients> {
    let traj = net.forward(trial)?;
    float_eprop_on(net, trial, &traj, variant)
}

/// e-prop along a given trajectory (e.g. one recorded from the engine).
pub fn float_eprop_on(
    net: &FloatNet,
    trial: &FloatTrial,
    traj: &Trajectory,
    variant: EpropVariant,
) -> Result<Gradients> {
    net.check(trial)?;
    if traj.u.len() != trial.n_steps() {
        return Err(Error::Shape("trajectory length differs from trial".into()));
    }
    Ok(match variant {
        EpropVariant::Exact => exact_eprop(net, trial, traj),
        EpropVariant::Modified => modified_eprop(net, trial, traj),
    })
}

fn exact_eprop(net: &FloatNet, trial: &FloatTrial, traj: &Trajectory) -> Gradients {
    let (n_in, n_rec, n_out) = (net.n_in, net.n_rec, net.n_out);
    let n_pre = n_in + n_rec;
    let mut g = Gradients::zeros(n_in, n_rec, n_out);
    // ε: membrane-filtered presynaptic input; e = ψ·ε; ebar: readout-filtered e
    let mut eps = vec![0.0; n_rec * n_pre];
    let mut e_prev = vec![0.0; n_rec * n_pre];
    let mut ebar = vec![0.0; n_rec * n_pre];
    let mut zhat = vec![0.0; n_rec];
    for t in 0..trial.n_steps() {
        let z_prev = traj.z_prev(t, n_rec);
        for j in 0..n_rec {
            zhat[j] = net.alpha_out * (zhat[j] + z_prev[j]);
        }
        for idx in 0..n_rec * n_pre {
            ebar[idx] = net.alpha_out * (ebar[idx] + e_prev[idx]);
        }
        for j in 0..n_rec {
            let psi = net.psi(j, traj.u[t][j]);
            for p in 0..n_pre {
                let pre = if p < n_in { trial.x[t][p] } else { z_prev[p - n_in] };
                let idx = j * n_pre + p;
                eps[idx] = net.alpha[j] * eps[idx] + pre;
                e_prev[idx] = psi * eps[idx];
            }
        }
        let gk = net.direct_grad(trial, traj, t);
        if gk.iter().all(|&v| v == 0.0) {
            continue;
        }
        for j in 0..n_rec {
            let ls: f64 = (0..n_out).map(|k| net.b(j, k) * gk[k]).sum();
            for p in 0..n_pre {
                let v = ls * ebar[j * n_pre + p];
                if p < n_in {
                    g.d_in[j * n_in + p] += v;
                } else {
                    g.d_rec[j * n_rec + p - n_in] += v;
                }
            }
        }
        for k in 0..n_out {
            for j in 0..n_rec {
                g.d_out[k * n_rec + j] += gk[k] * zhat[j];
            }
        }
    }
    g
}

fn modified_eprop(net: &FloatNet, trial: &FloatTrial, traj: &Trajectory) -> Gradients {
    let (n_in, n_rec, n_out) = (net.n_in, net.n_rec, net.n_out);
    let l = &net.learning;
    let mut g = Gradients::zeros(n_in, n_rec, n_out);
    let mut et_in = vec![0.0; n_in];
    let mut et_rec = vec![0.0; n_rec];
    for t in 0..trial.n_steps() {
        let z_prev = traj.z_prev(t, n_rec);
        for i in 0..n_in {
            et_in[i] = l.alpha_et * et_in[i] + l.trace_increment * trial.x[t][i];
        }
        for i in 0..n_rec {
            et_rec[i] = l.alpha_et * et_rec[i] + l.trace_increment * z_prev[i];
        }
        if trial.targets[t].is_none() {
            continue;
        }
        let e = net.gated_error(trial, traj, t);
        for j in 0..n_rec {
            let mut ls: f64 = (0..n_out).map(|k| net.b(j, k) * e[k]).sum();
            ls += l.reg_lambda * (et_rec[j] - l.f_target);
            let post = ls * net.psi(j, traj.u[t][j]);
            for i in 0..n_in {
                g.d_in[j * n_in + i] += post * et_in[i];
            }
            for i in 0..n_rec {
                g.d_rec[j * n_rec + i] += post * et_rec[i];
            }
        }
        for k in 0..n_out {
            for j in 0..n_rec {
                g.d_out[k * n_rec + j] += e[k] * et_rec[j];
            }
        }
    }
    g
}

/// Reverse-mode gradient of `E` through the unrolled network.
pub fn bptt_grads(net: &FloatNet, trial: &FloatTrial) -> Result<Gradients> {
    let traj = net.forward(trial)?;
    let (n_in, n_rec, n_out) = (net.n_in, net.n_rec, net.n_out);
    let n = trial.n_steps();
    let mut g = Gradients::zeros(n_in, n_rec, n_out);
    // adjoints carried from step t+1
    let mut dy_next = vec![0.0; n_out];
    let mut du_next = vec![0.0; n_rec];
    for t in (0..n).rev() {
        let gk = net.direct_grad(trial, &traj, t);
        let dy: Vec<f64> = (0..n_out)
            .map(|k| gk[k] + net.alpha_out * dy_next[k])
            .collect();
        let mut du = vec![0.0; n_rec];
        for j in 0..n_rec {
            let mut dz = 0.0;
            for k in 0..n_out {
                dz += dy_next[k] * net.alpha_out * net.w_out[k * n_rec + j];
            }
            for i in 0..n_rec {
                dz += du_next[i] * net.w_rec[i * n_rec + j];
            }
            du[j] = net.psi(j, traj.u[t][j]) * dz + net.alpha[j] * du_next[j];
        }
        let z_prev = traj.z_prev(t, n_rec);
        for j in 0..n_rec {
            for i in 0..n_in {
                g.d_in[j * n_in + i] += du[j] * trial.x[t][i];
            }
            for i in 0..n_rec {
                g.d_rec[j * n_rec + i] += du[j] * z_prev[i];
            }
        }
        for k in 0..n_out {
            for j in 0..n_rec {
                g.d_out[k * n_rec + j] += dy[k] * net.alpha_out * z_prev[j];
            }
        }
        dy_next = dy;
        du_next = du;
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    /// `None` when either side is all zeros.
    pub cosine: Option<f64>,
    /// `None` when no entry is significant in both.
    pub sign_agreement: Option<f64>,
    /// `max|a − b| / max(max|a|, max|b|)`; 0 when both are zero.
    pub max_rel_err: f64,
    pub compared: usize,
}

fn check_shapes(a: &Gradients, b: &Gradients) -> Result<()> {
    if (a.n_in, a.n_rec, a.n_out) != (b.n_in, b.n_rec, b.n_out)
        || a.d_in.len() != b.d_in.len()
        || a.d_rec.len() != b.d_rec.len()
        || a.d_out.len() != b.d_out.len()
    {
        return Err(Error::Shape(format!(
            "({}, {}, {}) vs ({}, {}, {})",
            a.n_in, a.n_rec, a.n_out, b.n_in, b.n_rec, b.n_out
        )));
    }
    Ok(())
}

pub fn compare(a: &Gradients, b: &Gradients) -> Result<Comparison> {
    check_shapes(a, b)?;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    let (mut max_a, mut max_b, mut max_d) = (0.0f64, 0.0f64, 0.0f64);
    let (mut agree, mut compared) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
        max_a = max_a.max(x.abs());
        max_b = max_b.max(y.abs());
        max_d = max_d.max((x - y).abs());
        if x.abs() > 1e-12 && y.abs() > 1e-12 {
            compared += 1;
            agree += (x.signum() == y.signum()) as usize;
        }
    }
    let cosine = (na > 0.0 && nb > 0.0).then(|| dot / (na.sqrt() * nb.sqrt()));
    let sign_agreement = (compared > 0).then(|| agree as f64 / compared as f64);
    let scale = max_a.max(max_b);
    let max_rel_err = if scale > 0.0 { max_d / scale } else { 0.0 };
    Ok(Comparison {
        cosine,
        sign_agreement,
        max_rel_err,
        compared,
    })
}

/// Sign agreement of `a` with the reference `b` over entries where
/// `|b| ≥ rel_floor · max|b|` within the same weight region. A zero in `a`
/// counts as disagreement.
pub fn significant_sign_agreement(a: &Gradients, b: &Gradients, rel_floor: f64) -> Result<(f64, usize)> {
    check_shapes(a, b)?;
    let (mut agree, mut compared) = (0usize, 0usize);
    for (ra, rb) in a.regions().into_iter().zip(b.regions()) {
        let peak = rb.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if peak == 0.0 {
            continue;
        }
        for (x, y) in ra.iter().zip(rb) {
            if y.abs() >= rel_floor * peak {
                compared += 1;
                agree += (*x != 0.0 && x.signum() == y.signum()) as usize;
            }
        }
    }
    if compared == 0 {
        return Err(Error::UndefinedRate);
    }
    Ok((agree as f64 / compared as f64, compared))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    /// Summed pre-rounding updates of the quantized engine, in LSB units.
    pub engine: Gradients,
    /// Float modified e-prop gradient along the same trajectory.
    pub float: Gradients,
    pub sign_agreement: f64,
    pub compared: usize,
    pub cosine: Option<f64>,
}

/// Run the quantized engine on `trial` with learning frozen (weights are
/// restored after every update) and column skipping disabled, record the
/// pre-rounding updates, and compare them with float modified e-prop
/// evaluated on the engine's own spike and membrane trajectory.
pub fn mirrored_fidelity(
    engine: &SnnEngine,
    learner: &EpropLearner,
    trial: &SupervisedTrial,
    rel_floor: f64,
) -> Result<FidelityReport> {
    let cfg = engine.config.clone();
    let mut eng = engine.clone();
    eng.reset_state();
    let mut learn = learner.clone();
    learn.reset_traces();
    learn.params.skip_threshold = 0;
    let mut tap = PreRoundingTap::new(cfg.n_in, cfg.n_rec, cfg.n_out);
    let mut traj = Trajectory::default();

    let mut ftrial = FloatTrial::from_supervised(trial);
    for (t, events) in trial.stream.per_step_channels().iter().enumerate() {
        let record = eng.step(events)?;
        learn.observe(&record);
        traj.u.push(record.lif.v_pre.iter().map(|&v| v as f64 / MEMBRANE_SCALE).collect());
        traj.z.push((0..cfg.n_rec).map(|j| record.lif.spikes.get(j) as u8 as f64).collect());
        traj.y.push(eng.readout.y.iter().map(|&y| y as f64 / MEMBRANE_SCALE).collect());
        ftrial.x[t] = (0..cfg.n_in).map(|i| record.in_map.get(i) as u8 as f64).collect();
        if trial.is_supervised(t) {
            let exposed: Vec<i32> = eng.exposed_readout().iter().map(|q| q.raw()).collect();
            let err = error_at_step(&exposed, trial, t)?;
            let saved = eng.weights.clone();
            learn.update(&mut eng, &record, &err, Some(&mut tap))?;
            eng.weights = saved;
        }
    }

    let mut net = FloatNet::mirror(&cfg, &engine.weights, learner);
    // the float side sees the same targets as the engine (quantized exposed outputs aside)
    net.learning.gate = learn.params.readout_gate;
    let float = float_eprop_on(&net, &ftrial, &traj, EpropVariant::Modified)?;
    let engine_g = Gradients::from_tap(&tap, cfg.n_in, cfg.n_rec, cfg.n_out);
    let descent = float.map(|g| -g);
    let (sign_agreement, compared) = significant_sign_agreement(&engine_g, &descent, rel_floor)?;
    let cosine = compare(&engine_g, &descent)?.cosine;
    Ok(FidelityReport {
        engine: engine_g,
        float,
        sign_agreement,
        compared,
        cosine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_close(a: &Gradients, b: &Gradients, tol: f64) {
        let c = compare(a, b).unwrap();
        assert!(c.max_rel_err <= tol, "max_rel_err {}", c.max_rel_err);
    }

    #[test]
    fn compare_trivial_cases() {
        let mut a = Gradients::zeros(2, 2, 1);
        a.d_in = vec![1.0, -2.0, 0.5, 3.0];
        a.d_out = vec![0.1, -0.1];
        let c = compare(&a, &a).unwrap();
        assert!((c.cosine.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c.sign_agreement, Some(1.0));
        assert_eq!(c.max_rel_err, 0.0);

        let neg = a.map(|x| -x);
        let c = compare(&a, &neg).unwrap();
        assert!((c.cosine.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(c.sign_agreement, Some(0.0));

        let z = Gradients::zeros(2, 2, 1);
        let c = compare(&a, &z).unwrap();
        assert_eq!(c.cosine, None);
        assert_eq!(c.sign_agreement, None);

        assert!(matches!(
            compare(&a, &Gradients::zeros(3, 2, 1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_error_gives_zero_grads() {
        let net = FloatNet::random(4, 6, 2, 0.9, (1.0, 0.5, 1.0), 3);
        let mut trial = FloatTrial::random(4, 2, 40, 0.3, 0, 5);
        let traj = net.forward(&trial).unwrap();
        // targets equal to outputs on a few steps
        for t in 30..40 {
            trial.targets[t] = Some(traj.y[t].clone());
        }
        for v in [EpropVariant::Exact, EpropVariant::Modified] {
            let g = float_eprop_grads(&net, &trial, v).unwrap();
            assert!(g.iter().all(|x| x == 0.0));
        }
        assert!(bptt_grads(&net, &trial).unwrap().iter().all(|x| x == 0.0));
    }

    #[test]
    fn two_neuron_hand_calculation() {
        // one input, one hidden neuron, one output
        let mut net = FloatNet::random(1, 1, 1, 0.5, (0.0, 0.0, 0.0), 1);
        net.w_in = vec![0.8];
        net.w_out = vec![2.0];
        net.learning = FloatLearning {
            alpha_et: 0.5,
            trace_increment: 1.0,
            reg_lambda: 0.0,
            f_target: 0.0,
            gate: ReadoutGate::PassThrough,
        };
        let trial = FloatTrial {
            x: vec![vec![1.0], vec![0.0]],
            targets: vec![None, Some(vec![1.0])],
        };
        // u(0) = 0.8, u(1) = 0.4, z = 0, y(1) = 0
        // e = −1, LS = B·e = −2, ψ(0.4) = 0.4, ē_in(1) = 0.5
        let g = float_eprop_grads(&net, &trial, EpropVariant::Modified).unwrap();
        assert!((g.d_in[0] - (-2.0 * 0.4 * 0.5)).abs() < 1e-12);
        assert_eq!(g.d_out[0], 0.0);
    }

    #[test]
    fn exact_without_recurrence() {
        for seed in 1..=5u32 {
            let mut net = FloatNet::random(6, 8, 2, 0.9, (0.8, 0.0, 1.0), seed);
            net.w_rec.fill(0.0);
            net.hard_sigmoid = seed % 2 == 0;
            let trial = FloatTrial::random(6, 2, 50, 0.3, 15, seed + 100);
            let e = float_eprop_grads(&net, &trial, EpropVariant::Exact).unwrap();
            let b = bptt_grads(&net, &trial).unwrap();
            assert!(e.iter().any(|x| x != 0.0));
            rel_close(&e, &b, 1e-9);
        }
    }

    #[test]
    fn bptt_matches_finite_differences_on_readout() {
        let net = FloatNet::random(5, 8, 2, 0.85, (0.9, 0.4, 1.0), 11);
        let trial = FloatTrial::random(5, 2, 60, 0.3, 20, 12);
        let g = bptt_grads(&net, &trial).unwrap();
        let h = 1e-5;
        for idx in 0..net.w_out.len() {
            let mut p = net.clone();
            p.w_out[idx] += h;
            let mut m = net.clone();
            m.w_out[idx] -= h;
            let fd = (p.loss(&trial).unwrap() - m.loss(&trial).unwrap()) / (2.0 * h);
            let err = (fd - g.d_out[idx]).abs() / g.d_out[idx].abs().max(1e-12);
            assert!(err <= 1e-5, "entry {idx}: fd {fd} vs {}", g.d_out[idx]);
        }
    }

    #[test]
    fn recurrent_cosine_on_navigation_mini() {
        use crate::task::{gen_navigation_trial, NavTrialParams};
        let p = NavTrialParams::mini();
        for seed in 1..=10u32 {
            let trial = FloatTrial::from_supervised(&gen_navigation_trial(&p, seed).unwrap());
            let mut net = FloatNet::random(16, 24, 2, 0.9, (0.6, 0.1, 1.0), seed + 7);
            net.hard_sigmoid = true;
            let e = float_eprop_grads(&net, &trial, EpropVariant::Exact).unwrap();
            let b = bptt_grads(&net, &trial).unwrap();
            let c = compare(&e, &b).unwrap().cosine.unwrap();
            assert!(c >= 0.85, "seed {seed}: cosine {c}");
        }
    }

    #[test]
    fn oracle_scale_enforced() {
        let net = FloatNet::random(2, 33, 1, 0.9, (1.0, 1.0, 1.0), 1);
        let trial = FloatTrial::random(2, 1, 10, 0.5, 2, 1);
        assert!(bptt_grads(&net, &trial).is_err());
        let net = FloatNet::random(2, 4, 1, 0.9, (1.0, 1.0, 1.0), 1);
        let trial = FloatTrial::random(2, 1, 201, 0.5, 2, 1);
        assert!(float_eprop_grads(&net, &trial, EpropVariant::Exact).is_err());
    }
}
