//! Self-checks run by `reckon validate`: reference-model agreement,
//! rounding statistics, memory model and forward-pass regressions.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::eprop::{EligibilityTraces, EpropLearner, Feedback, LearningParams, SteLut};
use crate::fixedpoint::{add_sat_raw, stochastic_round_raw, Prng, QFormat};
use crate::oracle::{
    bptt_grads, compare, float_eprop_grads, mirrored_fidelity, EpropVariant, FloatNet, FloatTrial,
};
use crate::snn::{
    memory_report, step_lif, Decay, LifState, MemoryWidths, NetworkConfig, SnnEngine, SparsityMap,
    Weights,
};
use crate::task::{gen_navigation_trial, NavTrialParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub metrics: BTreeMap<String, f64>,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String, metrics: &[(&str, f64)]) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            detail,
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

/// Full-size (256)-256-16 memory model: learning overhead and total SRAM.
pub fn check_memory() -> CheckResult {
    let cfg = NetworkConfig::uniform(256, 256, 16, Decay::ONE, 256);
    let m = memory_report(&cfg, MemoryWidths::default(), true);
    let overhead = m.trace_overhead();
    let total_kb = m.total_bytes() as f64 / 1000.0;
    let kib = m.total_bytes() as f64 / 1024.0;
    let ok_total = (kib - 138.0).abs() <= 0.05 * 138.0;
    CheckResult::new(
        "memory",
        overhead <= 0.01 && ok_total,
        format!(
            "trace overhead {:.3}%, total {} B ({kib:.1} KiB)",
            overhead * 100.0,
            m.total_bytes()
        ),
        &[("trace_overhead", overhead), ("total_kib", kib), ("total_kb", total_kb)],
    )
}

/// Exact e-prop vs BPTT without recurrence: 10 nets of 8 neurons, 50 steps.
pub fn check_oracle_exactness() -> CheckResult {
    let mut worst = 0.0f64;
    let mut nonzero = true;
    for seed in 1..=10u32 {
        let mut net = FloatNet::random(6, 8, 2, 0.9, (0.8, 0.0, 1.0), seed);
        net.hard_sigmoid = seed % 2 == 1;
        let trial = FloatTrial::random(6, 2, 50, 0.3, 20, 1000 + seed);
        let (Ok(e), Ok(b)) = (
            float_eprop_grads(&net, &trial, EpropVariant::Exact),
            bptt_grads(&net, &trial),
        ) else {
            return CheckResult::new("oracle_exactness", false, "oracle error".into(), &[]);
        };
        nonzero &= b.iter().any(|x| x != 0.0);
        match compare(&e, &b) {
            Ok(c) => worst = worst.max(c.max_rel_err),
            Err(err) => return CheckResult::new("oracle_exactness", false, err.to_string(), &[]),
        }
    }
    CheckResult::new(
        "oracle_exactness",
        worst <= 1e-9 && nonzero,
        format!("max relative error {worst:.3e} over 10 instances"),
        &[("max_rel_err", worst)],
    )
}

/// BPTT readout gradients vs central differences.
pub fn check_finite_difference() -> CheckResult {
    let net = FloatNet::random(5, 8, 2, 0.85, (0.9, 0.4, 1.0), 21);
    let trial = FloatTrial::random(5, 2, 60, 0.3, 20, 22);
    let Ok(g) = bptt_grads(&net, &trial) else {
        return CheckResult::new("bptt_finite_difference", false, "oracle error".into(), &[]);
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for idx in 0..net.w_out.len() {
        let mut p = net.clone();
        p.w_out[idx] += h;
        let mut m = net.clone();
        m.w_out[idx] -= h;
        let fd = (p.loss(&trial).unwrap_or(f64::NAN) - m.loss(&trial).unwrap_or(f64::NAN)) / (2.0 * h);
        worst = worst.max((fd - g.d_out[idx]).abs() / g.d_out[idx].abs().max(1e-12));
    }
    CheckResult::new(
        "bptt_finite_difference",
        worst <= 1e-5,
        format!("max relative deviation {worst:.3e}"),
        &[("max_rel_err", worst)],
    )
}

/// Exact e-prop vs BPTT with weak recurrence on navigation-mini trials.
pub fn check_recurrent_cosine() -> CheckResult {
    let p = NavTrialParams::mini();
    let mut min_cos = f64::INFINITY;
    let mut sum = 0.0;
    for seed in 1..=10u32 {
        let Ok(t) = gen_navigation_trial(&p, seed) else {
            return CheckResult::new("recurrent_cosine", false, "task error".into(), &[]);
        };
        let trial = FloatTrial::from_supervised(&t);
        let mut net = FloatNet::random(16, 24, 2, 0.9, (0.6, 0.1, 1.0), seed + 7);
        net.hard_sigmoid = true;
        let c = float_eprop_grads(&net, &trial, EpropVariant::Exact)
            .and_then(|e| compare(&e, &bptt_grads(&net, &trial)?))
            .ok()
            .and_then(|c| c.cosine)
            .unwrap_or(f64::NAN);
        min_cos = min_cos.min(c);
        sum += c;
    }
    CheckResult::new(
        "recurrent_cosine",
        min_cos >= 0.85,
        format!("cosine min {min_cos:.3}, mean {:.3}", sum / 10.0),
        &[("min_cosine", min_cos), ("mean_cosine", sum / 10.0)],
    )
}

/// Engine used by the mirrored fidelity check: 16 inputs, 16 hidden.
pub fn fidelity_instance(seed: u32) -> (SnnEngine, EpropLearner) {
    let alpha = Decay::from_f64(0.9).expect("valid decay");
    let mut cfg = NetworkConfig::uniform(16, 16, 2, alpha, 256);
    cfg.hard_sigmoid = true;
    let mut prng = Prng::new(seed);
    let w = Weights::random_uniform(&cfg, 32, &mut prng);
    let learner = EpropLearner::new(
        &cfg,
        LearningParams::default(),
        SteLut::triangular(256),
        EligibilityTraces::unit(16, 16, alpha),
        Feedback::Symmetric,
        seed as u64,
    )
    .expect("valid learner");
    (SnnEngine::new(cfg, w).expect("valid engine"), learner)
}

/// Sign agreement of quantized pre-rounding updates with float modified
/// e-prop, pooled over 10 mirrored navigation-mini runs.
pub fn check_quantized_fidelity() -> CheckResult {
    let p = NavTrialParams::mini();
    let (mut agree, mut compared) = (0.0, 0usize);
    let mut worst = 1.0f64;
    for seed in 1..=10u32 {
        let (engine, learner) = fidelity_instance(seed);
        let report = gen_navigation_trial(&p, seed)
            .and_then(|t| mirrored_fidelity(&engine, &learner, &t, 0.01));
        match report {
            Ok(r) => {
                agree += r.sign_agreement * r.compared as f64;
                compared += r.compared;
                worst = worst.min(r.sign_agreement);
            }
            Err(e) => return CheckResult::new("quantized_fidelity", false, e.to_string(), &[]),
        }
    }
    let rate = agree / compared.max(1) as f64;
    CheckResult::new(
        "quantized_fidelity",
        compared > 0 && rate >= 0.95,
        format!("sign agreement {rate:.4} over {compared} entries (worst run {worst:.3})"),
        &[("sign_agreement", rate), ("entries", compared as f64), ("worst_run", worst)],
    )
}

/// Mean applied delta vs the exact value for three fractional updates.
pub fn check_rounding_unbiased() -> CheckResult {
    let frac = QFormat::UPDATE.frac_bits();
    let n = 100_000;
    let mut worst = 0.0f64;
    let mut metrics = Vec::new();
    for (i, value) in [0.75f64, -1.5, 2.25].into_iter().enumerate() {
        let raw = (value * (1u64 << frac) as f64) as i64;
        let mut prng = Prng::derive(0xD1CE, i as u64, 0);
        let sum: i64 = (0..n).map(|_| stochastic_round_raw(raw, frac, &mut prng)).sum();
        let mean = sum as f64 / n as f64;
        let rel = (mean - value).abs() / value.abs();
        worst = worst.max(rel);
        metrics.push((value, mean));
    }
    let detail = metrics
        .iter()
        .map(|(v, m)| format!("{v}: {m:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    CheckResult::new(
        "rounding_unbiased",
        worst <= 0.02,
        detail,
        &[("max_rel_dev", worst)],
    )
}

/// A neuron at 1.5·θ with no input spikes and keeps `α·0.5·θ`.
pub fn check_step_order() -> CheckResult {
    let alpha = Decay::from_f64(0.5).expect("valid decay");
    let cfg = NetworkConfig::uniform(1, 1, 1, alpha, 256);
    let mut state = LifState { v: vec![384] };
    let w = Weights::zeros(1, 1, 1);
    let out = step_lif(&cfg, &mut state, &w, &SparsityMap::new(1), &SparsityMap::new(1));
    let ok = out.spikes.get(0) && state.v[0] == alpha.apply(128);
    CheckResult::new(
        "step_order",
        ok,
        format!("spike {}, v = {}", out.spikes.get(0), state.v[0]),
        &[],
    )
}

/// Sparse event-driven integration vs a dense matrix-vector reference.
pub fn check_sparsity_equivalence() -> CheckResult {
    let bits = QFormat::MEMBRANE.total_bits();
    let mut mismatches = 0;
    for seed in 1..=5u32 {
        let alpha = Decay::from_f64(0.9).expect("valid decay");
        let cfg = NetworkConfig::uniform(16, 16, 2, alpha, 256);
        let mut prng = Prng::new(seed);
        let w = Weights::random_uniform(&cfg, 127, &mut prng);
        let mut sparse = LifState::new(16);
        let mut dense = vec![0i32; 16];
        let mut rec = SparsityMap::new(16);
        let mut rec_dense = vec![false; 16];
        for _ in 0..100 {
            let ins: Vec<usize> = (0..16).filter(|_| prng.bernoulli(0.2)).collect();
            let in_map = SparsityMap::from_indices(16, &ins).expect("in range");
            let out = step_lif(&cfg, &mut sparse, &w, &in_map, &rec);
            let mut spikes = vec![false; 16];
            for j in 0..16 {
                let mut acc = dense[j];
                for i in 0..16 {
                    acc = add_sat_raw(acc, w.input(j, i) as i32 * in_map.get(i) as i32, bits);
                }
                for i in 0..16 {
                    acc = add_sat_raw(acc, w.recurrent(j, i) as i32 * rec_dense[i] as i32, bits);
                }
                let th = cfg.group_of(j).threshold;
                if acc >= th {
                    spikes[j] = true;
                    acc -= th;
                }
                dense[j] = cfg.group_of(j).decay.apply(acc);
            }
            mismatches += (0..16).filter(|&j| sparse.v[j] != dense[j]).count();
            mismatches += (0..16).filter(|&j| out.spikes.get(j) != spikes[j]).count();
            rec = out.spikes;
            rec_dense = spikes;
        }
    }
    CheckResult::new(
        "sparsity_equivalence",
        mismatches == 0,
        format!("{mismatches} mismatches over 5 nets x 100 steps"),
        &[],
    )
}

pub fn run_all() -> ValidationReport {
    let checks = vec![
        check_step_order(),
        check_sparsity_equivalence(),
        check_memory(),
        check_rounding_unbiased(),
        check_oracle_exactness(),
        check_finite_difference(),
        check_recurrent_cosine(),
        check_quantized_fidelity(),
    ];
    ValidationReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
