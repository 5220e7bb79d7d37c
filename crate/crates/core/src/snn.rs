//! Time-stepped forward pass of the spiking RNN.
//!
//! Per timestep every LIF neuron (1) integrates the weighted input and
//! recurrent activity selected by the two binary sparsity maps, (2) checks
//! `v >= θ` and resets by subtraction, (3) applies its multiplicative leak.
//! The LI readout runs the same pipeline without fire/reset. Spikes and
//! input events only become visible through the maps at the next step.
//!
//! Units: membranes and readouts are [`QFormat::MEMBRANE`] raw integers.
//! Weights are 8-bit integers whose binary point is set per region by
//! [`NetworkConfig::weight_frac_bits`] / [`NetworkConfig::out_weight_frac_bits`].

use bitvec::prelude::*;

use crate::error::{Error, Result};
use crate::fixedpoint::{add_sat_raw, saturate_raw, Prng, QFormat, QValue};

pub const MAX_INPUTS: usize = 256;
pub const MAX_HIDDEN: usize = 256;
pub const MAX_OUTPUTS: usize = 16;

/// Largest weight magnitude; −128 is never produced.
pub const WEIGHT_MAX: i8 = 127;

/// Weights per 128-bit SRAM word.
pub const WEIGHTS_PER_WORD: usize = 16;

const MEMBRANE_BITS: u8 = QFormat::MEMBRANE.total_bits();
const MEMBRANE_FRAC: u8 = QFormat::MEMBRANE.frac_bits();

/// Leak factor in unsigned Q1.15, `0 < α ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Decay(u32);

impl Decay {
    pub const FRAC_BITS: u32 = 15;
    pub const ONE: Decay = Decay(1 << 15);

    pub fn from_raw(raw: u32) -> Result<Self> {
        if raw == 0 || raw > (1 << Self::FRAC_BITS) {
            return Err(Error::Config(format!("decay raw {raw} outside (0, 32768]")));
        }
        Ok(Decay(raw))
    }

    /// Quantize `alpha` (floor onto the 2^-15 grid).
    pub fn from_f64(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("decay {alpha} outside (0, 1]")));
        }
        let raw = (alpha * (1u32 << Self::FRAC_BITS) as f64).floor() as u32;
        Self::from_raw(raw.max(1))
    }

    /// `α = exp(−dt/τ)`.
    pub fn from_time_constant(dt_s: f64, tau_s: f64) -> Result<Self> {
        if !(dt_s > 0.0 && tau_s > 0.0) {
            return Err(Error::Config(format!(
                "time constants must be positive (dt={dt_s}, tau={tau_s})"
            )));
        }
        Self::from_f64((-dt_s / tau_s).exp())
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / (1u32 << Self::FRAC_BITS) as f64
    }

    /// `floor(x·α)` on any raw fixed-point value.
    #[inline]
    pub fn apply(self, raw: i32) -> i32 {
        ((raw as i64 * self.0 as i64) >> Self::FRAC_BITS) as i32
    }
}

/// Leak and threshold shared by one pair of LIF neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeuronGroup {
    pub decay: Decay,
    /// Threshold, raw membrane units (> 0).
    pub threshold: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    pub n_in: usize,
    pub n_rec: usize,
    pub n_out: usize,
    /// Timestep in microseconds.
    pub dt_us: u32,
    /// One entry per neuron pair: `ceil(n_rec / 2)` entries.
    pub groups: Vec<NeuronGroup>,
    pub readout_decay: Decay,
    pub hard_sigmoid: bool,
    /// Binary point of `w_in` / `w_rec` (≤ 8).
    pub weight_frac_bits: u8,
    /// Binary point of `w_out` (≤ 8).
    pub out_weight_frac_bits: u8,
    pub allow_self_recurrence: bool,
}

impl NetworkConfig {
    /// Network whose neuron pairs all share `decay` and `threshold_raw`.
    pub fn uniform(
        n_in: usize,
        n_rec: usize,
        n_out: usize,
        decay: Decay,
        threshold_raw: i32,
    ) -> Self {
        NetworkConfig {
            n_in,
            n_rec,
            n_out,
            dt_us: 1000,
            groups: vec![
                NeuronGroup {
                    decay,
                    threshold: threshold_raw,
                };
                n_rec.div_ceil(2)
            ],
            readout_decay: decay,
            hard_sigmoid: false,
            weight_frac_bits: 8,
            out_weight_frac_bits: 8,
            allow_self_recurrence: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.n_in == 0 || self.n_in > MAX_INPUTS {
            return cfg(format!("n_in {} outside 1..={MAX_INPUTS}", self.n_in));
        }
        if self.n_rec == 0 || self.n_rec > MAX_HIDDEN {
            return cfg(format!("n_rec {} outside 1..={MAX_HIDDEN}", self.n_rec));
        }
        if self.n_out == 0 || self.n_out > MAX_OUTPUTS {
            return cfg(format!("n_out {} outside 1..={MAX_OUTPUTS}", self.n_out));
        }
        if self.groups.len() != self.n_rec.div_ceil(2) {
            return cfg(format!(
                "{} neuron groups given, {} pairs needed",
                self.groups.len(),
                self.n_rec.div_ceil(2)
            ));
        }
        if let Some(g) = self.groups.iter().find(|g| g.threshold <= 0) {
            return cfg(format!("threshold must be positive, got raw {}", g.threshold));
        }
        if self.weight_frac_bits > MEMBRANE_FRAC || self.out_weight_frac_bits > MEMBRANE_FRAC {
            return cfg("weight fractional bits must be <= 8".into());
        }
        if self.dt_us == 0 {
            return cfg("dt must be positive".into());
        }
        Ok(())
    }

    #[inline]
    pub fn group_of(&self, neuron: usize) -> &NeuronGroup {
        &self.groups[neuron / 2]
    }

    pub fn dt_s(&self) -> f64 {
        self.dt_us as f64 * 1e-6
    }

    /// Left shift taking a hidden weight into membrane units.
    #[inline]
    pub fn weight_shift(&self) -> u8 {
        MEMBRANE_FRAC - self.weight_frac_bits
    }

    #[inline]
    pub fn out_weight_shift(&self) -> u8 {
        MEMBRANE_FRAC - self.out_weight_frac_bits
    }
}

/// One bit per input channel or hidden neuron.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparsityMap {
    bits: BitVec<u64, Lsb0>,
}

impl SparsityMap {
    pub fn new(len: usize) -> Self {
        SparsityMap {
            bits: bitvec![u64, Lsb0; 0; len],
        }
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut m = Self::new(len);
        for &i in indices {
            m.set(i)?;
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.not_any()
    }

    pub fn set(&mut self, index: usize) -> Result<()> {
        if index >= self.bits.len() {
            return Err(Error::Input(format!(
                "channel {index} out of range for map of {}",
                self.bits.len()
            )));
        }
        self.bits.set(index, true);
        Ok(())
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn popcount(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter_ones()
    }

    pub fn ones(&self) -> Vec<usize> {
        self.bits.iter_ones().collect()
    }

    pub fn clear(&mut self) {
        self.bits.fill(false);
    }
}

/// OR the channels of this step's events into the map for the next step.
pub fn buffer_events(map_next: &mut SparsityMap, events: &[u16]) -> Result<()> {
    for &ch in events {
        map_next.set(ch as usize)?;
    }
    Ok(())
}

/// Weight memories, row-major by post-synaptic neuron.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Weights {
    pub n_in: usize,
    pub n_rec: usize,
    pub n_out: usize,
    /// `n_rec × n_in`
    pub w_in: Vec<i8>,
    /// `n_rec × n_rec`
    pub w_rec: Vec<i8>,
    /// `n_out × n_rec`
    pub w_out: Vec<i8>,
}

impl Weights {
    pub fn zeros(n_in: usize, n_rec: usize, n_out: usize) -> Self {
        Weights {
            n_in,
            n_rec,
            n_out,
            w_in: vec![0; n_rec * n_in],
            w_rec: vec![0; n_rec * n_rec],
            w_out: vec![0; n_out * n_rec],
        }
    }

    /// Seeded uniform integers in `[-bound, bound]`, drawn in the order
    /// w_in, w_rec, w_out.
    pub fn random_uniform(config: &NetworkConfig, bound: i8, prng: &mut Prng) -> Self {
        let bound = bound.clamp(0, WEIGHT_MAX) as i32;
        let mut w = Self::zeros(config.n_in, config.n_rec, config.n_out);
        for x in w
            .w_in
            .iter_mut()
            .chain(w.w_rec.iter_mut())
            .chain(w.w_out.iter_mut())
        {
            *x = prng.uniform_int(-bound, bound) as i8;
        }
        if !config.allow_self_recurrence {
            w.mask_self_recurrence();
        }
        w
    }

    pub fn mask_self_recurrence(&mut self) {
        for j in 0..self.n_rec {
            self.w_rec[j * self.n_rec + j] = 0;
        }
    }

    pub fn check_shape(&self, config: &NetworkConfig) -> Result<()> {
        if self.n_in != config.n_in
            || self.n_rec != config.n_rec
            || self.n_out != config.n_out
            || self.w_in.len() != self.n_rec * self.n_in
            || self.w_rec.len() != self.n_rec * self.n_rec
            || self.w_out.len() != self.n_out * self.n_rec
        {
            return Err(Error::Shape(format!(
                "weights ({}, {}, {}) do not match network ({}, {}, {})",
                self.n_in, self.n_rec, self.n_out, config.n_in, config.n_rec, config.n_out
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn input(&self, post: usize, pre: usize) -> i8 {
        self.w_in[post * self.n_in + pre]
    }

    #[inline]
    pub fn recurrent(&self, post: usize, pre: usize) -> i8 {
        self.w_rec[post * self.n_rec + pre]
    }

    #[inline]
    pub fn output(&self, k: usize, pre: usize) -> i8 {
        self.w_out[k * self.n_rec + pre]
    }

    pub fn in_row(&self, post: usize) -> &[i8] {
        &self.w_in[post * self.n_in..(post + 1) * self.n_in]
    }

    pub fn rec_row(&self, post: usize) -> &[i8] {
        &self.w_rec[post * self.n_rec..(post + 1) * self.n_rec]
    }

    pub fn all(&self) -> impl Iterator<Item = i8> + '_ {
        self.w_in
            .iter()
            .chain(self.w_rec.iter())
            .chain(self.w_out.iter())
            .copied()
    }
}

/// Membrane potentials of the hidden layer, raw [`QFormat::MEMBRANE`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LifState {
    pub v: Vec<i32>,
}

impl LifState {
    pub fn new(n_rec: usize) -> Self {
        LifState { v: vec![0; n_rec] }
    }

    pub fn membrane(&self, j: usize) -> QValue {
        QValue::saturating_from_raw(self.v[j] as i64, QFormat::MEMBRANE)
    }

    pub fn reset(&mut self) {
        self.v.fill(0);
    }
}

/// Leaky-integrator readout, raw [`QFormat::MEMBRANE`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LiReadout {
    pub y: Vec<i32>,
}

impl LiReadout {
    pub fn new(n_out: usize) -> Self {
        LiReadout { y: vec![0; n_out] }
    }

    pub fn reset(&mut self) {
        self.y.fill(0);
    }

    /// Value seen by the error computation: hard-sigmoid of `y` if enabled.
    pub fn exposed(&self, config: &NetworkConfig) -> Vec<QValue> {
        self.y
            .iter()
            .map(|&y| {
                let q = QValue::saturating_from_raw(y as i64, QFormat::MEMBRANE);
                if config.hard_sigmoid {
                    hard_sigmoid(q)
                } else {
                    q
                }
            })
            .collect()
    }
}

/// `clamp(y/4 + 1/2, 0, 1)`; knees at `y = ±2`.
pub fn hard_sigmoid(y: QValue) -> QValue {
    let f = y.format();
    let one = 1i64 << f.frac_bits();
    let raw = ((y.raw() as i64) >> 2) + (one >> 1);
    QValue::saturating_from_raw(raw.clamp(0, one), f)
}

/// True when the hard-sigmoid is in its linear region (non-zero slope).
#[inline]
pub fn hard_sigmoid_passes(y_raw: i32) -> bool {
    let two = 2i32 << MEMBRANE_FRAC;
    y_raw > -two && y_raw < two
}

/// Phase (1): saturating accumulation of every selected weight, inputs then
/// recurrent, in ascending pre-synaptic order. Returns the SOP count.
pub fn integrate(
    config: &NetworkConfig,
    state: &mut LifState,
    weights: &Weights,
    in_map: &SparsityMap,
    rec_map: &SparsityMap,
) -> u64 {
    let in_ones = in_map.ones();
    let rec_ones = rec_map.ones();
    let shift = config.weight_shift();
    for (j, v) in state.v.iter_mut().enumerate() {
        let row_in = weights.in_row(j);
        let row_rec = weights.rec_row(j);
        let mut acc = *v;
        for &i in &in_ones {
            acc = add_sat_raw(acc, (row_in[i] as i32) << shift, MEMBRANE_BITS);
        }
        for &i in &rec_ones {
            acc = add_sat_raw(acc, (row_rec[i] as i32) << shift, MEMBRANE_BITS);
        }
        *v = acc;
    }
    ((in_ones.len() + rec_ones.len()) * config.n_rec) as u64
}

/// Phase (2): `v >= θ` emits a spike and subtracts `θ`.
pub fn fire(config: &NetworkConfig, state: &mut LifState) -> SparsityMap {
    let mut spikes = SparsityMap::new(config.n_rec);
    for (j, v) in state.v.iter_mut().enumerate() {
        let theta = config.group_of(j).threshold;
        if *v >= theta {
            spikes.bits.set(j, true);
            *v = saturate_raw(*v as i64 - theta as i64, MEMBRANE_BITS);
        }
    }
    spikes
}

/// Phase (3): `v ← floor(α·v)`.
pub fn decay(config: &NetworkConfig, state: &mut LifState) {
    for (j, v) in state.v.iter_mut().enumerate() {
        *v = config.group_of(j).decay.apply(*v);
    }
}

/// Result of one hidden-layer step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LifStep {
    /// Spikes emitted this step; consumed as the recurrent map next step.
    pub spikes: SparsityMap,
    /// Membranes after integration, before reset (STE operand).
    pub v_pre: Vec<i32>,
    pub sops: u64,
}

pub fn step_lif(
    config: &NetworkConfig,
    state: &mut LifState,
    weights: &Weights,
    in_map: &SparsityMap,
    rec_map: &SparsityMap,
) -> LifStep {
    let sops = integrate(config, state, weights, in_map, rec_map);
    let v_pre = state.v.clone();
    let spikes = fire(config, state);
    decay(config, state);
    LifStep {
        spikes,
        v_pre,
        sops,
    }
}

/// `y_k ← α_out·(y_k + Σ_{i∈rec_map} w_out[k][i])`. Returns readout SOPs.
pub fn step_li(
    config: &NetworkConfig,
    readout: &mut LiReadout,
    weights: &Weights,
    rec_map: &SparsityMap,
) -> u64 {
    let ones = rec_map.ones();
    let shift = config.out_weight_shift();
    for (k, y) in readout.y.iter_mut().enumerate() {
        let mut acc = *y;
        for &i in &ones {
            acc = add_sat_raw(acc, (weights.output(k, i) as i32) << shift, MEMBRANE_BITS);
        }
        *y = config.readout_decay.apply(acc);
    }
    (ones.len() * config.n_out) as u64
}

/// Bit widths of the stored quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryWidths {
    pub weight_bits: u32,
    pub trace_bits: u32,
    /// One word holds a neuron pair and its shared parameters.
    pub neuron_word_bits: u32,
    pub readout_bits: u32,
}

impl Default for MemoryWidths {
    fn default() -> Self {
        MemoryWidths {
            weight_bits: 8,
            trace_bits: QFormat::TRACE.total_bits() as u32,
            neuron_word_bits: 128,
            readout_bits: QFormat::MEMBRANE.total_bits() as u32,
        }
    }
}

/// Storage per region in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct MemoryModel {
    pub w_in_bytes: u64,
    pub w_rec_bytes: u64,
    pub w_out_bytes: u64,
    pub neuron_state_bytes: u64,
    pub readout_state_bytes: u64,
    /// Input and recurrent maps, double-buffered.
    pub sparsity_map_bytes: u64,
    /// Learning-only storage; 0 for an inference-only build.
    pub trace_bytes: u64,
}

impl MemoryModel {
    pub fn inference_bytes(&self) -> u64 {
        self.w_in_bytes
            + self.w_rec_bytes
            + self.w_out_bytes
            + self.neuron_state_bytes
            + self.readout_state_bytes
            + self.sparsity_map_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.inference_bytes() + self.trace_bytes
    }

    /// Learning storage relative to the inference-only design.
    pub fn trace_overhead(&self) -> f64 {
        self.trace_bytes as f64 / self.inference_bytes() as f64
    }
}

fn bits_to_bytes(bits: u64) -> u64 {
    bits.div_ceil(8)
}

/// SRAM footprint of `config`. Traces are per neuron (`n_in + n_rec`).
pub fn memory_report(config: &NetworkConfig, widths: MemoryWidths, learning: bool) -> MemoryModel {
    let (n_in, n_rec, n_out) = (config.n_in as u64, config.n_rec as u64, config.n_out as u64);
    let wb = widths.weight_bits as u64;
    MemoryModel {
        w_in_bytes: bits_to_bytes(n_in * n_rec * wb),
        w_rec_bytes: bits_to_bytes(n_rec * n_rec * wb),
        w_out_bytes: bits_to_bytes(n_rec * n_out * wb),
        neuron_state_bytes: bits_to_bytes(n_rec.div_ceil(2) * widths.neuron_word_bits as u64),
        readout_state_bytes: bits_to_bytes(n_out * widths.readout_bits as u64),
        sparsity_map_bytes: 2 * bits_to_bytes(n_in + n_rec),
        trace_bytes: if learning {
            bits_to_bytes((n_in + n_rec) * widths.trace_bits as u64)
        } else {
            0
        },
    }
}

/// Everything the engine consumed and produced in one step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub in_map: SparsityMap,
    pub rec_map: SparsityMap,
    pub lif: LifStep,
    pub readout_sops: u64,
}

/// Forward-only engine: weights, neuron state and the two map buffers.
#[derive(Debug, Clone)]
pub struct SnnEngine {
    pub config: NetworkConfig,
    pub weights: Weights,
    pub lif: LifState,
    pub readout: LiReadout,
    pending_in: SparsityMap,
    rec_map: SparsityMap,
}

impl SnnEngine {
    pub fn new(config: NetworkConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        weights.check_shape(&config)?;
        Ok(SnnEngine {
            lif: LifState::new(config.n_rec),
            readout: LiReadout::new(config.n_out),
            pending_in: SparsityMap::new(config.n_in),
            rec_map: SparsityMap::new(config.n_rec),
            config,
            weights,
        })
    }

    /// Clear membranes, readouts and both map buffers (trial boundary).
    pub fn reset_state(&mut self) {
        self.lif.reset();
        self.readout.reset();
        self.pending_in.clear();
        self.rec_map.clear();
    }

    /// Advance one timestep. `events` arrive during this step and are
    /// integrated at the next one.
    pub fn step(&mut self, events: &[u16]) -> Result<StepRecord> {
        let mut next_in = SparsityMap::new(self.config.n_in);
        buffer_events(&mut next_in, events)?;
        let in_map = std::mem::replace(&mut self.pending_in, next_in);
        let lif = step_lif(&self.config, &mut self.lif, &self.weights, &in_map, &self.rec_map);
        let readout_sops = step_li(&self.config, &mut self.readout, &self.weights, &self.rec_map);
        let rec_map = std::mem::replace(&mut self.rec_map, lif.spikes.clone());
        Ok(StepRecord {
            in_map,
            rec_map,
            lif,
            readout_sops,
        })
    }

    pub fn exposed_readout(&self) -> Vec<QValue> {
        self.readout.exposed(&self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THETA: i32 = 256; // 1.0

    fn cfg(n_in: usize, n_rec: usize, alpha: f64) -> NetworkConfig {
        NetworkConfig::uniform(n_in, n_rec, 2, Decay::from_f64(alpha).unwrap(), THETA)
    }

    #[test]
    fn buffer_events_is_idempotent_or() {
        let mut m = SparsityMap::new(8);
        buffer_events(&mut m, &[3, 3, 7]).unwrap();
        assert_eq!(m.ones(), vec![3, 7]);
        let before = m.clone();
        buffer_events(&mut m, &[]).unwrap();
        assert_eq!(m, before);
        assert!(buffer_events(&mut m, &[8]).is_err());
    }

    #[test]
    fn quiet_step_changes_nothing() {
        let c = cfg(4, 4, 0.9);
        let w = Weights::zeros(4, 4, 2);
        let mut s = LifState::new(4);
        let r = step_lif(&c, &mut s, &w, &SparsityMap::new(4), &SparsityMap::new(4));
        assert_eq!(s.v, vec![0; 4]);
        assert!(r.spikes.is_empty());
        assert_eq!(r.sops, 0);
    }

    #[test]
    fn weight_equal_to_threshold_fires_and_resets_to_zero() {
        let mut c = cfg(1, 2, 0.9);
        c.weight_frac_bits = 0; // weight 1 == one membrane unit
        let mut w = Weights::zeros(1, 2, 2);
        w.w_in[0] = 1;
        let mut s = LifState::new(2);
        let input = SparsityMap::from_indices(1, &[0]).unwrap();
        let r = step_lif(&c, &mut s, &w, &input, &SparsityMap::new(2));
        assert!(r.spikes.get(0));
        assert_eq!(s.v[0], 0);
        assert_eq!(r.sops, 2);
    }

    #[test]
    fn one_and_a_half_theta_fires_then_decays_remainder() {
        let alpha = Decay::from_f64(0.75).unwrap();
        let c = NetworkConfig::uniform(1, 2, 1, alpha, THETA);
        let w = Weights::zeros(1, 2, 1);
        let mut s = LifState::new(2);
        s.v[0] = THETA * 3 / 2;
        let r = step_lif(&c, &mut s, &w, &SparsityMap::new(1), &SparsityMap::new(2));
        assert!(r.spikes.get(0));
        // 0.75 * 0.5θ = 96 raw exactly
        assert_eq!(s.v[0], 96);
    }

    #[test]
    fn input_takes_effect_next_step() {
        let mut c = cfg(1, 1, 1.0);
        c.weight_frac_bits = 0;
        let mut w = Weights::zeros(1, 1, 2);
        w.w_in[0] = 1;
        let mut e = SnnEngine::new(c, w).unwrap();
        let r0 = e.step(&[0]).unwrap();
        assert!(r0.lif.spikes.is_empty());
        let r1 = e.step(&[]).unwrap();
        assert!(r1.lif.spikes.get(0));
        assert!(r1.in_map.get(0));
    }

    #[test]
    fn recurrent_spike_delayed_one_step() {
        let mut c = cfg(1, 2, 1.0);
        c.weight_frac_bits = 0;
        let mut w = Weights::zeros(1, 2, 2);
        w.w_in[0] = 1; // neuron 0 driven by the input
        w.w_rec[2] = 1; // neuron 1 <- neuron 0
        let mut e = SnnEngine::new(c, w).unwrap();
        e.step(&[0]).unwrap();
        let r1 = e.step(&[]).unwrap();
        assert_eq!(r1.lif.spikes.ones(), vec![0]);
        let r2 = e.step(&[]).unwrap();
        assert_eq!(r2.lif.spikes.ones(), vec![1]);
    }

    #[test]
    fn step_order_matters() {
        // decay-before-fire would leave a different membrane for this vector
        let alpha = Decay::from_f64(0.5).unwrap();
        let c = NetworkConfig::uniform(1, 2, 1, alpha, THETA);
        let w = Weights::zeros(1, 2, 1);
        let mut good = LifState::new(2);
        good.v[0] = 300;
        let mut bad = good.clone();
        step_lif(&c, &mut good, &w, &SparsityMap::new(1), &SparsityMap::new(2));
        decay(&c, &mut bad);
        let spikes = fire(&c, &mut bad);
        assert_eq!(good.v[0], 22);
        assert!(spikes.is_empty());
        assert_ne!(good, bad);
    }

    #[test]
    fn unit_decay_conserves_membrane() {
        let c = NetworkConfig::uniform(2, 4, 1, Decay::ONE, THETA);
        let w = Weights::zeros(2, 4, 1);
        let mut s = LifState::new(4);
        s.v = vec![-1000, -3, 17, 255];
        let before = s.clone();
        for _ in 0..100 {
            step_lif(&c, &mut s, &w, &SparsityMap::new(2), &SparsityMap::new(4));
        }
        assert_eq!(s, before);
    }

    #[test]
    fn li_pure_decay_and_integration() {
        let mut c = cfg(1, 2, 0.5);
        c.readout_decay = Decay::from_f64(0.5).unwrap();
        let w = Weights::zeros(1, 2, 2);
        let mut r = LiReadout::new(2);
        r.y = vec![400, -400];
        step_li(&c, &mut r, &w, &SparsityMap::new(2));
        assert_eq!(r.y, vec![200, -200]);

        c.readout_decay = Decay::ONE;
        let mut w = Weights::zeros(1, 2, 2);
        w.w_out[1] = 5; // k=0, pre=1
        let mut r = LiReadout::new(2);
        let map = SparsityMap::from_indices(2, &[1]).unwrap();
        for n in 1..=4 {
            step_li(&c, &mut r, &w, &map);
            assert_eq!(r.y[0], 5 * n);
        }
    }

    #[test]
    fn hard_sigmoid_points() {
        let f = QFormat::MEMBRANE;
        let hs = |x: f64| hard_sigmoid(QValue::from_f64(x, f)).to_f64();
        assert_eq!(hs(0.0), 0.5);
        assert_eq!(hs(2.0), 1.0);
        assert_eq!(hs(-2.0), 0.0);
        assert_eq!(hs(5.0), 1.0);
        assert_eq!(hs(-5.0), 0.0);
        assert_eq!(hs(1.0), 0.75);
    }

    #[test]
    fn hard_sigmoid_monotone_sweep() {
        let f = QFormat::MEMBRANE;
        let mut prev = -1.0;
        for i in 0..1024 {
            let raw = -1024 + 2 * i;
            let y = hard_sigmoid(QValue::from_raw(raw, f).unwrap()).to_f64();
            assert!(y >= prev && (0.0..=1.0).contains(&y));
            prev = y;
        }
    }

    #[test]
    fn exposed_readout_clamps_when_enabled() {
        let mut c = cfg(1, 2, 0.5);
        c.hard_sigmoid = true;
        let mut r = LiReadout::new(2);
        r.y = vec![-5 * 256, 5 * 256];
        let e = r.exposed(&c);
        assert_eq!(e[0].to_f64(), 0.0);
        assert_eq!(e[1].to_f64(), 1.0);
    }

    #[test]
    fn memory_report_full_size() {
        let c = NetworkConfig::uniform(256, 256, 16, Decay::ONE, THETA);
        let m = memory_report(&c, MemoryWidths::default(), true);
        assert_eq!(m.w_in_bytes, 64 * 1024);
        assert_eq!(m.w_rec_bytes, 64 * 1024);
        assert_eq!(m.neuron_state_bytes, 2 * 1024);
        assert_eq!(m.trace_bytes, 1024);
        assert!(m.trace_overhead() <= 0.01);
        let total_kb = m.total_bytes() as f64 / 1024.0;
        assert!((total_kb - 138.0).abs() / 138.0 <= 0.05, "{total_kb}");
        let inference = memory_report(&c, MemoryWidths::default(), false);
        assert_eq!(inference.trace_bytes, 0);
        assert_eq!(inference.inference_bytes(), m.inference_bytes());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(4, 4, 0.9);
        assert!(c.validate().is_ok());
        c.n_out = 17;
        assert!(c.validate().is_err());
        let mut c = cfg(4, 5, 0.9);
        assert_eq!(c.groups.len(), 3);
        c.groups.pop();
        assert!(c.validate().is_err());
        assert!(Decay::from_f64(0.0).is_err());
        assert!(Decay::from_f64(1.5).is_err());
    }

    #[test]
    fn self_recurrence_mask() {
        let mut c = cfg(2, 4, 0.9);
        c.allow_self_recurrence = false;
        let w = Weights::random_uniform(&c, 16, &mut Prng::new(5));
        for j in 0..4 {
            assert_eq!(w.recurrent(j, j), 0);
        }
    }
}
