//! Address-event input streams, supervised trials and the decision rule.

pub mod aev;
pub mod navigation;

pub use aev::{load_events, load_trial, store_events, store_trial};
pub use navigation::{gen_navigation_trial, NavTrialParams};

use crate::error::{Error, Result};
use crate::fixedpoint::QFormat;
use crate::snn::SparsityMap;

/// One address-event after binning: the step it lands in and its channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub timestep: u32,
    pub channel: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventStream {
    /// Sorted by timestep (stable within a step).
    pub events: Vec<Event>,
    pub n_channels: u16,
    pub n_steps: u32,
    pub dt_us: u32,
}

impl EventStream {
    pub fn new(events: Vec<Event>, n_channels: u16, n_steps: u32, dt_us: u32) -> Result<Self> {
        let s = EventStream {
            events,
            n_channels,
            n_steps,
            dt_us,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 0u32;
        for (n, e) in self.events.iter().enumerate() {
            if e.timestep >= self.n_steps {
                return Err(Error::Input(format!(
                    "event {n}: timestep {} >= n_steps {}",
                    e.timestep, self.n_steps
                )));
            }
            if e.channel >= self.n_channels {
                return Err(Error::Input(format!(
                    "event {n}: channel {} >= n_channels {}",
                    e.channel, self.n_channels
                )));
            }
            if e.timestep < prev {
                return Err(Error::Input(format!("event {n}: timestamps not sorted")));
            }
            prev = e.timestep;
        }
        Ok(())
    }

    /// Events landing in step `t`.
    pub fn events_at(&self, t: u32) -> &[Event] {
        let lo = self.events.partition_point(|e| e.timestep < t);
        let hi = self.events.partition_point(|e| e.timestep <= t);
        &self.events[lo..hi]
    }

    /// Channel lists for every step, in event order.
    pub fn per_step_channels(&self) -> Vec<Vec<u16>> {
        let mut out = vec![Vec::new(); self.n_steps as usize];
        for e in &self.events {
            out[e.timestep as usize].push(e.channel);
        }
        out
    }

    /// Bin raw microsecond timestamps into steps of `dt_us`.
    pub fn from_timestamps(
        raw: &[(u64, u16)],
        n_channels: u16,
        dt_us: u32,
        n_steps: Option<u32>,
    ) -> Result<Self> {
        if dt_us == 0 {
            return Err(Error::Config("dt must be positive".into()));
        }
        let mut events: Vec<Event> = raw
            .iter()
            .map(|&(ts, ch)| {
                let step = u32::try_from(ts / dt_us as u64)
                    .map_err(|_| Error::Input(format!("timestamp {ts} overflows step index")))?;
                Ok(Event {
                    timestep: step,
                    channel: ch,
                })
            })
            .collect::<Result<_>>()?;
        events.sort_by_key(|e| e.timestep);
        let needed = events.last().map_or(0, |e| e.timestep + 1);
        let n_steps = n_steps.unwrap_or(needed);
        Self::new(events, n_channels, n_steps, dt_us)
    }
}

/// Binary map of the channels active at step `t`.
pub fn bin_events(stream: &EventStream, t: u32) -> Result<SparsityMap> {
    if t >= stream.n_steps {
        return Err(Error::Input(format!("step {t} >= n_steps {}", stream.n_steps)));
    }
    let mut map = SparsityMap::new(stream.n_channels as usize);
    for e in stream.events_at(t) {
        map.set(e.channel as usize)?;
    }
    Ok(map)
}

/// Target fixed-point format in files and memory (Q1.14).
pub const TARGET_FRAC: u8 = 14;

/// Per-step targets with a validity mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Targets {
    pub n_out: usize,
    pub mask: Vec<bool>,
    /// `n_steps × n_out`, Q1.14 raw; zero where unmasked.
    pub values: Vec<i16>,
}

impl Targets {
    pub fn empty(n_steps: usize, n_out: usize) -> Self {
        Targets {
            n_out,
            mask: vec![false; n_steps],
            values: vec![0; n_steps * n_out],
        }
    }

    pub fn at(&self, t: usize) -> Option<&[i16]> {
        if self.mask[t] {
            Some(&self.values[t * self.n_out..(t + 1) * self.n_out])
        } else {
            None
        }
    }

    pub fn set(&mut self, t: usize, values: &[i16]) {
        self.mask[t] = true;
        self.values[t * self.n_out..(t + 1) * self.n_out].copy_from_slice(values);
    }

    /// Indices of supervised steps.
    pub fn window(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&t| self.mask[t]).collect()
    }

    /// Class implied by the targets: argmax of the summed target per output.
    pub fn implied_label(&self) -> Option<usize> {
        let window = self.window();
        if window.is_empty() {
            return None;
        }
        let mut sums = vec![0i64; self.n_out];
        for t in window {
            for (k, s) in sums.iter_mut().enumerate() {
                *s += self.values[t * self.n_out + k] as i64;
            }
        }
        Some(argmax_lowest(&sums))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SupervisedTrial {
    pub stream: EventStream,
    pub targets: Targets,
    pub label: usize,
}

impl SupervisedTrial {
    pub fn n_steps(&self) -> usize {
        self.stream.n_steps as usize
    }

    pub fn is_supervised(&self, t: usize) -> bool {
        self.targets.mask[t]
    }
}

/// `e_k = y_k − y*_k` at supervised steps, zero elsewhere. `y` is raw
/// [`QFormat::MEMBRANE`]; so is the result.
pub fn error_at_step(y: &[i32], trial: &SupervisedTrial, t: usize) -> Result<Vec<i32>> {
    if t >= trial.n_steps() {
        return Err(Error::Input(format!("step {t} outside trial")));
    }
    if y.len() != trial.targets.n_out {
        return Err(Error::Shape(format!(
            "{} readouts for {} targets",
            y.len(),
            trial.targets.n_out
        )));
    }
    let shift = TARGET_FRAC - QFormat::MEMBRANE.frac_bits();
    Ok(match trial.targets.at(t) {
        Some(target) => y
            .iter()
            .zip(target)
            .map(|(&yk, &tk)| yk - ((tk as i32) >> shift))
            .collect(),
        None => vec![0; y.len()],
    })
}

fn argmax_lowest(values: &[i64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Class with the largest mean readout over `samples` (one vector per
/// step); ties go to the lowest index.
pub fn decide(samples: &[Vec<i32>]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Contract("decision window is empty".into()))?;
    let mut sums = vec![0i64; first.len()];
    for s in samples {
        for (acc, &y) in sums.iter_mut().zip(s) {
            *acc += y as i64;
        }
    }
    Ok(argmax_lowest(&sums))
}

/// Leading part of a decision window kept for a given fraction
/// (at least one sample).
pub fn truncate_window(window_len: usize, fraction: f64) -> usize {
    let n = (window_len as f64 * fraction.clamp(0.0, 1.0)).ceil() as usize;
    n.clamp(1.min(window_len), window_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u32, c: u16) -> Event {
        Event {
            timestep: t,
            channel: c,
        }
    }

    #[test]
    fn bin_events_collapses_duplicates() {
        let s = EventStream::new(vec![ev(1, 5), ev(1, 5), ev(2, 0)], 8, 4, 1000).unwrap();
        assert!(bin_events(&s, 0).unwrap().is_empty());
        assert_eq!(bin_events(&s, 1).unwrap().ones(), vec![5]);
        assert!(bin_events(&s, 4).is_err());
    }

    #[test]
    fn stream_validation() {
        assert!(EventStream::new(vec![ev(2, 0), ev(1, 0)], 2, 4, 1000).is_err());
        assert!(EventStream::new(vec![ev(0, 2)], 2, 4, 1000).is_err());
        assert!(EventStream::new(vec![ev(4, 0)], 2, 4, 1000).is_err());
    }

    #[test]
    fn timestamp_binning() {
        let s = EventStream::from_timestamps(&[(2500, 1), (0, 0), (999, 3)], 4, 1000, None).unwrap();
        assert_eq!(s.events, vec![ev(0, 0), ev(0, 3), ev(2, 1)]);
        assert_eq!(s.n_steps, 3);
    }

    fn trial_with_window() -> SupervisedTrial {
        let stream = EventStream::new(vec![], 4, 10, 1000).unwrap();
        let mut targets = Targets::empty(10, 2);
        for t in 7..10 {
            targets.set(t, &[1 << 14, 0]);
        }
        SupervisedTrial {
            stream,
            targets,
            label: 0,
        }
    }

    #[test]
    fn error_masked_outside_window() {
        let tr = trial_with_window();
        assert_eq!(error_at_step(&[100, -50], &tr, 2).unwrap(), vec![0, 0]);
        assert_eq!(error_at_step(&[256, 0], &tr, 8).unwrap(), vec![0, 0]);
        // (0.9, 0.1) vs (1, 0) on the Q.8 grid
        let y = [230, 26];
        let e = error_at_step(&y, &tr, 8).unwrap();
        assert_eq!(e, vec![230 - 256, 26]);
        assert!(((e[0] as f64 / 256.0) + 0.1).abs() < 0.01);
        assert!(((e[1] as f64 / 256.0) - 0.1).abs() < 0.01);
    }

    #[test]
    fn decide_argmax_and_ties() {
        assert_eq!(decide(&[vec![200, 50], vec![210, 52]]).unwrap(), 0);
        assert_eq!(decide(&[vec![10, 50]]).unwrap(), 1);
        assert_eq!(decide(&[vec![7, 7]]).unwrap(), 0);
        assert!(decide(&[]).is_err());
    }

    #[test]
    fn implied_label_from_targets() {
        assert_eq!(trial_with_window().targets.implied_label(), Some(0));
        assert_eq!(Targets::empty(3, 2).implied_label(), None);
    }

    #[test]
    fn window_truncation() {
        assert_eq!(truncate_window(150, 1.0), 150);
        assert_eq!(truncate_window(150, 0.1), 15);
        assert_eq!(truncate_window(150, 0.0), 1);
    }
}
