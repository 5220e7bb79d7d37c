//! Delayed-cue navigation: a sequence of left/right cues, a long silent
//! delay, then a recall window in which the network must report which side
//! received more cues.

use serde::{Deserialize, Serialize};

use super::{Event, EventStream, SupervisedTrial, Targets, TARGET_FRAC};
use crate::error::{Error, Result};
use crate::fixedpoint::Prng;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

const TRIAL_STREAM: u64 = 0x4e41_5654;

/// Channel groups in order: left cues, right cues, recall, background noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavTrialParams {
    pub n_cues: usize,
    pub cue_steps: u32,
    pub gap_steps: u32,
    pub delay_steps: u32,
    pub recall_steps: u32,
    pub n_steps: u32,
    pub channels_per_group: u16,
    pub cue_rate: f64,
    pub recall_rate: f64,
    pub noise_rate: f64,
    pub dt_us: u32,
}

impl Default for NavTrialParams {
    fn default() -> Self {
        NavTrialParams {
            n_cues: 7,
            cue_steps: 100,
            gap_steps: 50,
            delay_steps: 1100,
            recall_steps: 150,
            n_steps: 2250,
            channels_per_group: 10,
            cue_rate: 0.04,
            recall_rate: 0.04,
            noise_rate: 0.01,
            dt_us: 1000,
        }
    }
}

impl NavTrialParams {
    /// Small variant for reference-model comparisons.
    pub fn mini() -> Self {
        NavTrialParams {
            n_cues: 3,
            cue_steps: 10,
            gap_steps: 5,
            delay_steps: 40,
            recall_steps: 20,
            n_steps: 100,
            channels_per_group: 4,
            cue_rate: 0.2,
            recall_rate: 0.2,
            noise_rate: 0.02,
            dt_us: 1000,
        }
    }

    pub fn n_channels(&self) -> usize {
        4 * self.channels_per_group as usize
    }

    pub fn cue_start(&self, i: usize) -> u32 {
        i as u32 * (self.cue_steps + self.gap_steps)
    }

    pub fn recall_start(&self) -> u32 {
        self.cue_start(self.n_cues) - self.gap_steps + self.delay_steps
    }

    pub fn recall_end(&self) -> u32 {
        self.recall_start() + self.recall_steps
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cues == 0 || self.n_cues % 2 == 0 {
            return Err(Error::Config("n_cues must be odd and positive".into()));
        }
        if self.channels_per_group == 0 || self.n_channels() > u16::MAX as usize {
            return Err(Error::Config("channels_per_group out of range".into()));
        }
        if self.cue_steps == 0 || self.recall_steps == 0 {
            return Err(Error::Config("cue and recall phases must be non-empty".into()));
        }
        if self.dt_us == 0 {
            return Err(Error::Config("dt must be positive".into()));
        }
        for (name, p) in [
            ("cue_rate", self.cue_rate),
            ("recall_rate", self.recall_rate),
            ("noise_rate", self.noise_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.recall_end() > self.n_steps {
            return Err(Error::Config(format!(
                "phases need {} steps but n_steps = {}",
                self.recall_end(),
                self.n_steps
            )));
        }
        Ok(())
    }
}

/// Deterministic in `seed`, which is mixed before seeding the generator so
/// consecutive seeds give independent trials. Cue sides are drawn first, then per step and per
/// channel (ascending) one Bernoulli draw for every channel that can fire.
pub fn gen_navigation_trial(params: &NavTrialParams, seed: u32) -> Result<SupervisedTrial> {
    params.validate()?;
    let mut prng = Prng::derive(seed as u64, TRIAL_STREAM, 0);
    let sides: Vec<usize> = (0..params.n_cues)
        .map(|_| if prng.bernoulli(0.5) { RIGHT } else { LEFT })
        .collect();
    let n_right = sides.iter().filter(|&&s| s == RIGHT).count();
    let label = if 2 * n_right > params.n_cues { RIGHT } else { LEFT };

    let g = params.channels_per_group;
    let recall = params.recall_start()..params.recall_end();
    let mut events = Vec::new();
    for t in 0..params.n_steps {
        let active_cue = (0..params.n_cues).find(|&i| {
            let s = params.cue_start(i);
            (s..s + params.cue_steps).contains(&t)
        });
        let mut emit = |base: u16, rate: f64, events: &mut Vec<Event>| {
            if rate <= 0.0 {
                return;
            }
            for c in 0..g {
                if prng.bernoulli(rate) {
                    events.push(Event {
                        timestep: t,
                        channel: base + c,
                    });
                }
            }
        };
        if let Some(i) = active_cue {
            let base = if sides[i] == LEFT { 0 } else { g };
            emit(base, params.cue_rate, &mut events);
        }
        if recall.contains(&t) {
            emit(2 * g, params.recall_rate, &mut events);
        }
        emit(3 * g, params.noise_rate, &mut events);
    }

    let mut targets = Targets::empty(params.n_steps as usize, 2);
    let mut one_hot = [0i16; 2];
    one_hot[label] = 1 << TARGET_FRAC;
    for t in recall {
        targets.set(t as usize, &one_hot);
    }
    let stream = EventStream::new(events, 4 * g, params.n_steps, params.dt_us)?;
    Ok(SupervisedTrial {
        stream,
        targets,
        label,
    })
}
