//! AEV binary event files (little-endian).
//!
//! ```text
//! header  16 B   "AEV1" | n_channels u16 | n_out u16 | n_steps u32 | dt_us u32
//! events  6 B*   timestep u32 | channel u16          (sorted by timestep)
//! targets        "TGT1" then 7 B* step u32 | k u8 | value i16 (Q1.14)
//! ```
//!
//! The target section is optional. Records are sorted by `(step, k)` and a
//! supervised step carries all `n_out` values.

use std::fs;
use std::path::Path;

use super::{Event, EventStream, SupervisedTrial, Targets};
use crate::error::{Error, Result};

pub const EVENT_MAGIC: &[u8; 4] = b"AEV1";
pub const TARGET_MAGIC: &[u8; 4] = b"TGT1";
pub const HEADER_LEN: usize = 16;
const EVENT_LEN: usize = 6;
const TARGET_LEN: usize = 7;

/// Largest `n_steps` for which an event record can never be mistaken for
/// the target marker.
const MAX_STEPS: u32 = u32::from_le_bytes(*TARGET_MAGIC);

/// Decoded file contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AevFile {
    pub stream: EventStream,
    pub n_out: u16,
    pub targets: Option<Targets>,
}

pub fn encode(stream: &EventStream, targets: Option<&Targets>) -> Result<Vec<u8>> {
    stream.validate()?;
    if stream.n_steps > MAX_STEPS {
        return Err(Error::Input(format!("n_steps {} too large for AEV", stream.n_steps)));
    }
    let n_out = targets.map_or(0, |t| t.n_out);
    let n_out = u16::try_from(n_out).map_err(|_| Error::Input("n_out exceeds u16".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + stream.events.len() * EVENT_LEN);
    buf.extend_from_slice(EVENT_MAGIC);
    buf.extend_from_slice(&stream.n_channels.to_le_bytes());
    buf.extend_from_slice(&n_out.to_le_bytes());
    buf.extend_from_slice(&stream.n_steps.to_le_bytes());
    buf.extend_from_slice(&stream.dt_us.to_le_bytes());
    for e in &stream.events {
        buf.extend_from_slice(&e.timestep.to_le_bytes());
        buf.extend_from_slice(&e.channel.to_le_bytes());
    }
    if let Some(t) = targets {
        if t.mask.len() != stream.n_steps as usize {
            return Err(Error::Shape("target mask length must equal n_steps".into()));
        }
        buf.extend_from_slice(TARGET_MAGIC);
        for step in t.window() {
            for k in 0..t.n_out {
                buf.extend_from_slice(&(step as u32).to_le_bytes());
                buf.push(k as u8);
                buf.extend_from_slice(&t.values[step * t.n_out + k].to_le_bytes());
            }
        }
    }
    Ok(buf)
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode(bytes: &[u8]) -> Result<AevFile> {
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != EVENT_MAGIC {
        return Err(parse_err(0, "bad magic, expected AEV1"));
    }
    let n_channels = u16_at(bytes, 4);
    let n_out = u16_at(bytes, 6);
    let n_steps = u32_at(bytes, 8);
    let dt_us = u32_at(bytes, 12);
    if n_steps > MAX_STEPS {
        return Err(parse_err(8, format!("n_steps {n_steps} too large")));
    }

    let mut pos = HEADER_LEN;
    let mut events = Vec::with_capacity((bytes.len() - HEADER_LEN) / EVENT_LEN);
    let mut prev = 0u32;
    let mut has_targets = false;
    while pos < bytes.len() {
        if bytes.len() - pos >= 4 && &bytes[pos..pos + 4] == TARGET_MAGIC {
            has_targets = true;
            pos += 4;
            break;
        }
        if bytes.len() - pos < EVENT_LEN {
            return Err(parse_err(pos, "truncated event record"));
        }
        let timestep = u32_at(bytes, pos);
        let channel = u16_at(bytes, pos + 4);
        if timestep >= n_steps {
            return Err(parse_err(pos, format!("timestep {timestep} >= n_steps {n_steps}")));
        }
        if channel >= n_channels {
            return Err(parse_err(pos, format!("channel {channel} >= n_channels {n_channels}")));
        }
        if timestep < prev {
            return Err(parse_err(pos, "events not sorted by timestep"));
        }
        prev = timestep;
        events.push(Event { timestep, channel });
        pos += EVENT_LEN;
    }
    let stream = EventStream {
        events,
        n_channels,
        n_steps,
        dt_us,
    };

    let targets = if has_targets {
        Some(decode_targets(bytes, pos, n_steps, n_out)?)
    } else {
        None
    };
    Ok(AevFile {
        stream,
        n_out,
        targets,
    })
}

fn decode_targets(bytes: &[u8], mut pos: usize, n_steps: u32, n_out: u16) -> Result<Targets> {
    if n_out == 0 {
        return Err(parse_err(pos, "target section present but n_out = 0"));
    }
    let n_out_us = n_out as usize;
    let mut targets = Targets::empty(n_steps as usize, n_out_us);
    let mut expect_k = 0usize;
    let mut current: Option<u32> = None;
    while pos < bytes.len() {
        if bytes.len() - pos < TARGET_LEN {
            return Err(parse_err(pos, "truncated target record"));
        }
        let step = u32_at(bytes, pos);
        let k = bytes[pos + 4] as usize;
        let value = i16::from_le_bytes([bytes[pos + 5], bytes[pos + 6]]);
        if step >= n_steps {
            return Err(parse_err(pos, format!("target step {step} >= n_steps {n_steps}")));
        }
        if k >= n_out_us {
            return Err(parse_err(pos, format!("target output {k} >= n_out {n_out}")));
        }
        match current {
            Some(s) if s == step => {
                if k != expect_k {
                    return Err(parse_err(pos, "target records out of order"));
                }
            }
            prev => {
                if prev.is_some_and(|s| step <= s) || expect_k != 0 || k != 0 {
                    return Err(parse_err(pos, "target rows must be sorted and complete"));
                }
                current = Some(step);
                targets.mask[step as usize] = true;
            }
        }
        targets.values[step as usize * n_out_us + k] = value;
        expect_k = (k + 1) % n_out_us;
        pos += TARGET_LEN;
    }
    if expect_k != 0 {
        return Err(parse_err(pos, "incomplete final target row"));
    }
    Ok(targets)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_events(path: impl AsRef<Path>) -> Result<EventStream> {
    Ok(decode(&read(path.as_ref())?)?.stream)
}

pub fn store_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode(stream, None)?)
}

pub fn load_trial(path: impl AsRef<Path>) -> Result<SupervisedTrial> {
    let path = path.as_ref();
    let file = decode(&read(path)?)?;
    let targets = file.targets.ok_or_else(|| {
        Error::Input(format!("{} has no target section", path.display()))
    })?;
    let label = targets
        .implied_label()
        .ok_or_else(|| Error::Input(format!("{} has no supervised steps", path.display())))?;
    Ok(SupervisedTrial {
        stream: file.stream,
        targets,
        label,
    })
}

pub fn store_trial(trial: &SupervisedTrial, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode(&trial.stream, Some(&trial.targets))?)
}
