//! Software emulator of a spiking recurrent neural network processor with
//! on-chip e-prop learning.
//!
//! * [`fixedpoint`]: saturating fixed-point arithmetic and the PRNG.
//! * [`snn`]: the time-stepped forward pass and SRAM memory model.
//! * [`eprop`]: eligibility traces, STE table and the two-phase update.
//! * [`task`]: address-event streams, the AEV file format and the delayed
//!   cue navigation benchmark.
//! * [`oracle`]: double-precision e-prop and BPTT references.
//! * [`harness`]: configuration, training/evaluation loops and the checks
//!   behind the `reckon` CLI.

pub mod eprop;
pub mod error;
pub mod fixedpoint;
pub mod harness;
pub mod oracle;
pub mod snn;
pub mod task;

pub use error::{Error, Result};
