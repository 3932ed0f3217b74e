//! Simulation toolkit for tunneled, header-compressed and multiplexed
//! (TCM) TCP game traffic.
//!
//! The pipeline mirrors what happens on a TCM link:
//!
//! 1. [`traffic`] generates per-player TCP packet streams from a
//!    [`profile::GameProfile`];
//! 2. [`iphc`] compresses every flow's TCP/IPv4 headers against a per-flow
//!    context;
//! 3. [`mux`] blends the compressed packets of all flows into bundles using a
//!    period plus size-threshold policy and accounts for tunnel overhead;
//! 4. [`analytics`] turns native and multiplexed traces into bandwidth saving,
//!    packet rate and delay figures, next to the closed-form saving model;
//! 5. [`qoe`] maps the resulting delay and jitter to a MOS estimate.
//!
//! [`experiment`] wires the stages together and writes the CSV traces
//! described in [`trace`].

pub mod analytics;
pub mod error;
pub mod experiment;
pub mod iphc;
pub mod mux;
pub mod profile;
pub mod qoe;
pub mod trace;
pub mod traffic;

pub use error::{Error, Result};
pub use profile::{Direction, GameProfile};
pub use traffic::NativePacket;

/// TCP/IPv4 header size without options.
pub const NATIVE_HEADER_BYTES: u32 = 40;
