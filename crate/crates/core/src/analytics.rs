//! Bandwidth saving model and measurements over simulated runs.
//!
//! For `E[k]` native packets per bundle, a native header of `NH` bytes, a
//! tunnel header of `CH`, a PPPMux header of `MH`, a mean payload `E[P]` and
//! a mean compressed header `E[RH]`:
//!
//! ```text
//! bytes_native = E[k] (NH + E[P])
//! bytes_mux    = CH + E[k] (MH + E[RH] + E[P])
//! BWS          = 1 - CH / (E[k] (NH + E[P])) - (MH + E[RH] + E[P]) / (NH + E[P])
//! ```
//!
//! The second term shrinks as more packets share a bundle, so the saving is
//! bounded by `1 - (MH + E[RH] + E[P]) / (NH + E[P])`.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::iphc::RefreshPolicy;
use crate::mux::{self, added_delay_stats, Bundle, DelayStats, MuxConfig};
use crate::profile::{Direction, GameProfile};
use crate::traffic::{generate_scenario, NativePacket};
use crate::NATIVE_HEADER_BYTES;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SavingsInput {
    pub packets_per_bundle: f64,
    pub native_header: f64,
    pub common_header: f64,
    pub muxed_header: f64,
    pub mean_payload: f64,
    pub reduced_header: f64,
}

impl SavingsInput {
    /// Default IPv4/L2TP/PPPMux overheads.
    pub fn tcp_ipv4(packets_per_bundle: f64, mean_payload: f64, reduced_header: f64) -> Self {
        SavingsInput {
            packets_per_bundle,
            native_header: f64::from(NATIVE_HEADER_BYTES),
            common_header: f64::from(MuxConfig::DEFAULT_COMMON_HEADER),
            muxed_header: f64::from(MuxConfig::DEFAULT_MUXED_HEADER),
            mean_payload,
            reduced_header,
        }
    }
}

/// Expected bandwidth saving. Negative when the overheads outweigh the
/// compression gain.
pub fn bws(input: &SavingsInput) -> Result<f64> {
    let native = input.native_header + input.mean_payload;
    if input.packets_per_bundle <= 0.0 {
        return Err(Error::Config("packets per bundle must be positive".into()));
    }
    if native <= 0.0 {
        return Err(Error::Config("native packet size must be positive".into()));
    }
    Ok(1.0
        - input.common_header / (input.packets_per_bundle * native)
        - (input.muxed_header + input.reduced_header + input.mean_payload) / native)
}

/// Limit of [`bws`] for an unbounded number of packets per bundle.
pub fn bws_asymptote(native_header: f64, muxed_header: f64, mean_payload: f64, reduced_header: f64) -> Result<f64> {
    let native = native_header + mean_payload;
    if native <= 0.0 {
        return Err(Error::Config("native packet size must be positive".into()));
    }
    Ok(1.0 - (muxed_header + reduced_header + mean_payload) / native)
}

/// Options for turning traces into a [`RunReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureOptions {
    /// Packet rates ignore this much simulated time after the first packet.
    pub warmup_us: u64,
    pub delay_bucket_us: u64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions {
            warmup_us: 1_000_000,
            delay_bucket_us: mux::DEFAULT_DELAY_BUCKET_US,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub n_players: usize,
    pub period_us: u64,
    pub direction: Direction,
    pub native_packets: usize,
    pub bundles: usize,
    pub native_bytes: u64,
    pub muxed_bytes: u64,
    pub native_pps: f64,
    pub muxed_pps: f64,
    pub e_k: f64,
    pub e_p: f64,
    pub e_rh: f64,
    pub bws_measured: f64,
    pub bws_analytic: f64,
    pub delay: DelayStats,
}

impl RunReport {
    pub fn reconciliation_error(&self) -> f64 {
        (self.bws_measured - self.bws_analytic).abs()
    }

    pub fn period_ms(&self) -> f64 {
        self.period_us as f64 / 1000.0
    }
}

/// Time window in which every flow is active: from the latest first packet
/// (at least `warmup_us` after the very first one) to the earliest last one.
/// Falls back to the whole trace when that window is empty.
pub fn common_window(native: &[NativePacket], warmup_us: u64) -> (u64, u64) {
    let mut spans: HashMap<u32, (u64, u64)> = HashMap::new();
    for p in native {
        spans
            .entry(p.flow_id)
            .and_modify(|s| s.1 = s.1.max(p.arrival_us))
            .or_insert((p.arrival_us, p.arrival_us));
    }
    let first = native.iter().map(|p| p.arrival_us).min().unwrap_or(0);
    let last = native.iter().map(|p| p.arrival_us).max().unwrap_or(0);
    let start = spans
        .values()
        .map(|s| s.0)
        .max()
        .unwrap_or(first)
        .max(first.saturating_add(warmup_us));
    let end = spans.values().map(|s| s.1).min().unwrap_or(last);
    if end > start {
        (start, end)
    } else {
        (first, last)
    }
}

fn rate(times: impl Iterator<Item = u64>, (start, end): (u64, u64)) -> f64 {
    if end <= start {
        return 0.0;
    }
    let n = times.filter(|t| (start..end).contains(t)).count();
    n as f64 / ((end - start) as f64 / 1e6)
}

/// Measures one multiplexed run against the native trace it came from.
pub fn measure_run(
    native: &[NativePacket],
    bundles: &[Bundle],
    cfg: &MuxConfig,
    n_players: usize,
    direction: Direction,
    opts: &MeasureOptions,
) -> Result<RunReport> {
    let carried: usize = bundles.iter().map(Bundle::len).sum();
    if carried != native.len() {
        return Err(Error::Integrity(format!(
            "{} native packets but bundles carry {carried}",
            native.len()
        )));
    }
    if native.is_empty() {
        return Err(Error::Integrity("empty trace".into()));
    }

    let n = native.len() as f64;
    let native_bytes: u64 = native.iter().map(|p| u64::from(p.wire_size())).sum();
    let muxed_bytes: u64 = bundles.iter().map(|b| u64::from(b.wire_size)).sum();
    let payload: u64 = native.iter().map(|p| u64::from(p.payload_len)).sum();
    let headers: u64 = bundles
        .iter()
        .flat_map(|b| &b.entries)
        .map(|e| u64::from(e.record.header_len()))
        .sum();

    let e_k = n / bundles.len() as f64;
    let e_p = payload as f64 / n;
    let e_rh = headers as f64 / n;
    let analytic = bws(&SavingsInput {
        packets_per_bundle: e_k,
        native_header: f64::from(NATIVE_HEADER_BYTES),
        common_header: f64::from(cfg.common_header),
        muxed_header: f64::from(cfg.muxed_header),
        mean_payload: e_p,
        reduced_header: e_rh,
    })?;

    let window = common_window(native, opts.warmup_us);
    Ok(RunReport {
        n_players,
        period_us: cfg.period_us,
        direction,
        native_packets: native.len(),
        bundles: bundles.len(),
        native_bytes,
        muxed_bytes,
        native_pps: rate(native.iter().map(|p| p.arrival_us), window),
        muxed_pps: rate(bundles.iter().map(|b| b.send_us), window),
        e_k,
        e_p,
        e_rh,
        bws_measured: 1.0 - muxed_bytes as f64 / native_bytes as f64,
        bws_analytic: analytic,
        delay: added_delay_stats(bundles, opts.delay_bucket_us),
    })
}

/// Grid of runs shared by [`sweep`].
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub players: Vec<usize>,
    pub periods_us: Vec<u64>,
    pub packets_per_player: usize,
    pub seed: u64,
    /// Period is overridden per cell.
    pub mux: MuxConfig,
    pub refresh: RefreshPolicy,
    pub measure: MeasureOptions,
}

/// Runs every (players, period) cell; rows come out players-major, each in
/// the order given.
pub fn sweep(profile: &GameProfile, direction: Direction, spec: &SweepSpec) -> Result<Vec<RunReport>> {
    if spec.players.is_empty() || spec.periods_us.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one player count and one period".into(),
        ));
    }
    for &period_us in &spec.periods_us {
        MuxConfig { period_us, ..spec.mux }.validate()?;
    }
    let per_players: Vec<Vec<RunReport>> = spec
        .players
        .par_iter()
        .map(|&players| {
            let native = generate_scenario(profile, direction, players, spec.packets_per_player, spec.seed)?;
            let compressed = mux::compress_stream(&native, spec.refresh)?;
            spec.periods_us
                .par_iter()
                .map(|&period_us| {
                    let cfg = MuxConfig { period_us, ..spec.mux };
                    let bundles = mux::multiplex(compressed.iter().cloned(), &cfg)?;
                    measure_run(&native, &bundles, &cfg, players, direction, &spec.measure)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_players.into_iter().flatten().collect())
}
