//! Period plus size-threshold multiplexing of compressed packets into tunnel
//! bundles.
//!
//! Periods are aligned to the clock: period `k` covers `[k·PE, (k+1)·PE)` and
//! whatever accumulated in it leaves at `(k+1)·PE`. A bundle also leaves as
//! soon as its wire size reaches the threshold, at the arrival time of the
//! packet that pushed it over; accumulation then restarts inside the same
//! period.
//!
//! Wire size of a bundle is `CH + Σ (MH + compressed header + payload)`, where
//! CH is the common tunnel header (IP + L2TP + PPP) and MH the per-packet
//! PPPMux header.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::iphc::{CompressedRecord, Compressor, Decompressor, RefreshPolicy};
use crate::traffic::NativePacket;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MuxConfig {
    pub period_us: u64,
    pub size_threshold: u32,
    /// IPv4 (20) + L2TPv3 (4) + PPP (1).
    pub common_header: u32,
    /// PPPMux per-packet header.
    pub muxed_header: u32,
    pub mtu: u32,
}

impl MuxConfig {
    pub const DEFAULT_THRESHOLD: u32 = 1350;
    pub const DEFAULT_COMMON_HEADER: u32 = 25;
    pub const DEFAULT_MUXED_HEADER: u32 = 2;
    pub const DEFAULT_MTU: u32 = 1500;

    pub fn with_period_us(period_us: u64) -> Self {
        MuxConfig {
            period_us,
            size_threshold: Self::DEFAULT_THRESHOLD,
            common_header: Self::DEFAULT_COMMON_HEADER,
            muxed_header: Self::DEFAULT_MUXED_HEADER,
            mtu: Self::DEFAULT_MTU,
        }
    }

    pub fn with_period_ms(period_ms: u64) -> Self {
        Self::with_period_us(period_ms * 1000)
    }

    pub fn validate(&self) -> Result<()> {
        if self.period_us == 0 {
            return Err(Error::Config("multiplexing period must be positive".into()));
        }
        if self.size_threshold >= self.mtu {
            return Err(Error::Config(format!(
                "size threshold {} must be below the MTU {}",
                self.size_threshold, self.mtu
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlushCause {
    PeriodEnd,
    ThresholdReached,
}

impl FlushCause {
    pub fn as_str(self) -> &'static str {
        match self {
            FlushCause::PeriodEnd => "period",
            FlushCause::ThresholdReached => "threshold",
        }
    }
}

/// A compressed packet waiting in, or carried by, a bundle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuxEntry {
    pub record: CompressedRecord,
    pub arrival_us: u64,
    pub flow_id: u32,
}

impl MuxEntry {
    fn muxed_size(&self, cfg: &MuxConfig) -> u32 {
        cfg.muxed_header + self.record.header_len() + self.record.payload_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub send_us: u64,
    pub entries: Vec<MuxEntry>,
    pub cause: FlushCause,
    pub wire_size: u32,
}

impl Bundle {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Added delay of every member packet.
    pub fn delays_us(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(move |e| self.send_us - e.arrival_us)
    }
}

/// Streaming multiplexer for one link direction.
#[derive(Debug)]
pub struct Multiplexer {
    cfg: MuxConfig,
    pending: Vec<MuxEntry>,
    pending_size: u32,
    period_end: u64,
    last_arrival: u64,
    oversized: u64,
}

impl Multiplexer {
    pub fn new(cfg: MuxConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Multiplexer {
            cfg,
            pending: Vec::new(),
            pending_size: cfg.common_header,
            period_end: 0,
            last_arrival: 0,
            oversized: 0,
        })
    }

    /// Bundles whose wire size exceeded the MTU so far.
    pub fn oversized(&self) -> u64 {
        self.oversized
    }

    fn flush(&mut self, send_us: u64, cause: FlushCause) -> Bundle {
        let bundle = Bundle {
            send_us,
            entries: std::mem::take(&mut self.pending),
            cause,
            wire_size: self.pending_size,
        };
        if bundle.wire_size > self.cfg.mtu {
            self.oversized += 1;
        }
        self.pending_size = self.cfg.common_header;
        bundle
    }

    /// Feeds one packet; completed bundles are appended to `out`.
    ///
    /// # Panics
    ///
    /// If packets are fed out of arrival order.
    pub fn push(&mut self, entry: MuxEntry, out: &mut Vec<Bundle>) {
        assert!(
            entry.arrival_us >= self.last_arrival,
            "multiplexer input must be sorted by arrival time ({} after {})",
            entry.arrival_us,
            self.last_arrival
        );
        self.last_arrival = entry.arrival_us;

        let period_end = (entry.arrival_us / self.cfg.period_us + 1) * self.cfg.period_us;
        if !self.pending.is_empty() && period_end > self.period_end {
            out.push(self.flush(self.period_end, FlushCause::PeriodEnd));
        }
        self.period_end = period_end;

        self.pending_size += entry.muxed_size(&self.cfg);
        let arrival = entry.arrival_us;
        self.pending.push(entry);
        if self.pending_size >= self.cfg.size_threshold {
            out.push(self.flush(arrival, FlushCause::ThresholdReached));
        }
    }

    /// Sends whatever is still pending at the end of its period.
    pub fn finish(&mut self, out: &mut Vec<Bundle>) {
        if !self.pending.is_empty() {
            out.push(self.flush(self.period_end, FlushCause::PeriodEnd));
        }
    }
}

/// Multiplexes a time-sorted stream of compressed packets.
pub fn multiplex(entries: impl IntoIterator<Item = MuxEntry>, cfg: &MuxConfig) -> Result<Vec<Bundle>> {
    let mut mux = Multiplexer::new(*cfg)?;
    let mut out = Vec::new();
    for e in entries {
        mux.push(e, &mut out);
    }
    mux.finish(&mut out);
    Ok(out)
}

/// Compresses every packet of a time-sorted multi-flow stream with one
/// compressor, as the ingress end of a tunnel does.
pub fn compress_stream(packets: &[NativePacket], refresh: RefreshPolicy) -> Result<Vec<MuxEntry>> {
    let mut compressor = Compressor::new(refresh);
    packets
        .iter()
        .map(|p| {
            Ok(MuxEntry {
                record: compressor.encode(p)?,
                arrival_us: p.arrival_us,
                flow_id: p.flow_id,
            })
        })
        .collect()
}

/// A packet rebuilt at the tunnel egress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivered {
    pub packet: NativePacket,
    pub delivered_us: u64,
}

/// Rebuilds the native packets carried by `bundles`, in send order.
pub fn demultiplex(bundles: &[Bundle], decompressor: &mut Decompressor) -> Result<Vec<Delivered>> {
    let mut out = Vec::with_capacity(bundles.iter().map(Bundle::len).sum());
    for (index, bundle) in bundles.iter().enumerate() {
        for entry in &bundle.entries {
            let packet = decompressor
                .decode_packet(&entry.record, entry.arrival_us)
                .map_err(|source| Error::Demux { bundle: index, source })?;
            out.push(Delivered {
                packet,
                delivered_us: bundle.send_us,
            });
        }
    }
    Ok(out)
}

/// Bundles split by an i.i.d. loss process.
#[derive(Debug, Clone, Default)]
pub struct LossOutcome {
    pub delivered: Vec<Bundle>,
    pub dropped: Vec<Bundle>,
}

impl LossOutcome {
    pub fn packets_lost(&self) -> usize {
        self.dropped.iter().map(Bundle::len).sum()
    }

    pub fn packets_delivered(&self) -> usize {
        self.delivered.iter().map(Bundle::len).sum()
    }
}

/// Drops each bundle independently with probability `p`.
pub fn inject_bundle_loss(bundles: Vec<Bundle>, p: f64, seed: u64) -> LossOutcome {
    assert!((0.0..=1.0).contains(&p), "loss probability {p} outside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outcome = LossOutcome::default();
    for b in bundles {
        if rng.random_bool(p) {
            outcome.dropped.push(b);
        } else {
            outcome.delivered.push(b);
        }
    }
    outcome
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayStats {
    pub count: usize,
    pub mean_us: f64,
    pub stdev_us: f64,
    pub max_us: u64,
    pub bucket_us: u64,
    /// `histogram[i]` counts delays in `[i·bucket, (i+1)·bucket)`.
    pub histogram: Vec<u64>,
}

pub const DEFAULT_DELAY_BUCKET_US: u64 = 1000;

pub fn added_delay_stats(bundles: &[Bundle], bucket_us: u64) -> DelayStats {
    assert!(bucket_us > 0, "histogram bucket must be positive");
    let mut count = 0usize;
    let mut sum = 0f64;
    let mut sum_sq = 0f64;
    let mut max_us = 0;
    let mut histogram = Vec::new();
    for d in bundles.iter().flat_map(Bundle::delays_us) {
        count += 1;
        let x = d as f64;
        sum += x;
        sum_sq += x * x;
        max_us = max_us.max(d);
        let bucket = (d / bucket_us) as usize;
        if histogram.len() <= bucket {
            histogram.resize(bucket + 1, 0);
        }
        histogram[bucket] += 1;
    }
    let (mean_us, stdev_us) = if count == 0 {
        (0.0, 0.0)
    } else {
        let mean = sum / count as f64;
        (mean, (sum_sq / count as f64 - mean * mean).max(0.0).sqrt())
    };
    DelayStats {
        count,
        mean_us,
        stdev_us,
        max_us,
        bucket_us,
        histogram,
    }
}
