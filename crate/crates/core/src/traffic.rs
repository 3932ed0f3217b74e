//! Synthetic per-player TCP streams.
//!
//! Generation runs in three stages: APDUs and their inter-arrival times are
//! drawn from the profile, APDUs larger than the MSS are segmented into a
//! back-to-back burst, and payload-less ACKs are injected as an independent
//! stream. Header fields then evolve packet by packet: the sequence number
//! advances by the payload sent, the IP-ID by one, and window and
//! acknowledgement deltas follow the profile's
//! [`FieldDeltaModel`](crate::iphc::FieldDeltaModel).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Weibull};

use crate::error::{Error, Result};
use crate::iphc::{ChangeProbabilities, FieldChange, MAX_FLOW_ID};
use crate::profile::{ApduSizes, Direction, DirectionProfile, GameProfile, InterArrivalMixture};
use crate::NATIVE_HEADER_BYTES;

/// Spacing between the segments of one APDU burst.
pub const BURST_SPACING_US: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NativePacket {
    pub arrival_us: u64,
    pub direction: Direction,
    pub flow_id: u32,
    pub payload_len: u32,
    pub push: bool,
    pub seq: u32,
    pub ack: u32,
    pub window: u16,
    pub ipid: u16,
}

impl NativePacket {
    pub fn is_pure_ack(&self) -> bool {
        self.payload_len == 0
    }

    pub fn wire_size(&self) -> u32 {
        self.payload_len + NATIVE_HEADER_BYTES
    }
}

/// Splits an APDU into MSS-sized segments; only the last may be shorter.
pub fn fragment_apdu(apdu_len: u32, mss: u32) -> Vec<u32> {
    assert!(apdu_len > 0 && mss > 0, "APDU length and MSS must be positive");
    let full = apdu_len / mss;
    let rest = apdu_len % mss;
    let mut out = vec![mss; full as usize];
    if rest > 0 {
        out.push(rest);
    }
    out
}

fn sample_mixture<R: Rng + ?Sized>(mix: &InterArrivalMixture, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let band = mix
        .bands
        .iter()
        .find(|b| {
            acc += b.weight;
            u < acc
        })
        .unwrap_or_else(|| mix.bands.last().expect("validated mixture is non-empty"));
    rng.random_range(band.lo..band.hi)
}

fn to_us(seconds: f64) -> u64 {
    (seconds * 1e6).round() as u64
}

enum ApduSampler {
    Discrete { sizes: Vec<u32>, cumulative: Vec<f64> },
    Weibull(Weibull<f64>),
}

impl ApduSampler {
    fn new(apdu: &ApduSizes) -> Self {
        match apdu {
            ApduSizes::Discrete { sizes } => {
                let mut acc = 0.0;
                ApduSampler::Discrete {
                    sizes: sizes.iter().map(|&(s, _)| s).collect(),
                    cumulative: sizes
                        .iter()
                        .map(|&(_, p)| {
                            acc += p;
                            acc
                        })
                        .collect(),
                }
            }
            ApduSizes::Weibull { shape, scale } => {
                ApduSampler::Weibull(Weibull::new(*scale, *shape).expect("validated Weibull"))
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            ApduSampler::Discrete { sizes, cumulative } => {
                let u: f64 = rng.random();
                let i = cumulative.iter().position(|&c| u < c).unwrap_or(sizes.len() - 1);
                sizes[i]
            }
            ApduSampler::Weibull(w) => w.sample(rng).ceil().clamp(1.0, f64::from(u32::MAX)) as u32,
        }
    }
}

/// Lazily generated packet stream of one player's flow in one direction.
pub struct FlowGenerator {
    rng: ChaCha8Rng,
    direction: Direction,
    flow_id: u32,
    mss: u32,
    apdu: ApduSampler,
    data_gaps: InterArrivalMixture,
    ack_gaps: Option<InterArrivalMixture>,
    window_change: ChangeProbabilities,
    ack_change: ChangeProbabilities,
    next_apdu_us: u64,
    next_ack_us: u64,
    burst: VecDeque<(u64, u32)>,
    last_time: u64,
    seq: u32,
    ack: u32,
    window: u16,
    ipid: u16,
    started: bool,
}

impl FlowGenerator {
    pub fn new(profile: &GameProfile, direction: Direction, flow_id: u32, seed: u64) -> Result<Self> {
        profile.validate()?;
        if flow_id > MAX_FLOW_ID {
            return Err(Error::Config(format!("flow id {flow_id} exceeds {MAX_FLOW_ID}")));
        }
        Ok(Self::from_validated(profile, direction, flow_id, seed))
    }

    fn from_validated(profile: &GameProfile, direction: Direction, flow_id: u32, seed: u64) -> Self {
        let dp: &DirectionProfile = profile.direction(direction);
        let fields = profile.field_model.direction(direction);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(flow_id));

        let ack_gaps = (dp.ack_ratio > 0.0).then(|| {
            let mean = 1.0 / dp.ack_rate();
            dp.interarrival.scaled(mean / dp.interarrival.mean())
        });

        let seq = rng.random();
        let ack = rng.random();
        let window = rng.random();
        let ipid = rng.random();
        let mut gen = FlowGenerator {
            direction,
            flow_id,
            mss: profile.mss,
            apdu: ApduSampler::new(&dp.apdu),
            data_gaps: dp.interarrival.clone(),
            ack_gaps,
            window_change: fields.window,
            ack_change: fields.ack,
            next_apdu_us: 0,
            next_ack_us: u64::MAX,
            burst: VecDeque::new(),
            last_time: 0,
            seq,
            ack,
            window,
            ipid,
            started: false,
            rng,
        };
        gen.next_apdu_us = to_us(sample_mixture(&gen.data_gaps, &mut gen.rng));
        if let Some(gaps) = &gen.ack_gaps {
            gen.next_ack_us = to_us(sample_mixture(gaps, &mut gen.rng));
        }
        gen
    }

    fn next_event(&mut self) -> (u64, u32) {
        if let Some(&(t, len)) = self.burst.front() {
            if t <= self.next_ack_us {
                self.burst.pop_front();
                return (t, len);
            }
        } else if self.next_apdu_us <= self.next_ack_us {
            let start = self.next_apdu_us;
            let apdu = self.apdu.sample(&mut self.rng);
            for (i, len) in fragment_apdu(apdu, self.mss).into_iter().enumerate() {
                self.burst.push_back((start + i as u64 * BURST_SPACING_US, len));
            }
            self.next_apdu_us = start + to_us(sample_mixture(&self.data_gaps, &mut self.rng));
            return self.burst.pop_front().expect("APDU has at least one segment");
        }
        let t = self.next_ack_us;
        let gaps = self.ack_gaps.as_ref().expect("ACK stream present");
        self.next_ack_us = t + to_us(sample_mixture(gaps, &mut self.rng));
        (t, 0)
    }

    fn evolve(&mut self, change: ChangeProbabilities, window: bool) -> FieldChange {
        let c = change.sample(&mut self.rng);
        match (c, window) {
            (FieldChange::None, _) => {}
            (FieldChange::OneByte, true) => {
                let d: i16 = loop {
                    let d = self.rng.random_range(-128i16..=127);
                    if d != 0 {
                        break d;
                    }
                };
                self.window = self.window.wrapping_add_signed(d);
            }
            (FieldChange::Full, true) => {
                let magnitude = self.rng.random_range(129i16..=4096);
                let d = if self.rng.random_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                };
                self.window = self.window.wrapping_add_signed(d);
            }
            (FieldChange::OneByte, false) => {
                self.ack = self.ack.wrapping_add(self.rng.random_range(1..=255));
            }
            (FieldChange::Full, false) => {
                self.ack = self.ack.wrapping_add(self.rng.random_range(256..=65_535));
            }
        }
        c
    }
}

impl Iterator for FlowGenerator {
    type Item = NativePacket;

    fn next(&mut self) -> Option<NativePacket> {
        let (t, payload_len) = self.next_event();
        let t = t.max(self.last_time);
        self.last_time = t;

        if self.started {
            self.ipid = self.ipid.wrapping_add(1);
            self.evolve(self.window_change, true);
            self.evolve(self.ack_change, false);
        }
        self.started = true;

        let packet = NativePacket {
            arrival_us: t,
            direction: self.direction,
            flow_id: self.flow_id,
            payload_len,
            push: payload_len > 0,
            seq: self.seq,
            ack: self.ack,
            window: self.window,
            ipid: self.ipid,
        };
        self.seq = self.seq.wrapping_add(payload_len);
        Some(packet)
    }
}

/// `n_packets` packets of flow 0.
pub fn generate_player_stream(
    profile: &GameProfile,
    direction: Direction,
    n_packets: usize,
    seed: u64,
) -> Result<Vec<NativePacket>> {
    generate_flow(profile, direction, 0, n_packets, seed)
}

/// `n_packets` packets of the given flow. Flows of the same seed draw from
/// independent random streams.
pub fn generate_flow(
    profile: &GameProfile,
    direction: Direction,
    flow_id: u32,
    n_packets: usize,
    seed: u64,
) -> Result<Vec<NativePacket>> {
    if n_packets == 0 {
        return Err(Error::Config("packet count must be positive".into()));
    }
    Ok(FlowGenerator::new(profile, direction, flow_id, seed)?
        .take(n_packets)
        .collect())
}

/// Flows `0..n_players` merged by arrival time, ties broken by flow id.
pub fn generate_scenario(
    profile: &GameProfile,
    direction: Direction,
    n_players: usize,
    packets_per_player: usize,
    seed: u64,
) -> Result<Vec<NativePacket>> {
    if n_players == 0 {
        return Err(Error::Config("number of players must be positive".into()));
    }
    if packets_per_player == 0 {
        return Err(Error::Config("packets per player must be positive".into()));
    }
    if n_players - 1 > MAX_FLOW_ID as usize {
        return Err(Error::Config(format!("at most {} players", MAX_FLOW_ID + 1)));
    }
    profile.validate()?;
    let mut all = Vec::with_capacity(n_players * packets_per_player);
    for flow in 0..n_players as u32 {
        all.extend(FlowGenerator::from_validated(profile, direction, flow, seed).take(packets_per_player));
    }
    // Stable sort keeps each flow's own order for equal timestamps.
    all.sort_by_key(|p| (p.arrival_us, p.flow_id));
    Ok(all)
}
