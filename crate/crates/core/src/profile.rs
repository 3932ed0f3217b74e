//! Game traffic profiles.
//!
//! A [`GameProfile`] describes, per [`Direction`], how a single player's TCP
//! flow looks: the APDU size distribution, the APDU inter-arrival mixture,
//! the share of payload-less ACKs and the header field behaviour used by the
//! compressor model. Profiles are loaded from TOML; the three built-in games
//! ship with the crate.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iphc::FieldDeltaModel;

const PROBABILITY_TOLERANCE: f64 = 1e-9;

/// Relative slack allowed between a profile's declared totals and the totals
/// implied by its generative parameters.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "c2s")]
    ClientToServer,
    #[serde(rename = "s2c")]
    ServerToClient,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::ClientToServer, Direction::ServerToClient];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ClientToServer => "c2s",
            Direction::ServerToClient => "s2c",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c2s" | "client-to-server" | "uplink" => Ok(Direction::ClientToServer),
            "s2c" | "server-to-client" | "downlink" => Ok(Direction::ServerToClient),
            other => Err(Error::Config(format!(
                "unknown direction `{other}` (expected c2s or s2c)"
            ))),
        }
    }
}

/// APDU size distribution, in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ApduSizes {
    /// A handful of fixed sizes with their probabilities.
    Discrete { sizes: Vec<(u32, f64)> },
    /// Continuous Weibull sizes, rounded up to whole bytes.
    Weibull { shape: f64, scale: f64 },
}

impl ApduSizes {
    fn validate(&self, profile: &str) -> Result<()> {
        match self {
            ApduSizes::Discrete { sizes } => {
                if sizes.is_empty() {
                    return Err(Error::invalid_profile(profile, "empty APDU size table"));
                }
                if let Some((size, _)) = sizes.iter().find(|(size, _)| *size == 0) {
                    return Err(Error::invalid_profile(
                        profile,
                        format!("APDU size {size} must be positive"),
                    ));
                }
                check_distribution(profile, "APDU size", sizes.iter().map(|&(_, p)| p))
            }
            ApduSizes::Weibull { shape, scale } => {
                if !(shape.is_finite() && *shape > 0.0 && scale.is_finite() && *scale > 0.0) {
                    return Err(Error::invalid_profile(
                        profile,
                        format!("Weibull parameters must be positive (shape {shape}, scale {scale})"),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Expected APDU size and expected number of MSS-sized segments per APDU.
    pub fn segmentation_moments(&self, mss: u32) -> (f64, f64) {
        let mss = f64::from(mss);
        match self {
            ApduSizes::Discrete { sizes } => sizes.iter().fold((0.0, 0.0), |(m, n), &(s, p)| {
                let s = f64::from(s);
                (m + p * s, n + p * (s / mss).ceil())
            }),
            ApduSizes::Weibull { shape, scale } => {
                // Sizes are ceil(X) bytes; the segment count is ceil(ceil(X)/mss),
                // which equals ceil(X/mss) for integral mss.
                let survival = |x: f64| (-(x / scale).powf(*shape)).exp();
                let mut segments = 0.0;
                let mut j = 0.0;
                loop {
                    let tail = survival(j * mss);
                    segments += tail;
                    if tail < 1e-15 {
                        break;
                    }
                    j += 1.0;
                }
                // E[ceil(X)] = sum_{b>=0} P(X > b).
                let mut mean = 0.0;
                let mut b = 0.0;
                loop {
                    let tail = survival(b);
                    mean += tail;
                    if tail < 1e-15 {
                        break;
                    }
                    b += 1.0;
                }
                (mean, segments)
            }
        }
    }
}

/// One uniform component `[lo, hi)` seconds of the inter-arrival mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformBand {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
}

/// Mixture of uniform distributions for the time between APDUs, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InterArrivalMixture {
    pub bands: Vec<UniformBand>,
}

impl InterArrivalMixture {
    pub fn mean(&self) -> f64 {
        self.bands.iter().map(|b| b.weight * 0.5 * (b.lo + b.hi)).sum()
    }

    /// Same shape, every bound multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        InterArrivalMixture {
            bands: self
                .bands
                .iter()
                .map(|b| UniformBand {
                    lo: b.lo * factor,
                    hi: b.hi * factor,
                    weight: b.weight,
                })
                .collect(),
        }
    }

    fn validate(&self, profile: &str) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::invalid_profile(profile, "empty inter-arrival mixture"));
        }
        for band in &self.bands {
            if !(band.lo.is_finite() && band.hi.is_finite() && band.lo >= 0.0 && band.hi > band.lo) {
                return Err(Error::invalid_profile(
                    profile,
                    format!("bad inter-arrival band [{}, {})", band.lo, band.hi),
                ));
            }
        }
        check_distribution(profile, "inter-arrival", self.bands.iter().map(|b| b.weight))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionProfile {
    /// Mean TCP payload over all packets, pure ACKs counted as zero.
    pub expected_payload: f64,
    /// Packets per second of one player, pure ACKs included.
    pub packet_rate: f64,
    /// Fraction of packets that are pure ACKs.
    pub ack_ratio: f64,
    pub apdu: ApduSizes,
    pub interarrival: InterArrivalMixture,
}

/// Totals implied by a direction's generative parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpliedTotals {
    pub packet_rate: f64,
    pub mean_payload: f64,
    pub ack_fraction: f64,
}

impl DirectionProfile {
    /// Rate of the injected pure-ACK stream.
    pub fn ack_rate(&self) -> f64 {
        self.ack_ratio * self.packet_rate
    }

    pub fn implied_totals(&self, mss: u32) -> ImpliedTotals {
        let (apdu_mean, segments) = self.apdu.segmentation_moments(mss);
        let apdu_rate = 1.0 / self.interarrival.mean();
        let data_rate = apdu_rate * segments;
        let total = data_rate + self.ack_rate();
        ImpliedTotals {
            packet_rate: total,
            mean_payload: apdu_rate * apdu_mean / total,
            ack_fraction: self.ack_rate() / total,
        }
    }

    fn validate(&self, profile: &str, mss: u32) -> Result<()> {
        if !(self.packet_rate.is_finite() && self.packet_rate > 0.0) {
            return Err(Error::invalid_profile(
                profile,
                format!("packet rate must be positive, got {}", self.packet_rate),
            ));
        }
        if !(self.expected_payload.is_finite() && self.expected_payload > 0.0) {
            return Err(Error::invalid_profile(
                profile,
                format!("expected payload must be positive, got {}", self.expected_payload),
            ));
        }
        if !(0.0..=1.0).contains(&self.ack_ratio) {
            return Err(Error::invalid_profile(
                profile,
                format!("ack ratio {} outside [0, 1]", self.ack_ratio),
            ));
        }
        if self.ack_ratio >= 1.0 {
            return Err(Error::invalid_profile(profile, "a flow cannot be made only of ACKs"));
        }
        self.apdu.validate(profile)?;
        self.interarrival.validate(profile)?;

        let implied = self.implied_totals(mss);
        let off = |actual: f64, wanted: f64| (actual - wanted).abs() > CALIBRATION_TOLERANCE * wanted;
        if off(implied.packet_rate, self.packet_rate) {
            return Err(Error::invalid_profile(
                profile,
                format!(
                    "parameters imply {:.3} pps, declared {}",
                    implied.packet_rate, self.packet_rate
                ),
            ));
        }
        if off(implied.mean_payload, self.expected_payload) {
            return Err(Error::invalid_profile(
                profile,
                format!(
                    "parameters imply mean payload {:.3} B, declared {}",
                    implied.mean_payload, self.expected_payload
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameProfile {
    pub name: String,
    #[serde(default)]
    pub display_name: Option<String>,
    #[serde(default = "default_mss")]
    pub mss: u32,
    pub client_to_server: DirectionProfile,
    pub server_to_client: DirectionProfile,
    #[serde(default)]
    pub field_model: FieldDeltaModel,
}

fn default_mss() -> u32 {
    1460
}

const BUILTIN: [(&str, &str); 3] = [
    ("wow", include_str!("../profiles/wow.toml")),
    ("shenzhou", include_str!("../profiles/shenzhou.toml")),
    ("rom", include_str!("../profiles/rom.toml")),
];

impl GameProfile {
    pub fn direction(&self, direction: Direction) -> &DirectionProfile {
        match direction {
            Direction::ClientToServer => &self.client_to_server,
            Direction::ServerToClient => &self.server_to_client,
        }
    }

    pub fn label(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mss == 0 {
            return Err(Error::invalid_profile(&self.name, "MSS must be positive"));
        }
        for dir in Direction::ALL {
            self.direction(dir).validate(&self.name, self.mss)?;
        }
        self.field_model
            .validate()
            .map_err(|reason| Error::invalid_profile(&self.name, reason))
    }

    /// Parses and validates a profile from TOML text.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let profile: GameProfile = toml::from_str(text).map_err(|source| Error::Toml {
            path: origin.to_path_buf(),
            source,
        })?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownProfile(name.to_string()))?;
        Self::from_toml(text, Path::new(&format!("<builtin:{name}>")))
    }

    pub fn builtins() -> Vec<GameProfile> {
        BUILTIN
            .iter()
            .map(|(name, _)| Self::builtin(name).expect("built-in profiles are valid"))
            .collect()
    }

    pub fn wow() -> Self {
        Self::builtin("wow").expect("built-in profile")
    }
}

fn check_distribution(profile: &str, what: &str, probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for p in probs {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(Error::invalid_profile(
                profile,
                format!("{what} probability {p} outside [0, 1]"),
            ));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(Error::invalid_profile(
            profile,
            format!("{what} probabilities sum to {sum}, not 1"),
        ));
    }
    Ok(())
}
