//! Statistical model of how the compressible TCP/IP header fields change
//! between consecutive packets of a flow.
//!
//! Each of window (W), acknowledgement (A) and sequence (S) either stays the
//! same (no bytes), changes by a delta that fits one byte, or needs the escape
//! byte plus the full field. The IP identifier is always charged one byte and
//! the fixed part (CID, mask, TCP checksum) four bytes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::profile::Direction;

/// CID + mask + TCP checksum.
pub const FIXED_COMPRESSED_BYTES: u32 = 4;
/// Explicit one-byte IP-ID delta.
pub const IPID_BYTES: u32 = 1;

const WINDOW_FULL_BYTES: u32 = 3;
const SEQ_ACK_FULL_BYTES: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldChange {
    None,
    OneByte,
    Full,
}

/// `(no change, one-byte delta, full)` probabilities of one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct ChangeProbabilities {
    pub no_change: f64,
    pub one_byte: f64,
    pub full: f64,
}

impl From<[f64; 3]> for ChangeProbabilities {
    fn from([no_change, one_byte, full]: [f64; 3]) -> Self {
        ChangeProbabilities {
            no_change,
            one_byte,
            full,
        }
    }
}

impl From<ChangeProbabilities> for [f64; 3] {
    fn from(p: ChangeProbabilities) -> Self {
        [p.no_change, p.one_byte, p.full]
    }
}

impl ChangeProbabilities {
    pub const NEVER: ChangeProbabilities = ChangeProbabilities {
        no_change: 1.0,
        one_byte: 0.0,
        full: 0.0,
    };

    pub fn new(no_change: f64, one_byte: f64, full: f64) -> Self {
        ChangeProbabilities {
            no_change,
            one_byte,
            full,
        }
    }

    pub fn expected_bytes(&self, full_bytes: u32) -> f64 {
        self.one_byte + f64::from(full_bytes) * self.full
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldChange {
        let u: f64 = rng.random();
        if u < self.no_change {
            FieldChange::None
        } else if u < self.no_change + self.one_byte {
            FieldChange::OneByte
        } else if self.full > 0.0 {
            FieldChange::Full
        } else if self.one_byte > 0.0 {
            // rounding slack at the top of [0, 1)
            FieldChange::OneByte
        } else {
            FieldChange::None
        }
    }

    fn validate(&self, what: &str) -> Result<(), String> {
        let all = [self.no_change, self.one_byte, self.full];
        if all.iter().any(|p| !(p.is_finite() && (0.0..=1.0).contains(p))) {
            return Err(format!("{what}: probability outside [0, 1] in {all:?}"));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("{what}: probabilities sum to {sum}, not 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionFieldModel {
    pub window: ChangeProbabilities,
    pub ack: ChangeProbabilities,
    pub seq: ChangeProbabilities,
}

impl DirectionFieldModel {
    pub const STATIC: DirectionFieldModel = DirectionFieldModel {
        window: ChangeProbabilities::NEVER,
        ack: ChangeProbabilities::NEVER,
        seq: ChangeProbabilities::NEVER,
    };

    pub fn expected_field_bytes(&self) -> f64 {
        self.window.expected_bytes(WINDOW_FULL_BYTES)
            + self.ack.expected_bytes(SEQ_ACK_FULL_BYTES)
            + self.seq.expected_bytes(SEQ_ACK_FULL_BYTES)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDeltaModel {
    pub client_to_server: DirectionFieldModel,
    pub server_to_client: DirectionFieldModel,
}

impl Default for FieldDeltaModel {
    /// Field behaviour measured on World of Warcraft sessions from a
    /// Windows 7 client.
    fn default() -> Self {
        FieldDeltaModel {
            client_to_server: DirectionFieldModel {
                window: ChangeProbabilities::new(0.1758, 0.6224, 0.2018),
                ack: ChangeProbabilities::new(0.1741, 0.5091, 0.3168),
                seq: ChangeProbabilities::new(0.5947, 0.4053, 0.0),
            },
            server_to_client: DirectionFieldModel {
                window: ChangeProbabilities::new(1.0, 0.0, 0.0),
                ack: ChangeProbabilities::new(0.6555, 0.3445, 0.0),
                seq: ChangeProbabilities::new(0.2056, 0.4838, 0.3106),
            },
        }
    }
}

impl FieldDeltaModel {
    /// A model in which nothing but the IP-ID ever changes.
    pub const STATIC: FieldDeltaModel = FieldDeltaModel {
        client_to_server: DirectionFieldModel::STATIC,
        server_to_client: DirectionFieldModel::STATIC,
    };

    pub fn direction(&self, direction: Direction) -> &DirectionFieldModel {
        match direction {
            Direction::ClientToServer => &self.client_to_server,
            Direction::ServerToClient => &self.server_to_client,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for dir in Direction::ALL {
            let m = self.direction(dir);
            m.window.validate(&format!("{dir} window"))?;
            m.ack.validate(&format!("{dir} ack"))?;
            m.seq.validate(&format!("{dir} seq"))?;
        }
        Ok(())
    }
}

/// Expected size in bytes of a COMPRESSED_TCP header under `model`.
pub fn expected_reduced_header(model: &FieldDeltaModel, direction: Direction) -> f64 {
    f64::from(FIXED_COMPRESSED_BYTES + IPID_BYTES) + model.direction(direction).expected_field_bytes()
}

/// Draws one compressed header size from `model`.
pub fn sample_header_size<R: Rng + ?Sized>(model: &FieldDeltaModel, direction: Direction, rng: &mut R) -> u32 {
    let m = model.direction(direction);
    let field = |p: &ChangeProbabilities, full: u32, rng: &mut R| match p.sample(rng) {
        FieldChange::None => 0,
        FieldChange::OneByte => 1,
        FieldChange::Full => full,
    };
    FIXED_COMPRESSED_BYTES
        + IPID_BYTES
        + field(&m.window, WINDOW_FULL_BYTES, rng)
        + field(&m.ack, SEQ_ACK_FULL_BYTES, rng)
        + field(&m.seq, SEQ_ACK_FULL_BYTES, rng)
}

/// `n` seeded draws of [`sample_header_size`].
pub fn sample_header_sizes(model: &FieldDeltaModel, direction: Direction, n: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_header_size(model, direction, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[u32]) -> f64 {
        v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn static_model_is_five_bytes() {
        for dir in Direction::ALL {
            assert_eq!(expected_reduced_header(&FieldDeltaModel::STATIC, dir), 5.0);
            let sizes = sample_header_sizes(&FieldDeltaModel::STATIC, dir, 1000, 3);
            assert!(sizes.iter().all(|&s| s == 5));
        }
    }

    #[test]
    fn client_to_server_expectation() {
        let e = expected_reduced_header(&FieldDeltaModel::default(), Direction::ClientToServer);
        // 5 + (0.6224 + 3 * 0.2018) + (0.5091 + 5 * 0.3168) + 0.4053
        assert!((e - 8.7262).abs() < 1e-9, "{e}");
    }

    #[test]
    fn server_to_client_expectation() {
        let e = expected_reduced_header(&FieldDeltaModel::default(), Direction::ServerToClient);
        // 5 + 0 + 0.3445 + (0.4838 + 5 * 0.3106)
        assert!((e - 7.3813).abs() < 1e-9, "{e}");
    }

    #[test]
    fn samples_stay_in_range_and_match_mean() {
        let model = FieldDeltaModel::default();
        for (dir, max) in [(Direction::ClientToServer, 14), (Direction::ServerToClient, 11)] {
            let sizes = sample_header_sizes(&model, dir, 100_000, 11);
            assert!(sizes.iter().all(|&s| (5..=max).contains(&s)));
            let expected = expected_reduced_header(&model, dir);
            assert!((mean(&sizes) - expected).abs() < 0.05, "{dir}: {}", mean(&sizes));
        }
    }

    #[test]
    fn probabilities_are_validated() {
        let mut model = FieldDeltaModel::default();
        model.client_to_server.ack = ChangeProbabilities::new(0.5, 0.5, 0.1);
        assert!(model.validate().is_err());
    }

    #[test]
    fn loads_from_toml_triples() {
        let model: FieldDeltaModel = toml::from_str(
            "[client_to_server]\nwindow=[1,0,0]\nack=[1,0,0]\nseq=[0,1,0]\n\
             [server_to_client]\nwindow=[1,0,0]\nack=[1,0,0]\nseq=[1,0,0]\n",
        )
        .unwrap();
        assert_eq!(expected_reduced_header(&model, Direction::ClientToServer), 6.0);
    }
}
