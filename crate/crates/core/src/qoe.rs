//! Subjective quality (MOS) estimation from one-way delay and jitter.
//!
//! Estimators implement [`QoeModel`] and are picked by name through
//! [`QoeConfig`]. The built-in `logistic` model is a surrogate that decays
//! with mean delay and jitter; a measured regression for a particular game
//! can be dropped in behind the same trait.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MOS_MIN: f64 = 1.0;
pub const MOS_MAX: f64 = 5.0;
pub const ACCEPTABLE_MOS: f64 = 3.5;

pub trait QoeModel: Send + Sync {
    fn name(&self) -> &str;

    /// Unclamped score for a mean one-way delay and jitter (stdev of the
    /// delay), both in milliseconds.
    fn mos(&self, mean_delay_ms: f64, jitter_ms: f64) -> f64;
}

/// `MOS = 1 + 4 / (1 + exp((d - d_mid)/d_scale + j/j_scale))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticQoe {
    pub delay_midpoint_ms: f64,
    pub delay_scale_ms: f64,
    pub jitter_scale_ms: f64,
}

impl Default for LogisticQoe {
    fn default() -> Self {
        LogisticQoe {
            delay_midpoint_ms: 140.0,
            delay_scale_ms: 25.0,
            jitter_scale_ms: 100.0,
        }
    }
}

impl LogisticQoe {
    pub const NAME: &'static str = "logistic";

    fn from_params(params: &BTreeMap<String, f64>) -> Result<Self> {
        let mut model = LogisticQoe::default();
        for (key, &value) in params {
            let slot = match key.as_str() {
                "delay_midpoint_ms" => &mut model.delay_midpoint_ms,
                "delay_scale_ms" => &mut model.delay_scale_ms,
                "jitter_scale_ms" => &mut model.jitter_scale_ms,
                other => {
                    return Err(Error::Config(format!(
                        "unknown parameter `{other}` for the logistic QoE model"
                    )))
                }
            };
            *slot = value;
        }
        if !(model.delay_scale_ms > 0.0 && model.jitter_scale_ms > 0.0) {
            return Err(Error::Config("logistic QoE scales must be positive".into()));
        }
        Ok(model)
    }
}

impl QoeModel for LogisticQoe {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn mos(&self, mean_delay_ms: f64, jitter_ms: f64) -> f64 {
        let z = (mean_delay_ms - self.delay_midpoint_ms) / self.delay_scale_ms + jitter_ms / self.jitter_scale_ms;
        MOS_MIN + (MOS_MAX - MOS_MIN) / (1.0 + z.exp())
    }
}

/// Model selection as it appears in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoeConfig {
    pub model: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Default for QoeConfig {
    fn default() -> Self {
        QoeConfig {
            model: LogisticQoe::NAME.to_string(),
            params: BTreeMap::new(),
        }
    }
}

impl QoeConfig {
    pub fn build(&self) -> Result<Box<dyn QoeModel>> {
        match self.model.as_str() {
            LogisticQoe::NAME => Ok(Box::new(LogisticQoe::from_params(&self.params)?)),
            other => Err(Error::Config(format!("unknown QoE model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayProfile {
    pub network_mean_ms: f64,
    pub network_stdev_ms: f64,
    /// Added multiplexing delay of individual packets.
    pub mux_delay_ms: Vec<f64>,
}

impl DelayProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.network_mean_ms) || !ok(self.network_stdev_ms) || !self.mux_delay_ms.iter().all(|&x| ok(x)) {
            return Err(Error::Config("delays must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayMoments {
    pub mean_ms: f64,
    pub stdev_ms: f64,
}

/// Mean and stdev of network delay plus multiplexing delay, taking the two
/// as independent.
pub fn combine_delay(profile: &DelayProfile) -> DelayMoments {
    let (mux_mean, mux_var) = mean_var(&profile.mux_delay_ms);
    DelayMoments {
        mean_ms: profile.network_mean_ms + mux_mean,
        stdev_ms: (profile.network_stdev_ms.powi(2) + mux_var).sqrt(),
    }
}

/// Empirical counterpart of [`combine_delay`]: `n` draws of a Gaussian
/// network delay plus a uniformly picked multiplexing delay.
pub fn sample_combined_delay(profile: &DelayProfile, n: usize, seed: u64) -> DelayMoments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let network = Normal::new(profile.network_mean_ms, profile.network_stdev_ms).expect("finite stdev");
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let mux = if profile.mux_delay_ms.is_empty() {
                0.0
            } else {
                profile.mux_delay_ms[rng.random_range(0..profile.mux_delay_ms.len())]
            };
            network.sample(&mut rng) + mux
        })
        .collect();
    let (mean_ms, var) = mean_var(&samples);
    DelayMoments {
        mean_ms,
        stdev_ms: var.sqrt(),
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosEstimate {
    pub mos: f64,
    pub acceptable: bool,
    pub delay: DelayMoments,
}

pub fn estimate(model: &dyn QoeModel, profile: &DelayProfile) -> Result<MosEstimate> {
    profile.validate()?;
    let delay = combine_delay(profile);
    let mos = model.mos(delay.mean_ms, delay.stdev_ms).clamp(MOS_MIN, MOS_MAX);
    Ok(MosEstimate {
        mos,
        acceptable: mos >= ACCEPTABLE_MOS,
        delay,
    })
}
