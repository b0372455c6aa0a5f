//! 5G link abstraction: CQI traces, CQI to throughput, offload decision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::latency::{self, LatencyParams};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("CQI {0} outside [1, 15]")]
    CqiOutOfRange(u8),
    #[error("invalid link configuration: {0}")]
    InvalidLink(String),
    #[error("invalid channel model: {0}")]
    InvalidModel(String),
}

/// Spectral efficiency (bit/s/Hz) of CQI indices 1..=15 of the standard
/// 64QAM 4-bit CQI table (QPSK 78/1024 up to 64QAM 948/1024).
pub const CQI_EFFICIENCY: [f64; 15] = [
    0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141, 2.4063, 2.7305, 3.3223, 3.9023,
    4.5234, 5.1152, 5.5547,
];

pub fn spectral_efficiency(cqi: u8) -> Result<f64, ChannelError> {
    match cqi {
        1..=15 => Ok(CQI_EFFICIENCY[usize::from(cqi) - 1]),
        _ => Err(ChannelError::CqiOutOfRange(cqi)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub bandwidth_hz: f64,
    pub num_carriers: u32,
    pub mimo_layers: u32,
    pub scaling_factor: f64,
    pub overhead: f64,
    pub cqi_threshold: u8,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            bandwidth_hz: 20e6,
            num_carriers: 2,
            mimo_layers: 4,
            scaling_factor: 1.0,
            overhead: 0.14,
            cqi_threshold: 7,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidLink(m.to_string()));
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth must be positive");
        }
        if self.num_carriers == 0 || self.mimo_layers == 0 {
            return bad("carriers and layers must be positive");
        }
        if !(self.scaling_factor > 0.0) {
            return bad("scaling factor must be positive");
        }
        if !(0.0..1.0).contains(&self.overhead) {
            return bad("overhead must lie in [0, 1)");
        }
        if !(1..=15).contains(&self.cqi_threshold) {
            return bad("CQI threshold must lie in [1, 15]");
        }
        Ok(())
    }
}

/// Achievable rate in bit/s:
/// `carriers * layers * scaling * bandwidth * eff(cqi) * (1 - overhead)`.
pub fn throughput(cqi: u8, cfg: &LinkConfig) -> Result<f64, ChannelError> {
    let eff = spectral_efficiency(cqi)?;
    Ok(f64::from(cfg.num_carriers)
        * f64::from(cfg.mimo_layers)
        * cfg.scaling_factor
        * cfg.bandwidth_hz
        * eff
        * (1.0 - cfg.overhead))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    IidUniform,
    Markov,
}

impl std::str::FromStr for ChannelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iid-uniform" | "iid" => Ok(ChannelKind::IidUniform),
            "markov" => Ok(ChannelKind::Markov),
            other => Err(format!("unknown channel kind {other:?} (iid-uniform | markov)")),
        }
    }
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChannelKind::IidUniform => "iid-uniform",
            ChannelKind::Markov => "markov",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    pub cqi_min: u8,
    pub cqi_max: u8,
    /// Markov only: probability of keeping the previous CQI.
    pub stay_probability: f64,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            kind: ChannelKind::IidUniform,
            cqi_min: 1,
            cqi_max: 15,
            stay_probability: 0.8,
            seed: 0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(1 <= self.cqi_min && self.cqi_min <= self.cqi_max && self.cqi_max <= 15) {
            return Err(ChannelError::InvalidModel(format!(
                "need 1 <= cqi_min <= cqi_max <= 15, got [{}, {}]",
                self.cqi_min, self.cqi_max
            )));
        }
        if !(0.0..=1.0).contains(&self.stay_probability) {
            return Err(ChannelError::InvalidModel(
                "stay probability must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-frame CQI reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CqiTrace {
    pub values: Vec<u8>,
}

/// Draw a seeded CQI trace. The Markov chain starts uniformly, then keeps
/// its state with `stay_probability` and otherwise steps -1 or +1 with equal
/// odds, clamped to the model range.
pub fn sample_trace(model: &ChannelModel, num_frames: usize) -> Result<CqiTrace, ChannelError> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let range = model.cqi_min..=model.cqi_max;
    let values = match model.kind {
        ChannelKind::IidUniform => (0..num_frames).map(|_| rng.gen_range(range.clone())).collect(),
        ChannelKind::Markov => {
            let mut state = rng.gen_range(range.clone());
            let mut values = Vec::with_capacity(num_frames);
            for _ in 0..num_frames {
                values.push(state);
                if !rng.gen_bool(model.stay_probability) {
                    state = if rng.gen_bool(0.5) {
                        state.saturating_sub(1).max(model.cqi_min)
                    } else {
                        (state + 1).min(model.cqi_max)
                    };
                }
            }
            values
        }
    };
    Ok(CqiTrace { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    SendOriginal,
    Compress,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::SendOriginal => "original",
            Decision::Compress => "compress",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Send the original frame iff `cqi >= cqi_threshold`.
    CqiThreshold,
    /// Send the original frame iff its predicted end-to-end latency fits in
    /// one frame interval.
    DeadlineEstimate,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cqi-threshold" => Ok(Policy::CqiThreshold),
            "deadline-estimate" => Ok(Policy::DeadlineEstimate),
            other => Err(format!(
                "unknown policy {other:?} (cqi-threshold | deadline-estimate)"
            )),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Policy::CqiThreshold => "cqi-threshold",
            Policy::DeadlineEstimate => "deadline-estimate",
        })
    }
}

pub fn decide(
    policy: Policy,
    cqi: u8,
    frame_bytes: u64,
    cfg: &LinkConfig,
    lat: &LatencyParams,
    fps: f64,
) -> Result<Decision, ChannelError> {
    spectral_efficiency(cqi)?;
    let original = match policy {
        Policy::CqiThreshold => cqi >= cfg.cqi_threshold,
        Policy::DeadlineEstimate => {
            let predicted =
                latency::frame_latency(0, Decision::SendOriginal, frame_bytes, cqi, cfg, lat, fps)?;
            !predicted.outage
        }
    };
    Ok(if original {
        Decision::SendOriginal
    } else {
        Decision::Compress
    })
}
