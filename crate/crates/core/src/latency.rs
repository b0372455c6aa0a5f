//! Per-frame latency decomposition and outage accounting.
//!
//! A frame's end-to-end time is compression (only when the frame is masked)
//! plus uplink transfer, edge detection and the downlink transfer of the
//! result. It is an outage when that sum exceeds the frame interval.

use thiserror::Error;

use crate::channel::{self, ChannelError, Decision, LinkConfig};

/// Processing speeds, in frames per second, and the result payload size.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyParams {
    pub compression_fps: f64,
    pub detection_fps: f64,
    pub result_bytes: u64,
}

/// SRVS at 64x64 on a Raspberry Pi 3 B+.
pub const COMPRESSION_FPS_PI: f64 = 240.0;
/// SRVS at 64x64 on one core of an i5-8250U.
pub const COMPRESSION_FPS_CPU: f64 = 2862.0;
/// RFBNet on a V100 at input sizes 512, 256, 128 and 64.
pub const DETECTION_FPS_PRESETS: [f64; 4] = [59.0, 91.0, 125.0, 200.0];

impl Default for LatencyParams {
    fn default() -> Self {
        LatencyParams {
            compression_fps: COMPRESSION_FPS_PI,
            detection_fps: DETECTION_FPS_PRESETS[0],
            result_bytes: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub frame_id: u64,
    pub decision: Decision,
    pub cqi: u8,
    pub bytes_on_wire: u64,
    pub t_compress: f64,
    pub t_uplink: f64,
    pub t_detect: f64,
    pub t_downlink: f64,
    pub t_total: f64,
    pub outage: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum LatencyError {
    #[error("outage probability of an empty frame sequence")]
    Empty,
}

pub fn frame_latency(
    frame_id: u64,
    decision: Decision,
    wire_bytes: u64,
    cqi: u8,
    cfg: &LinkConfig,
    lat: &LatencyParams,
    fps: f64,
) -> Result<FrameOutcome, ChannelError> {
    let rate = channel::throughput(cqi, cfg)?;
    let t_compress = match decision {
        Decision::Compress => 1.0 / lat.compression_fps,
        Decision::SendOriginal => 0.0,
    };
    let t_uplink = 8.0 * wire_bytes as f64 / rate;
    let t_detect = 1.0 / lat.detection_fps;
    let t_downlink = 8.0 * lat.result_bytes as f64 / rate;
    let t_total = t_compress + t_uplink + t_detect + t_downlink;
    Ok(FrameOutcome {
        frame_id,
        decision,
        cqi,
        bytes_on_wire: wire_bytes,
        t_compress,
        t_uplink,
        t_detect,
        t_downlink,
        t_total,
        outage: t_total > 1.0 / fps,
    })
}

pub fn outage_probability(outcomes: &[FrameOutcome]) -> Result<f64, LatencyError> {
    if outcomes.is_empty() {
        return Err(LatencyError::Empty);
    }
    let outages = outcomes.iter().filter(|o| o.outage).count();
    Ok(outages as f64 / outcomes.len() as f64)
}
