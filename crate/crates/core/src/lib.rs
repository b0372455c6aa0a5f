//! Edge-assisted real-time object detection for vehicles: saliency-masked
//! frame compression, a CQI-driven offloading policy, a 5G latency and
//! outage model, the vehicle/edge wire protocol, and detection-accuracy
//! evaluation under compression.

pub mod channel;
pub mod config;
pub mod corpus;
pub mod detector;
pub mod imageio;
pub mod latency;
pub mod protocol;
pub mod saliency;
pub mod sim;
