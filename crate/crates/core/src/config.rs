//! Flat `section.key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored; a later assignment to the same
//! key overrides an earlier one. Every key has a default, so an empty file
//! is a complete configuration.

use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

use crate::sim::{EvalSettings, SimConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey {
        line: usize,
        key: String,
        suggestion: Option<String>,
    },
    #[error("line {line}: bad value {value:?} for `{key}`: {message}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        message: String,
    },
    #[error("line {line}: expected `section.key = value`")]
    Syntax { line: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub sim: SimConfig,
    pub eval: EvalSettings,
}

fn parse_into<T: FromStr>(place: &mut T, value: &str) -> Result<(), String>
where
    T::Err: Display,
{
    *place = value.parse().map_err(|e: T::Err| e.to_string())?;
    Ok(())
}

macro_rules! keys {
    ($($key:literal => |$s:ident| $place:expr;)*) => {
        /// Every recognised key, in dump order.
        pub const KEYS: &[&str] = &[$($key),*];

        fn set_key(settings: &mut Settings, key: &str, value: &str) -> Option<Result<(), String>> {
            match key {
                $($key => {
                    let $s = settings;
                    Some(parse_into(&mut $place, value))
                })*
                _ => None,
            }
        }

        fn get_key(settings: &Settings, key: &str) -> Option<String> {
            match key {
                $($key => {
                    let $s = settings;
                    Some($place.to_string())
                })*
                _ => None,
            }
        }
    };
}

keys! {
    "sim.frames" => |s| s.sim.frames;
    "sim.fps" => |s| s.sim.fps;
    "sim.framework" => |s| s.sim.framework;
    "sim.compression_ratio" => |s| s.sim.compression_ratio;
    "sim.frame_width" => |s| s.sim.frame_width;
    "sim.frame_height" => |s| s.sim.frame_height;
    "sim.frame_channels" => |s| s.sim.frame_channels;
    "sim.mask_layout" => |s| s.sim.mask_layout;
    "sim.master_seed" => |s| s.sim.master_seed;
    "channel.kind" => |s| s.sim.channel.kind;
    "channel.seed" => |s| s.sim.channel.seed;
    "channel.stay_probability" => |s| s.sim.channel.stay_probability;
    "channel.cqi_min" => |s| s.sim.channel.cqi_min;
    "channel.cqi_max" => |s| s.sim.channel.cqi_max;
    "link.bandwidth_hz" => |s| s.sim.link.bandwidth_hz;
    "link.carriers" => |s| s.sim.link.num_carriers;
    "link.layers" => |s| s.sim.link.mimo_layers;
    "link.scaling" => |s| s.sim.link.scaling_factor;
    "link.overhead" => |s| s.sim.link.overhead;
    "link.cqi_threshold" => |s| s.sim.link.cqi_threshold;
    "policy.kind" => |s| s.sim.policy;
    "latency.compression_fps" => |s| s.sim.latency.compression_fps;
    "latency.detection_fps" => |s| s.sim.latency.detection_fps;
    "latency.result_bytes" => |s| s.sim.latency.result_bytes;
    "saliency.analysis_size" => |s| s.eval.srvs.analysis_size;
    "saliency.epsilon" => |s| s.eval.srvs.epsilon;
    "saliency.spectrum_filter" => |s| s.eval.srvs.spectrum_filter;
    "saliency.blur_divisor" => |s| s.eval.srvs.blur_divisor;
    "eval.iou_threshold" => |s| s.eval.iou_threshold;
    "eval.visibility_threshold" => |s| s.eval.oracle.visibility_threshold;
    "eval.confidence" => |s| s.eval.oracle.confidence_model;
}

fn suggest(key: &str) -> Option<String> {
    KEYS.iter()
        .map(|k| (strsim::jaro_winkler(key, k), *k))
        .filter(|(score, _)| *score > 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.to_string())
}

impl Settings {
    pub fn parse(text: &str) -> Result<Settings, ConfigError> {
        let mut settings = Settings::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            settings.set(key, value).map_err(|e| match e {
                ConfigError::UnknownKey { key, suggestion, .. } => ConfigError::UnknownKey { line, key, suggestion },
                ConfigError::BadValue { key, value, message, .. } => ConfigError::BadValue {
                    line,
                    key,
                    value,
                    message,
                },
                other => other,
            })?;
        }
        settings.finish()?;
        Ok(settings)
    }

    /// Set one key. Line numbers in the returned error are 0.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match set_key(self, key, value) {
            None => Err(ConfigError::UnknownKey {
                line: 0,
                key: key.to_string(),
                suggestion: suggest(key),
            }),
            Some(Err(message)) => Err(ConfigError::BadValue {
                line: 0,
                key: key.to_string(),
                value: value.to_string(),
                message,
            }),
            Some(Ok(())) => Ok(()),
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        get_key(self, key)
    }

    /// Propagate shared values and check cross-field constraints.
    pub fn finish(&mut self) -> Result<(), ConfigError> {
        self.sim.analysis_size = self.eval.srvs.analysis_size;
        self.sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return Err(ConfigError::Invalid("eval.iou_threshold must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.oracle.visibility_threshold) {
            return Err(ConfigError::Invalid("eval.visibility_threshold must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form `parse` accepts.
    pub fn dump(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", get_key(self, k).expect("listed key")))
            .collect()
    }
}
