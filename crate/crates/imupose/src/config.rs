//! Run configuration: a flat key-value schema loadable from TOML, with
//! every key overridable by a CLI flag.
//!
//! Defaults are the constants the pipeline was built around (fusion
//! thresholds 0.5/0.9, contact threshold 0.008 m, acceleration scale 30,
//! lr 1e-3, batch 256, 80 epochs, gradient clip 1.0, jerk weight 1e-5,
//! joint noise 0.04).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::FusionThresholds;
use crate::refine::RefinerConfig;
use crate::seqnet::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Rig file path; the built-in rig when unset.
    pub rig: Option<String>,
    pub checkpoint: Option<String>,
    /// Sliding-window length (frames).
    pub window: usize,
    pub fps: f64,
    /// Active device combo id, e.g. "rpocket+lwrist".
    pub combo: String,
    pub fuse_lower: f64,
    pub fuse_upper: f64,
    /// Foot-contact labeling threshold (m/frame).
    pub contact_threshold: f64,
    /// Input acceleration divisor. Fixed by the packing contract; kept here
    /// so configs are explicit about it.
    pub accel_scale: f64,
    /// Gravity magnitude compensated at calibration (m/s^2).
    pub gravity: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub grad_clip: f64,
    pub jerk_weight: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Recurrent width of every head.
    pub hidden: usize,
    pub layers: usize,
    /// Synthesis window stride (frames).
    pub stride: usize,
    pub kp: f64,
    /// Damping gain; `2 sqrt(kp)` when unset.
    pub kd: Option<f64>,
    pub contact_lock_threshold: f64,
    pub floor_height: f64,
    /// Apply the refiner in eval/stream pipelines.
    pub refine: bool,
    pub max_steps: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rig: None,
            checkpoint: None,
            window: 60,
            fps: 60.0,
            combo: "rpocket+lwrist".into(),
            fuse_lower: 0.5,
            fuse_upper: 0.9,
            contact_threshold: 0.008,
            accel_scale: crate::devconfig::ACCEL_SCALE,
            gravity: 9.81,
            lr: 1e-3,
            batch: 256,
            epochs: 80,
            grad_clip: 1.0,
            jerk_weight: 1e-5,
            noise_sigma: 0.04,
            seed: 0,
            hidden: 64,
            layers: 1,
            stride: 30,
            kp: 400.0,
            kd: None,
            contact_lock_threshold: 0.7,
            floor_height: 0.0,
            refine: false,
            max_steps: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.window < 8 {
            return Err(ConfigError::Invalid(format!("window {} too short (>= 8)", self.window)));
        }
        if !(self.fps > 0.0) {
            return Err(ConfigError::Invalid(format!("fps {} must be positive", self.fps)));
        }
        if self.accel_scale != crate::devconfig::ACCEL_SCALE {
            return Err(ConfigError::Invalid(format!(
                "accel_scale {} is fixed at {} by the input-packing contract",
                self.accel_scale,
                crate::devconfig::ACCEL_SCALE
            )));
        }
        if !(0.0 <= self.fuse_lower && self.fuse_lower < self.fuse_upper && self.fuse_upper <= 1.0)
        {
            return Err(ConfigError::Invalid(format!(
                "fusion thresholds ({}, {}) must satisfy 0 <= lower < upper <= 1",
                self.fuse_lower, self.fuse_upper
            )));
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(ConfigError::Invalid("hidden and layers must be positive".into()));
        }
        Ok(())
    }

    pub fn fusion(&self) -> FusionThresholds {
        FusionThresholds { lower: self.fuse_lower, upper: self.fuse_upper }
    }

    pub fn refiner(&self) -> RefinerConfig {
        RefinerConfig {
            kp: self.kp,
            kd: self.kd.unwrap_or(2.0 * self.kp.sqrt()),
            contact_lock_threshold: self.contact_lock_threshold,
            floor_height: self.floor_height,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch: self.batch,
            epochs: self.epochs,
            grad_clip_norm: self.grad_clip,
            jerk_weight: self.jerk_weight,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            horizons: crate::seqnet::DEFAULT_HORIZONS
                .iter()
                .copied()
                .filter(|&h| h <= self.window)
                .collect(),
            max_steps: self.max_steps,
        }
    }

    pub fn gravity_vec(&self) -> crate::rotmath::Vec3 {
        crate::rotmath::Vec3::new(0.0, self.gravity, 0.0)
    }
}
