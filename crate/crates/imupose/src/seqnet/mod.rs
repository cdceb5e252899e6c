//! Minimal recurrent sequence-model runtime: uni/bi LSTM layers with full
//! backpropagation through time, the pipeline losses, Adam with global-norm
//! clipping, finite-difference gradient verification, and the four-head
//! model bundle with its checkpoint format.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
pub mod lstm;
mod model;
mod train;

pub use adam::{clip_grad_norm, grad_global_norm, Adam};
pub use checkpoint::{load_bundle, save_bundle};
pub use gradcheck::{grad_check, FD_SKIP, FD_STEP};
pub use loss::{
    loss_contact, loss_contact_grad, loss_joint, loss_joint_grad, loss_rotation,
    loss_rotation_grad, loss_velocity_cumulative, loss_velocity_cumulative_grad, RotationLoss,
    DEFAULT_HORIZONS,
};
pub use lstm::{LstmParams, LstmState, Seq};
pub use model::{Direction, LinearParams, SeqModel, SeqModelSpec, UniState};
pub use train::{train_head, TrainOutcome};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::devconfig::INPUT_DIM;

/// Joint-position output width: 24 joints x 3.
pub const JOINT_DIM: usize = 72;

/// Rotation output width: 18 predicted joints x 6D.
pub const ROT6D_DIM: usize = 108;

/// Pose-conditioned input width: 60 IMU values + 72 joint coordinates.
pub const CONCAT_DIM: usize = INPUT_DIM + JOINT_DIM;

#[derive(Debug, Error, PartialEq)]
pub enum SeqNetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model spec: {0}")]
    BadSpec(String),
    #[error("horizon {horizon} exceeds window length {window}")]
    HorizonTooLong { horizon: usize, window: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// The trainable heads of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// IMU window -> root-relative joint positions (bi).
    Joint,
    /// IMU + joints -> 6D rotations of the 18 predicted joints (bi).
    Theta,
    /// IMU + joints -> per-foot contact logits (bi).
    Contact,
    /// IMU + joints -> heading-frame root velocity, m/frame (uni).
    Velocity,
    /// IMU only -> root velocity; the translation-ablation variant (uni).
    VelocityImu,
}

impl Head {
    pub const CORE: [Head; 4] = [Head::Joint, Head::Theta, Head::Contact, Head::Velocity];

    pub fn name(self) -> &'static str {
        match self {
            Head::Joint => "joint",
            Head::Theta => "theta",
            Head::Contact => "contact",
            Head::Velocity => "velocity",
            Head::VelocityImu => "velocity_imu",
        }
    }

    pub fn from_name(name: &str) -> Option<Head> {
        match name {
            "joint" => Some(Head::Joint),
            "theta" => Some(Head::Theta),
            "contact" => Some(Head::Contact),
            "velocity" => Some(Head::Velocity),
            "velocity_imu" => Some(Head::VelocityImu),
            _ => None,
        }
    }

    pub fn spec(self, hidden: usize, layers: usize) -> SeqModelSpec {
        let (input_dim, output_dim, direction) = match self {
            Head::Joint => (INPUT_DIM, JOINT_DIM, Direction::Bi),
            Head::Theta => (CONCAT_DIM, ROT6D_DIM, Direction::Bi),
            Head::Contact => (CONCAT_DIM, 2, Direction::Bi),
            Head::Velocity => (CONCAT_DIM, 3, Direction::Uni),
            Head::VelocityImu => (INPUT_DIM, 3, Direction::Uni),
        };
        SeqModelSpec { input_dim, hidden_dim: hidden, output_dim, layers, direction }
    }
}

/// Training hyperparameters; defaults follow the training recipe the
/// pipeline was built around.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    /// Weight of the jerk term in the rotation loss.
    pub jerk_weight: f64,
    /// Std of the Gaussian noise added to joint inputs of the downstream
    /// heads.
    pub noise_sigma: f64,
    pub seed: u64,
    pub horizons: Vec<usize>,
    /// Optional hard cap on optimizer steps (overfit/smoke runs).
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 256,
            epochs: 80,
            grad_clip_norm: 1.0,
            jerk_weight: 1e-5,
            noise_sigma: 0.04,
            seed: 0,
            horizons: DEFAULT_HORIZONS.to_vec(),
            max_steps: None,
        }
    }
}

/// Bookkeeping carried inside a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleMeta {
    pub hidden: usize,
    pub layers: usize,
    /// Window length the bundle was trained with.
    pub window: usize,
    pub fps: f64,
    /// Optimizer steps taken per head.
    pub steps: BTreeMap<String, u64>,
}

/// Parameters of the four pipeline heads (plus the optional IMU-only
/// velocity head used by the translation ablation), one portable checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub joint: SeqModel,
    pub theta: SeqModel,
    pub contact: SeqModel,
    pub velocity: SeqModel,
    pub velocity_imu: Option<SeqModel>,
    pub meta: BundleMeta,
}

impl ModelBundle {
    /// Randomly initialized bundle; per-head seeds derive from `seed`.
    pub fn new(hidden: usize, layers: usize, window: usize, fps: f64, seed: u64) -> ModelBundle {
        ModelBundle {
            joint: SeqModel::init(Head::Joint.spec(hidden, layers), seed.wrapping_add(1)),
            theta: SeqModel::init(Head::Theta.spec(hidden, layers), seed.wrapping_add(2)),
            contact: SeqModel::init(Head::Contact.spec(hidden, layers), seed.wrapping_add(3)),
            velocity: SeqModel::init(Head::Velocity.spec(hidden, layers), seed.wrapping_add(4)),
            velocity_imu: None,
            meta: BundleMeta { hidden, layers, window, fps, steps: BTreeMap::new() },
        }
    }

    /// All-zero bundle (useful for contract tests: zero weights, zero
    /// outputs).
    pub fn zeros(hidden: usize, layers: usize, window: usize, fps: f64) -> ModelBundle {
        ModelBundle {
            joint: SeqModel::zeros(Head::Joint.spec(hidden, layers)),
            theta: SeqModel::zeros(Head::Theta.spec(hidden, layers)),
            contact: SeqModel::zeros(Head::Contact.spec(hidden, layers)),
            velocity: SeqModel::zeros(Head::Velocity.spec(hidden, layers)),
            velocity_imu: None,
            meta: BundleMeta { hidden, layers, window, fps, steps: BTreeMap::new() },
        }
    }

    pub fn head(&self, head: Head) -> Option<&SeqModel> {
        match head {
            Head::Joint => Some(&self.joint),
            Head::Theta => Some(&self.theta),
            Head::Contact => Some(&self.contact),
            Head::Velocity => Some(&self.velocity),
            Head::VelocityImu => self.velocity_imu.as_ref(),
        }
    }

    pub fn head_mut(&mut self, head: Head) -> Option<&mut SeqModel> {
        match head {
            Head::Joint => Some(&mut self.joint),
            Head::Theta => Some(&mut self.theta),
            Head::Contact => Some(&mut self.contact),
            Head::Velocity => Some(&mut self.velocity),
            Head::VelocityImu => self.velocity_imu.as_mut(),
        }
    }

    /// Create the IMU-only velocity head if absent.
    pub fn ensure_velocity_imu(&mut self, seed: u64) -> &mut SeqModel {
        let (hidden, layers) = (self.meta.hidden, self.meta.layers);
        self.velocity_imu.get_or_insert_with(|| {
            SeqModel::init(Head::VelocityImu.spec(hidden, layers), seed.wrapping_add(5))
        })
    }

    /// Check the pipeline dimension contract and parameter finiteness.
    pub fn validate(&self) -> Result<(), SeqNetError> {
        let (h, l) = (self.meta.hidden, self.meta.layers);
        let checks: Vec<(Head, &SeqModel)> = Head::CORE
            .iter()
            .map(|&hd| (hd, self.head(hd).expect("core heads always present")))
            .chain(self.velocity_imu.as_ref().map(|m| (Head::VelocityImu, m)))
            .collect();
        for (hd, model) in checks {
            let expect = hd.spec(h, l);
            if model.spec != expect {
                return Err(SeqNetError::BadSpec(format!(
                    "head {}: spec {:?} does not match contract {:?}",
                    hd.name(),
                    model.spec,
                    expect
                )));
            }
            model.spec.validate()?;
            if !model.all_finite() {
                return Err(SeqNetError::BadSpec(format!("head {}: non-finite parameter", hd.name())));
            }
        }
        Ok(())
    }
}
