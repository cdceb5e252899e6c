//! Full-body pose and global translation estimation from the IMUs in
//! everyday consumer devices (phone, watch, earbuds).
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`rotmath`]: rotation matrices, the continuous 6D encoding, geodesic
//!   distance.
//! - [`skeleton`]: 24-joint rig, forward kinematics, linear blend skinning,
//!   rig/motion file formats.
//! - [`devconfig`]: device-location combinations and input-vector packing.
//! - [`synthesis`]: virtual IMU synthesis from motion clips, contact and
//!   root-velocity labels, training windows.
//! - [`seqnet`]: a minimal recurrent sequence-model runtime (uni/bi LSTM)
//!   with hand-derived backpropagation, the pipeline losses, Adam, and a
//!   finite-difference gradient checker.
//! - [`estimator`]: calibration and the online multi-stage pipeline with
//!   contact/velocity fusion and translation integration.
//! - [`refine`]: PD pose smoothing, foot locking, ground clamping.
//! - [`metrics`]: the evaluation-metric suite.
//! - [`stream`], [`config`], [`importer`], [`cli`]: streaming protocol and
//!   the command-line surface.
//!
//! See the crate examples for runnable end-to-end walkthroughs of each
//! capability, and the `imupose` binary for the CLI.

pub mod cli;
pub mod config;
pub mod devconfig;
pub mod estimator;
pub mod importer;
pub mod metrics;
pub mod refine;
pub mod rotmath;
pub mod seqnet;
pub mod skeleton;
pub mod stream;
pub mod synthesis;
