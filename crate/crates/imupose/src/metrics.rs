//! Evaluation metrics: rotation, position and vertex error after root
//! alignment, jitter, root-translation error, and the offline evaluation
//! driver.
//!
//! Root alignment removes both the root position and the root rotation; the
//! root itself is excluded from the per-joint means (it is identically zero
//! after alignment). The jitter metric averages L2 norms of the third
//! backward difference of world joint positions.

use serde::Serialize;
use thiserror::Error;

use crate::devconfig::DeviceCombo;
use crate::estimator::{offline_rollout, FusionThresholds};
use crate::refine::{Refiner, RefinerConfig};
use crate::rotmath::{geodesic_angle, RotMat, Vec3};
use crate::seqnet::{
    loss_velocity_cumulative, ModelBundle, Seq, SeqNetError, DEFAULT_HORIZONS,
};
use crate::skeleton::{
    forward_kinematics, root_relative, skin_vertices, MotionSequence, Pose, Rig, SkeletonError,
};
use crate::synthesis::{synthesize_inputs, Dataset, SynthError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {pred} predicted frames vs {gt} ground-truth frames")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("sequence too short: {got} frames, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Net(#[from] SeqNetError),
    #[error(transparent)]
    Estimator(#[from] crate::estimator::EstimatorError),
}

/// One evaluation summary. `jitter` is in m/s^3 (tables conventionally print
/// 10^2 m/s^3, which the text rendering includes).
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EvalReport {
    pub mpjre_deg: f64,
    pub mpjpe_cm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mpjve_cm: Option<f64>,
    pub jitter_m_s3: f64,
    pub root_translation_error_cm: f64,
    /// Cumulative translation error at growing horizons: (seconds, cm).
    pub cumulative_error_curve: Vec<(f64, f64)>,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "MPJRE  {:>10.4} deg", self.mpjre_deg)?;
        writeln!(f, "MPJPE  {:>10.4} cm", self.mpjpe_cm)?;
        match self.mpjve_cm {
            Some(v) => writeln!(f, "MPJVE  {:>10.4} cm", v)?,
            None => writeln!(f, "MPJVE         n/a (rig has no skin)")?,
        }
        writeln!(
            f,
            "Jitter {:>10.4} m/s^3  ({:.4} x 10^2 m/s^3)",
            self.jitter_m_s3,
            self.jitter_m_s3 / 100.0
        )?;
        writeln!(f, "RTE    {:>10.4} cm (1 s horizon)", self.root_translation_error_cm)?;
        for (secs, cm) in &self.cumulative_error_curve {
            writeln!(f, "         {secs:>5.0} s {cm:>10.4} cm")?;
        }
        Ok(())
    }
}

fn check_len(pred: usize, gt: usize) -> Result<(), MetricsError> {
    if pred != gt {
        return Err(MetricsError::LengthMismatch { pred, gt });
    }
    Ok(())
}

/// Root-aligned world rotations of every joint for one pose.
fn aligned_rotations(rig: &Rig, pose: &Pose) -> Vec<RotMat> {
    let fk = forward_kinematics(rig, pose);
    let inv = fk.rotations[0].transpose();
    fk.rotations.iter().map(|r| inv * *r).collect()
}

/// Mean geodesic angle across the 23 non-root joints after root alignment
/// (degrees).
pub fn mpjre(rig: &Rig, pred: &[Pose], gt: &[Pose]) -> Result<f64, MetricsError> {
    check_len(pred.len(), gt.len())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let pa = aligned_rotations(rig, p);
        let ga = aligned_rotations(rig, g);
        for j in 1..rig.joint_count() {
            total += geodesic_angle(&pa[j], &ga[j]);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn mean_distance_cm(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], skip_first: bool) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    let start = if skip_first { 1 } else { 0 };
    for (p, g) in pred.iter().zip(gt) {
        for j in start..p.len() {
            total += (p[j] - g[j]).norm();
            count += 1;
        }
    }
    100.0 * total / count as f64
}

/// Mean Euclidean distance of root-relative joint positions, non-root
/// joints, in centimeters.
pub fn mpjpe(rig: &Rig, pred: &[Pose], gt: &[Pose]) -> Result<f64, MetricsError> {
    check_len(pred.len(), gt.len())?;
    let rel = |poses: &[Pose]| -> Vec<Vec<Vec3>> {
        poses.iter().map(|p| root_relative(&forward_kinematics(rig, p))).collect()
    };
    Ok(mean_distance_cm(&rel(pred), &rel(gt), true))
}

/// Mean Euclidean distance of root-aligned skin vertices, in centimeters.
pub fn mpjve(rig: &Rig, pred: &[Pose], gt: &[Pose]) -> Result<f64, MetricsError> {
    check_len(pred.len(), gt.len())?;
    let aligned = |pose: &Pose| -> Result<Vec<Vec3>, MetricsError> {
        let mut p = pose.clone();
        p.root_trans = Vec3::default();
        p.local_rot[0] = crate::rotmath::IDENTITY;
        Ok(skin_vertices(rig, &p)?)
    };
    let pa: Vec<Vec<Vec3>> = pred.iter().map(|p| aligned(p)).collect::<Result<_, _>>()?;
    let ga: Vec<Vec<Vec3>> = gt.iter().map(|p| aligned(p)).collect::<Result<_, _>>()?;
    Ok(mean_distance_cm(&pa, &ga, false))
}

/// Mean jerk magnitude of world joint positions (m/s^3): third backward
/// difference scaled by fps^3, averaged over joints and valid frames.
pub fn jitter(rig: &Rig, poses: &[Pose], fps: f64) -> Result<f64, MetricsError> {
    if poses.len() < 4 {
        return Err(MetricsError::TooShort { got: poses.len(), need: 4 });
    }
    let world: Vec<Vec<Vec3>> =
        poses.iter().map(|p| forward_kinematics(rig, p).positions).collect();
    let fps3 = fps * fps * fps;
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 3..poses.len() {
        for j in 0..rig.joint_count() {
            let d = world[t][j] - world[t - 1][j] * 3.0 + world[t - 2][j] * 3.0 - world[t - 3][j];
            total += (d * fps3).norm();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Cumulative root-translation error: for each window of `horizon_s`
/// seconds (stride one frame), the norm of the accumulated velocity
/// difference; returned as the mean in centimeters.
pub fn root_translation_error(
    pred_vel: &[Vec3],
    gt_vel: &[Vec3],
    fps: f64,
    horizon_s: f64,
) -> Result<f64, MetricsError> {
    check_len(pred_vel.len(), gt_vel.len())?;
    let w = (fps * horizon_s).round() as usize;
    if w == 0 || pred_vel.len() < w {
        return Err(MetricsError::TooShort { got: pred_vel.len(), need: w.max(1) });
    }
    let diffs: Vec<Vec3> = pred_vel.iter().zip(gt_vel).map(|(p, g)| *p - *g).collect();
    let mut sum = Vec3::default();
    for d in diffs.iter().take(w) {
        sum += *d;
    }
    let mut total = sum.norm();
    let mut count = 1usize;
    for s in 1..=diffs.len() - w {
        sum += diffs[s + w - 1] - diffs[s - 1];
        total += sum.norm();
        count += 1;
    }
    Ok(100.0 * total / count as f64)
}

/// The error curve at standard horizons (1, 2, 5, 10, ... seconds), keeping
/// the horizons the clip can support.
pub fn cumulative_error_curve(
    pred_vel: &[Vec3],
    gt_vel: &[Vec3],
    fps: f64,
) -> Vec<(f64, f64)> {
    [1.0, 2.0, 5.0, 10.0, 30.0, 60.0]
        .iter()
        .filter_map(|&h| root_translation_error(pred_vel, gt_vel, fps, h).ok().map(|e| (h, e)))
        .collect()
}

/// Compare predicted poses/velocities against ground truth.
pub fn report(
    rig: &Rig,
    pred: &[Pose],
    gt: &[Pose],
    pred_vel: &[Vec3],
    gt_vel: &[Vec3],
    fps: f64,
) -> Result<EvalReport, MetricsError> {
    let mpjve_cm = if rig.vertices.is_some() { Some(mpjve(rig, pred, gt)?) } else { None };
    Ok(EvalReport {
        mpjre_deg: mpjre(rig, pred, gt)?,
        mpjpe_cm: mpjpe(rig, pred, gt)?,
        mpjve_cm,
        jitter_m_s3: jitter(rig, pred, fps)?,
        root_translation_error_cm: root_translation_error(pred_vel, gt_vel, fps, 1.0)?,
        cumulative_error_curve: cumulative_error_curve(pred_vel, gt_vel, fps),
    })
}

/// World-frame per-frame translation deltas of a pose stream (`v[0] = 0`).
pub fn world_velocity_of_poses(poses: &[Pose]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poses.len());
    out.push(Vec3::default());
    for t in 1..poses.len() {
        out.push(poses[t].root_trans - poses[t - 1].root_trans);
    }
    out
}

/// Run offline inference over a clip for one combo and score it against the
/// clip itself.
pub fn evaluate_clip(
    bundle: &ModelBundle,
    rig: &Rig,
    seq: &MotionSequence,
    combo: &DeviceCombo,
    fusion: FusionThresholds,
    refiner: Option<RefinerConfig>,
) -> Result<EvalReport, MetricsError> {
    let inputs = synthesize_inputs(rig, seq, combo)?;
    let outputs = offline_rollout(bundle, rig, &inputs, combo, fusion)?;
    let mut pred: Vec<Pose> = outputs.iter().map(|o| o.full_pose.clone()).collect();
    if let Some(cfg) = refiner {
        let mut r = Refiner::new(cfg);
        let dt = 1.0 / seq.fps;
        pred = outputs.iter().map(|o| {
            let refined = r.process(rig, o, dt);
            let mut p = refined.full_pose;
            p.root_trans = refined.translation;
            p
        }).collect();
    }
    let pred_vel = world_velocity_of_poses(&pred);
    let gt_vel = world_velocity_of_poses(&seq.frames);
    report(rig, &pred, &seq.frames, &pred_vel, &gt_vel, seq.fps)
}

/// Cumulative-velocity losses of the pose-conditioned and IMU-only velocity
/// heads over a dataset (forward only). Requires the ablation head.
pub fn velocity_ablation_losses(
    bundle: &ModelBundle,
    dataset: &Dataset,
) -> Result<(f64, f64), MetricsError> {
    let imu_head = bundle.velocity_imu.as_ref().ok_or_else(|| {
        SeqNetError::BadSpec("bundle has no IMU-only velocity head (train velocity_imu)".into())
    })?;
    let horizons: Vec<usize> =
        DEFAULT_HORIZONS.iter().copied().filter(|&h| h <= dataset.window).collect();
    let mut pose_cond = 0.0;
    let mut imu_only = 0.0;
    for w in &dataset.windows {
        let n = w.len();
        let imu: Seq = (0..n)
            .map(|t| ndarray::Array2::from_shape_fn((60, 1), |(i, _)| w.inputs[t].x[i]))
            .collect();
        let concat: Seq = (0..n)
            .map(|t| {
                ndarray::Array2::from_shape_fn((132, 1), |(i, _)| {
                    if i < 60 {
                        w.inputs[t].x[i]
                    } else {
                        w.joints_gt[t][i - 60]
                    }
                })
            })
            .collect();
        let gt: Seq = (0..n)
            .map(|t| {
                ndarray::Array2::from_shape_fn((3, 1), |(i, _)| w.rootvel_gt[t].to_array()[i])
            })
            .collect();
        pose_cond += loss_velocity_cumulative(&bundle.velocity.forward(&concat)?, &gt, &horizons)?;
        imu_only += loss_velocity_cumulative(&imu_head.forward(&imu)?, &gt, &horizons)?;
    }
    let n = dataset.windows.len().max(1) as f64;
    Ok((pose_cond / n, imu_only / n))
}
