//! Kinematic body model: rig definition, forward kinematics and linear blend
//! skinning.
//!
//! Joint indexing follows the 24-joint SMPL ordering (0 = pelvis). The world
//! frame is +Y up, +Z forward, +X to the body's left, meters.

mod motion_format;
mod rig_format;
mod toy;

pub use motion_format::{load_motion, save_motion};
pub use rig_format::{load_rig, parse_rig, save_rig, serialize_rig};
pub use toy::builtin_toy_rig;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::devconfig::BodyLocation;
use crate::rotmath::{RotMat, Vec3, IDENTITY};

pub const JOINT_COUNT: usize = 24;

/// Joints whose rotation is never predicted (toes, wrists, hands); they are
/// pinned to identity in every estimated pose.
pub const NON_PREDICTED_JOINTS: [usize; 6] = [10, 11, 20, 21, 22, 23];

/// The 18 joints the rotation head predicts, ascending.
pub const PREDICTED_JOINTS: [usize; 18] =
    [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 12, 13, 14, 15, 16, 17, 18, 19];

/// Left and right foot (toe) joints, used for contact labels and ground
/// handling.
pub const LEFT_FOOT: usize = 10;
pub const RIGHT_FOOT: usize = 11;

/// Foot-adjacent joints checked by the ground clamp.
pub const FOOT_JOINTS: [usize; 4] = [7, 8, 10, 11];

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("rig invariant violated: {0}")]
    InvariantViolation(String),
    #[error("rig parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("rig has no skin vertices")]
    NoSkin,
    #[error("motion file error: {0}")]
    MotionFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A skinned vertex: rest position plus up to 4 (joint, weight) influences.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinVertex {
    pub position: Vec3,
    pub weights: Vec<(usize, f64)>,
}

/// Placement of a virtual/physical sensor: body joint plus a local offset in
/// that joint's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSite {
    pub joint: usize,
    pub offset: Vec3,
}

/// The kinematic body model all estimation targets refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub names: Vec<String>,
    /// Parent joint index; -1 for the root. Topologically sorted.
    pub parent: Vec<i32>,
    /// Bone vector from the parent joint in the rest pose (meters).
    pub rest_offset: Vec<Vec3>,
    pub vertices: Option<Vec<SkinVertex>>,
    pub location_map: BTreeMap<BodyLocation, SensorSite>,
}

impl Rig {
    pub fn joint_count(&self) -> usize {
        self.parent.len()
    }

    /// World-space joint positions in the rest pose (root at the origin).
    pub fn rest_world_positions(&self) -> Vec<Vec3> {
        let mut pos = vec![Vec3::default(); self.joint_count()];
        for j in 1..self.joint_count() {
            pos[j] = pos[self.parent[j] as usize] + self.rest_offset[j];
        }
        pos
    }

    pub fn validate(&self) -> Result<(), SkeletonError> {
        let n = self.joint_count();
        let fail = |msg: String| Err(SkeletonError::InvariantViolation(msg));
        if n != JOINT_COUNT {
            return fail(format!("joint count {n}, expected {JOINT_COUNT}"));
        }
        if self.names.len() != n || self.rest_offset.len() != n {
            return fail("joint table lengths disagree".into());
        }
        if self.parent[0] != -1 {
            return fail(format!("parent[0] = {}, expected -1", self.parent[0]));
        }
        for j in 1..n {
            let p = self.parent[j];
            if p < 0 {
                return fail(format!("multiple roots: parent[{j}] = {p}"));
            }
            if p as usize >= j {
                return fail(format!("not topologically sorted: parent[{j}] = {p}"));
            }
        }
        for (j, off) in self.rest_offset.iter().enumerate() {
            if !off.is_finite() {
                return fail(format!("non-finite rest offset at joint {j}"));
            }
        }
        if let Some(verts) = &self.vertices {
            for (i, v) in verts.iter().enumerate() {
                if v.weights.is_empty() || v.weights.len() > 4 {
                    return fail(format!("vertex {i}: {} weights, expected 1..=4", v.weights.len()));
                }
                let mut sum = 0.0;
                for &(j, w) in &v.weights {
                    if j >= n {
                        return fail(format!("vertex {i}: joint index {j} out of range"));
                    }
                    if w < 0.0 {
                        return fail(format!("vertex {i}: negative weight {w}"));
                    }
                    sum += w;
                }
                if (sum - 1.0).abs() > 1e-6 {
                    return fail(format!("vertex {i}: weights sum to {sum}"));
                }
            }
        }
        for loc in BodyLocation::ALL {
            match self.location_map.get(&loc) {
                None => return fail(format!("location_map missing {loc}")),
                Some(site) if site.joint >= n => {
                    return fail(format!("location_map {loc}: joint {} out of range", site.joint));
                }
                _ => {}
            }
        }
        if self.location_map.len() != BodyLocation::ALL.len() {
            return fail("location_map has extra entries".into());
        }
        Ok(())
    }
}

/// Per-joint local rotations plus world root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub local_rot: Vec<RotMat>,
    pub root_trans: Vec3,
}

impl Pose {
    pub fn identity() -> Pose {
        Pose { local_rot: vec![IDENTITY; JOINT_COUNT], root_trans: Vec3::default() }
    }

    pub fn with_root_trans(mut self, t: Vec3) -> Pose {
        self.root_trans = t;
        self
    }
}

/// Time-indexed ground-truth poses at a stated frame rate, with optional
/// contact and root-velocity channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub frames: Vec<Pose>,
    pub contacts: Option<Vec<[bool; 2]>>,
    /// Per-frame root velocity in the root-yaw-aligned frame (m/frame).
    pub root_velocity: Option<Vec<Vec3>>,
}

impl MotionSequence {
    pub fn new(fps: f64, frames: Vec<Pose>) -> Self {
        MotionSequence { fps, frames, contacts: None, root_velocity: None }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// World-space result of forward kinematics.
#[derive(Debug, Clone)]
pub struct FkResult {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<RotMat>,
}

/// Compose world transforms down the tree:
/// `R_w[j] = R_w[parent] * local[j]`, `p_w[j] = p_w[parent] + R_w[parent] * offset[j]`.
pub fn forward_kinematics(rig: &Rig, pose: &Pose) -> FkResult {
    let n = rig.joint_count();
    let mut positions = vec![Vec3::default(); n];
    let mut rotations = vec![IDENTITY; n];
    positions[0] = pose.root_trans;
    rotations[0] = pose.local_rot[0];
    for j in 1..n {
        let p = rig.parent[j] as usize;
        rotations[j] = rotations[p] * pose.local_rot[j];
        positions[j] = positions[p] + rotations[p].apply(rig.rest_offset[j]);
    }
    FkResult { positions, rotations }
}

/// Root-relative positions: subtract the root and remove its rotation.
pub fn root_relative(fk: &FkResult) -> Vec<Vec3> {
    let root = fk.positions[0];
    let inv = fk.rotations[0].transpose();
    fk.positions.iter().map(|p| inv.apply(*p - root)).collect()
}

/// FK positions in the root-relative frame, computed directly (root pinned at
/// the origin with identity rotation). Equals `root_relative(forward_kinematics(..))`.
pub fn forward_kinematics_root_relative(rig: &Rig, pose: &Pose) -> Vec<Vec3> {
    let mut p = pose.clone();
    p.root_trans = Vec3::default();
    p.local_rot[0] = IDENTITY;
    forward_kinematics(rig, &p).positions
}

/// 6D encoding of the 18 predicted joints' local rotations, in
/// [`PREDICTED_JOINTS`] order.
pub fn rot6d_of_pose(pose: &Pose) -> [f64; 108] {
    let mut out = [0.0; 108];
    for (k, &j) in PREDICTED_JOINTS.iter().enumerate() {
        let r = crate::rotmath::rot6d_from_matrix(&pose.local_rot[j]);
        out[6 * k..6 * k + 6].copy_from_slice(&r.r);
    }
    out
}

/// Build a pose from 18 predicted-joint 6D values (identity at the rest);
/// degenerate 6D inputs decode to identity.
pub fn pose_from_rot6d(rot6d: &[f64; 108], root_trans: Vec3) -> Pose {
    let mut pose = Pose::identity().with_root_trans(root_trans);
    for (k, &j) in PREDICTED_JOINTS.iter().enumerate() {
        let mut r = crate::rotmath::Rot6D::default();
        r.r.copy_from_slice(&rot6d[6 * k..6 * k + 6]);
        pose.local_rot[j] = crate::rotmath::matrix_from_rot6d_or_identity(&r);
    }
    pose
}

/// Linear blend skinning:
/// `v' = sum_k w_k (R_w[j_k] (v - rest[j_k]) + p_w[j_k])`.
pub fn skin_vertices(rig: &Rig, pose: &Pose) -> Result<Vec<Vec3>, SkeletonError> {
    let verts = rig.vertices.as_ref().ok_or(SkeletonError::NoSkin)?;
    let fk = forward_kinematics(rig, pose);
    Ok(skin_with_fk(rig, verts, &fk))
}

pub(crate) fn skin_with_fk(rig: &Rig, verts: &[SkinVertex], fk: &FkResult) -> Vec<Vec3> {
    let rest = rig.rest_world_positions();
    verts
        .iter()
        .map(|v| {
            let mut out = Vec3::default();
            for &(j, w) in &v.weights {
                out += (fk.rotations[j].apply(v.position - rest[j]) + fk.positions[j]) * w;
            }
            out
        })
        .collect()
}
