//! Physics-flavored cleanup of the estimated stream: per-joint PD smoothing
//! in 6D coordinates, supporting-foot locking against skate, and a ground
//! penetration clamp.
//!
//! The PD step solves the damper implicitly (stable-PD style), so it stays
//! stable for arbitrarily stiff gains and degenerates to pass-through as
//! `kp -> inf`:
//!
//! ```text
//! v' = (v + kp e dt) / (1 + kd dt + kp dt^2),   e = target - current
//! x' = x + v' dt
//! ```

use crate::estimator::PoseOutput;
use crate::rotmath::Vec3;
use crate::skeleton::{
    forward_kinematics, pose_from_rot6d, rot6d_of_pose, skin_vertices, Pose, Rig, FOOT_JOINTS,
    LEFT_FOOT, RIGHT_FOOT,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinerConfig {
    /// Proportional gain (1/s^2).
    pub kp: f64,
    /// Derivative gain (1/s); the default is critically damped, `2 sqrt(kp)`.
    pub kd: f64,
    /// Contact probability above which the supporting foot is pinned.
    pub contact_lock_threshold: f64,
    /// Ground height (meters).
    pub floor_height: f64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        let kp = 400.0;
        RefinerConfig { kp, kd: 2.0 * kp.sqrt(), contact_lock_threshold: 0.7, floor_height: 0.0 }
    }
}

impl RefinerConfig {
    pub fn with_kp(kp: f64) -> Self {
        RefinerConfig { kp, kd: 2.0 * kp.sqrt(), ..RefinerConfig::default() }
    }
}

/// Per-stream refiner state: the PD tracker and the current foot anchor.
#[derive(Debug, Clone)]
pub struct Refiner {
    pub cfg: RefinerConfig,
    pd: Option<PdState>,
    anchor: Option<(usize, Vec3)>,
}

#[derive(Debug, Clone)]
struct PdState {
    cur: [f64; 108],
    vel: [f64; 108],
}

impl Refiner {
    pub fn new(cfg: RefinerConfig) -> Refiner {
        Refiner { cfg, pd: None, anchor: None }
    }

    /// Forget the tracked state (stream reset).
    pub fn reset(&mut self) {
        self.pd = None;
        self.anchor = None;
    }

    /// Second-order tracking of the target pose in 6D coordinates; the first
    /// call snaps to the target. Returns the refined pose (orthonormalized,
    /// keeping the target's root translation).
    pub fn pd_smooth(&mut self, target: &Pose, dt: f64) -> Pose {
        let target6d = rot6d_of_pose(target);
        let state = self.pd.get_or_insert_with(|| PdState { cur: target6d, vel: [0.0; 108] });
        let denom = 1.0 + self.cfg.kd * dt + self.cfg.kp * dt * dt;
        for i in 0..108 {
            let e = target6d[i] - state.cur[i];
            let v = (state.vel[i] + self.cfg.kp * e * dt) / denom;
            state.vel[i] = v;
            state.cur[i] += v * dt;
        }
        pose_from_rot6d(&state.cur, target.root_trans)
    }

    /// Pin the supporting foot to its anchor while contact holds; the
    /// residual drift is subtracted from the root translation. Returns the
    /// adjusted translation.
    pub fn foot_lock(
        &mut self,
        rig: &Rig,
        pose: &Pose,
        contacts: [f64; 2],
        translation: Vec3,
    ) -> Vec3 {
        let q = contacts[0].max(contacts[1]);
        if q <= self.cfg.contact_lock_threshold {
            self.anchor = None;
            return translation;
        }
        let foot = if contacts[0] >= contacts[1] { LEFT_FOOT } else { RIGHT_FOOT };
        let mut posed = pose.clone();
        posed.root_trans = translation;
        let world = forward_kinematics(rig, &posed).positions[foot];
        match self.anchor {
            Some((anchored_foot, anchor)) if anchored_foot == foot => translation - (world - anchor),
            _ => {
                self.anchor = Some((foot, world));
                translation
            }
        }
    }

    /// Raise the root so no foot joint or foot-dominated skin vertex sits
    /// below the floor. Never lowers the body.
    pub fn ground_clamp(&self, rig: &Rig, pose: &Pose, translation: Vec3) -> Vec3 {
        let mut posed = pose.clone();
        posed.root_trans = translation;
        let fk = forward_kinematics(rig, &posed);
        let mut lowest = f64::INFINITY;
        for j in FOOT_JOINTS {
            lowest = lowest.min(fk.positions[j].y);
        }
        if let (Some(verts), Ok(skinned)) = (&rig.vertices, skin_vertices(rig, &posed)) {
            for (v, p) in verts.iter().zip(&skinned) {
                let dominant = v
                    .weights
                    .iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(j, _)| *j)
                    .unwrap_or(0);
                if FOOT_JOINTS.contains(&dominant) {
                    lowest = lowest.min(p.y);
                }
            }
        }
        if lowest < self.cfg.floor_height {
            translation + Vec3::new(0.0, self.cfg.floor_height - lowest, 0.0)
        } else {
            translation
        }
    }

    /// Full per-frame refinement: smooth the pose, then anti-skate, then
    /// clamp against the floor.
    pub fn process(&mut self, rig: &Rig, out: &PoseOutput, dt: f64) -> PoseOutput {
        let refined = self.pd_smooth(&out.full_pose, dt);
        let locked = self.foot_lock(rig, &refined, out.contacts, out.translation);
        let clamped = self.ground_clamp(rig, &refined, locked);
        let mut result = out.clone();
        result.full_pose = refined;
        result.full_pose.root_trans = clamped;
        result.translation = clamped;
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::{geodesic_angle, RotMat};
    use crate::skeleton::builtin_toy_rig;
    use approx::assert_abs_diff_eq;

    fn offset_pose(deg: f64) -> Pose {
        let mut p = Pose::identity();
        p.local_rot[16] = RotMat::rot_z(deg);
        p.local_rot[18] = RotMat::rot_x(deg);
        p
    }

    #[test]
    fn pd_converges_to_constant_target() {
        let mut refiner = Refiner::new(RefinerConfig::default());
        let dt = 1.0 / 60.0;
        // Anchor the tracker at identity, then jump the target by 10 deg.
        refiner.pd_smooth(&Pose::identity(), dt);
        let target = offset_pose(10.0);
        let mut last = Pose::identity();
        // Two characteristic times (2 * 5/sqrt(kp) = 0.5 s at kp = 400).
        for _ in 0..30 {
            last = refiner.pd_smooth(&target, dt);
        }
        for j in [16usize, 18] {
            let err = geodesic_angle(&last.local_rot[j], &target.local_rot[j]);
            assert!(err < 0.1, "joint {j} err {err} deg");
        }
        // Long horizon: converged tight.
        for _ in 0..120 {
            last = refiner.pd_smooth(&target, dt);
        }
        assert!(geodesic_angle(&last.local_rot[16], &target.local_rot[16]) < 1e-3);
    }

    #[test]
    fn pd_stiff_limit_is_pass_through() {
        // Stiff-spring limit: kp grows with the damping held at its default
        // scale. The implicit solve stays stable and covers the gap in one
        // step.
        let mut refiner =
            Refiner::new(RefinerConfig { kp: 1e6, kd: 40.0, ..RefinerConfig::default() });
        let dt = 1.0 / 60.0;
        refiner.pd_smooth(&Pose::identity(), dt);
        let target = offset_pose(25.0);
        let out = refiner.pd_smooth(&target, dt);
        let err = geodesic_angle(&out.local_rot[16], &target.local_rot[16]);
        assert!(err < 0.2, "stiff PD should track in one step, err {err}");
    }

    #[test]
    fn pd_zero_gains_freeze() {
        let mut refiner = Refiner::new(RefinerConfig { kp: 0.0, kd: 0.0, ..Default::default() });
        let dt = 1.0 / 60.0;
        let start = offset_pose(5.0);
        refiner.pd_smooth(&start, dt);
        let out = refiner.pd_smooth(&offset_pose(45.0), dt);
        assert!(geodesic_angle(&out.local_rot[16], &start.local_rot[16]) < 1e-12);
    }

    #[test]
    fn foot_lock_pins_supporting_foot() {
        let rig = builtin_toy_rig();
        let mut refiner = Refiner::new(RefinerConfig::default());
        let pose = Pose::identity();
        let contacts = [0.95, 0.9];
        // Drifting translation stream; the lock should absorb the drift.
        let mut prev_world: Option<Vec3> = None;
        for t in 0..50 {
            let drift = Vec3::new(0.005 * t as f64, 0.0, 0.002 * t as f64);
            let adjusted = refiner.foot_lock(&rig, &pose, contacts, drift);
            let mut posed = pose.clone();
            posed.root_trans = adjusted;
            let world = forward_kinematics(&rig, &posed).positions[LEFT_FOOT];
            if let Some(prev) = prev_world {
                assert!((world - prev).norm() < 1e-9, "foot drted at t={t}");
            }
            prev_world = Some(world);
        }

        // Below the threshold nothing changes and the anchor releases.
        let free = refiner.foot_lock(&rig, &pose, [0.2, 0.1], Vec3::new(3.0, 0.0, 0.0));
        assert_eq!(free, Vec3::new(3.0, 0.0, 0.0));

        // Lock/unlock cycling on a stationary pose is a no-op.
        let t0 = Vec3::new(1.0, 0.0, 0.0);
        let locked = refiner.foot_lock(&rig, &pose, contacts, t0);
        assert_eq!(locked, t0);
        let unlocked = refiner.foot_lock(&rig, &pose, [0.0, 0.0], t0);
        assert_eq!(unlocked, t0);
        let relocked = refiner.foot_lock(&rig, &pose, contacts, t0);
        assert_eq!(relocked, t0);
    }

    #[test]
    fn ground_clamp_raises_exactly_by_penetration() {
        let rig = builtin_toy_rig();
        let refiner = Refiner::new(RefinerConfig::default());
        let pose = Pose::identity();
        // Rest feet bottom out at the lowest foot skin vertex; find it.
        let base = refiner.ground_clamp(&rig, &pose, Vec3::new(0.0, 10.0, 0.0));
        assert_eq!(base, Vec3::new(0.0, 10.0, 0.0), "airborne pose unchanged");

        // Push the body 5 cm below the standing height.
        let standing = {
            let mut posed = pose.clone();
            posed.root_trans = Vec3::default();
            let fk = forward_kinematics(&rig, &posed);
            let mut lowest = f64::INFINITY;
            for j in FOOT_JOINTS {
                lowest = lowest.min(fk.positions[j].y);
            }
            if let Ok(sk) = skin_vertices(&rig, &posed) {
                for (v, p) in rig.vertices.as_ref().unwrap().iter().zip(&sk) {
                    let dom = v.weights.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
                    if FOOT_JOINTS.contains(&dom) {
                        lowest = lowest.min(p.y);
                    }
                }
            }
            -lowest
        };
        let sunk = Vec3::new(0.0, standing - 0.05, 0.0);
        let clamped = refiner.ground_clamp(&rig, &pose, sunk);
        assert_abs_diff_eq!(clamped.y, standing, epsilon = 1e-9);
        // Idempotent.
        let again = refiner.ground_clamp(&rig, &pose, clamped);
        assert_abs_diff_eq!(again.y, clamped.y, epsilon = 1e-12);
    }
}
