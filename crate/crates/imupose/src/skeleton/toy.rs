//! Built-in 24-joint rig mirroring the SMPL topology, with a coarse skin.
//!
//! Proportions are a rough adult figure in a T-pose (arms along +-X). The
//! skin is a sparse cloud of vertices along each bone, enough for
//! vertex-level metrics without any mesh assets.

use std::collections::BTreeMap;

use crate::devconfig::BodyLocation;
use crate::rotmath::Vec3;

use super::{Rig, SensorSite, SkinVertex};

const JOINTS: [(&str, i32, [f64; 3]); 24] = [
    ("pelvis", -1, [0.0, 0.0, 0.0]),
    ("l_hip", 0, [0.09, -0.06, 0.0]),
    ("r_hip", 0, [-0.09, -0.06, 0.0]),
    ("spine1", 0, [0.0, 0.11, 0.0]),
    ("l_knee", 1, [0.0, -0.38, 0.0]),
    ("r_knee", 2, [0.0, -0.38, 0.0]),
    ("spine2", 3, [0.0, 0.12, 0.0]),
    ("l_ankle", 4, [0.0, -0.40, 0.0]),
    ("r_ankle", 5, [0.0, -0.40, 0.0]),
    ("spine3", 6, [0.0, 0.12, 0.0]),
    ("l_foot", 7, [0.0, -0.06, 0.12]),
    ("r_foot", 8, [0.0, -0.06, 0.12]),
    ("neck", 9, [0.0, 0.12, 0.0]),
    ("l_collar", 9, [0.07, 0.08, 0.0]),
    ("r_collar", 9, [-0.07, 0.08, 0.0]),
    ("head", 12, [0.0, 0.10, 0.0]),
    ("l_shoulder", 13, [0.10, 0.0, 0.0]),
    ("r_shoulder", 14, [-0.10, 0.0, 0.0]),
    ("l_elbow", 16, [0.26, 0.0, 0.0]),
    ("r_elbow", 17, [-0.26, 0.0, 0.0]),
    ("l_wrist", 18, [0.25, 0.0, 0.0]),
    ("r_wrist", 19, [-0.25, 0.0, 0.0]),
    ("l_hand", 20, [0.08, 0.0, 0.0]),
    ("r_hand", 21, [-0.08, 0.0, 0.0]),
];

/// Construct the built-in rig. Always validates.
pub fn builtin_toy_rig() -> Rig {
    let names = JOINTS.iter().map(|(n, _, _)| n.to_string()).collect();
    let parent: Vec<i32> = JOINTS.iter().map(|(_, p, _)| *p).collect();
    let rest_offset: Vec<Vec3> = JOINTS.iter().map(|(_, _, o)| Vec3::from_array(*o)).collect();

    // Rest world positions, needed to seed skin vertices.
    let mut rest = vec![Vec3::default(); 24];
    for j in 1..24 {
        rest[j] = rest[parent[j] as usize] + rest_offset[j];
    }

    let mut vertices = Vec::new();
    for j in 1..24usize {
        let p = parent[j] as usize;
        let a = rest[p];
        let b = rest[j];
        // Perpendicular bump so vertices sit off the bone axis.
        let axis = b - a;
        let bump = if axis.x.abs() > axis.y.abs() {
            Vec3::new(0.0, 0.02, 0.0)
        } else {
            Vec3::new(0.02, 0.0, 0.0)
        };
        for (f, w_child) in [(0.25, 0.0), (0.5, 0.3), (0.75, 0.6)] {
            let pos = a + (b - a) * f + bump;
            let weights = if w_child == 0.0 {
                vec![(p, 1.0)]
            } else {
                vec![(p, 1.0 - w_child), (j, w_child)]
            };
            vertices.push(SkinVertex { position: pos, weights });
        }
    }

    let mut location_map = BTreeMap::new();
    location_map.insert(BodyLocation::RightPocket, SensorSite { joint: 2, offset: Vec3::default() });
    location_map.insert(BodyLocation::LeftPocket, SensorSite { joint: 1, offset: Vec3::default() });
    location_map.insert(BodyLocation::RightWrist, SensorSite { joint: 21, offset: Vec3::default() });
    location_map.insert(BodyLocation::LeftWrist, SensorSite { joint: 20, offset: Vec3::default() });
    location_map.insert(BodyLocation::Head, SensorSite { joint: 15, offset: Vec3::default() });

    let rig = Rig { names, parent, rest_offset, vertices: Some(vertices), location_map };
    rig.validate().expect("builtin rig must validate");
    rig
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_rig_shape() {
        let rig = builtin_toy_rig();
        assert_eq!(rig.joint_count(), 24);
        assert_eq!(rig.parent[0], -1);
        assert!(rig.vertices.as_ref().unwrap().len() >= 50);
        assert_eq!(rig.location_map.len(), 5);
    }

    #[test]
    fn toy_rig_is_t_pose_sideways_arms() {
        let rig = builtin_toy_rig();
        let rest = rig.rest_world_positions();
        // Wrists out along +-X, head up.
        assert!(rest[20].x > 0.5);
        assert!(rest[21].x < -0.5);
        assert!(rest[15].y > 0.4);
        // Feet below the pelvis.
        assert!(rest[10].y < -0.8);
        assert!(rest[11].y < -0.8);
    }
}
