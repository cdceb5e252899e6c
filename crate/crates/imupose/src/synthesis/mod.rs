//! Training-data generation from motion clips: virtual IMU signals,
//! foot-contact and root-velocity labels, and sliding training windows.
//!
//! Conventions: acceleration is the second central difference of the virtual
//! sensor position (endpoints copy the nearest interior value) and carries no
//! gravity term; root velocities are stored in the root-yaw-aligned frame of
//! the later frame.

mod dataset;

pub use dataset::{load_dataset, save_dataset, Dataset};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::devconfig::{self, BodyLocation, DeviceCombo, InputFrame, SensorReading};
use crate::rotmath::{yaw_rotation, RotMat, Vec3};
use crate::skeleton::{
    forward_kinematics, root_relative, rot6d_of_pose, FkResult, MotionSequence, Rig, LEFT_FOOT,
    RIGHT_FOOT,
};

/// Per-frame foot displacement below which a foot counts as planted (meters).
pub const CONTACT_DISTANCE_M: f64 = 0.008;

/// Default training window length (frames; 1 s at 60 Hz).
pub const DEFAULT_WINDOW: usize = 60;

/// Default training window stride (frames).
pub const DEFAULT_STRIDE: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("sequence too short: {got} frames, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("dataset file error: {0}")]
    DatasetFormat(String),
}

/// Undo [`normalize_acceleration`].
pub fn denormalize_acceleration(a: Vec3) -> Vec3 {
    a * devconfig::ACCEL_SCALE
}

/// Scale a raw acceleration to network range (divide by 30 m/s^2).
pub fn normalize_acceleration(a: Vec3) -> Vec3 {
    a * (1.0 / devconfig::ACCEL_SCALE)
}

/// World position of the virtual sensor at `location` for one FK frame.
pub fn sensor_world_position(rig: &Rig, fk: &FkResult, location: BodyLocation) -> Vec3 {
    let site = rig.location_map[&location];
    fk.positions[site.joint] + fk.rotations[site.joint].apply(site.offset)
}

/// World orientation of the bone carrying the virtual sensor at one frame.
pub fn synth_orientation(
    rig: &Rig,
    seq: &MotionSequence,
    location: BodyLocation,
    frame: usize,
) -> RotMat {
    let fk = forward_kinematics(rig, &seq.frames[frame]);
    fk.rotations[rig.location_map[&location].joint]
}

/// Virtual-sensor acceleration over a whole sequence (m/s^2, world frame):
/// `a(t) = (p(t-1) + p(t+1) - 2 p(t)) * fps^2`, endpoints copying the
/// nearest interior value.
pub fn synth_acceleration(
    rig: &Rig,
    seq: &MotionSequence,
    location: BodyLocation,
) -> Result<Vec<Vec3>, SynthError> {
    let fk: Vec<FkResult> = seq.frames.iter().map(|p| forward_kinematics(rig, p)).collect();
    accel_from_positions(
        &fk.iter().map(|f| sensor_world_position(rig, f, location)).collect::<Vec<_>>(),
        seq.fps,
    )
}

fn accel_from_positions(pos: &[Vec3], fps: f64) -> Result<Vec<Vec3>, SynthError> {
    if pos.len() < 3 {
        return Err(SynthError::TooShort { got: pos.len(), need: 3 });
    }
    let fps2 = fps * fps;
    let mut out = Vec::with_capacity(pos.len());
    out.push(Vec3::default()); // placeholder, overwritten below
    for t in 1..pos.len() - 1 {
        out.push((pos[t - 1] + pos[t + 1] - pos[t] * 2.0) * fps2);
    }
    out[0] = out[1];
    out.push(out[pos.len() - 2]);
    Ok(out)
}

/// Per-frame (left, right) planted-foot labels: a foot is in contact when it
/// moves less than `threshold` meters between consecutive frames. Frame 0
/// copies frame 1.
pub fn contact_labels(
    rig: &Rig,
    seq: &MotionSequence,
    threshold: f64,
) -> Result<Vec<[bool; 2]>, SynthError> {
    if seq.len() < 2 {
        return Err(SynthError::TooShort { got: seq.len(), need: 2 });
    }
    let feet: Vec<[Vec3; 2]> = seq
        .frames
        .iter()
        .map(|p| {
            let fk = forward_kinematics(rig, p);
            [fk.positions[LEFT_FOOT], fk.positions[RIGHT_FOOT]]
        })
        .collect();
    let mut out = Vec::with_capacity(seq.len());
    out.push([false, false]);
    for t in 1..seq.len() {
        out.push([
            (feet[t][0] - feet[t - 1][0]).norm() < threshold,
            (feet[t][1] - feet[t - 1][1]).norm() < threshold,
        ]);
    }
    out[0] = out[1];
    Ok(out)
}

/// Per-frame root velocity (m/frame) in the root-yaw-aligned frame of the
/// later frame; `v(0) = 0`.
pub fn root_velocity_labels(seq: &MotionSequence) -> Result<Vec<Vec3>, SynthError> {
    if seq.len() < 2 {
        return Err(SynthError::TooShort { got: seq.len(), need: 2 });
    }
    let mut out = Vec::with_capacity(seq.len());
    out.push(Vec3::default());
    for t in 1..seq.len() {
        let delta = seq.frames[t].root_trans - seq.frames[t - 1].root_trans;
        let yaw = yaw_rotation(&seq.frames[t].local_rot[0]);
        out.push(yaw.apply_transpose(delta));
    }
    Ok(out)
}

/// Add i.i.d. zero-mean Gaussian noise to every coordinate.
pub fn add_joint_noise<R: Rng>(joints: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let dist = Normal::new(0.0, sigma).expect("sigma >= 0");
    for v in joints.iter_mut() {
        *v += dist.sample(rng);
    }
}

/// One training window: masked inputs plus every ground-truth channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub combo: DeviceCombo,
    pub inputs: Vec<InputFrame>,
    /// Root-relative joint positions, 24 x 3 per frame.
    pub joints_gt: Vec<[f64; 72]>,
    /// 6D rotations of the 18 predicted joints per frame.
    pub rot6d_gt: Vec<[f64; 108]>,
    /// {0,1} per foot per frame.
    pub contacts_gt: Vec<[f64; 2]>,
    /// Heading-frame root velocity per frame (m/frame).
    pub rootvel_gt: Vec<Vec3>,
}

impl LabeledWindow {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Everything synthesized once per sequence, before windowing.
struct SequenceChannels {
    inputs_per_loc: Vec<Vec<SensorReading>>, // [location][frame]
    joints: Vec<[f64; 72]>,
    rot6d: Vec<[f64; 108]>,
    contacts: Vec<[f64; 2]>,
    rootvel: Vec<Vec3>,
}

fn synthesize_channels(
    rig: &Rig,
    seq: &MotionSequence,
    contact_threshold: f64,
) -> Result<SequenceChannels, SynthError> {
    let fk: Vec<FkResult> = seq.frames.iter().map(|p| forward_kinematics(rig, p)).collect();

    let mut inputs_per_loc = Vec::with_capacity(BodyLocation::ALL.len());
    for loc in BodyLocation::ALL {
        let pos: Vec<Vec3> = fk.iter().map(|f| sensor_world_position(rig, f, loc)).collect();
        let acc = accel_from_positions(&pos, seq.fps)?;
        let joint = rig.location_map[&loc].joint;
        let readings = fk
            .iter()
            .zip(acc)
            .map(|(f, a)| SensorReading { accel: a, orient: f.rotations[joint] })
            .collect();
        inputs_per_loc.push(readings);
    }

    let joints = fk
        .iter()
        .map(|f| {
            let rel = root_relative(f);
            let mut row = [0.0; 72];
            for (j, p) in rel.iter().enumerate() {
                row[3 * j..3 * j + 3].copy_from_slice(&p.to_array());
            }
            row
        })
        .collect();

    let rot6d = seq.frames.iter().map(rot6d_of_pose).collect();

    let contacts = match &seq.contacts {
        Some(c) => c.iter().map(|c| [c[0] as u8 as f64, c[1] as u8 as f64]).collect(),
        None => contact_labels(rig, seq, contact_threshold)?
            .iter()
            .map(|c| [c[0] as u8 as f64, c[1] as u8 as f64])
            .collect(),
    };
    let rootvel = match &seq.root_velocity {
        Some(v) => v.clone(),
        None => root_velocity_labels(seq)?,
    };

    Ok(SequenceChannels { inputs_per_loc, joints, rot6d, contacts, rootvel })
}

/// Raw per-frame virtual-sensor readings for every location: what ideal
/// (noise- and gravity-free) devices would report before calibration, i.e.
/// orientation plus acceleration in each device's own frame.
pub fn synthesize_readings(
    rig: &Rig,
    seq: &MotionSequence,
) -> Result<Vec<std::collections::BTreeMap<BodyLocation, SensorReading>>, SynthError> {
    let ch = synthesize_channels(rig, seq, CONTACT_DISTANCE_M)?;
    Ok((0..seq.len())
        .map(|t| {
            BodyLocation::ALL
                .iter()
                .map(|&loc| {
                    let r = ch.inputs_per_loc[loc.index()][t];
                    let device_frame = SensorReading {
                        accel: r.orient.apply_transpose(r.accel),
                        orient: r.orient,
                    };
                    (loc, device_frame)
                })
                .collect()
        })
        .collect())
}

/// Per-frame packed (and masked) network inputs for one combo over a whole
/// sequence; the windowless counterpart of [`make_windows`].
pub fn synthesize_inputs(
    rig: &Rig,
    seq: &MotionSequence,
    combo: &DeviceCombo,
) -> Result<Vec<InputFrame>, SynthError> {
    let ch = synthesize_channels(rig, seq, CONTACT_DISTANCE_M)?;
    Ok((0..seq.len())
        .map(|t| {
            let readings =
                combo.active().map(|loc| (loc, ch.inputs_per_loc[loc.index()][t])).collect();
            devconfig::pack_input(&readings, combo).expect("all locations synthesized")
        })
        .collect())
}

/// Slide windows of length `n` (stride `stride`) over the sequence, one pass
/// per requested combo, packing and masking inputs per combo.
pub fn make_windows(
    rig: &Rig,
    seq: &MotionSequence,
    combos: &[DeviceCombo],
    n: usize,
    stride: usize,
    contact_threshold: f64,
) -> Result<Vec<LabeledWindow>, SynthError> {
    if n < 8 {
        return Err(SynthError::BadParam(format!("window length {n}, need >= 8")));
    }
    if stride < 1 {
        return Err(SynthError::BadParam("stride must be >= 1".into()));
    }
    if seq.len() < n {
        return Err(SynthError::TooShort { got: seq.len(), need: n });
    }
    let ch = synthesize_channels(rig, seq, contact_threshold)?;

    // Pre-pack per combo per frame.
    let mut windows = Vec::new();
    for combo in combos {
        let packed: Vec<InputFrame> = (0..seq.len())
            .map(|t| {
                let readings = combo
                    .active()
                    .map(|loc| (loc, ch.inputs_per_loc[loc.index()][t]))
                    .collect();
                devconfig::pack_input(&readings, combo).expect("all locations synthesized")
            })
            .collect();
        let mut start = 0;
        while start + n <= seq.len() {
            windows.push(LabeledWindow {
                combo: combo.clone(),
                inputs: packed[start..start + n].to_vec(),
                joints_gt: ch.joints[start..start + n].to_vec(),
                rot6d_gt: ch.rot6d[start..start + n].to_vec(),
                contacts_gt: ch.contacts[start..start + n].to_vec(),
                rootvel_gt: ch.rootvel[start..start + n].to_vec(),
            });
            start += stride;
        }
    }
    Ok(windows)
}
