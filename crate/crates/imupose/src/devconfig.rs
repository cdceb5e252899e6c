//! Device-location vocabulary, the plausible device-location combinations,
//! and packing of per-location IMU readings into the 60-value network input.
//!
//! Packing layout is frozen: the five locations in [`BodyLocation::ALL`]
//! order, 12 values each (3 acceleration, then the 3x3 orientation row-major).
//! Acceleration is scaled by `1/ACCEL_SCALE` at packing time; this is the one
//! place the scale is applied, for both synthesized and live data.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::rotmath::{RotMat, Vec3};

/// Acceleration normalization divisor (m/s^2), applied in [`pack_input`].
pub const ACCEL_SCALE: f64 = 30.0;

/// Values per location slot: 3 acceleration + 9 rotation.
pub const SLOT_WIDTH: usize = 12;

/// Total input width: 5 locations x 12 values.
pub const INPUT_DIM: usize = 60;

#[derive(Debug, Error, PartialEq)]
pub enum DevError {
    #[error("no reading provided for active location {0}")]
    MissingReading(BodyLocation),
    #[error("unknown location id '{0}'")]
    UnknownLocation(String),
    #[error("'{0}' is not one of the plausible device combinations")]
    ImplausibleCombo(String),
}

/// The five on-body sensor sites, in frozen packing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BodyLocation {
    RightPocket,
    LeftPocket,
    RightWrist,
    LeftWrist,
    Head,
}

impl BodyLocation {
    pub const ALL: [BodyLocation; 5] = [
        BodyLocation::RightPocket,
        BodyLocation::LeftPocket,
        BodyLocation::RightWrist,
        BodyLocation::LeftWrist,
        BodyLocation::Head,
    ];

    /// Slot index in the packed input vector.
    pub fn index(self) -> usize {
        match self {
            BodyLocation::RightPocket => 0,
            BodyLocation::LeftPocket => 1,
            BodyLocation::RightWrist => 2,
            BodyLocation::LeftWrist => 3,
            BodyLocation::Head => 4,
        }
    }

    /// Stable string id used in CLI flags, rig files and the wire protocol.
    pub fn id(self) -> &'static str {
        match self {
            BodyLocation::RightPocket => "rpocket",
            BodyLocation::LeftPocket => "lpocket",
            BodyLocation::RightWrist => "rwrist",
            BodyLocation::LeftWrist => "lwrist",
            BodyLocation::Head => "head",
        }
    }

    pub fn from_id(id: &str) -> Result<Self, DevError> {
        BodyLocation::ALL
            .iter()
            .copied()
            .find(|l| l.id() == id)
            .ok_or_else(|| DevError::UnknownLocation(id.to_string()))
    }
}

impl fmt::Display for BodyLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Device kind, kept for bookkeeping only; the model sees locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceKind {
    Phone,
    Watch,
    Earbuds,
}

/// An active set of sensor locations plus the device assignment that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCombo {
    mask: u8,
    devices: Vec<(DeviceKind, BodyLocation)>,
}

impl DeviceCombo {
    pub fn contains(&self, loc: BodyLocation) -> bool {
        self.mask & (1 << loc.index()) != 0
    }

    pub fn active(&self) -> impl Iterator<Item = BodyLocation> + '_ {
        BodyLocation::ALL.iter().copied().filter(|l| self.contains(*l))
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    /// Device kinds behind this location set (first plausible assignment).
    pub fn devices(&self) -> &[(DeviceKind, BodyLocation)] {
        &self.devices
    }

    /// Stable id: active location ids joined by '+' in packing order.
    pub fn id(&self) -> String {
        self.active().map(|l| l.id()).collect::<Vec<_>>().join("+")
    }

    /// Parse a combo id; the set must be one of [`enumerate_combos`].
    pub fn from_id(id: &str) -> Result<Self, DevError> {
        let mut mask = 0u8;
        for part in id.split('+') {
            mask |= 1 << BodyLocation::from_id(part.trim())?.index();
        }
        enumerate_combos()
            .into_iter()
            .find(|c| c.mask == mask)
            .ok_or_else(|| DevError::ImplausibleCombo(id.to_string()))
    }
}

impl fmt::Display for DeviceCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Enumerate the plausible device-location combinations.
///
/// Placements: phone in either pocket, held at either wrist, at the head, or
/// absent; watch on either wrist or absent; earbuds (one merged stream) at
/// the head, in a pocketed case, or absent. Same-location collisions collapse
/// and the all-absent case is dropped, leaving 24 distinct location sets.
/// The returned order (by set size, then packing order) is frozen and
/// snapshot-tested.
pub fn enumerate_combos() -> Vec<DeviceCombo> {
    use BodyLocation::*;
    use DeviceKind::*;
    let phone = [Some(LeftPocket), Some(RightPocket), Some(LeftWrist), Some(RightWrist), Some(Head), None];
    let watch = [Some(LeftWrist), Some(RightWrist), None];
    let earbuds = [Some(Head), Some(LeftPocket), Some(RightPocket), None];

    let mut by_mask: BTreeMap<u8, Vec<(DeviceKind, BodyLocation)>> = BTreeMap::new();
    for p in phone {
        for w in watch {
            for e in earbuds {
                let placements: Vec<(DeviceKind, BodyLocation)> = [
                    p.map(|l| (Phone, l)),
                    w.map(|l| (Watch, l)),
                    e.map(|l| (Earbuds, l)),
                ]
                .into_iter()
                .flatten()
                .collect();
                if placements.is_empty() {
                    continue;
                }
                let mask = placements.iter().fold(0u8, |m, (_, l)| m | 1 << l.index());
                // Collisions (two devices at one location) collapse to the set.
                by_mask.entry(mask).or_insert(placements);
            }
        }
    }

    let mut combos: Vec<DeviceCombo> =
        by_mask.into_iter().map(|(mask, devices)| DeviceCombo { mask, devices }).collect();
    combos.sort_by_key(|c| (c.len(), c.mask));
    combos
}

/// One IMU sample in the model frame: gravity-free acceleration (m/s^2,
/// unscaled) and orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub accel: Vec3,
    pub orient: RotMat,
}

/// The masked 60-value network input for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFrame {
    pub x: [f64; INPUT_DIM],
}

impl Default for InputFrame {
    fn default() -> Self {
        InputFrame { x: [0.0; INPUT_DIM] }
    }
}

/// Pack readings for the combo's active locations; absent slots stay zero.
///
/// Acceleration is divided by [`ACCEL_SCALE`] here.
pub fn pack_input(
    readings: &BTreeMap<BodyLocation, SensorReading>,
    combo: &DeviceCombo,
) -> Result<InputFrame, DevError> {
    let mut frame = InputFrame::default();
    for loc in combo.active() {
        let r = readings.get(&loc).ok_or(DevError::MissingReading(loc))?;
        let base = loc.index() * SLOT_WIDTH;
        let a = r.accel * (1.0 / ACCEL_SCALE);
        frame.x[base] = a.x;
        frame.x[base + 1] = a.y;
        frame.x[base + 2] = a.z;
        frame.x[base + 3..base + 12].copy_from_slice(&r.orient.m);
    }
    Ok(frame)
}
