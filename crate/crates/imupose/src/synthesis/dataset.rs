//! Binary training-dataset format, little-endian.
//!
//! Layout: magic `MPDS`, version u32, window length u32, fps f32, channel
//! flags u32, combo table (count u32, then per combo a length-prefixed id),
//! window count u32, then per window: combo table index u32 followed by the
//! channels (inputs Nx60 f32, joints Nx72 f32, rot6d Nx108 f32, contacts
//! Nx2 u8, root velocity Nx3 f32).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::devconfig::{DeviceCombo, InputFrame, INPUT_DIM};
use crate::rotmath::Vec3;

use super::{LabeledWindow, SynthError};

const MAGIC: &[u8; 4] = b"MPDS";
const VERSION: u32 = 1;
// All channels are always written; the flags word keeps the format
// self-describing for future partial datasets.
const FLAGS_ALL: u32 = 0b1111;

fn bad(msg: impl Into<String>) -> SynthError {
    SynthError::DatasetFormat(msg.into())
}

/// A windowed training set sharing one window length and frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub window: usize,
    pub fps: f64,
    pub windows: Vec<LabeledWindow>,
}

impl Dataset {
    /// Window counts keyed by combo id, for manifests and logs.
    pub fn counts_per_combo(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for w in &self.windows {
            *counts.entry(w.combo.id()).or_insert(0) += 1;
        }
        counts
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), SynthError> {
    let file = std::fs::File::create(path).map_err(|e| bad(e.to_string()))?;
    let mut w = std::io::BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(ds.window as u32)?;
        w.write_f32::<LittleEndian>(ds.fps as f32)?;
        w.write_u32::<LittleEndian>(FLAGS_ALL)?;

        // Combo table in first-appearance order.
        let mut combo_ids: Vec<String> = Vec::new();
        let mut combo_index: BTreeMap<String, u32> = BTreeMap::new();
        for win in &ds.windows {
            let id = win.combo.id();
            combo_index.entry(id.clone()).or_insert_with(|| {
                combo_ids.push(id);
                (combo_ids.len() - 1) as u32
            });
        }
        w.write_u32::<LittleEndian>(combo_ids.len() as u32)?;
        for id in &combo_ids {
            w.write_u16::<LittleEndian>(id.len() as u16)?;
            w.write_all(id.as_bytes())?;
        }

        w.write_u32::<LittleEndian>(ds.windows.len() as u32)?;
        for win in &ds.windows {
            w.write_u32::<LittleEndian>(combo_index[&win.combo.id()])?;
            for f in &win.inputs {
                for v in f.x {
                    w.write_f32::<LittleEndian>(v as f32)?;
                }
            }
            for row in &win.joints_gt {
                for v in row {
                    w.write_f32::<LittleEndian>(*v as f32)?;
                }
            }
            for row in &win.rot6d_gt {
                for v in row {
                    w.write_f32::<LittleEndian>(*v as f32)?;
                }
            }
            for row in &win.contacts_gt {
                w.write_u8(row[0] as u8)?;
                w.write_u8(row[1] as u8)?;
            }
            for v in &win.rootvel_gt {
                for c in v.to_array() {
                    w.write_f32::<LittleEndian>(c as f32)?;
                }
            }
        }
        w.flush()
    })();
    res.map_err(|e| bad(e.to_string()))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, SynthError> {
    let file = std::fs::File::open(path).map_err(|e| bad(e.to_string()))?;
    let mut r = std::io::BufReader::new(file);
    load_dataset_from(&mut r)
}

fn load_dataset_from<R: Read>(r: &mut R) -> Result<Dataset, SynthError> {
    let io = |e: std::io::Error| bad(e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version > VERSION {
        return Err(bad(format!("unsupported version {version} (newest supported {VERSION})")));
    }
    let n = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let fps = r.read_f32::<LittleEndian>().map_err(io)? as f64;
    let flags = r.read_u32::<LittleEndian>().map_err(io)?;
    if flags != FLAGS_ALL {
        return Err(bad(format!("unsupported channel flags {flags:#b}")));
    }

    let combo_count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut combos = Vec::with_capacity(combo_count);
    for _ in 0..combo_count {
        let len = r.read_u16::<LittleEndian>().map_err(io)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(io)?;
        let id = String::from_utf8(buf).map_err(|e| bad(e.to_string()))?;
        combos.push(DeviceCombo::from_id(&id).map_err(|e| bad(e.to_string()))?);
    }

    let win_count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut windows = Vec::with_capacity(win_count);
    for _ in 0..win_count {
        let ci = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let combo = combos
            .get(ci)
            .cloned()
            .ok_or_else(|| bad(format!("combo index {ci} out of range")))?;
        let mut inputs = Vec::with_capacity(n);
        for _ in 0..n {
            let mut f = InputFrame::default();
            for v in f.x.iter_mut().take(INPUT_DIM) {
                *v = r.read_f32::<LittleEndian>().map_err(io)? as f64;
            }
            inputs.push(f);
        }
        let mut joints_gt = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = [0.0; 72];
            for v in &mut row {
                *v = r.read_f32::<LittleEndian>().map_err(io)? as f64;
            }
            joints_gt.push(row);
        }
        let mut rot6d_gt = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = [0.0; 108];
            for v in &mut row {
                *v = r.read_f32::<LittleEndian>().map_err(io)? as f64;
            }
            rot6d_gt.push(row);
        }
        let mut contacts_gt = Vec::with_capacity(n);
        for _ in 0..n {
            contacts_gt
                .push([r.read_u8().map_err(io)? as f64, r.read_u8().map_err(io)? as f64]);
        }
        let mut rootvel_gt = Vec::with_capacity(n);
        for _ in 0..n {
            rootvel_gt.push(Vec3::new(
                r.read_f32::<LittleEndian>().map_err(io)? as f64,
                r.read_f32::<LittleEndian>().map_err(io)? as f64,
                r.read_f32::<LittleEndian>().map_err(io)? as f64,
            ));
        }
        windows.push(LabeledWindow { combo, inputs, joints_gt, rot6d_gt, contacts_gt, rootvel_gt });
    }
    Ok(Dataset { window: n, fps, windows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devconfig::enumerate_combos;
    use crate::skeleton::{builtin_toy_rig, MotionSequence, Pose};
    use crate::synthesis::make_windows;

    #[test]
    fn dataset_round_trip_and_restability() {
        let rig = builtin_toy_rig();
        let frames: Vec<Pose> = (0..24)
            .map(|t| {
                let mut p = Pose::identity();
                p.local_rot[16] = crate::rotmath::RotMat::rot_z(3.0 * t as f64);
                p.root_trans = Vec3::new(0.01 * t as f64, 1.0, 0.0);
                p
            })
            .collect();
        let seq = MotionSequence::new(60.0, frames);
        let combos: Vec<_> = enumerate_combos().into_iter().take(3).collect();
        let windows = make_windows(&rig, &seq, &combos, 8, 8, crate::synthesis::CONTACT_DISTANCE_M).unwrap();
        let ds = Dataset { window: 8, fps: 60.0, windows };

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.mpds");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.window, ds.window);
        assert_eq!(back.fps, ds.fps);
        assert_eq!(back.windows.len(), ds.windows.len());
        assert_eq!(back.counts_per_combo(), ds.counts_per_combo());

        // Values round-trip at f32 precision.
        for (a, b) in back.windows.iter().zip(&ds.windows) {
            assert_eq!(a.combo, b.combo);
            for (x, y) in a.inputs.iter().zip(&b.inputs) {
                for (u, v) in x.x.iter().zip(&y.x) {
                    assert!((u - v).abs() <= (v.abs() * 1e-6).max(1e-7));
                }
            }
            assert_eq!(a.contacts_gt, b.contacts_gt);
        }

        // Saving the loaded dataset is byte-identical.
        let path2 = dir.path().join("train2.mpds");
        save_dataset(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_newer_major_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.mpds");
        let ds = Dataset { window: 8, fps: 60.0, windows: vec![] };
        save_dataset(&ds, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_dataset(&path).is_err());
    }
}
