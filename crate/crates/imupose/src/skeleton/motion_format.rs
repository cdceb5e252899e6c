//! Binary motion-sequence format, little-endian.
//!
//! Layout: magic `MPSQ`, version u32, fps f32, frame count u32, channel
//! flags u32 (bit 0 = contacts, bit 1 = root velocity), then per frame:
//! 24x9 f32 local rotations (row-major), 3 f32 root translation, optional
//! 2 u8 contacts, optional 3 f32 root velocity.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::rotmath::{RotMat, Vec3};

use super::{MotionSequence, Pose, SkeletonError, JOINT_COUNT};

const MAGIC: &[u8; 4] = b"MPSQ";
const VERSION: u32 = 1;
const FLAG_CONTACTS: u32 = 1;
const FLAG_ROOT_VELOCITY: u32 = 2;

fn bad(msg: impl Into<String>) -> SkeletonError {
    SkeletonError::MotionFormat(msg.into())
}

pub fn save_motion(seq: &MotionSequence, path: &Path) -> Result<(), SkeletonError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    if let Some(c) = &seq.contacts {
        if c.len() != seq.len() {
            return Err(bad("contacts channel length mismatch"));
        }
    }
    if let Some(v) = &seq.root_velocity {
        if v.len() != seq.len() {
            return Err(bad("root velocity channel length mismatch"));
        }
    }
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_f32::<LittleEndian>(seq.fps as f32)?;
    w.write_u32::<LittleEndian>(seq.len() as u32)?;
    let mut flags = 0;
    if seq.contacts.is_some() {
        flags |= FLAG_CONTACTS;
    }
    if seq.root_velocity.is_some() {
        flags |= FLAG_ROOT_VELOCITY;
    }
    w.write_u32::<LittleEndian>(flags)?;
    for (i, frame) in seq.frames.iter().enumerate() {
        if frame.local_rot.len() != JOINT_COUNT {
            return Err(bad(format!("frame {i}: {} rotations", frame.local_rot.len())));
        }
        for rot in &frame.local_rot {
            for v in rot.m {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        for v in frame.root_trans.to_array() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        if let Some(c) = &seq.contacts {
            w.write_u8(c[i][0] as u8)?;
            w.write_u8(c[i][1] as u8)?;
        }
        if let Some(vel) = &seq.root_velocity {
            for v in vel[i].to_array() {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_motion(path: &Path) -> Result<MotionSequence, SkeletonError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {:?}", magic)));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version > VERSION {
        return Err(bad(format!("unsupported version {version} (newest supported {VERSION})")));
    }
    let fps = r.read_f32::<LittleEndian>()? as f64;
    if !(fps > 0.0) {
        return Err(bad(format!("non-positive fps {fps}")));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let flags = r.read_u32::<LittleEndian>()?;
    let has_contacts = flags & FLAG_CONTACTS != 0;
    let has_vel = flags & FLAG_ROOT_VELOCITY != 0;

    let mut frames = Vec::with_capacity(count);
    let mut contacts = has_contacts.then(|| Vec::with_capacity(count));
    let mut root_velocity = has_vel.then(|| Vec::with_capacity(count));
    for _ in 0..count {
        let mut local_rot = Vec::with_capacity(JOINT_COUNT);
        for _ in 0..JOINT_COUNT {
            let mut m = [0.0f64; 9];
            for v in &mut m {
                *v = r.read_f32::<LittleEndian>()? as f64;
            }
            local_rot.push(RotMat { m });
        }
        let root_trans = Vec3::new(
            r.read_f32::<LittleEndian>()? as f64,
            r.read_f32::<LittleEndian>()? as f64,
            r.read_f32::<LittleEndian>()? as f64,
        );
        frames.push(Pose { local_rot, root_trans });
        if let Some(c) = &mut contacts {
            c.push([r.read_u8()? != 0, r.read_u8()? != 0]);
        }
        if let Some(v) = &mut root_velocity {
            v.push(Vec3::new(
                r.read_f32::<LittleEndian>()? as f64,
                r.read_f32::<LittleEndian>()? as f64,
                r.read_f32::<LittleEndian>()? as f64,
            ));
        }
    }
    Ok(MotionSequence { fps, frames, contacts, root_velocity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::random_rotation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn f32_clean(seq: &mut MotionSequence) {
        // Snap to f32 so a save/load round trip is exact.
        for f in &mut seq.frames {
            for r in &mut f.local_rot {
                for v in &mut r.m {
                    *v = *v as f32 as f64;
                }
            }
            let t = f.root_trans;
            f.root_trans = Vec3::new(t.x as f32 as f64, t.y as f32 as f64, t.z as f32 as f64);
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames: Vec<Pose> = (0..7)
            .map(|i| Pose {
                local_rot: (0..JOINT_COUNT).map(|_| random_rotation(&mut rng)).collect(),
                root_trans: Vec3::new(i as f64 * 0.25, 0.5, -1.0),
            })
            .collect();
        let mut seq = MotionSequence::new(60.0, frames);
        seq.contacts = Some((0..7).map(|i| [i % 2 == 0, true]).collect());
        seq.root_velocity = Some((0..7).map(|i| Vec3::new(0.0, i as f64 * 0.125, 0.0)).collect());
        f32_clean(&mut seq);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.mpsq");
        save_motion(&seq, &path).unwrap();
        let back = load_motion(&path).unwrap();
        assert_eq!(back, seq);

        // Byte-stable on re-save.
        let path2 = dir.path().join("clip2.mpsq");
        save_motion(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_future_version_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.mpsq");
        let seq = MotionSequence::new(60.0, vec![Pose::identity()]);
        save_motion(&seq, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99; // version
        std::fs::write(&path, &bytes).unwrap();
        let e = load_motion(&path).unwrap_err();
        assert!(e.to_string().contains("version"), "{e}");

        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_motion(&path).is_err());
    }
}
