//! Generic motion importer: raw rotation/translation arrays described by a
//! JSON manifest, converted into the canonical motion format.
//!
//! The manifest declares fps, frame count, up axis, rotation layout, units
//! and element type; the arrays are flat little-endian binaries. Z-up
//! sources are remapped to the +Y-up convention by the fixed basis change
//! `(x, y, z) -> (x, z, -y)`; rotations conjugate through it, translations
//! rotate and rescale.

use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rotmath::{RotMat, Vec3};
use crate::skeleton::{MotionSequence, Pose, JOINT_COUNT};

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("manifest invalid: field '{field}': {msg}")]
    ManifestInvalid { field: &'static str, msg: String },
    #[error("manifest file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ImportError {
    ImportError::ManifestInvalid { field, msg: msg.into() }
}

/// Declarative description of one raw motion clip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportManifest {
    pub fps: Option<f64>,
    pub frame_count: Option<usize>,
    /// "y" (native) or "z" (remapped).
    pub up_axis: Option<String>,
    /// "rotmat_rowmajor" or "rotmat_colmajor".
    pub rotation_layout: Option<String>,
    /// "m", "cm" or "mm".
    pub units: Option<String>,
    /// "f32" or "f64".
    pub dtype: Option<String>,
    /// Path (relative to the manifest) of frame_count x 24 x 9 values.
    pub rotations: Option<String>,
    /// Path of frame_count x 3 values.
    pub translations: Option<String>,
}

struct Declared {
    fps: f64,
    frame_count: usize,
    z_up: bool,
    col_major: bool,
    unit_scale: f64,
    f64_data: bool,
    rotations: PathBuf,
    translations: PathBuf,
}

fn resolve(manifest: &ImportManifest, dir: &Path) -> Result<Declared, ImportError> {
    let fps = manifest.fps.ok_or_else(|| invalid("fps", "missing"))?;
    if !(fps > 0.0) {
        return Err(invalid("fps", format!("{fps} must be positive")));
    }
    let frame_count = manifest.frame_count.ok_or_else(|| invalid("frame_count", "missing"))?;
    let z_up = match manifest.up_axis.as_deref() {
        Some("y") | None => false,
        Some("z") => true,
        Some(other) => return Err(invalid("up_axis", format!("'{other}', expected 'y' or 'z'"))),
    };
    let col_major = match manifest.rotation_layout.as_deref() {
        Some("rotmat_rowmajor") | None => false,
        Some("rotmat_colmajor") => true,
        Some(other) => {
            return Err(invalid(
                "rotation_layout",
                format!("'{other}', expected 'rotmat_rowmajor' or 'rotmat_colmajor'"),
            ))
        }
    };
    let unit_scale = match manifest.units.as_deref() {
        Some("m") | None => 1.0,
        Some("cm") => 0.01,
        Some("mm") => 0.001,
        Some(other) => return Err(invalid("units", format!("'{other}', expected m/cm/mm"))),
    };
    let f64_data = match manifest.dtype.as_deref() {
        Some("f32") | None => false,
        Some("f64") => true,
        Some(other) => return Err(invalid("dtype", format!("'{other}', expected f32/f64"))),
    };
    let rotations = dir.join(
        manifest.rotations.as_deref().ok_or_else(|| invalid("rotations", "missing"))?,
    );
    let translations = dir.join(
        manifest.translations.as_deref().ok_or_else(|| invalid("translations", "missing"))?,
    );
    Ok(Declared { fps, frame_count, z_up, col_major, unit_scale, f64_data, rotations, translations })
}

fn read_values(path: &Path, count: usize, f64_data: bool, field: &'static str) -> Result<Vec<f64>, ImportError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let v = if f64_data {
            r.read_f64::<LittleEndian>()
        } else {
            r.read_f32::<LittleEndian>().map(|v| v as f64)
        };
        out.push(v.map_err(|_| invalid(field, format!("{path:?}: short read, expected {count} values")))?);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(invalid(field, format!("{path:?}: trailing bytes beyond {count} values")));
    }
    Ok(out)
}

/// Basis change for z-up sources: maps source coordinates into the +Y-up
/// frame.
fn z_to_y_up() -> RotMat {
    // (x, y, z) -> (x, z, -y)
    RotMat::from_rows([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0])
}

/// Convert a manifest-described clip into a motion sequence.
pub fn import_motion(manifest_path: &Path) -> Result<MotionSequence, ImportError> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: ImportManifest = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let d = resolve(&manifest, dir)?;

    let rot_values = read_values(&d.rotations, d.frame_count * JOINT_COUNT * 9, d.f64_data, "rotations")?;
    let trans_values = read_values(&d.translations, d.frame_count * 3, d.f64_data, "translations")?;

    let basis = z_to_y_up();
    let mut frames = Vec::with_capacity(d.frame_count);
    for f in 0..d.frame_count {
        let mut local_rot = Vec::with_capacity(JOINT_COUNT);
        for j in 0..JOINT_COUNT {
            let base = (f * JOINT_COUNT + j) * 9;
            let v = &rot_values[base..base + 9];
            let m = if d.col_major {
                RotMat { m: [v[0], v[3], v[6], v[1], v[4], v[7], v[2], v[5], v[8]] }
            } else {
                let mut m = [0.0; 9];
                m.copy_from_slice(v);
                RotMat { m }
            };
            let m = if d.z_up { basis * m * basis.transpose() } else { m };
            local_rot.push(m);
        }
        let t = Vec3::new(
            trans_values[3 * f] * d.unit_scale,
            trans_values[3 * f + 1] * d.unit_scale,
            trans_values[3 * f + 2] * d.unit_scale,
        );
        let t = if d.z_up { basis.apply(t) } else { t };
        frames.push(Pose { local_rot, root_trans: t });
    }
    Ok(MotionSequence::new(d.fps, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use byteorder::{LittleEndian, WriteBytesExt};

    fn write_clip(
        dir: &Path,
        manifest: &ImportManifest,
        rots: &[f64],
        trans: &[f64],
        f64_data: bool,
    ) -> PathBuf {
        let mut rb = Vec::new();
        let mut tb = Vec::new();
        for v in rots {
            if f64_data {
                rb.write_f64::<LittleEndian>(*v).unwrap();
            } else {
                rb.write_f32::<LittleEndian>(*v as f32).unwrap();
            }
        }
        for v in trans {
            if f64_data {
                tb.write_f64::<LittleEndian>(*v).unwrap();
            } else {
                tb.write_f32::<LittleEndian>(*v as f32).unwrap();
            }
        }
        std::fs::write(dir.join("rots.bin"), rb).unwrap();
        std::fs::write(dir.join("trans.bin"), tb).unwrap();
        let path = dir.join("clip.json");
        std::fs::write(&path, serde_json::to_string_pretty(manifest).unwrap()).unwrap();
        path
    }

    fn identity_rots(frames: usize) -> Vec<f64> {
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        (0..frames * JOINT_COUNT).flat_map(|_| eye).collect()
    }

    fn manifest(frames: usize) -> ImportManifest {
        ImportManifest {
            fps: Some(60.0),
            frame_count: Some(frames),
            up_axis: Some("y".into()),
            rotation_layout: Some("rotmat_rowmajor".into()),
            units: Some("m".into()),
            dtype: Some("f64".into()),
            rotations: Some("rots.bin".into()),
            translations: Some("trans.bin".into()),
        }
    }

    #[test]
    fn imports_native_layout_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        let trans = vec![0.25, 1.0, -0.5, 0.5, 1.0, -0.25];
        let path = write_clip(dir.path(), &manifest(2), &identity_rots(2), &trans, true);
        let seq = import_motion(&path).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.fps, 60.0);
        assert_eq!(seq.frames[0].root_trans, Vec3::new(0.25, 1.0, -0.5));
        assert_eq!(seq.frames[1].root_trans, Vec3::new(0.5, 1.0, -0.25));
    }

    #[test]
    fn z_up_vertical_motion_lands_in_y() {
        let dir = tempfile::tempdir().unwrap();
        // Source clip rises along its z (up) axis by 0.1/frame; a yaw about
        // source-up becomes a yaw about +Y after remap.
        let mut m = manifest(3);
        m.up_axis = Some("z".into());
        m.units = Some("cm".into());
        let rz = RotMat::rot_z(30.0);
        let mut rots = identity_rots(3);
        rots[..9].copy_from_slice(&rz.m);
        let trans = vec![0.0, 0.0, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 20.0];
        let path = write_clip(dir.path(), &m, &rots, &trans, true);
        let seq = import_motion(&path).unwrap();
        // 10 cm/frame of source-z motion -> 0.1 m/frame of +Y motion.
        assert_abs_diff_eq!(seq.frames[1].root_trans.y, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(seq.frames[2].root_trans.y, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(seq.frames[1].root_trans.z, 0.0, epsilon = 1e-12);
        // Conjugated rotation: source yaw-about-z becomes yaw-about-y.
        let expect = RotMat::rot_y(30.0);
        assert!(crate::rotmath::geodesic_angle(&seq.frames[0].local_rot[0], &expect) < 1e-9);
    }

    #[test]
    fn column_major_layout_transposes() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(1);
        m.rotation_layout = Some("rotmat_colmajor".into());
        let r = RotMat::rot_x(40.0);
        // Write column-major: the transpose of row-major.
        let mut rots = identity_rots(1);
        rots[..9].copy_from_slice(&r.transpose().m);
        let path = write_clip(dir.path(), &m, &rots, &[0.0, 0.0, 0.0], true);
        let seq = import_motion(&path).unwrap();
        assert!(crate::rotmath::geodesic_angle(&seq.frames[0].local_rot[0], &r) < 1e-12);
    }

    #[test]
    fn manifest_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(1);
        m.fps = None;
        let path = write_clip(dir.path(), &m, &identity_rots(1), &[0.0; 3], true);
        let err = import_motion(&path).unwrap_err();
        assert!(err.to_string().contains("field 'fps'"), "{err}");

        let mut m = manifest(2); // declares 2 frames, provides 1
        m.dtype = Some("f32".into());
        let path = write_clip(dir.path(), &m, &identity_rots(1), &[0.0; 3], false);
        let err = import_motion(&path).unwrap_err();
        assert!(err.to_string().contains("short read"), "{err}");
    }
}
