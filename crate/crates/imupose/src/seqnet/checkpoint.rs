//! Checkpoint format, little-endian.
//!
//! Layout: magic `MPCK`, version u32, hidden u32, layers u32, window u32,
//! fps f32, step table (count u32, then per head a length-prefixed name and
//! a u64 step count), then the named-tensor table: count u32, and per tensor
//! a length-prefixed name `<head>.<tensor>`, rows u32, cols u32, f32 payload.
//!
//! Tensor names inside a head follow [`super::SeqModel::tensors`]:
//! `l{i}.{fwd|bwd}.{w_ih,w_hh,b}`, `out.w`, `out.b`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{Head, ModelBundle, SeqModel, SeqNetError};

const MAGIC: &[u8; 4] = b"MPCK";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> SeqNetError {
    SeqNetError::Checkpoint(msg.into())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u16::<LittleEndian>(s.len() as u16)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String, SeqNetError> {
    let len = r.read_u16::<LittleEndian>().map_err(|e| bad(e.to_string()))? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| bad(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| bad(e.to_string()))
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<(), SeqNetError> {
    bundle.validate()?;
    let file = std::fs::File::create(path).map_err(|e| bad(e.to_string()))?;
    let mut w = std::io::BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(bundle.meta.hidden as u32)?;
        w.write_u32::<LittleEndian>(bundle.meta.layers as u32)?;
        w.write_u32::<LittleEndian>(bundle.meta.window as u32)?;
        w.write_f32::<LittleEndian>(bundle.meta.fps as f32)?;
        w.write_u32::<LittleEndian>(bundle.meta.steps.len() as u32)?;
        for (name, steps) in &bundle.meta.steps {
            write_str(&mut w, name)?;
            w.write_u64::<LittleEndian>(*steps)?;
        }

        let mut named: Vec<(String, &Array2<f64>)> = Vec::new();
        let heads: Vec<(Head, &SeqModel)> = Head::CORE
            .iter()
            .map(|&h| (h, bundle.head(h).expect("core head")))
            .chain(bundle.velocity_imu.as_ref().map(|m| (Head::VelocityImu, m)))
            .collect();
        for (head, model) in heads {
            for (name, tensor) in model.tensors() {
                named.push((format!("{}.{}", head.name(), name), tensor));
            }
        }
        w.write_u32::<LittleEndian>(named.len() as u32)?;
        for (name, tensor) in named {
            write_str(&mut w, &name)?;
            w.write_u32::<LittleEndian>(tensor.nrows() as u32)?;
            w.write_u32::<LittleEndian>(tensor.ncols() as u32)?;
            for v in tensor.iter() {
                w.write_f32::<LittleEndian>(*v as f32)?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| bad(e.to_string()))
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle, SeqNetError> {
    let file = std::fs::File::open(path).map_err(|e| bad(e.to_string()))?;
    let mut r = std::io::BufReader::new(file);
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
    let hidden = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let layers = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let window = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let fps = r.read_f32::<LittleEndian>().map_err(io)? as f64;
    let step_count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut steps = BTreeMap::new();
    for _ in 0..step_count {
        let name = read_str(&mut r)?;
        steps.insert(name, r.read_u64::<LittleEndian>().map_err(io)?);
    }

    let tensor_count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut tensors: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    for _ in 0..tensor_count {
        let name = read_str(&mut r)?;
        let rows = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.read_f32::<LittleEndian>().map_err(io)? as f64);
        }
        let arr = Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(e.to_string()))?;
        if tensors.insert(name.clone(), arr).is_some() {
            return Err(bad(format!("duplicate tensor '{name}'")));
        }
    }

    let mut bundle = ModelBundle::zeros(hidden, layers, window, fps);
    bundle.meta.steps = steps;
    let has_imu_head = tensors.keys().any(|k| k.starts_with("velocity_imu."));
    if has_imu_head {
        bundle.velocity_imu = Some(SeqModel::zeros(Head::VelocityImu.spec(hidden, layers)));
    }

    let mut heads: Vec<(Head, &mut SeqModel)> = vec![
        (Head::Joint, &mut bundle.joint),
        (Head::Theta, &mut bundle.theta),
        (Head::Contact, &mut bundle.contact),
        (Head::Velocity, &mut bundle.velocity),
    ];
    if let Some(m) = bundle.velocity_imu.as_mut() {
        heads.push((Head::VelocityImu, m));
    }
    for (head, model) in heads {
        for (name, tensor) in model.tensors_mut() {
            let full = format!("{}.{}", head.name(), name);
            let loaded = tensors
                .remove(&full)
                .ok_or_else(|| bad(format!("missing tensor '{full}'")))?;
            if loaded.raw_dim() != tensor.raw_dim() {
                return Err(bad(format!(
                    "tensor '{full}': shape {:?}, expected {:?}",
                    loaded.shape(),
                    tensor.shape()
                )));
            }
            *tensor = loaded;
        }
    }
    if let Some(name) = tensors.keys().next() {
        return Err(bad(format!("unknown tensor '{name}'")));
    }
    bundle.validate()?;
    Ok(bundle)
}
