//! Versioned text format for rig files.
//!
//! ```text
//! imupose-rig v1
//! joints 24
//! j <index> <name> <parent> <ox> <oy> <oz>
//! locations 5
//! loc <location-id> <joint> <ox> <oy> <oz>
//! vertices <count>            # section omitted when the rig has no skin
//! v <x> <y> <z> <joint>:<weight> [up to 4 pairs]
//! ```
//!
//! `#` starts a comment; blank lines are ignored. Floats are written in
//! shortest round-trip form, so save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use crate::devconfig::BodyLocation;
use crate::rotmath::Vec3;

use super::{Rig, SensorSite, SkeletonError, SkinVertex};

const HEADER: &str = "imupose-rig v1";

pub fn serialize_rig(rig: &Rig) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&format!("joints {}\n", rig.joint_count()));
    for j in 0..rig.joint_count() {
        let o = rig.rest_offset[j];
        out.push_str(&format!(
            "j {} {} {} {} {} {}\n",
            j, rig.names[j], rig.parent[j], o.x, o.y, o.z
        ));
    }
    out.push_str(&format!("locations {}\n", rig.location_map.len()));
    for loc in BodyLocation::ALL {
        if let Some(site) = rig.location_map.get(&loc) {
            let o = site.offset;
            out.push_str(&format!("loc {} {} {} {} {}\n", loc.id(), site.joint, o.x, o.y, o.z));
        }
    }
    if let Some(verts) = &rig.vertices {
        out.push_str(&format!("vertices {}\n", verts.len()));
        for v in verts {
            out.push_str(&format!("v {} {} {}", v.position.x, v.position.y, v.position.z));
            for (j, w) in &v.weights {
                out.push_str(&format!(" {j}:{w}"));
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_rig(rig: &Rig, path: &Path) -> Result<(), SkeletonError> {
    std::fs::write(path, serialize_rig(rig))?;
    Ok(())
}

pub fn load_rig(path: &Path) -> Result<Rig, SkeletonError> {
    let text = std::fs::read_to_string(path)?;
    parse_rig(&text)
}

struct Cursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Cursor<'a> {
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, raw) in self.lines.by_ref() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                return Some((i + 1, line));
            }
        }
        None
    }
}

fn err(line: usize, msg: impl Into<String>) -> SkeletonError {
    SkeletonError::ParseError { line, msg: msg.into() }
}

fn parse_f64(line: usize, field: &str, s: &str) -> Result<f64, SkeletonError> {
    s.parse().map_err(|_| err(line, format!("invalid {field} '{s}'")))
}

fn parse_usize(line: usize, field: &str, s: &str) -> Result<usize, SkeletonError> {
    s.parse().map_err(|_| err(line, format!("invalid {field} '{s}'")))
}

pub fn parse_rig(text: &str) -> Result<Rig, SkeletonError> {
    let mut cur = Cursor { lines: text.lines().enumerate() };

    let (ln, header) = cur.next_content().ok_or_else(|| err(0, "empty rig file"))?;
    if header != HEADER {
        return Err(err(ln, format!("bad header '{header}', expected '{HEADER}'")));
    }

    let (ln, joints_line) = cur.next_content().ok_or_else(|| err(ln, "missing joints section"))?;
    let count = match joints_line.strip_prefix("joints ") {
        Some(n) => parse_usize(ln, "joint count", n.trim())?,
        None => return Err(err(ln, "expected 'joints <count>'")),
    };

    let mut names = vec![String::new(); count];
    let mut parent = vec![0i32; count];
    let mut rest_offset = vec![Vec3::default(); count];
    let mut seen = vec![false; count];
    for _ in 0..count {
        let (ln, line) = cur.next_content().ok_or_else(|| err(ln, "truncated joint table"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 || f[0] != "j" {
            return Err(err(ln, "expected 'j <index> <name> <parent> <ox> <oy> <oz>'"));
        }
        let idx = parse_usize(ln, "joint index", f[1])?;
        if idx >= count {
            return Err(err(ln, format!("joint index {idx} out of range")));
        }
        if seen[idx] {
            return Err(err(ln, format!("duplicate joint index {idx}")));
        }
        seen[idx] = true;
        names[idx] = f[2].to_string();
        parent[idx] =
            f[3].parse().map_err(|_| err(ln, format!("invalid parent '{}'", f[3])))?;
        rest_offset[idx] = Vec3::new(
            parse_f64(ln, "offset x", f[4])?,
            parse_f64(ln, "offset y", f[5])?,
            parse_f64(ln, "offset z", f[6])?,
        );
    }

    let (ln, loc_line) = cur.next_content().ok_or_else(|| err(ln, "missing locations section"))?;
    let loc_count = match loc_line.strip_prefix("locations ") {
        Some(n) => parse_usize(ln, "location count", n.trim())?,
        None => return Err(err(ln, "expected 'locations <count>'")),
    };
    let mut location_map = BTreeMap::new();
    for _ in 0..loc_count {
        let (ln, line) = cur.next_content().ok_or_else(|| err(ln, "truncated location table"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 || f[0] != "loc" {
            return Err(err(ln, "expected 'loc <id> <joint> <ox> <oy> <oz>'"));
        }
        let loc = BodyLocation::from_id(f[1]).map_err(|e| err(ln, e.to_string()))?;
        let site = SensorSite {
            joint: parse_usize(ln, "location joint", f[2])?,
            offset: Vec3::new(
                parse_f64(ln, "location ox", f[3])?,
                parse_f64(ln, "location oy", f[4])?,
                parse_f64(ln, "location oz", f[5])?,
            ),
        };
        location_map.insert(loc, site);
    }

    let mut vertices = None;
    if let Some((ln, line)) = cur.next_content() {
        let vcount = match line.strip_prefix("vertices ") {
            Some(n) => parse_usize(ln, "vertex count", n.trim())?,
            None => return Err(err(ln, "expected 'vertices <count>'")),
        };
        let mut verts = Vec::with_capacity(vcount);
        for _ in 0..vcount {
            let (ln, line) =
                cur.next_content().ok_or_else(|| err(ln, "truncated vertex table"))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 5 || f.len() > 8 || f[0] != "v" {
                return Err(err(ln, "expected 'v <x> <y> <z> <joint>:<weight>...'"));
            }
            let position = Vec3::new(
                parse_f64(ln, "vertex x", f[1])?,
                parse_f64(ln, "vertex y", f[2])?,
                parse_f64(ln, "vertex z", f[3])?,
            );
            let mut weights = Vec::new();
            for pair in &f[4..] {
                let (j, w) = pair
                    .split_once(':')
                    .ok_or_else(|| err(ln, format!("expected <joint>:<weight>, got '{pair}'")))?;
                weights.push((parse_usize(ln, "weight joint", j)?, parse_f64(ln, "weight", w)?));
            }
            verts.push(SkinVertex { position, weights });
        }
        vertices = Some(verts);
        if let Some((ln, line)) = cur.next_content() {
            return Err(err(ln, format!("unexpected trailing content '{line}'")));
        }
    }

    let rig = Rig { names, parent, rest_offset, vertices, location_map };
    rig.validate()?;
    Ok(rig)
}
