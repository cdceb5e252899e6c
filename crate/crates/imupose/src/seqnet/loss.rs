//! Training losses and their analytic gradients.
//!
//! All losses sum over feature dimensions and average over frames and batch
//! (so the jerk weight is scale-stable across window lengths). The rotation
//! loss backpropagates through Gram-Schmidt orthonormalization and the
//! forward-kinematics chain; every gradient here is covered by the
//! finite-difference checker.

use ndarray::Array2;

use crate::rotmath::{RotMat, Vec3, IDENTITY};
use crate::skeleton::{Rig, PREDICTED_JOINTS};

use super::lstm::{sigmoid, Seq};
use super::SeqNetError;

/// Cumulative-velocity horizons (frames), following the lineage defaults.
pub const DEFAULT_HORIZONS: [usize; 4] = [1, 3, 9, 27];

fn check_shapes(pred: &Seq, gt: &Seq, what: &str) -> Result<(usize, usize), SeqNetError> {
    if pred.len() != gt.len() {
        return Err(SeqNetError::ShapeMismatch(format!(
            "{what}: {} pred frames vs {} gt frames",
            pred.len(),
            gt.len()
        )));
    }
    let (mut dim, mut batch) = (0, 0);
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.raw_dim() != g.raw_dim() {
            return Err(SeqNetError::ShapeMismatch(format!(
                "{what}: frame {t} pred {:?} vs gt {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if t == 0 {
            dim = p.nrows();
            batch = p.ncols();
        }
    }
    if pred.is_empty() {
        return Err(SeqNetError::ShapeMismatch(format!("{what}: empty sequence")));
    }
    Ok((dim, batch))
}

/// Squared L2 over all entries, averaged over frames and batch.
pub fn loss_joint(pred: &Seq, gt: &Seq) -> Result<f64, SeqNetError> {
    Ok(loss_joint_grad(pred, gt)?.0)
}

pub fn loss_joint_grad(pred: &Seq, gt: &Seq) -> Result<(f64, Seq), SeqNetError> {
    let (_, batch) = check_shapes(pred, gt, "loss_joint")?;
    let scale = 1.0 / (pred.len() as f64 * batch as f64);
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        let diff = p - g;
        loss += diff.iter().map(|v| v * v).sum::<f64>();
        grads.push(diff * (2.0 * scale));
    }
    Ok((loss * scale, grads))
}

/// Rotation-loss breakdown: `total = ori + pos + lambda * jerk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationLoss {
    pub total: f64,
    pub ori: f64,
    pub pos: f64,
    pub jerk: f64,
}

/// Combined rotation loss: raw-6D L2, FK position error, and third-difference
/// jerk, per Eq. 2-6 semantics.
pub fn loss_rotation(
    pred6d: &Seq,
    gt6d: &Seq,
    gt_pos: &Seq,
    rig: &Rig,
    lambda: f64,
) -> Result<RotationLoss, SeqNetError> {
    Ok(loss_rotation_grad(pred6d, gt6d, gt_pos, rig, lambda)?.0)
}

pub fn loss_rotation_grad(
    pred6d: &Seq,
    gt6d: &Seq,
    gt_pos: &Seq,
    rig: &Rig,
    lambda: f64,
) -> Result<(RotationLoss, Seq), SeqNetError> {
    let (dim, batch) = check_shapes(pred6d, gt6d, "loss_rotation")?;
    if dim != 108 {
        return Err(SeqNetError::ShapeMismatch(format!("loss_rotation: 6D dim {dim}, expected 108")));
    }
    let (pdim, pbatch) = check_shapes(gt_pos, gt_pos, "loss_rotation positions")?;
    if pdim != 72 || pbatch != batch || gt_pos.len() != pred6d.len() {
        return Err(SeqNetError::ShapeMismatch("loss_rotation: position channel shape".into()));
    }

    let steps = pred6d.len();
    let scale = 1.0 / (steps as f64 * batch as f64);
    let mut grads: Seq = pred6d.iter().map(|p| Array2::zeros(p.raw_dim())).collect();

    // L_ori on raw 6D values.
    let mut ori = 0.0;
    for t in 0..steps {
        let diff = &pred6d[t] - &gt6d[t];
        ori += diff.iter().map(|v| v * v).sum::<f64>();
        grads[t] += &(diff * (2.0 * scale));
    }
    ori *= scale;

    // L_pos through Gram-Schmidt + FK, per frame and batch column.
    let mut pos = 0.0;
    let mut theta = [0.0; 108];
    let mut gt_col = [0.0; 72];
    let mut dtheta = [0.0; 108];
    for t in 0..steps {
        for col in 0..batch {
            for (i, v) in theta.iter_mut().enumerate() {
                *v = pred6d[t][[i, col]];
            }
            for (i, v) in gt_col.iter_mut().enumerate() {
                *v = gt_pos[t][[i, col]];
            }
            pos += fk_pos_term(rig, &theta, &gt_col, &mut dtheta);
            for (i, d) in dtheta.iter().enumerate() {
                grads[t][[i, col]] += d * scale;
            }
        }
    }
    pos *= scale;

    // L_jerk: third-order backward difference, frames t >= 3.
    let mut jerk = 0.0;
    if steps >= 4 {
        const STENCIL: [f64; 4] = [1.0, -3.0, 3.0, -1.0];
        for t in 3..steps {
            let d = &pred6d[t] - &(&pred6d[t - 1] * 3.0) + &(&pred6d[t - 2] * 3.0) - &pred6d[t - 3];
            jerk += d.iter().map(|v| v * v).sum::<f64>();
            for (k, c) in STENCIL.iter().enumerate() {
                grads[t - k] += &(&d * (2.0 * lambda * scale * c));
            }
        }
        jerk *= scale;
    }

    let total = ori + pos + lambda * jerk;
    Ok((RotationLoss { total, ori, pos, jerk }, grads))
}

/// One frame/column of the FK position term: returns the squared position
/// error summed over joints and fills `dtheta` with its gradient.
///
/// The FK runs in the root-relative frame (root pinned to the origin with
/// identity rotation), matching the ground-truth joint channel; the root's
/// own 6D prediction therefore receives no position gradient. Degenerate 6D
/// inputs decode to identity with zero gradient.
fn fk_pos_term(rig: &Rig, theta: &[f64; 108], gt: &[f64; 72], dtheta: &mut [f64; 108]) -> f64 {
    let n = rig.joint_count();
    dtheta.fill(0.0);

    let mut local = vec![IDENTITY; n];
    let mut gs: Vec<Option<GsCache>> = (0..n).map(|_| None).collect();
    for (k, &j) in PREDICTED_JOINTS.iter().enumerate() {
        if j == 0 {
            continue; // root rotation is removed in the root-relative frame
        }
        let cache = gs_forward(&theta[6 * k..6 * k + 6]);
        if cache.ok {
            local[j] = RotMat::from_cols(cache.c1, cache.c2, cache.c3);
        }
        gs[j] = Some(cache);
    }

    // Root-relative FK.
    let mut rot_w = vec![IDENTITY; n];
    let mut pos_w = vec![Vec3::default(); n];
    for j in 1..n {
        let p = rig.parent[j] as usize;
        rot_w[j] = rot_w[p] * local[j];
        pos_w[j] = pos_w[p] + rot_w[p].apply(rig.rest_offset[j]);
    }

    let mut loss = 0.0;
    let mut dp = vec![Vec3::default(); n];
    for j in 0..n {
        let diff = pos_w[j] - Vec3::new(gt[3 * j], gt[3 * j + 1], gt[3 * j + 2]);
        loss += diff.dot(diff);
        dp[j] = diff * 2.0;
    }

    // Reverse pass over the tree. RotMat doubles as a plain 3x3 container
    // for the gradient accumulators.
    let zero3x3 = RotMat { m: [0.0; 9] };
    let mut d_rot_w = vec![zero3x3; n];
    for j in (1..n).rev() {
        let p = rig.parent[j] as usize;
        // p_w[j] = p_w[p] + R_w[p] * off[j]
        let d = dp[j];
        dp[p] += d;
        let off = rig.rest_offset[j];
        let mut outer = zero3x3;
        for (r, dr) in [d.x, d.y, d.z].into_iter().enumerate() {
            outer.m[3 * r] = dr * off.x;
            outer.m[3 * r + 1] = dr * off.y;
            outer.m[3 * r + 2] = dr * off.z;
        }
        d_rot_w[p] = mat_add(&d_rot_w[p], &outer);
        // R_w[j] = R_w[p] * local[j]
        d_rot_w[p] = mat_add(&d_rot_w[p], &(d_rot_w[j] * local[j].transpose()));
        let d_local = rot_w[p].transpose() * d_rot_w[j];

        if let Some(cache) = &gs[j] {
            if cache.ok {
                let k = PREDICTED_JOINTS.iter().position(|&x| x == j).expect("predicted");
                let d6 = gs_backward(cache, [d_local.col(0), d_local.col(1), d_local.col(2)]);
                dtheta[6 * k..6 * k + 6].copy_from_slice(&d6);
            }
        }
    }
    loss
}

fn mat_add(a: &RotMat, b: &RotMat) -> RotMat {
    let mut m = [0.0; 9];
    for i in 0..9 {
        m[i] = a.m[i] + b.m[i];
    }
    RotMat { m }
}

struct GsCache {
    a2: Vec3,
    n1: f64,
    n2: f64,
    dot: f64,
    c1: Vec3,
    c2: Vec3,
    c3: Vec3,
    ok: bool,
}

const GS_EPS: f64 = 1e-8;

fn gs_forward(theta: &[f64]) -> GsCache {
    let a1 = Vec3::new(theta[0], theta[1], theta[2]);
    let a2 = Vec3::new(theta[3], theta[4], theta[5]);
    let n1 = a1.norm();
    if n1 < GS_EPS {
        return GsCache { a2, n1, n2: 0.0, dot: 0.0, c1: a1, c2: a2, c3: a1, ok: false };
    }
    let c1 = a1 * (1.0 / n1);
    let dot = c1.dot(a2);
    let u2 = a2 - c1 * dot;
    let n2 = u2.norm();
    if n2 < GS_EPS {
        return GsCache { a2, n1, n2, dot, c1, c2: u2, c3: a2, ok: false };
    }
    let c2 = u2 * (1.0 / n2);
    let c3 = c1.cross(c2);
    GsCache { a2, n1, n2, dot, c1, c2, c3, ok: true }
}

/// Adjoint of Gram-Schmidt: gradients w.r.t. the decoded columns map back to
/// the raw 6 values.
fn gs_backward(cache: &GsCache, d_cols: [Vec3; 3]) -> [f64; 6] {
    let [g1_direct, g2_direct, g3] = d_cols;
    // c3 = c1 x c2
    let mut g1 = g1_direct + cache.c2.cross(g3);
    let g2 = g2_direct + g3.cross(cache.c1);
    // c2 = u2 / |u2|
    let h2 = (g2 - cache.c2 * cache.c2.dot(g2)) * (1.0 / cache.n2);
    // u2 = a2 - (c1 . a2) c1
    let da2 = h2 - cache.c1 * cache.c1.dot(h2);
    g1 = g1 - cache.a2 * h2.dot(cache.c1) - h2 * cache.dot;
    // c1 = a1 / |a1|
    let da1 = (g1 - cache.c1 * cache.c1.dot(g1)) * (1.0 / cache.n1);
    [da1.x, da1.y, da1.z, da2.x, da2.y, da2.z]
}

/// Mean binary cross-entropy from logits, numerically stable.
pub fn loss_contact(logits: &Seq, gt: &Seq) -> Result<f64, SeqNetError> {
    Ok(loss_contact_grad(logits, gt)?.0)
}

pub fn loss_contact_grad(logits: &Seq, gt: &Seq) -> Result<(f64, Seq), SeqNetError> {
    let (dim, batch) = check_shapes(logits, gt, "loss_contact")?;
    let scale = 1.0 / (dim as f64 * logits.len() as f64 * batch as f64);
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, y) in logits.iter().zip(gt) {
        for (zv, yv) in z.iter().zip(y.iter()) {
            loss += zv.max(0.0) - zv * yv + (-zv.abs()).exp().ln_1p();
        }
        let mut g = z.mapv(sigmoid);
        g -= y;
        grads.push(g * scale);
    }
    Ok((loss * scale, grads))
}

/// Cumulative L2 velocity loss: for each horizon, squared error between
/// h-frame cumulative sums, averaged over start frames; mean over horizons.
pub fn loss_velocity_cumulative(
    pred: &Seq,
    gt: &Seq,
    horizons: &[usize],
) -> Result<f64, SeqNetError> {
    Ok(loss_velocity_cumulative_grad(pred, gt, horizons)?.0)
}

pub fn loss_velocity_cumulative_grad(
    pred: &Seq,
    gt: &Seq,
    horizons: &[usize],
) -> Result<(f64, Seq), SeqNetError> {
    let (_dim, batch) = check_shapes(pred, gt, "loss_velocity")?;
    let steps = pred.len();
    for &h in horizons {
        if h == 0 || h > steps {
            return Err(SeqNetError::HorizonTooLong { horizon: h, window: steps });
        }
    }
    let residual: Seq = pred.iter().zip(gt).map(|(p, g)| p - g).collect();
    let mut loss = 0.0;
    let mut grads: Seq = pred.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
    let h_scale = 1.0 / horizons.len() as f64;
    for &h in horizons {
        let starts = steps - h + 1;
        let scale = h_scale / (starts as f64 * batch as f64);
        let mut window_sum: Array2<f64> = residual[0].clone();
        for r in residual.iter().take(h).skip(1) {
            window_sum += r;
        }
        for s in 0..starts {
            if s > 0 {
                window_sum -= &residual[s - 1];
                window_sum += &residual[s + h - 1];
            }
            loss += scale * window_sum.iter().map(|v| v * v).sum::<f64>();
            let g = &window_sum * (2.0 * scale);
            for t in s..s + h {
                grads[t] += &g;
            }
        }
    }
    Ok((loss, grads))
}
