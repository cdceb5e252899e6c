//! Per-head training loop: seeded shuffling, batch assembly with optional
//! joint-input noise, loss/grad dispatch, clipping, Adam.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::skeleton::Rig;
use crate::synthesis::{add_joint_noise, Dataset, LabeledWindow};

use super::adam::{clip_grad_norm, Adam};
use super::loss::{
    loss_contact_grad, loss_joint_grad, loss_rotation_grad, loss_velocity_cumulative_grad,
};
use super::lstm::Seq;
use super::{Head, ModelBundle, SeqNetError, TrainConfig};

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub steps: u64,
    pub final_loss: f64,
    /// Mean batch loss per completed epoch.
    pub epoch_losses: Vec<f64>,
}

fn batch_imu(windows: &[&LabeledWindow]) -> Seq {
    let n = windows[0].len();
    (0..n)
        .map(|t| Array2::from_shape_fn((60, windows.len()), |(i, b)| windows[b].inputs[t].x[i]))
        .collect()
}

fn batch_joints(windows: &[&LabeledWindow]) -> Seq {
    let n = windows[0].len();
    (0..n)
        .map(|t| Array2::from_shape_fn((72, windows.len()), |(i, b)| windows[b].joints_gt[t][i]))
        .collect()
}

fn batch_rot6d(windows: &[&LabeledWindow]) -> Seq {
    let n = windows[0].len();
    (0..n)
        .map(|t| Array2::from_shape_fn((108, windows.len()), |(i, b)| windows[b].rot6d_gt[t][i]))
        .collect()
}

fn batch_contacts(windows: &[&LabeledWindow]) -> Seq {
    let n = windows[0].len();
    (0..n)
        .map(|t| Array2::from_shape_fn((2, windows.len()), |(i, b)| windows[b].contacts_gt[t][i]))
        .collect()
}

fn batch_rootvel(windows: &[&LabeledWindow]) -> Seq {
    let n = windows[0].len();
    (0..n)
        .map(|t| {
            Array2::from_shape_fn((3, windows.len()), |(i, b)| windows[b].rootvel_gt[t].to_array()[i])
        })
        .collect()
}

/// IMU rows stacked over (optionally noisy) ground-truth joint rows.
fn batch_concat(windows: &[&LabeledWindow], sigma: f64, rng: &mut ChaCha8Rng) -> Seq {
    let imu = batch_imu(windows);
    let joints = batch_joints(windows);
    imu.into_iter()
        .zip(joints)
        .map(|(x, mut j)| {
            if sigma > 0.0 {
                add_joint_noise(j.as_slice_mut().expect("standard layout"), sigma, rng);
            }
            ndarray::concatenate(ndarray::Axis(0), &[x.view(), j.view()]).expect("same batch")
        })
        .collect()
}

/// Train one head on a windowed dataset with the standard recipe. Updates
/// the bundle's step bookkeeping; reports the per-epoch mean loss through
/// `on_epoch`.
pub fn train_head(
    bundle: &mut ModelBundle,
    head: Head,
    dataset: &Dataset,
    rig: &Rig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome, SeqNetError> {
    if dataset.windows.is_empty() {
        return Err(SeqNetError::ShapeMismatch("dataset has no windows".into()));
    }
    if head == Head::VelocityImu {
        bundle.ensure_velocity_imu(cfg.seed);
    }
    let jerk_weight = cfg.jerk_weight;
    let horizons = cfg.horizons.clone();
    let model = bundle.head_mut(head).expect("head exists");
    let mut opt = Adam::new(cfg.lr, model);
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed ^ (head.name().len() as u64).wrapping_mul(0x9E37_79B9));

    let mut order: Vec<usize> = (0..dataset.windows.len()).collect();
    let mut steps: u64 = 0;
    let mut final_loss = f64::NAN;
    let mut epoch_losses = Vec::new();
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let windows: Vec<&LabeledWindow> =
                chunk.iter().map(|&i| &dataset.windows[i]).collect();
            let (loss, grads) = match head {
                Head::Joint => {
                    let inputs = batch_imu(&windows);
                    let gt = batch_joints(&windows);
                    let (out, cache) = model.forward_cached(&inputs)?;
                    let (loss, d_out) = loss_joint_grad(&out, &gt)?;
                    (loss, model.backward(&cache, &d_out))
                }
                Head::Theta => {
                    let inputs = batch_concat(&windows, cfg.noise_sigma, &mut rng);
                    let gt6d = batch_rot6d(&windows);
                    let gt_pos = batch_joints(&windows);
                    let (out, cache) = model.forward_cached(&inputs)?;
                    let (loss, d_out) = loss_rotation_grad(&out, &gt6d, &gt_pos, rig, jerk_weight)?;
                    (loss.total, model.backward(&cache, &d_out))
                }
                Head::Contact => {
                    let inputs = batch_concat(&windows, cfg.noise_sigma, &mut rng);
                    let gt = batch_contacts(&windows);
                    let (out, cache) = model.forward_cached(&inputs)?;
                    let (loss, d_out) = loss_contact_grad(&out, &gt)?;
                    (loss, model.backward(&cache, &d_out))
                }
                Head::Velocity => {
                    let inputs = batch_concat(&windows, cfg.noise_sigma, &mut rng);
                    let gt = batch_rootvel(&windows);
                    let (out, cache) = model.forward_cached(&inputs)?;
                    let (loss, d_out) = loss_velocity_cumulative_grad(&out, &gt, &horizons)?;
                    (loss, model.backward(&cache, &d_out))
                }
                Head::VelocityImu => {
                    let inputs = batch_imu(&windows);
                    let gt = batch_rootvel(&windows);
                    let (out, cache) = model.forward_cached(&inputs)?;
                    let (loss, d_out) = loss_velocity_cumulative_grad(&out, &gt, &horizons)?;
                    (loss, model.backward(&cache, &d_out))
                }
            };
            let mut grads = grads;
            clip_grad_norm(&mut grads, cfg.grad_clip_norm)?;
            opt.step(model, &grads);
            steps += 1;
            epoch_loss += loss;
            batches += 1;
            final_loss = loss;
            if cfg.max_steps.is_some_and(|cap| steps >= cap) {
                epoch_losses.push(epoch_loss / batches as f64);
                on_epoch(epoch, epoch_loss / batches as f64);
                break 'epochs;
            }
        }
        let mean = epoch_loss / batches.max(1) as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }

    *bundle.meta.steps.entry(head.name().to_string()).or_insert(0) += steps;
    Ok(TrainOutcome { steps, final_loss, epoch_losses })
}
