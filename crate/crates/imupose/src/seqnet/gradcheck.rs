//! Central finite-difference verification of the analytic gradients.
//!
//! Intended for small models (hidden <= 8, short windows); every parameter
//! is perturbed individually.

use super::lstm::Seq;
use super::model::SeqModel;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients whose analytic and numeric magnitude both fall below this floor
/// are skipped; central differences carry ~1e-10 absolute noise, which would
/// otherwise dominate the relative error of near-zero entries.
pub const FD_SKIP: f64 = 1e-6;

/// Compare backpropagated gradients against central finite differences for
/// every parameter; returns the maximum relative error.
///
/// `loss` maps the model outputs to `(value, d_value/d_outputs)`.
pub fn grad_check<F>(model: &SeqModel, inputs: &Seq, loss: F) -> f64
where
    F: Fn(&Seq) -> (f64, Seq),
{
    let (outputs, cache) = model.forward_cached(inputs).expect("shapes fixed by caller");
    let (_, d_out) = loss(&outputs);
    let analytic = model.backward(&cache, &d_out);

    let mut work = model.clone();
    let n_tensors = analytic.tensors().len();
    let mut max_rel: f64 = 0.0;
    for ti in 0..n_tensors {
        let len = analytic.tensors()[ti].1.len();
        for i in 0..len {
            let a = analytic.tensors()[ti].1.as_slice().expect("standard layout")[i];
            let eval = |w: &mut SeqModel, delta: f64| {
                {
                    let mut tensors = w.tensors_mut();
                    tensors[ti].1.as_slice_mut().expect("standard layout")[i] += delta;
                }
                let out = w.forward(inputs).expect("shapes fixed");
                loss(&out).0
            };
            let lp = eval(&mut work, FD_STEP);
            let lm = eval(&mut work, -2.0 * FD_STEP);
            eval(&mut work, FD_STEP); // restore
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            if a.abs().max(numeric.abs()) < FD_SKIP {
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqnet::loss::loss_joint_grad;
    use crate::seqnet::model::{Direction, SeqModelSpec};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_only_model_is_exact() {
        // One uni layer with zero recurrent weights plus the linear head is
        // quadratic in the output parameters; MSE gradients check tightly.
        let spec = SeqModelSpec {
            input_dim: 3,
            hidden_dim: 4,
            output_dim: 2,
            layers: 1,
            direction: Direction::Uni,
        };
        let model = SeqModel::init(spec, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inputs: Vec<Array2<f64>> =
            (0..4).map(|_| Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0))).collect();
        let gt: Vec<Array2<f64>> =
            (0..4).map(|_| Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0))).collect();
        let rel = grad_check(&model, &inputs, |out| loss_joint_grad(out, &gt).unwrap());
        assert!(rel < 1e-6, "max rel err {rel}");
    }
}
