//! Adam with bias correction, plus global-norm gradient clipping.

use ndarray::Array2;

use super::model::SeqModel;
use super::SeqNetError;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    /// Default moment coefficients (0.9, 0.999, eps 1e-8).
    pub fn new(lr: f64, model: &SeqModel) -> Adam {
        let shapes: Vec<Array2<f64>> =
            model.tensors().iter().map(|(_, t)| Array2::zeros(t.raw_dim())).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: shapes.clone(), v: shapes }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update; `grads` must be shaped exactly like `model`.
    pub fn step(&mut self, model: &mut SeqModel, grads: &SeqModel) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let grad_tensors = grads.tensors();
        for (idx, (_, param)) in model.tensors_mut().into_iter().enumerate() {
            let g = grad_tensors[idx].1;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            m.zip_mut_with(g, |mv, gv| *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv);
            v.zip_mut_with(g, |vv, gv| *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv);
            ndarray::Zip::from(param).and(&*m).and(&*v).for_each(|p, mv, vv| {
                let mhat = mv / bc1;
                let vhat = vv / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
    }
}

/// Global L2 norm over every gradient tensor.
pub fn grad_global_norm(grads: &SeqModel) -> f64 {
    grads
        .tensors()
        .iter()
        .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescale gradients in place when their global norm exceeds `max_norm`;
/// returns the pre-clip norm. Non-finite gradients are an error.
pub fn clip_grad_norm(grads: &mut SeqModel, max_norm: f64) -> Result<f64, SeqNetError> {
    if !grads.all_finite() {
        return Err(SeqNetError::NonFiniteGradient);
    }
    let norm = grad_global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.mapv_inplace(|v| v * scale);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqnet::model::{Direction, SeqModelSpec};

    fn tiny_spec() -> SeqModelSpec {
        SeqModelSpec { input_dim: 2, hidden_dim: 3, output_dim: 2, layers: 1, direction: Direction::Uni }
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut grads = SeqModel::zeros(tiny_spec());
        // Put a lone 2.0 in one tensor: global norm 2.
        grads.output.w[[0, 0]] = 2.0;
        let norm = clip_grad_norm(&mut grads, 1.0).unwrap();
        assert!((norm - 2.0).abs() < 1e-12);
        assert!((grads.output.w[[0, 0]] - 1.0).abs() < 1e-12, "halved");

        let mut small = SeqModel::zeros(tiny_spec());
        small.output.w[[0, 0]] = 0.5;
        clip_grad_norm(&mut small, 1.0).unwrap();
        assert_eq!(small.output.w[[0, 0]], 0.5, "identity below threshold");

        let mut bad = SeqModel::zeros(tiny_spec());
        bad.output.w[[0, 0]] = f64::NAN;
        assert!(matches!(clip_grad_norm(&mut bad, 1.0), Err(SeqNetError::NonFiniteGradient)));
    }

    #[test]
    fn first_adam_step_is_signed_lr_for_large_grads() {
        let mut model = SeqModel::zeros(tiny_spec());
        let mut grads = SeqModel::zeros(tiny_spec());
        grads.output.w[[0, 0]] = 1000.0;
        grads.output.w[[1, 1]] = -500.0;
        let mut opt = Adam::new(1e-3, &model);
        opt.step(&mut model, &grads);
        // m_hat/sqrt(v_hat) -> sign(g) when |g| >> eps.
        assert!((model.output.w[[0, 0]] + 1e-3).abs() < 1e-8);
        assert!((model.output.w[[1, 1]] - 1e-3).abs() < 1e-8);
        assert_eq!(opt.steps_taken(), 1);
    }
}
