//! Stacked uni/bi-directional recurrent sequence model with a linear output
//! layer, full backpropagation through time, and stable tensor naming for
//! checkpoints and optimizer state.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lstm::{cell_backward, cell_forward, CellCache, LstmParams, LstmState, Seq};
use super::SeqNetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Uni,
    Bi,
}

/// Architecture of one sequence model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub layers: usize,
    pub direction: Direction,
}

impl SeqModelSpec {
    /// Feature width feeding the output layer (doubled for bi direction).
    pub fn feature_dim(&self) -> usize {
        match self.direction {
            Direction::Uni => self.hidden_dim,
            Direction::Bi => 2 * self.hidden_dim,
        }
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.feature_dim()
        }
    }

    pub fn validate(&self) -> Result<(), SeqNetError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 || self.layers == 0
        {
            return Err(SeqNetError::BadSpec("all dims and layer count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub fwd: LstmParams,
    pub bwd: Option<LstmParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `(output, feature)`
    pub w: Array2<f64>,
    /// `(output, 1)`
    pub b: Array2<f64>,
}

/// A trainable recurrent sequence model.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    pub spec: SeqModelSpec,
    pub layers: Vec<LayerParams>,
    pub output: LinearParams,
}

impl SeqModel {
    /// All-zero parameters (also the gradient container shape).
    pub fn zeros(spec: SeqModelSpec) -> SeqModel {
        let layers = (0..spec.layers)
            .map(|l| {
                let input = spec.layer_input_dim(l);
                LayerParams {
                    fwd: LstmParams::zeros(input, spec.hidden_dim),
                    bwd: (spec.direction == Direction::Bi)
                        .then(|| LstmParams::zeros(input, spec.hidden_dim)),
                }
            })
            .collect();
        let output = LinearParams {
            w: Array2::zeros((spec.output_dim, spec.feature_dim())),
            b: Array2::zeros((spec.output_dim, 1)),
        };
        SeqModel { spec, layers, output }
    }

    /// Uniform +-1/sqrt(fan_in) weights, zero biases except the forget gate
    /// (+1).
    pub fn init(spec: SeqModelSpec, seed: u64) -> SeqModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = SeqModel::zeros(spec);
        let h = spec.hidden_dim;
        for layer in &mut model.layers {
            for dir in [Some(&mut layer.fwd), layer.bwd.as_mut()].into_iter().flatten() {
                let bound_ih = 1.0 / (dir.w_ih.ncols() as f64).sqrt();
                dir.w_ih.mapv_inplace(|_| rng.random_range(-bound_ih..bound_ih));
                let bound_hh = 1.0 / (h as f64).sqrt();
                dir.w_hh.mapv_inplace(|_| rng.random_range(-bound_hh..bound_hh));
                dir.b.slice_mut(s![h..2 * h, ..]).fill(1.0);
            }
        }
        let bound = 1.0 / (spec.feature_dim() as f64).sqrt();
        model.output.w.mapv_inplace(|_| rng.random_range(-bound..bound));
        model
    }

    /// Named tensors in a stable order (the checkpoint/optimizer contract):
    /// `l{i}.fwd.{w_ih,w_hh,b}`, `l{i}.bwd.{...}`, then `out.w`, `out.b`.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("l{i}.fwd.w_ih"), &layer.fwd.w_ih));
            out.push((format!("l{i}.fwd.w_hh"), &layer.fwd.w_hh));
            out.push((format!("l{i}.fwd.b"), &layer.fwd.b));
            if let Some(bwd) = &layer.bwd {
                out.push((format!("l{i}.bwd.w_ih"), &bwd.w_ih));
                out.push((format!("l{i}.bwd.w_hh"), &bwd.w_hh));
                out.push((format!("l{i}.bwd.b"), &bwd.b));
            }
        }
        out.push(("out.w".into(), &self.output.w));
        out.push(("out.b".into(), &self.output.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("l{i}.fwd.w_ih"), &mut layer.fwd.w_ih));
            out.push((format!("l{i}.fwd.w_hh"), &mut layer.fwd.w_hh));
            out.push((format!("l{i}.fwd.b"), &mut layer.fwd.b));
            if let Some(bwd) = &mut layer.bwd {
                out.push((format!("l{i}.bwd.w_ih"), &mut bwd.w_ih));
                out.push((format!("l{i}.bwd.w_hh"), &mut bwd.w_hh));
                out.push((format!("l{i}.bwd.b"), &mut bwd.b));
            }
        }
        out.push(("out.w".into(), &mut self.output.w));
        out.push(("out.b".into(), &mut self.output.b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, inputs: &Seq) -> Result<(), SeqNetError> {
        for (t, x) in inputs.iter().enumerate() {
            if x.nrows() != self.spec.input_dim {
                return Err(SeqNetError::ShapeMismatch(format!(
                    "input frame {t} has {} rows, model expects {}",
                    x.nrows(),
                    self.spec.input_dim
                )));
            }
        }
        Ok(())
    }

    /// Run the model over a window; `(output_dim, batch)` per timestep.
    pub fn forward(&self, inputs: &Seq) -> Result<Seq, SeqNetError> {
        self.check_input(inputs)?;
        Ok(self.forward_inner(inputs, false).outputs)
    }

    /// Forward keeping every activation needed for [`SeqModel::backward`].
    pub fn forward_cached(&self, inputs: &Seq) -> Result<(Seq, ForwardCache), SeqNetError> {
        self.check_input(inputs)?;
        let pass = self.forward_inner(inputs, true);
        Ok((pass.outputs, pass.cache))
    }

    fn forward_inner(&self, inputs: &Seq, want_cache: bool) -> ForwardPass {
        let steps = inputs.len();
        let batch = inputs.first().map_or(1, |x| x.ncols());
        let mut cache = ForwardCache { layer_inputs: Vec::new(), layer_caches: Vec::new(), features: Vec::new() };
        let mut current: Seq = inputs.to_vec();
        for layer in &self.layers {
            let fwd = run_direction(&layer.fwd, &current, false, batch, want_cache);
            let bwd = layer.bwd.as_ref().map(|p| run_direction(p, &current, true, batch, want_cache));
            let features: Seq = match &bwd {
                Some(b) => {
                    (0..steps).map(|t| concat_rows(&fwd.hidden[t], &b.hidden[t])).collect()
                }
                None => fwd.hidden,
            };
            if want_cache {
                cache.layer_inputs.push(current);
                cache.layer_caches.push((fwd.caches, bwd.map(|b| b.caches)));
            }
            current = features;
        }
        let outputs: Seq = current
            .iter()
            .map(|feat| {
                let mut y = self.output.w.dot(feat);
                y += &self.output.b;
                y
            })
            .collect();
        if want_cache {
            cache.features = current;
        }
        ForwardPass { outputs, cache }
    }

    /// Backpropagate `d_outputs` (gradient w.r.t. every timestep's output);
    /// returns gradients shaped exactly like the model.
    pub fn backward(&self, cache: &ForwardCache, d_outputs: &Seq) -> SeqModel {
        let steps = d_outputs.len();
        let mut grads = SeqModel::zeros(self.spec);

        // Output layer.
        let mut d_feat: Seq = Vec::with_capacity(steps);
        for t in 0..steps {
            let dy = &d_outputs[t];
            grads.output.w += &dy.dot(&cache.features[t].t());
            let db: Array1<f64> = dy.sum_axis(ndarray::Axis(1));
            grads.output.b += &db.insert_axis(ndarray::Axis(1));
            d_feat.push(self.output.w.t().dot(dy));
        }

        // Layers, top down.
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let h = self.spec.hidden_dim;
            let inputs = &cache.layer_inputs[l];
            let (fwd_caches, bwd_caches) = &cache.layer_caches[l];
            let grad_layer = &mut grads.layers[l];

            let (dh_fwd, dh_bwd): (Seq, Option<Seq>) = match &layer.bwd {
                Some(_) => {
                    let mut df = Vec::with_capacity(steps);
                    let mut db = Vec::with_capacity(steps);
                    for t in 0..steps {
                        df.push(d_feat[t].slice(s![0..h, ..]).to_owned());
                        db.push(d_feat[t].slice(s![h..2 * h, ..]).to_owned());
                    }
                    (df, Some(db))
                }
                None => (d_feat.clone(), None),
            };

            let mut d_input = backward_direction(
                &layer.fwd,
                inputs,
                fwd_caches,
                &dh_fwd,
                false,
                &mut grad_layer.fwd,
            );
            if let (Some(bwd), Some(db), Some(bc)) = (&layer.bwd, &dh_bwd, bwd_caches) {
                let d_rev = backward_direction(
                    bwd,
                    inputs,
                    bc,
                    db,
                    true,
                    grad_layer.bwd.as_mut().expect("grads mirror params"),
                );
                for t in 0..steps {
                    d_input[t] += &d_rev[t];
                }
            }
            d_feat = d_input;
        }
        grads
    }

    /// One online step for a unidirectional model; advances `state` in place.
    pub fn step_uni(&self, x: &Array1<f64>, state: &mut UniState) -> Array1<f64> {
        assert_eq!(self.spec.direction, Direction::Uni, "step_uni needs a unidirectional model");
        let mut cur = x.clone().insert_axis(ndarray::Axis(1));
        for (layer, st) in self.layers.iter().zip(&mut state.layers) {
            let (next, _) = cell_forward(&layer.fwd, &cur, st, false);
            cur = next.h.clone();
            *st = next;
        }
        let mut y = self.output.w.dot(&cur);
        y += &self.output.b;
        y.remove_axis(ndarray::Axis(1))
    }
}

/// Streaming state for [`SeqModel::step_uni`], one `(h, c)` per layer.
#[derive(Debug, Clone)]
pub struct UniState {
    pub layers: Vec<LstmState>,
}

impl UniState {
    pub fn zeros(spec: &SeqModelSpec) -> UniState {
        UniState { layers: (0..spec.layers).map(|_| LstmState::zeros(spec.hidden_dim, 1)).collect() }
    }
}

struct DirectionRun {
    hidden: Seq,
    caches: Vec<Option<CellCache>>,
}

fn run_direction(
    p: &LstmParams,
    inputs: &Seq,
    reversed: bool,
    batch: usize,
    want_cache: bool,
) -> DirectionRun {
    let steps = inputs.len();
    let mut state = LstmState::zeros(p.hidden(), batch);
    let mut hidden: Seq = vec![Array2::zeros((0, 0)); steps];
    let mut caches: Vec<Option<CellCache>> = (0..steps).map(|_| None).collect();
    for s in 0..steps {
        let t = if reversed { steps - 1 - s } else { s };
        let (next, cache) = cell_forward(p, &inputs[t], &state, want_cache);
        hidden[t] = next.h.clone();
        caches[t] = cache;
        state = next;
    }
    DirectionRun { hidden, caches }
}

fn backward_direction(
    p: &LstmParams,
    inputs: &Seq,
    caches: &[Option<CellCache>],
    dh_ext: &Seq,
    reversed: bool,
    grads: &mut LstmParams,
) -> Seq {
    let steps = inputs.len();
    let batch = inputs.first().map_or(1, |x| x.ncols());
    let mut d_inputs: Seq = vec![Array2::zeros((0, 0)); steps];
    let mut dh_carry = Array2::zeros((p.hidden(), batch));
    let mut dc_carry = Array2::zeros((p.hidden(), batch));
    for s in (0..steps).rev() {
        // Walk time opposite to this direction's forward order.
        let t = if reversed { steps - 1 - s } else { s };
        let dh = &dh_ext[t] + &dh_carry;
        let cache = caches[t].as_ref().expect("cached forward required");
        let out = cell_backward(p, &inputs[t], cache, &dh, &dc_carry, grads);
        d_inputs[t] = out.dx;
        dh_carry = out.dh_prev;
        dc_carry = out.dc_prev;
    }
    d_inputs
}

fn concat_rows(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("same batch width")
}

pub struct ForwardCache {
    layer_inputs: Vec<Seq>,
    #[allow(clippy::type_complexity)]
    layer_caches: Vec<(Vec<Option<CellCache>>, Option<Vec<Option<CellCache>>>)>,
    features: Seq,
}

struct ForwardPass {
    outputs: Seq,
    cache: ForwardCache,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqnet::lstm::LstmState;

    fn spec(input: usize, hidden: usize, output: usize, layers: usize, dir: Direction) -> SeqModelSpec {
        SeqModelSpec { input_dim: input, hidden_dim: hidden, output_dim: output, layers, direction: dir }
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = SeqModel::zeros(spec(6, 4, 3, 2, Direction::Bi));
        let inputs: Seq = (0..5).map(|_| Array2::from_elem((6, 2), 0.7)).collect();
        let out = m.forward(&inputs).unwrap();
        assert!(out.iter().all(|y| y.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = SeqModel::zeros(spec(6, 4, 3, 1, Direction::Uni));
        let inputs: Seq = vec![Array2::zeros((5, 1))];
        assert!(matches!(m.forward(&inputs), Err(SeqNetError::ShapeMismatch(_))));
    }

    #[test]
    fn length_one_uni_equals_single_cell_step() {
        let m = SeqModel::init(spec(6, 4, 3, 1, Direction::Uni), 11);
        let x = Array2::from_shape_fn((6, 1), |(i, _)| 0.1 * i as f64 - 0.25);
        let out = m.forward(&vec![x.clone()]).unwrap();

        let (state, _) = cell_forward(&m.layers[0].fwd, &x, &LstmState::zeros(4, 1), false);
        let mut y = m.output.w.dot(&state.h);
        y += &m.output.b;
        for (a, b) in out[0].iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-15);
        }

        // And the streaming step agrees.
        let mut st = UniState::zeros(&m.spec);
        let y2 = m.step_uni(&x.column(0).to_owned(), &mut st);
        for (a, b) in out[0].iter().zip(y2.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn uni_forward_equals_streaming_steps() {
        let m = SeqModel::init(spec(5, 6, 2, 2, Direction::Uni), 3);
        let inputs: Seq =
            (0..7).map(|t| Array2::from_shape_fn((5, 1), |(i, _)| ((t + i) as f64 * 0.37).sin())).collect();
        let batch = m.forward(&inputs).unwrap();
        let mut st = UniState::zeros(&m.spec);
        for t in 0..7 {
            let y = m.step_uni(&inputs[t].column(0).to_owned(), &mut st);
            for (a, b) in batch[t].iter().zip(y.iter()) {
                assert!((a - b).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn tied_bi_model_maps_palindrome_to_palindrome() {
        // Tie the two directions and the two halves of the output weights;
        // then reversing the input sequence reverses the features exactly.
        let mut m = SeqModel::init(spec(4, 5, 3, 1, Direction::Bi), 21);
        let fwd = m.layers[0].fwd.clone();
        m.layers[0].bwd = Some(fwd);
        let half = m.output.w.slice(s![.., 0..5]).to_owned();
        m.output.w.slice_mut(s![.., 5..10]).assign(&half);

        let mut inputs: Seq =
            (0..4).map(|t| Array2::from_shape_fn((4, 1), |(i, _)| ((t * 7 + i) as f64).cos())).collect();
        // Palindrome: x0 x1 x1 x0 -> length 4.
        inputs[2] = inputs[1].clone();
        inputs[3] = inputs[0].clone();

        let out = m.forward(&inputs).unwrap();
        for t in 0..4 {
            let mirror = 3 - t;
            for (a, b) in out[t].iter().zip(out[mirror].iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_forget_biased() {
        let a = SeqModel::init(spec(6, 4, 3, 2, Direction::Bi), 99);
        let b = SeqModel::init(spec(6, 4, 3, 2, Direction::Bi), 99);
        assert_eq!(a, b);
        let c = SeqModel::init(spec(6, 4, 3, 2, Direction::Bi), 100);
        assert_ne!(a, c);
        // Forget-gate bias slice is +1.
        let bias = &a.layers[0].fwd.b;
        for i in 4..8 {
            assert_eq!(bias[[i, 0]], 1.0);
        }
        for i in 0..4 {
            assert_eq!(bias[[i, 0]], 0.0);
        }
    }
}
