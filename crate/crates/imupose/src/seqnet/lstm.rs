//! LSTM cell: batched forward with cached intermediates and the matching
//! hand-derived backward pass.
//!
//! Gate order in the stacked weight matrices is `[input, forget, cell,
//! output]`, each a `hidden`-row chunk. Sequences are `Vec<Array2>` with one
//! `(dim, batch)` matrix per timestep.

use ndarray::{s, Array1, Array2};

/// One timestep of every sequence in the batch: shape `(dim, batch)`.
pub type Seq = Vec<Array2<f64>>;

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of one LSTM direction: stacked gate weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `(4 hidden, input)`
    pub w_ih: Array2<f64>,
    /// `(4 hidden, hidden)`
    pub w_hh: Array2<f64>,
    /// `(4 hidden, 1)`
    pub b: Array2<f64>,
}

impl LstmParams {
    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.ncols()
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            b: Array2::zeros((4 * hidden, 1)),
        }
    }
}

/// Recurrent state `(h, c)` for one direction-layer, batch width B.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize, batch: usize) -> Self {
        LstmState { h: Array2::zeros((hidden, batch)), c: Array2::zeros((hidden, batch)) }
    }
}

/// Saved activations for one cell step, consumed by `cell_backward`.
pub struct CellCache {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

/// One gate evaluation: returns the new state; optionally records a cache.
pub fn cell_forward(
    p: &LstmParams,
    x: &Array2<f64>,
    state: &LstmState,
    want_cache: bool,
) -> (LstmState, Option<CellCache>) {
    let h = p.hidden();
    // Single-column batches (online inference) go through GEMV; the packed
    // GEMM path only pays off for real batches.
    let mut pre = if x.ncols() == 1 {
        let v = p.w_ih.dot(&x.column(0)) + p.w_hh.dot(&state.h.column(0));
        v.insert_axis(ndarray::Axis(1))
    } else {
        p.w_ih.dot(x) + p.w_hh.dot(&state.h)
    };
    pre += &p.b; // broadcast over batch
    let i = pre.slice(s![0..h, ..]).mapv(sigmoid);
    let f = pre.slice(s![h..2 * h, ..]).mapv(sigmoid);
    let g = pre.slice(s![2 * h..3 * h, ..]).mapv(f64::tanh);
    let o = pre.slice(s![3 * h..4 * h, ..]).mapv(sigmoid);
    let c_new = &f * &state.c + &i * &g;
    let tanh_c = c_new.mapv(f64::tanh);
    let h_new = &o * &tanh_c;
    let cache = want_cache.then(|| CellCache {
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        i,
        f,
        g,
        o,
        tanh_c,
    });
    (LstmState { h: h_new, c: c_new }, cache)
}

/// Gradients flowing out of one cell step.
pub struct CellGrads {
    pub dx: Array2<f64>,
    pub dh_prev: Array2<f64>,
    pub dc_prev: Array2<f64>,
}

/// Backward through one cell step. `dh`/`dc` are the gradients w.r.t. this
/// step's outputs; parameter gradients accumulate into `grads`.
pub fn cell_backward(
    p: &LstmParams,
    x: &Array2<f64>,
    cache: &CellCache,
    dh: &Array2<f64>,
    dc: &Array2<f64>,
    grads: &mut LstmParams,
) -> CellGrads {
    let h = p.hidden();
    let batch = x.ncols();

    let do_gate = dh * &cache.tanh_c;
    let dpre_o = &do_gate * &cache.o * &cache.o.mapv(|v| 1.0 - v);

    let dc_total = dc + &(dh * &cache.o * cache.tanh_c.mapv(|v| 1.0 - v * v));

    let df = &dc_total * &cache.c_prev;
    let dpre_f = &df * &cache.f * &cache.f.mapv(|v| 1.0 - v);

    let di = &dc_total * &cache.g;
    let dpre_i = &di * &cache.i * &cache.i.mapv(|v| 1.0 - v);

    let dg = &dc_total * &cache.i;
    let dpre_g = &dg * &cache.g.mapv(|v| 1.0 - v * v);

    let mut dpre = Array2::zeros((4 * h, batch));
    dpre.slice_mut(s![0..h, ..]).assign(&dpre_i);
    dpre.slice_mut(s![h..2 * h, ..]).assign(&dpre_f);
    dpre.slice_mut(s![2 * h..3 * h, ..]).assign(&dpre_g);
    dpre.slice_mut(s![3 * h..4 * h, ..]).assign(&dpre_o);

    grads.w_ih += &dpre.dot(&x.t());
    grads.w_hh += &dpre.dot(&cache.h_prev.t());
    let db: Array1<f64> = dpre.sum_axis(ndarray::Axis(1));
    grads.b += &db.insert_axis(ndarray::Axis(1));

    CellGrads {
        dx: p.w_ih.t().dot(&dpre),
        dh_prev: p.w_hh.t().dot(&dpre),
        dc_prev: &dc_total * &cache.f,
    }
}
