//! Adam with lazy row-sparse updates for the embedding matrices.

use ndarray::{Array1, Array2};

use crate::contrastive::{PredictorGrads, PredictorWeights};
use crate::encoder::{BackboneGrads, ModelParams, SparseRows};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for every parameter, plus the global
/// step counter used for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub input_m: Array2<f64>,
    pub input_v: Array2<f64>,
    pub output_m: Array2<f64>,
    pub output_v: Array2<f64>,
    pub predictor_m: PredictorGrads,
    pub predictor_v: PredictorGrads,
}

impl AdamState {
    pub fn new(vocab_size: usize, dim: usize, hidden: usize) -> Self {
        Self {
            step: 0,
            input_m: Array2::zeros((vocab_size, dim)),
            input_v: Array2::zeros((vocab_size, dim)),
            output_m: Array2::zeros((vocab_size, dim)),
            output_v: Array2::zeros((vocab_size, dim)),
            predictor_m: PredictorGrads::zeros(dim, hidden),
            predictor_v: PredictorGrads::zeros(dim, hidden),
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        Self::new(params.vocab_size(), params.dim(), params.predictor.hidden())
    }
}

/// Elementwise Adam update at bias-correction step `step` (1-based).
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, step: u64) {
    let c1 = 1.0 - BETA1.powf(step as f64);
    let c2 = 1.0 - BETA2.powf(step as f64);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

fn sparse_update(
    param: &mut Array2<f64>,
    grads: &SparseRows,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    step: u64,
) {
    let d = param.ncols();
    let p = param.as_slice_mut().expect("contiguous");
    let m = m.as_slice_mut().expect("contiguous");
    let v = v.as_slice_mut().expect("contiguous");
    for (id, g) in grads.iter() {
        let r = id as usize * d..(id as usize + 1) * d;
        adam_update(&mut p[r.clone()], g, &mut m[r.clone()], &mut v[r], lr, step);
    }
}

fn dense_update1(
    param: &mut Array1<f64>,
    grad: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    lr: f64,
    step: u64,
) {
    adam_update(
        param.as_slice_mut().expect("contiguous"),
        grad.as_slice().expect("contiguous"),
        m.as_slice_mut().expect("contiguous"),
        v.as_slice_mut().expect("contiguous"),
        lr,
        step,
    );
}

fn dense_update2(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    step: u64,
) {
    adam_update(
        param.as_slice_mut().expect("contiguous"),
        grad.as_slice().expect("contiguous"),
        m.as_slice_mut().expect("contiguous"),
        v.as_slice_mut().expect("contiguous"),
        lr,
        step,
    );
}

fn predictor_update(
    w: &mut PredictorWeights,
    g: &PredictorGrads,
    m: &mut PredictorGrads,
    v: &mut PredictorGrads,
    lr: f64,
    step: u64,
) {
    dense_update2(&mut w.w1, &g.w1, &mut m.w1, &mut v.w1, lr, step);
    dense_update1(&mut w.b1, &g.b1, &mut m.b1, &mut v.b1, lr, step);
    dense_update1(&mut w.gamma, &g.gamma, &mut m.gamma, &mut v.gamma, lr, step);
    dense_update1(&mut w.beta, &g.beta, &mut m.beta, &mut v.beta, lr, step);
    dense_update2(&mut w.w2, &g.w2, &mut m.w2, &mut v.w2, lr, step);
    dense_update1(&mut w.b2, &g.b2, &mut m.b2, &mut v.b2, lr, step);
}

/// One optimizer step. Only rows present in `grads` (and the predictor,
/// when `predictor` is given) are updated; untouched rows keep their
/// moments until they next receive a gradient.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &BackboneGrads,
    predictor: Option<&PredictorGrads>,
    state: &mut AdamState,
    lr: f64,
) {
    state.step += 1;
    let t = state.step;
    sparse_update(
        &mut params.input,
        &grads.input,
        &mut state.input_m,
        &mut state.input_v,
        lr,
        t,
    );
    sparse_update(
        &mut params.output,
        &grads.output,
        &mut state.output_m,
        &mut state.output_v,
        lr,
        t,
    );
    if let Some(pg) = predictor {
        predictor_update(
            &mut params.predictor,
            pg,
            &mut state.predictor_m,
            &mut state.predictor_v,
            lr,
            t,
        );
    }
}
