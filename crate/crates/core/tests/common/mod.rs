//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's loss code.

#![allow(dead_code, clippy::needless_range_loop)]

use docembed::contrastive::{nt_xent_loss, simsiam_loss_split, Activation, PredictorWeights};
use docembed::encoder::{window_loss_grad, BackboneGrads, DropoutMasks, ModelParams, SparseRows, TrainingWindow};
use docembed::eval::logistic_objective;
use docembed::rng::{derive, Purpose};
use ndarray::Array2;
use rand::Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn random_rows(seed: u64, n: usize, d: usize) -> Rows {
    let mut r = derive(seed, 0, 0, Purpose::Init);
    (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_array(rows: &Rows) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

pub fn from_array(a: &Array2<f64>) -> Rows {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// `Σ_i -log( exp(cos(h_i,t_i)/τ) / Σ_k exp(cos(h_i,t_k)/τ) )`.
pub fn brute_nt_xent(h: &Rows, t: &Rows, tau: f64) -> f64 {
    let n = h.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for k in 0..n {
            denom += (cos(&h[i], &t[k]) / tau).exp();
        }
        let num = (cos(&h[i], &t[i]) / tau).exp();
        total += -(num / denom).ln();
    }
    total
}

/// Predictor forward pass with batch statistics, written with plain loops.
pub fn brute_predictor(x: &Rows, w: &PredictorWeights) -> Rows {
    let n = x.len();
    let d = w.w1.nrows();
    let h = w.w1.ncols();
    let mut a = vec![vec![0.0; h]; n];
    for i in 0..n {
        for j in 0..h {
            let mut s = w.b1[j];
            for k in 0..d {
                s += x[i][k] * w.w1[[k, j]];
            }
            a[i][j] = s;
        }
    }
    for j in 0..h {
        let mean = (0..n).map(|i| a[i][j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (a[i][j] - mean).powi(2)).sum::<f64>() / n as f64;
        for row in a.iter_mut() {
            let v = w.gamma[j] * (row[j] - mean) / (var + 1e-5).sqrt() + w.beta[j];
            row[j] = match w.activation {
                Activation::Relu => v.max(0.0),
                Activation::Identity => v,
            };
        }
    }
    let mut z = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..d {
            let mut s = w.b2[j];
            for k in 0..h {
                s += a[i][k] * w.w2[[k, j]];
            }
            z[i][j] = s;
        }
    }
    z
}

/// Per-sample SimSiam loss `½·(-cos(z_i, h̃_i)) + ½·(-cos(z̃_i, h_i))`, or the
/// swapped form `½·(-cos(h_i, z̃_i)) + ½·(-cos(h̃_i, z_i))`.
pub fn brute_simsiam(h: &Rows, t: &Rows, w: &PredictorWeights, as_printed: bool) -> Vec<f64> {
    let z = brute_predictor(h, w);
    let zt = brute_predictor(t, w);
    (0..h.len())
        .map(|i| {
            if as_printed {
                0.5 * -cos(&h[i], &zt[i]) + 0.5 * -cos(&t[i], &z[i])
            } else {
                0.5 * -cos(&z[i], &t[i]) + 0.5 * -cos(&zt[i], &h[i])
            }
        })
        .collect()
}

/// Central differences of `f` at `x`.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a-b‖ / max(‖a‖, ‖b‖, 1e-6)`. The floor keeps gradients that vanish
/// identically (a one-dimensional cosine is piecewise constant) from
/// comparing rounding noise against rounding noise.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-6)
}

fn dense(rows: &SparseRows, v: usize) -> Vec<f64> {
    let d = rows.dim();
    let mut out = vec![0.0; v * d];
    for (id, g) in rows.iter() {
        out[id as usize * d..(id as usize + 1) * d].copy_from_slice(g);
    }
    out
}

pub fn random_params(seed: u64, v: usize, d: usize) -> ModelParams {
    let mut p = ModelParams::init(v, d, 4, seed);
    let mut r = derive(seed, 1, 0, Purpose::Init);
    p.input.mapv_inplace(|_| r.random_range(-0.8..0.8));
    p.output.mapv_inplace(|_| r.random_range(-0.8..0.8));
    p
}

/// Worst relative error of the backbone window gradient (both matrices),
/// with dropout masks in place.
pub fn backbone_grad_err(seed: u64) -> f64 {
    let (v, d) = (7, 4);
    let params = random_params(seed, v, d);
    let win = TrainingWindow {
        target: 0,
        context: vec![1, 2, 3, 1],
        doc_sample: vec![4, 2, 6],
    };
    let negatives = [5, 3, 0];
    let masks = DropoutMasks::sample(d, 0.3, &mut derive(seed, 2, 0, Purpose::Init));
    let mut grads = BackboneGrads::new(d);
    window_loss_grad(&win, &negatives, Some(&masks), &params, &mut grads);

    let x_in: Vec<f64> = params.input.iter().copied().collect();
    let f_in = |x: &[f64]| {
        let mut p = params.clone();
        p.input = Array2::from_shape_vec((v, d), x.to_vec()).unwrap();
        window_loss_grad(&win, &negatives, Some(&masks), &p, &mut BackboneGrads::new(d))
    };
    let x_out: Vec<f64> = params.output.iter().copied().collect();
    let f_out = |x: &[f64]| {
        let mut p = params.clone();
        p.output = Array2::from_shape_vec((v, d), x.to_vec()).unwrap();
        window_loss_grad(&win, &negatives, Some(&masks), &p, &mut BackboneGrads::new(d))
    };
    rel_err(&dense(&grads.input, v), &finite_diff(f_in, &x_in, 1e-6))
        .max(rel_err(&dense(&grads.output, v), &finite_diff(f_out, &x_out, 1e-6)))
}

pub fn nt_xent_grad_err(seed: u64, n: usize, d: usize, tau: f64) -> f64 {
    let h = to_array(&random_rows(seed, n, d));
    let t = to_array(&random_rows(seed + 1000, n, d));
    let out = nt_xent_loss(&h, &t, tau).unwrap();
    let fh = |x: &[f64]| {
        let hh = Array2::from_shape_vec((n, d), x.to_vec()).unwrap();
        nt_xent_loss(&hh, &t, tau).unwrap().loss
    };
    let ft = |x: &[f64]| {
        let tt = Array2::from_shape_vec((n, d), x.to_vec()).unwrap();
        nt_xent_loss(&h, &tt, tau).unwrap().loss
    };
    let xh: Vec<f64> = h.iter().copied().collect();
    let xt: Vec<f64> = t.iter().copied().collect();
    let gh: Vec<f64> = out.grad_original.iter().copied().collect();
    let gt: Vec<f64> = out.grad_augmented.iter().copied().collect();
    rel_err(&gh, &finite_diff(fh, &xh, 1e-6)).max(rel_err(&gt, &finite_diff(ft, &xt, 1e-6)))
}

pub fn predictor(seed: u64, d: usize, hidden: usize) -> PredictorWeights {
    let mut w = PredictorWeights::init(d, hidden, &mut derive(seed, 3, 0, Purpose::Init));
    let mut r = derive(seed, 4, 0, Purpose::Init);
    w.gamma.mapv_inplace(|_| r.random_range(0.5..1.5));
    w.beta.mapv_inplace(|_| r.random_range(-0.3..0.3));
    w.b1.mapv_inplace(|_| r.random_range(-0.3..0.3));
    w.b2.mapv_inplace(|_| r.random_range(-0.3..0.3));
    w
}

fn flatten(w: &PredictorWeights) -> Vec<f64> {
    let mut v: Vec<f64> = w.w1.iter().copied().collect();
    for a in [&w.b1, &w.gamma, &w.beta] {
        v.extend(a.iter());
    }
    v.extend(w.w2.iter());
    v.extend(w.b2.iter());
    v
}

fn unflatten(template: &PredictorWeights, x: &[f64]) -> PredictorWeights {
    let mut w = template.clone();
    let mut it = x.iter().copied();
    for a in w.w1.iter_mut() {
        *a = it.next().unwrap();
    }
    for arr in [&mut w.b1, &mut w.gamma, &mut w.beta] {
        for a in arr.iter_mut() {
            *a = it.next().unwrap();
        }
    }
    for a in w.w2.iter_mut() {
        *a = it.next().unwrap();
    }
    for a in w.b2.iter_mut() {
        *a = it.next().unwrap();
    }
    w
}

/// Worst relative error over the live inputs and, outside the as-printed
/// form, every predictor parameter. Stop-gradient copies are held fixed.
pub fn simsiam_grad_err(seed: u64, n: usize, d: usize, as_printed: bool) -> f64 {
    let w = predictor(seed, d, 6);
    let h = to_array(&random_rows(seed, n, d));
    let t = to_array(&random_rows(seed + 1000, n, d));
    let out = simsiam_loss_split(&h, &t, &h, &t, &w, as_printed).unwrap();
    let fh = |x: &[f64]| {
        let hh = Array2::from_shape_vec((n, d), x.to_vec()).unwrap();
        simsiam_loss_split(&hh, &t, &h, &t, &w, as_printed).unwrap().pair.loss
    };
    let ft = |x: &[f64]| {
        let tt = Array2::from_shape_vec((n, d), x.to_vec()).unwrap();
        simsiam_loss_split(&h, &tt, &h, &t, &w, as_printed).unwrap().pair.loss
    };
    let xh: Vec<f64> = h.iter().copied().collect();
    let xt: Vec<f64> = t.iter().copied().collect();
    let gh: Vec<f64> = out.pair.grad_original.iter().copied().collect();
    let gt: Vec<f64> = out.pair.grad_augmented.iter().copied().collect();
    let mut err = rel_err(&gh, &finite_diff(fh, &xh, 1e-6)).max(rel_err(&gt, &finite_diff(ft, &xt, 1e-6)));
    if !as_printed {
        let fw = |x: &[f64]| {
            simsiam_loss_split(&h, &t, &h, &t, &unflatten(&w, x), false)
                .unwrap()
                .pair
                .loss
        };
        let pg = &out.predictor;
        let mut analytic: Vec<f64> = pg.w1.iter().copied().collect();
        for a in [&pg.b1, &pg.gamma, &pg.beta] {
            analytic.extend(a.iter());
        }
        analytic.extend(pg.w2.iter());
        analytic.extend(pg.b2.iter());
        err = err.max(rel_err(&analytic, &finite_diff(fw, &flatten(&w), 1e-6)));
    }
    err
}

pub fn logreg_grad_err(seed: u64) -> f64 {
    let (n, d, k) = (12, 3, 4);
    let x = to_array(&random_rows(seed, n, d));
    let y: Vec<u32> = (0..n).map(|i| (i % k) as u32).collect();
    let theta: Vec<f64> = random_rows(seed + 7, 1, d * k + k).remove(0);
    let (_, g) = logistic_objective(&x, &y, k, 0.7, &theta);
    let f = |t: &[f64]| logistic_objective(&x, &y, k, 0.7, t).0;
    rel_err(&g, &finite_diff(f, &theta, 1e-6))
}
