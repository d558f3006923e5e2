//! Multinomial logistic regression fitted with L-BFGS.
//!
//! Minimizes `C·Σ_i CE(softmax(W·x_i + b), y_i) + ½‖W‖²`; the bias is not
//! regularized.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegOptions {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iter: usize,
    /// Stop when the gradient's Euclidean norm falls below this.
    pub tol: f64,
    pub history: usize,
    /// Standardize features with the training mean and deviation.
    pub standardize: bool,
}

impl Default for LogRegOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 500,
            tol: 1e-5,
            history: 10,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// d×K.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn decision(&self, x: &Array2<f64>) -> Array2<f64> {
        let z = (x - &self.mean) / &self.scale;
        z.dot(&self.weights) + &self.bias
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<u32> {
        self.decision(x)
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best as u32
            })
            .collect()
    }
}

/// Objective and gradient at `theta`, laid out as `W` (d×K, row-major)
/// followed by `b` (K).
pub fn logistic_objective(x: &Array2<f64>, y: &[u32], k: usize, c: f64, theta: &[f64]) -> (f64, Vec<f64>) {
    let d = x.ncols();
    let w = ndarray::ArrayView2::from_shape((d, k), &theta[..d * k]).expect("theta has d*k weights");
    let b = ndarray::ArrayView1::from(&theta[d * k..]);
    let mut logits = x.dot(&w) + b;
    let mut loss = 0.0;
    for (i, mut row) in logits.axis_iter_mut(Axis(0)).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y[i] as usize];
        row.mapv_inplace(|v| (v - lse).exp());
        row[y[i] as usize] -= 1.0;
    }
    let gw = x.t().dot(&logits) * c + w;
    let gb = logits.sum_axis(Axis(0)) * c;
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let mut grad = gw.into_raw_vec_and_offset().0;
    grad.extend(gb.iter());
    (c * loss + reg, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn fit_logistic_regression(
    x: &Array2<f64>,
    y: &[u32],
    num_classes: usize,
    opts: &LogRegOptions,
) -> Result<LogisticModel> {
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    if y.len() != n {
        return Err(Error::InvalidInput(format!("{} labels for {n} rows", y.len())));
    }
    if num_classes < 2 {
        return Err(Error::InvalidInput("need at least two classes".into()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} outside {num_classes} classes"
        )));
    }
    if opts.c.is_nan() || opts.c <= 0.0 {
        return Err(Error::Config(format!("C must be positive, got {}", opts.c)));
    }
    let (mean, scale) = if opts.standardize {
        let mean = x.mean_axis(Axis(0)).expect("n > 0");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        (mean, std)
    } else {
        (Array1::zeros(d), Array1::ones(d))
    };
    let z = (x - &mean) / &scale;

    let k = num_classes;
    let f = |t: &[f64]| logistic_objective(&z, y, k, opts.c, t);
    let mut theta = vec![0.0; d * k + k];
    let (mut fx, mut g) = f(&theta);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = norm(&g) < opts.tol;

    while !converged && iterations < opts.max_iter {
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, yv, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(yv).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, yv, _)) = memory.back() {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let gn = norm(&g);
            q.iter_mut().for_each(|v| *v /= gn.max(1.0));
        }
        for ((s, yv, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            memory.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }

        // Backtracking line search with the Armijo condition.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, p)| t + step * p).collect();
            let (fc, gc) = f(&cand);
            if fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            memory.push_back((s, yv, 1.0 / sy));
            if memory.len() > opts.history {
                memory.pop_front();
            }
        }
        let progress = fx - fc;
        theta = cand;
        fx = fc;
        g = gc;
        iterations += 1;
        converged = norm(&g) < opts.tol;
        if progress <= f64::EPSILON * fx.abs().max(1.0) {
            break;
        }
    }

    let weights = Array2::from_shape_vec((d, k), theta[..d * k].to_vec()).expect("shape");
    let bias = Array1::from(theta[d * k..].to_vec());
    Ok(LogisticModel {
        weights,
        bias,
        mean,
        scale,
        iterations,
        converged,
    })
}
