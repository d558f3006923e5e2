//! Contrastive objectives over a batch of documents and their augmented views.
//!
//! * NT-Xent: each original `h_i` must pick out its own view `h̃_i` among all
//!   views in the batch. The positive pair stays in the denominator.
//! * SimSiam: a predictor MLP with batch normalization maps each embedding
//!   towards the other view; the target side is a stop-gradient constant.

use std::str::FromStr;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_PREDICTOR_HIDDEN: usize = 64;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Framework {
    SimClr,
    SimSiam,
}

impl Framework {
    pub fn as_str(self) -> &'static str {
        match self {
            Framework::SimClr => "simclr",
            Framework::SimSiam => "simsiam",
        }
    }
}

impl FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simclr" => Ok(Framework::SimClr),
            "simsiam" => Ok(Framework::SimSiam),
            other => Err(Error::Config(format!("unknown contrastive framework `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub framework: Framework,
    pub temperature: f64,
    pub lambda: f64,
    pub predictor_hidden: usize,
    /// Stop-gradient on both predictor outputs, exactly as the two-term
    /// symmetric loss is sometimes written. Leaves the predictor untrained.
    pub simsiam_as_printed: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            framework: Framework::SimClr,
            temperature: DEFAULT_TEMPERATURE,
            lambda: 1.0,
            predictor_hidden: DEFAULT_PREDICTOR_HIDDEN,
            simsiam_as_printed: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.temperature)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.predictor_hidden < 1 {
            return Err(Error::Config("predictor_hidden must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 {
        return Err(Error::ZeroNorm { row: 0 });
    }
    if ny == 0.0 {
        return Err(Error::ZeroNorm { row: 1 });
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Row norms; errors on a zero row.
fn row_norms(m: &Array2<f64>) -> Result<Array1<f64>> {
    let norms = m.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(row) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::ZeroNorm { row });
    }
    Ok(norms)
}

fn normalize_rows(m: &Array2<f64>, norms: &Array1<f64>) -> Array2<f64> {
    m / &norms.view().insert_axis(Axis(1))
}

/// Backpropagates a gradient w.r.t. normalized rows to the raw rows:
/// `(g - (g·u) u) / ‖x‖`.
fn normalize_backward(grad_unit: &Array2<f64>, unit: &Array2<f64>, norms: &Array1<f64>) -> Array2<f64> {
    let mut out = grad_unit.clone();
    Zip::from(out.rows_mut())
        .and(unit.rows())
        .and(norms)
        .for_each(|mut g, u, &n| {
            let proj = g.dot(&u);
            g.scaled_add(-proj, &u);
            g.mapv_inplace(|v| v / n);
        });
    out
}

/// Loss value, per-sample terms and gradients w.r.t. both embedding batches.
#[derive(Debug, Clone)]
pub struct PairLoss {
    pub loss: f64,
    pub per_sample: Array1<f64>,
    pub grad_original: Array2<f64>,
    pub grad_augmented: Array2<f64>,
}

/// Summed NT-Xent loss: `Σ_i -log softmax_k(cos(h_i, h̃_k)/τ)[i]`.
pub fn nt_xent_loss(original: &Array2<f64>, augmented: &Array2<f64>, tau: f64) -> Result<PairLoss> {
    nt_xent_loss_with(original, augmented, tau, Execution::Sequential)
}

pub fn nt_xent_loss_with(
    original: &Array2<f64>,
    augmented: &Array2<f64>,
    tau: f64,
    exec: Execution,
) -> Result<PairLoss> {
    let n = original.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "NT-Xent needs a batch of at least 2, got {n}"
        )));
    }
    if augmented.dim() != original.dim() {
        return Err(Error::InvalidInput(
            "original and augmented batches differ in shape".into(),
        ));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let h_norm = row_norms(original)?;
    let t_norm = row_norms(augmented)?;
    let hu = normalize_rows(original, &h_norm);
    let tu = normalize_rows(augmented, &t_norm);

    let sims = hu.dot(&tu.t()) / tau;
    // Row i: loss_i and softmax_k(S_ik) - δ_ik.
    let rows = par::map_range(exec, n, |i| {
        let row = sims.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let mut p: Vec<f64> = row.iter().map(|s| (s - lse).exp()).collect();
        p[i] -= 1.0;
        (lse - row[i], p)
    });
    let mut probs = Array2::zeros((n, n));
    let mut per_sample = Vec::with_capacity(n);
    for (i, (loss, p)) in rows.into_iter().enumerate() {
        per_sample.push(loss);
        probs.row_mut(i).assign(&Array1::from(p));
    }

    let grad_hu = probs.dot(&tu) / tau;
    let grad_tu = probs.t().dot(&hu) / tau;
    Ok(PairLoss {
        loss: per_sample.iter().sum(),
        per_sample: Array1::from(per_sample),
        grad_original: normalize_backward(&grad_hu, &hu, &h_norm),
        grad_augmented: normalize_backward(&grad_tu, &tu, &t_norm),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Two affine layers with batch normalization and an activation between
/// them: `d → hidden → BN → act → d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWeights {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl PredictorWeights {
    /// Affine weights uniform in `±1/sqrt(fan_in)`, zero biases, unit BN scale.
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let b1 = 1.0 / (dim.max(1) as f64).sqrt();
        let b2 = 1.0 / (hidden.max(1) as f64).sqrt();
        Self {
            w1: Array2::from_shape_fn((dim, hidden), |_| rng.random_range(-b1..b1)),
            b1: Array1::zeros(hidden),
            gamma: Array1::ones(hidden),
            beta: Array1::zeros(hidden),
            running_mean: Array1::zeros(hidden),
            running_var: Array1::ones(hidden),
            w2: Array2::from_shape_fn((hidden, dim), |_| rng.random_range(-b2..b2)),
            b2: Array1::zeros(dim),
            activation: Activation::Relu,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn dim(&self) -> usize {
        self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        [&self.b1, &self.gamma, &self.beta, &self.running_mean, &self.b2]
            .iter()
            .all(|a| a.iter().all(|x| x.is_finite()))
            && self.running_var.iter().all(|&v| v > 0.0 && v.is_finite())
            && self.w1.iter().chain(self.w2.iter()).all(|x| x.is_finite())
    }

    /// Folds batch statistics of a train-mode pass into the running estimates.
    pub fn update_running_stats(&mut self, cache: &PredictorCache) {
        let n = cache.input.nrows() as f64;
        let unbiased = &cache.batch_var * (n / (n - 1.0));
        self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + &cache.batch_mean * BN_MOMENTUM;
        self.running_var = &self.running_var * (1.0 - BN_MOMENTUM) + unbiased * BN_MOMENTUM;
    }
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct PredictorCache {
    pub input: Array2<f64>,
    pub normalized: Array2<f64>,
    pub pre_activation: Array2<f64>,
    pub activated: Array2<f64>,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
    pub inv_std: Array1<f64>,
    pub mode: Mode,
}

/// Output of the predictor, plus the cache for backpropagation. Train mode
/// normalizes with the statistics of this batch (which must hold at least
/// two rows); eval mode uses the running estimates.
pub fn predictor_forward(
    input: &Array2<f64>,
    w: &PredictorWeights,
    mode: Mode,
) -> Result<(Array2<f64>, PredictorCache)> {
    let n = input.nrows();
    if mode == Mode::Train && n < 2 {
        return Err(Error::InvalidInput(
            "train-mode batch normalization needs at least 2 rows".into(),
        ));
    }
    if input.ncols() != w.dim() {
        return Err(Error::InvalidInput(format!(
            "predictor expects width {}, got {}",
            w.dim(),
            input.ncols()
        )));
    }
    let a = input.dot(&w.w1) + &w.b1;
    let (mean, var) = match mode {
        Mode::Train => {
            let mean = a.mean_axis(Axis(0)).expect("non-empty batch");
            let var = a.var_axis(Axis(0), 0.0);
            (mean, var)
        }
        Mode::Eval => (w.running_mean.clone(), w.running_var.clone()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let normalized = (&a - &mean) * &inv_std;
    let pre = &normalized * &w.gamma + &w.beta;
    let activated = match w.activation {
        Activation::Relu => pre.mapv(|x| x.max(0.0)),
        Activation::Identity => pre.clone(),
    };
    let z = activated.dot(&w.w2) + &w.b2;
    Ok((
        z,
        PredictorCache {
            input: input.clone(),
            normalized,
            pre_activation: pre,
            activated,
            batch_mean: mean,
            batch_var: var,
            inv_std,
            mode,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl PredictorGrads {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((dim, hidden)),
            b1: Array1::zeros(hidden),
            gamma: Array1::zeros(hidden),
            beta: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, dim)),
            b2: Array1::zeros(dim),
        }
    }

    fn add(&mut self, o: &PredictorGrads) {
        self.w1 += &o.w1;
        self.b1 += &o.b1;
        self.gamma += &o.gamma;
        self.beta += &o.beta;
        self.w2 += &o.w2;
        self.b2 += &o.b2;
    }

    pub fn scale(&mut self, s: f64) {
        for a in [&mut self.b1, &mut self.gamma, &mut self.beta, &mut self.b2] {
            a.mapv_inplace(|x| x * s);
        }
        self.w1.mapv_inplace(|x| x * s);
        self.w2.mapv_inplace(|x| x * s);
    }
}

/// Gradients w.r.t. the predictor input and weights given `grad_out`.
pub fn predictor_backward(
    grad_out: &Array2<f64>,
    w: &PredictorWeights,
    cache: &PredictorCache,
) -> (Array2<f64>, PredictorGrads) {
    let n = grad_out.nrows() as f64;
    let gw2 = cache.activated.t().dot(grad_out);
    let gb2 = grad_out.sum_axis(Axis(0));
    let mut g_pre = grad_out.dot(&w.w2.t());
    if w.activation == Activation::Relu {
        Zip::from(&mut g_pre).and(&cache.pre_activation).for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
    }
    let g_gamma = (&g_pre * &cache.normalized).sum_axis(Axis(0));
    let g_beta = g_pre.sum_axis(Axis(0));
    let g_norm = &g_pre * &w.gamma;
    let g_a = match cache.mode {
        Mode::Train => {
            let sum_g = g_norm.sum_axis(Axis(0));
            let sum_gx = (&g_norm * &cache.normalized).sum_axis(Axis(0));
            let centered = &g_norm * n - &sum_g - &cache.normalized * &sum_gx;
            centered * &(&cache.inv_std / n)
        }
        Mode::Eval => &g_norm * &cache.inv_std,
    };
    let gw1 = cache.input.t().dot(&g_a);
    let gb1 = g_a.sum_axis(Axis(0));
    let g_in = g_a.dot(&w.w1.t());
    (
        g_in,
        PredictorGrads {
            w1: gw1,
            b1: gb1,
            gamma: g_gamma,
            beta: g_beta,
            w2: gw2,
            b2: gb2,
        },
    )
}

/// `D(x, sg(y)) = -cos(x, y)` with gradients for both arguments. The
/// target's gradient is zero by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct StopGradTerm {
    pub loss: f64,
    pub grad_live: Vec<f64>,
    pub grad_target: Vec<f64>,
}

pub fn negative_cosine_stopgrad(x: &[f64], y: &[f64]) -> Result<StopGradTerm> {
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroNorm {
            row: usize::from(nx != 0.0),
        });
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let cos = dot / (nx * ny);
    let grad_live = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| cos * xi / (nx * nx) - yi / (nx * ny))
        .collect();
    Ok(StopGradTerm {
        loss: -cos,
        grad_live,
        grad_target: vec![0.0; y.len()],
    })
}

/// Row-wise `½·D(live_i, sg(target_i))` with gradient w.r.t. `live`.
fn half_neg_cos_rows(live: &Array2<f64>, target: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = live.nrows();
    let mut losses = Array1::zeros(n);
    let mut grad = Array2::zeros(live.dim());
    for i in 0..n {
        let term = negative_cosine_stopgrad(
            live.row(i).as_slice().expect("standard layout"),
            target.row(i).as_slice().expect("standard layout"),
        )
        .map_err(|_| Error::ZeroNorm { row: i })?;
        losses[i] = 0.5 * term.loss;
        grad.row_mut(i).assign(&(Array1::from(term.grad_live) * 0.5));
    }
    Ok((losses, grad))
}

#[derive(Debug, Clone)]
pub struct SimSiamLoss {
    pub pair: PairLoss,
    pub predictor: PredictorGrads,
    /// Train-mode caches of the two predictor passes over the live inputs
    /// (original, augmented); used to update the running statistics.
    pub caches: (PredictorCache, PredictorCache),
}

/// Summed SimSiam loss `Σ_i ½D(z_i, sg(h̃_i)) + ½D(z̃_i, sg(h_i))` with
/// `z = predictor(h)` and `D` the negative cosine. Each view is normalized
/// as its own batch. With `as_printed`, the stop-gradient moves onto the
/// predictor outputs: `½D(h_i, sg(z̃_i)) + ½D(h̃_i, sg(z_i))`.
pub fn simsiam_loss(
    original: &Array2<f64>,
    augmented: &Array2<f64>,
    w: &PredictorWeights,
    as_printed: bool,
) -> Result<SimSiamLoss> {
    simsiam_loss_split(original, augmented, original, augmented, w, as_printed)
}

/// SimSiam with the live and stop-gradient copies of each view passed
/// separately. Gradients are reported for the live copies only.
pub fn simsiam_loss_split(
    original: &Array2<f64>,
    augmented: &Array2<f64>,
    original_target: &Array2<f64>,
    augmented_target: &Array2<f64>,
    w: &PredictorWeights,
    as_printed: bool,
) -> Result<SimSiamLoss> {
    if original.nrows() < 2 {
        return Err(Error::InvalidInput("SimSiam needs a batch of at least 2".into()));
    }
    for m in [augmented, original_target, augmented_target] {
        if m.dim() != original.dim() {
            return Err(Error::InvalidInput("SimSiam batches differ in shape".into()));
        }
    }
    for m in [original, augmented, original_target, augmented_target] {
        row_norms(m)?;
    }

    if as_printed {
        let (z, cache_h) = predictor_forward(original_target, w, Mode::Train)?;
        let (zt, cache_t) = predictor_forward(augmented_target, w, Mode::Train)?;
        let (l1, g_h) = half_neg_cos_rows(original, &zt)?;
        let (l2, g_t) = half_neg_cos_rows(augmented, &z)?;
        let per_sample = l1 + l2;
        return Ok(SimSiamLoss {
            pair: PairLoss {
                loss: per_sample.sum(),
                per_sample,
                grad_original: g_h,
                grad_augmented: g_t,
            },
            predictor: PredictorGrads::zeros(w.dim(), w.hidden()),
            caches: (cache_h, cache_t),
        });
    }

    let (z, cache_h) = predictor_forward(original, w, Mode::Train)?;
    let (zt, cache_t) = predictor_forward(augmented, w, Mode::Train)?;
    let (l1, g_z) = half_neg_cos_rows(&z, augmented_target)?;
    let (l2, g_zt) = half_neg_cos_rows(&zt, original_target)?;
    let (g_h, mut pg) = predictor_backward(&g_z, w, &cache_h);
    let (g_t, pg_t) = predictor_backward(&g_zt, w, &cache_t);
    pg.add(&pg_t);
    let per_sample = l1 + l2;
    Ok(SimSiamLoss {
        pair: PairLoss {
            loss: per_sample.sum(),
            per_sample,
            grad_original: g_h,
            grad_augmented: g_t,
        },
        predictor: pg,
        caches: (cache_h, cache_t),
    })
}

/// `ℓ = ℓ_d + λ·ℓ_c`.
pub fn combined_loss(backbone: f64, contrastive: f64, lambda: f64) -> f64 {
    backbone + lambda * contrastive
}
