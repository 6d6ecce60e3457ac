//! Datasets of (window, target) pairs and the two training procedures.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LsaLayerFull, LsaParams, SoftmaxParams, StackParams};
use crate::error::{invalid, Error, Result};
use crate::linalg::sym_pinv_solve;
use crate::rng::seeded;

/// Flat store of equal-length history windows and their next-step targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    n: usize,
    windows: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(n: usize) -> Self {
        Dataset { n, windows: Vec::new(), targets: Vec::new() }
    }

    /// Windows `series[t-n..t]` with target `series[t]` for every `t` in `targets`.
    pub fn from_series(series: &[f64], n: usize, targets: Range<usize>) -> Result<Self> {
        if targets.start < n || targets.end > series.len() {
            return invalid(format!(
                "targets {:?} need {n} steps of history inside a series of length {}",
                targets,
                series.len()
            ));
        }
        let mut d = Dataset::new(n);
        for t in targets {
            d.push(&series[t - n..t], series[t])?;
        }
        Ok(d)
    }

    pub fn push(&mut self, window: &[f64], target: f64) -> Result<()> {
        if window.len() != self.n {
            return invalid(format!("window length {} != {}", window.len(), self.n));
        }
        self.windows.extend_from_slice(window);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn history_len(&self) -> usize {
        self.n
    }

    pub fn window(&self, i: usize) -> &[f64] {
        &self.windows[i * self.n..(i + 1) * self.n]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

/// A dataset together with each window's layer-0 Gram matrix for a fixed `p`.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    p: usize,
    data: Dataset,
    grams: Vec<f64>,
}

/// Borrowed view of one prepared example.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub window: &'a [f64],
    pub gram: &'a [f64],
    pub target: f64,
    pub p: usize,
}

impl<'a> Example<'a> {
    pub fn n(&self) -> usize {
        self.window.len()
    }

    /// Number of context columns `n - p`.
    pub fn cols(&self) -> usize {
        self.window.len() - self.p
    }

    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.gram[i * (self.p + 1) + j]
    }

    pub fn query(&self) -> &'a [f64] {
        let m = self.cols();
        &self.window[m..m + self.p]
    }

    pub fn gram_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p + 1, self.p + 1, self.gram)
    }
}

impl PreparedDataset {
    pub fn new(data: Dataset, p: usize) -> Result<Self> {
        let n = data.history_len();
        if p == 0 || n < p + 1 {
            return invalid(format!("history length {n} too short for order {p}"));
        }
        let q = p + 1;
        let mut grams = vec![0.0; data.len() * q * q];
        for i in 0..data.len() {
            let w = data.window(i);
            let g = &mut grams[i * q * q..(i + 1) * q * q];
            for c in 0..n - p {
                let h = &w[c..c + q];
                for a in 0..q {
                    for b in 0..=a {
                        g[a * q + b] += h[a] * h[b];
                    }
                }
            }
            for a in 0..q {
                for b in 0..=a {
                    g[a * q + b] /= n as f64;
                    g[b * q + a] = g[a * q + b];
                }
            }
        }
        Ok(PreparedDataset { p, data, grams })
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn history_len(&self) -> usize {
        self.data.history_len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        let q = self.p + 1;
        Example {
            window: self.data.window(i),
            gram: &self.grams[i * q * q..(i + 1) * q * q],
            target: self.data.target(i),
            p: self.p,
        }
    }

    pub fn predictions<M: Trainable>(&self, model: &M) -> Vec<f64> {
        (0..self.len()).map(|i| model.predict(&self.example(i))).collect()
    }

    /// Mean squared error of `model` over all examples.
    pub fn mse<M: Trainable>(&self, model: &M) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let s: f64 = (0..self.len())
            .map(|i| {
                let ex = self.example(i);
                let e = model.predict(&ex) - ex.target;
                e * e
            })
            .sum();
        s / self.len() as f64
    }

    /// Mean squared error and its gradient in the flat parameter layout of `model`.
    pub fn mse_and_grad<M: Trainable>(&self, model: &M) -> (f64, Vec<f64>) {
        let dim = model.num_params();
        let mut grad = vec![0.0; dim];
        let mut g_ex = vec![0.0; dim];
        let mut loss = 0.0;
        let count = self.len().max(1) as f64;
        for i in 0..self.len() {
            let ex = self.example(i);
            let e = model.predict_with_grad(&ex, &mut g_ex) - ex.target;
            loss += e * e;
            for (g, d) in grad.iter_mut().zip(&g_ex) {
                *g += 2.0 * e * d / count;
            }
        }
        (loss / count, grad)
    }
}

/// A model with a flat parameter vector and an analytic prediction gradient.
pub trait Trainable: Clone {
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, theta: &[f64]);
    fn predict(&self, ex: &Example) -> f64;
    /// Returns the prediction and overwrites `grad` with its gradient.
    fn predict_with_grad(&self, ex: &Example, grad: &mut [f64]) -> f64;
}

fn flatten(mats: &[&DMatrix<f64>]) -> Vec<f64> {
    mats.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

fn unflatten(mats: &mut [&mut DMatrix<f64>], theta: &[f64]) {
    let mut off = 0;
    for m in mats.iter_mut() {
        let len = m.len();
        m.as_mut_slice().copy_from_slice(&theta[off..off + len]);
        off += len;
    }
}

/// Parameters are `vec(P)` then `vec(Q)`, column-major.
impl Trainable for LsaLayerFull {
    fn num_params(&self) -> usize {
        self.value.len() + self.score.len()
    }

    fn params(&self) -> Vec<f64> {
        flatten(&[&self.value, &self.score])
    }

    fn set_params(&mut self, theta: &[f64]) {
        unflatten(&mut [&mut self.value, &mut self.score], theta);
    }

    fn predict(&self, ex: &Example) -> f64 {
        let q = ex.p + 1;
        let x = ex.query();
        // v = G Q h_N with h_N = (x, 0)
        let qh: Vec<f64> = (0..q).map(|i| (0..ex.p).map(|k| self.score[(i, k)] * x[k]).sum()).collect();
        let mut y = 0.0;
        for i in 0..q {
            let v: f64 = (0..q).map(|j| ex.g(i, j) * qh[j]).sum();
            y += self.value[(ex.p, i)] * v;
        }
        y
    }

    fn predict_with_grad(&self, ex: &Example, grad: &mut [f64]) -> f64 {
        let p = ex.p;
        let q = p + 1;
        let x = ex.query();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let qh: Vec<f64> = (0..q).map(|i| (0..p).map(|k| self.score[(i, k)] * x[k]).sum()).collect();
        let v: Vec<f64> = (0..q).map(|i| (0..q).map(|j| ex.g(i, j) * qh[j]).sum()).collect();
        let pl: Vec<f64> = (0..q).map(|j| self.value[(p, j)]).collect();
        let gp: Vec<f64> = (0..q).map(|i| (0..q).map(|j| ex.g(i, j) * pl[j]).sum()).collect();
        for i in 0..q {
            grad[i * q + p] = v[i];
        }
        let off = q * q;
        for k in 0..p {
            for i in 0..q {
                grad[off + k * q + i] = gp[i] * x[k];
            }
        }
        pl.iter().zip(&v).map(|(a, b)| a * b).sum()
    }
}

/// Parameters are, per layer, `b` then `vec(A)` column-major.
impl Trainable for StackParams {
    fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.b.len() + l.a.len()).sum()
    }

    fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.b.iter().chain(l.a.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    fn set_params(&mut self, theta: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&theta[off..off + nb]);
            off += nb;
            let na = l.a.len();
            l.a.as_mut_slice().copy_from_slice(&theta[off..off + na]);
            off += na;
        }
    }

    fn predict(&self, ex: &Example) -> f64 {
        StackPass::forward(self, ex, false).prediction
    }

    fn predict_with_grad(&self, ex: &Example, grad: &mut [f64]) -> f64 {
        let pass = StackPass::forward(self, ex, true);
        pass.backward(self, ex, grad);
        pass.prediction
    }
}

/// Forward state of a layered pass; per-layer snapshots only when a gradient is needed.
struct StackPass {
    prediction: f64,
    grams: Vec<Vec<f64>>,
    labels: Vec<Vec<f64>>,
}

impl StackPass {
    fn forward(stack: &StackParams, ex: &Example, keep: bool) -> Self {
        let p = ex.p;
        let q = p + 1;
        let m = ex.cols();
        let w = ex.window;
        let inv_n = 1.0 / ex.n() as f64;
        let mut g = ex.gram.to_vec();
        let mut last: Vec<f64> = (0..=m).map(|c| if c < m { w[c + p] } else { 0.0 }).collect();
        let mut grams = Vec::new();
        let mut labels = Vec::new();
        let depth = stack.layers.len();
        for (li, layer) in stack.layers.iter().enumerate() {
            if keep {
                grams.push(g.clone());
                labels.push(last.clone());
            }
            let gb: Vec<f64> = (0..q).map(|i| (0..q).map(|j| g[i * q + j] * layer.b[j]).sum()).collect();
            let k: Vec<f64> = (0..p).map(|kk| (0..q).map(|r| layer.a[(r, kk)] * gb[r]).sum()).collect();
            for (c, v) in last.iter_mut().enumerate() {
                *v += (0..p).map(|i| k[i] * w[c + i]).sum::<f64>();
            }
            if li + 1 < depth {
                for i in 0..p {
                    let s: f64 = (0..m).map(|c| w[c + i] * last[c]).sum();
                    g[i * q + p] = s * inv_n;
                    g[p * q + i] = s * inv_n;
                }
                g[p * q + p] = last[..m].iter().map(|v| v * v).sum::<f64>() * inv_n;
            }
        }
        StackPass { prediction: last[m], grams, labels }
    }

    fn backward(&self, stack: &StackParams, ex: &Example, grad: &mut [f64]) {
        let p = ex.p;
        let q = p + 1;
        let m = ex.cols();
        let w = ex.window;
        let inv_n = 1.0 / ex.n() as f64;
        let mut lambda = vec![0.0; m + 1];
        lambda[m] = 1.0;
        let per_layer = q + q * p;
        for (li, layer) in stack.layers.iter().enumerate().rev() {
            let g = &self.grams[li];
            let last = &self.labels[li];
            let wv: Vec<f64> = (0..p).map(|i| (0..=m).map(|c| lambda[c] * w[c + i]).sum()).collect();
            let aw: Vec<f64> = (0..q).map(|r| (0..p).map(|k| layer.a[(r, k)] * wv[k]).sum()).collect();
            let gb: Vec<f64> = (0..q).map(|i| (0..q).map(|j| g[i * q + j] * layer.b[j]).sum()).collect();
            let off = li * per_layer;
            for i in 0..q {
                grad[off + i] = (0..q).map(|j| g[i * q + j] * aw[j]).sum();
            }
            for k in 0..p {
                for r in 0..q {
                    grad[off + q + k * q + r] = gb[r] * wv[k];
                }
            }
            if li == 0 {
                break;
            }
            // row p of (Gbar + Gbar^T) with Gbar = b (A w)^T
            let srow: Vec<f64> = (0..q).map(|j| layer.b[p] * aw[j] + layer.b[j] * aw[p]).collect();
            for c in 0..m {
                let mut s = srow[p] * last[c];
                for i in 0..p {
                    s += srow[i] * w[c + i];
                }
                lambda[c] += s * inv_n;
            }
        }
    }
}

/// Parameters are `vec(P)` then `vec(Q)`, column-major.
impl Trainable for SoftmaxParams {
    fn num_params(&self) -> usize {
        self.value.len() + self.score.len()
    }

    fn params(&self) -> Vec<f64> {
        flatten(&[&self.value, &self.score])
    }

    fn set_params(&mut self, theta: &[f64]) {
        unflatten(&mut [&mut self.value, &mut self.score], theta);
    }

    fn predict(&self, ex: &Example) -> f64 {
        softmax_pass(self, ex, None)
    }

    fn predict_with_grad(&self, ex: &Example, grad: &mut [f64]) -> f64 {
        softmax_pass(self, ex, Some(grad))
    }
}

fn softmax_pass(params: &SoftmaxParams, ex: &Example, grad: Option<&mut [f64]>) -> f64 {
    let p = ex.p;
    let q = p + 1;
    let m = ex.cols();
    let w = ex.window;
    let x = ex.query();
    let col = |j: usize, i: usize| -> f64 {
        if j < m {
            w[j + i]
        } else if i < p {
            x[i]
        } else {
            0.0
        }
    };
    let qh: Vec<f64> = (0..q).map(|i| (0..p).map(|k| params.score[(i, k)] * x[k]).sum()).collect();
    let scores: Vec<f64> = (0..=m).map(|j| (0..q).map(|i| col(j, i) * qh[i]).sum()).collect();
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut wts: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|v| *v /= z);
    let vals: Vec<f64> = (0..m).map(|j| (0..q).map(|i| params.value[(p, i)] * col(j, i)).sum()).collect();
    let y: f64 = (0..m).map(|j| wts[j] * vals[j]).sum();
    if let Some(grad) = grad {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..q {
            grad[i * q + p] = (0..m).map(|j| wts[j] * col(j, i)).sum();
        }
        // d y / d s_j = w_j (a_j - y), with a_m = 0 for the masked query column
        let mut u = vec![0.0; q];
        for j in 0..=m {
            let a = if j < m { vals[j] } else { 0.0 };
            let c = wts[j] * (a - y);
            for (i, ui) in u.iter_mut().enumerate() {
                *ui += c * col(j, i);
            }
        }
        let off = q * q;
        for k in 0..p {
            for i in 0..q {
                grad[off + k * q + i] = u[i] * x[k];
            }
        }
    }
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Plain,
    Momentum { beta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Stop when the relative change of the epoch training loss falls below this.
    pub tolerance: f64,
    pub optimizer: Optimizer,
    pub splits: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 512,
            max_epochs: 100,
            seed: 0,
            tolerance: 1e-10,
            optimizer: Optimizer::Momentum { beta: 0.9 },
            splits: [0.70, 0.15, 0.15],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return invalid("learning rate, batch size and epochs must be positive");
        }
        if self.splits.iter().any(|s| !(*s >= 0.0)) || (self.splits.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("split fractions must be nonnegative and sum to 1");
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return invalid("momentum must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<M> {
    pub params: M,
    /// Loss after initialisation, then after every epoch (gradient) or half-step (ALS).
    pub loss_trace: Vec<f64>,
    pub best_loss: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Mini-batch gradient descent on the mean squared error.
///
/// The returned parameters are the best seen by validation loss (training loss
/// when `val` is `None`).
pub fn train_gradient<M: Trainable>(
    init: M,
    train: &PreparedDataset,
    val: Option<&PreparedDataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if train.is_empty() {
        return invalid("training set is empty");
    }
    let mut model = init;
    let mut theta = model.params();
    let dim = theta.len();
    let mut vel = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut g_ex = vec![0.0; dim];
    let mut rng = seeded(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let monitor = |m: &M| val.map(|v| v.mse(m)).unwrap_or_else(|| train.mse(m));
    let initial = train.mse(&model);
    let mut trace = vec![initial];
    let mut best = (monitor(&model), model.clone());
    let limit = 1e6 * initial.max(f64::MIN_POSITIVE);
    let mut converged = false;
    let mut epochs = 0;
    let mut prev = initial;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let ex = train.example(i);
                let y = model.predict_with_grad(&ex, &mut g_ex);
                let r = 2.0 * (y - ex.target) / batch.len() as f64;
                for (g, d) in grad.iter_mut().zip(&g_ex) {
                    *g += r * d;
                }
            }
            match cfg.optimizer {
                Optimizer::Plain => {
                    for (t, g) in theta.iter_mut().zip(&grad) {
                        *t -= cfg.learning_rate * g;
                    }
                }
                Optimizer::Momentum { beta } => {
                    for ((t, v), g) in theta.iter_mut().zip(vel.iter_mut()).zip(&grad) {
                        *v = beta * *v - cfg.learning_rate * g;
                        *t += *v;
                    }
                }
            }
            model.set_params(&theta);
        }
        epochs = epoch + 1;
        let loss = train.mse(&model);
        trace.push(loss);
        if !loss.is_finite() || loss > limit {
            return Err(Error::Diverged { epoch: epochs, loss });
        }
        let score = monitor(&model);
        if score < best.0 {
            best = (score, model.clone());
        }
        if (prev - loss).abs() <= cfg.tolerance * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        prev = loss;
    }
    let (best_loss, params) = best;
    Ok(TrainOutcome { params, loss_trace: trace, best_loss, steps: epochs, converged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub max_sweeps: usize,
    /// Stop when the relative loss change over a sweep falls below this.
    pub tolerance: f64,
    /// Relative eigenvalue cutoff of the minimum-norm inner solves.
    pub rel_cutoff: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig { max_sweeps: 500, tolerance: 1e-10, rel_cutoff: 1e-13 }
    }
}

/// Alternating least squares on `b^T G A x`: solve `A` with `b` fixed, then `b` with `A` fixed.
pub fn train_bilinear(data: &PreparedDataset, init: LsaParams, cfg: &AlsConfig) -> Result<TrainOutcome<LsaParams>> {
    if data.is_empty() {
        return invalid("training set is empty");
    }
    let p = data.order();
    if init.order() != p {
        return invalid("initial parameters have the wrong order");
    }
    let q = p + 1;
    let mut params = init;
    let loss_of = |params: &LsaParams| -> f64 {
        let mut s = 0.0;
        for i in 0..data.len() {
            let ex = data.example(i);
            let e = bilinear_predict(params, &ex) - ex.target;
            s += e * e;
        }
        s / data.len() as f64
    };
    let mut trace = vec![loss_of(&params)];
    let mut converged = false;
    let mut sweeps = 0;
    for _ in 0..cfg.max_sweeps {
        let start = *trace.last().unwrap();

        // A-step: features (G b)_r x_k
        let dim = q * p;
        let mut ftf = DMatrix::<f64>::zeros(dim, dim);
        let mut fty = DVector::<f64>::zeros(dim);
        let mut feat = vec![0.0; dim];
        for i in 0..data.len() {
            let ex = data.example(i);
            let x = ex.query();
            for r in 0..q {
                let c: f64 = (0..q).map(|j| ex.g(r, j) * params.b[j]).sum();
                for k in 0..p {
                    feat[r * p + k] = c * x[k];
                }
            }
            accumulate(&mut ftf, &mut fty, &feat, ex.target);
        }
        let theta = solve_normal(ftf, &fty, cfg.rel_cutoff);
        for r in 0..q {
            for k in 0..p {
                params.a[(r, k)] = theta[r * p + k];
            }
        }
        trace.push(loss_of(&params));

        // b-step: features G A x
        let mut ftf = DMatrix::<f64>::zeros(q, q);
        let mut fty = DVector::<f64>::zeros(q);
        let mut feat = vec![0.0; q];
        for i in 0..data.len() {
            let ex = data.example(i);
            let x = ex.query();
            let ax: Vec<f64> = (0..q).map(|r| (0..p).map(|k| params.a[(r, k)] * x[k]).sum()).collect();
            for (j, f) in feat.iter_mut().enumerate() {
                *f = (0..q).map(|r| ex.g(j, r) * ax[r]).sum();
            }
            accumulate(&mut ftf, &mut fty, &feat, ex.target);
        }
        params.b = solve_normal(ftf, &fty, cfg.rel_cutoff);
        let end = loss_of(&params);
        trace.push(end);
        sweeps += 1;
        if (start - end).abs() <= cfg.tolerance * start.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let best_loss = *trace.last().unwrap();
    Ok(TrainOutcome { params, loss_trace: trace, best_loss, steps: sweeps, converged })
}

fn bilinear_predict(params: &LsaParams, ex: &Example) -> f64 {
    let p = ex.p;
    let q = p + 1;
    let x = ex.query();
    let mut y = 0.0;
    for r in 0..q {
        let ax: f64 = (0..p).map(|k| params.a[(r, k)] * x[k]).sum();
        let gb: f64 = (0..q).map(|j| ex.g(r, j) * params.b[j]).sum();
        y += gb * ax;
    }
    y
}

fn accumulate(ftf: &mut DMatrix<f64>, fty: &mut DVector<f64>, feat: &[f64], y: f64) {
    let d = feat.len();
    for i in 0..d {
        fty[i] += feat[i] * y;
        for j in 0..=i {
            ftf[(i, j)] += feat[i] * feat[j];
        }
    }
}

fn solve_normal(mut ftf: DMatrix<f64>, fty: &DVector<f64>, rel_cutoff: f64) -> DVector<f64> {
    let d = ftf.nrows();
    for i in 0..d {
        for j in 0..i {
            ftf[(j, i)] = ftf[(i, j)];
        }
    }
    sym_pinv_solve(&ftf, fty, rel_cutoff)
}
