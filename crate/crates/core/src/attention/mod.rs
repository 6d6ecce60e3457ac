//! Linear self-attention (full and structured), layered stacks and masked softmax attention.

mod checkpoint;
mod train;

pub use checkpoint::{Checkpoint, MatrixRecord};
pub use train::{
    train_bilinear, train_gradient, AlsConfig, Dataset, Example, Optimizer, PreparedDataset, TrainConfig, TrainOutcome,
    Trainable,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hankel::HankelSlice;
use crate::linalg::spd_solve;
use crate::rng::standard_normal;
use crate::stochastic::AutocovTable;

/// Unconstrained layer weights: `P` (value) and `Q` (score), both `(p+1) x (p+1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsaLayerFull {
    pub value: DMatrix<f64>,
    pub score: DMatrix<f64>,
}

/// Structured layer `P = [0; b^T]`, `Q = [A, 0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsaParams {
    pub b: DVector<f64>,
    pub a: DMatrix<f64>,
}

/// Layered stack; layer `l` adds `b_l^T G^(l) A_l u_c` to the last Hankel row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackParams {
    pub layers: Vec<LsaParams>,
}

/// Masked softmax attention weights, both `(p+1) x (p+1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    pub value: DMatrix<f64>,
    pub score: DMatrix<f64>,
}

impl LsaLayerFull {
    pub fn zeros(p: usize) -> Self {
        LsaLayerFull { value: DMatrix::zeros(p + 1, p + 1), score: DMatrix::zeros(p + 1, p + 1) }
    }

    pub fn order(&self) -> usize {
        self.value.nrows() - 1
    }
}

impl LsaParams {
    pub fn zeros(p: usize) -> Self {
        LsaParams { b: DVector::zeros(p + 1), a: DMatrix::zeros(p + 1, p) }
    }

    /// `b = e_{p+1}`, `A = 0`: a layer that reads the label row but adds nothing.
    pub fn neutral(p: usize) -> Self {
        let mut out = Self::zeros(p);
        out.b[p] = 1.0;
        out
    }

    pub fn random<R: Rng + ?Sized>(p: usize, scale: f64, rng: &mut R) -> Self {
        LsaParams {
            b: DVector::from_fn(p + 1, |_, _| scale * standard_normal(rng)),
            a: DMatrix::from_fn(p + 1, p, |_, _| scale * standard_normal(rng)),
        }
    }

    /// Constructive weights `b = e_{p+1}`, `A = [Gamma_p^{-1}; 0]`.
    ///
    /// With the oldest-first query `x = (x_{n-p+1}, ..., x_n)` this gives
    /// `b^T Gamma_{p+1} A x = sum_j rho_j x_{n+1-j}`, the Bayes one-step predictor.
    pub fn constructive(gamma: &AutocovTable, p: usize) -> Result<Self> {
        if gamma.gamma.len() < p + 1 {
            return invalid("autocovariance table too short");
        }
        let g = gamma.toeplitz(p);
        let mut a = DMatrix::zeros(p + 1, p);
        for j in 0..p {
            let mut e = DVector::zeros(p);
            e[j] = 1.0;
            let col = spd_solve(&g, &e)?;
            a.view_mut((0, j), (p, 1)).copy_from(&col);
        }
        let mut b = DVector::zeros(p + 1);
        b[p] = 1.0;
        Ok(LsaParams { b, a })
    }

    pub fn order(&self) -> usize {
        self.a.ncols()
    }

    pub fn to_full(&self) -> LsaLayerFull {
        let p = self.order();
        let mut value = DMatrix::zeros(p + 1, p + 1);
        value.row_mut(p).copy_from(&self.b.transpose());
        let mut score = DMatrix::zeros(p + 1, p + 1);
        score.view_mut((0, 0), (p + 1, p)).copy_from(&self.a);
        LsaLayerFull { value, score }
    }

    /// Lifted coefficient vector over `vech(G) (x) x`, indexed `vech_idx * p + k`.
    pub fn lifted(&self) -> DVector<f64> {
        let p = self.order();
        let q = p + 1;
        let d = q * (q + 1) / 2;
        let mut out = DVector::zeros(d * p);
        let mut idx = 0;
        for j in 0..q {
            for i in j..q {
                for k in 0..p {
                    out[idx * p + k] = if i == j {
                        self.b[i] * self.a[(i, k)]
                    } else {
                        self.b[i] * self.a[(j, k)] + self.b[j] * self.a[(i, k)]
                    };
                }
                idx += 1;
            }
        }
        out
    }
}

impl StackParams {
    pub fn new(layers: Vec<LsaParams>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("a stack needs at least one layer");
        }
        let p = layers[0].order();
        if layers.iter().any(|l| l.order() != p) {
            return invalid("all layers must share the context order");
        }
        Ok(StackParams { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn order(&self) -> usize {
        self.layers[0].order()
    }

    /// Same stack with one more layer appended.
    pub fn pushed(&self, layer: LsaParams) -> Self {
        let mut layers = self.layers.clone();
        layers.push(layer);
        StackParams { layers }
    }
}

impl SoftmaxParams {
    pub fn zeros(p: usize) -> Self {
        SoftmaxParams { value: DMatrix::zeros(p + 1, p + 1), score: DMatrix::zeros(p + 1, p + 1) }
    }

    pub fn random<R: Rng + ?Sized>(p: usize, scale: f64, rng: &mut R) -> Self {
        SoftmaxParams {
            value: DMatrix::from_fn(p + 1, p + 1, |_, _| scale * standard_normal(rng)),
            score: DMatrix::from_fn(p + 1, p + 1, |_, _| scale * standard_normal(rng)),
        }
    }

    pub fn order(&self) -> usize {
        self.value.nrows() - 1
    }
}

fn check_order(h: &HankelSlice, p: usize) -> Result<()> {
    if h.order() != p {
        return invalid(format!("Hankel order {} does not match parameter order {p}", h.order()));
    }
    Ok(())
}

/// `H + (1/n) P H M (H^T Q H)`.
pub fn lsa_forward_full(h: &HankelSlice, layer: &LsaLayerFull) -> Result<DMatrix<f64>> {
    check_order(h, layer.order())?;
    let hm = h.matrix();
    let m = h.context_cols();
    let ctx = hm.columns(0, m);
    let scores = hm.transpose() * &layer.score * hm;
    let upd = &layer.value * ctx * scores.rows(0, m);
    Ok(hm + upd / h.len() as f64)
}

/// Composition of full layers, each applied to the previous output.
pub fn compose_full(h: &HankelSlice, layers: &[LsaLayerFull]) -> Result<DMatrix<f64>> {
    let mut cur = h.clone();
    for layer in layers {
        let next = lsa_forward_full(&cur, layer)?;
        cur = HankelSlice::from_matrix(next, h.len())?;
    }
    Ok(cur.matrix().clone())
}

/// Prediction-slot entry of a full layer.
pub fn lsa_predict_full(h: &HankelSlice, layer: &LsaLayerFull) -> Result<f64> {
    let out = lsa_forward_full(h, layer)?;
    Ok(out[(out.nrows() - 1, out.ncols() - 1)])
}

/// `b^T G A x_{n-p+1:n}`.
pub fn readout_closed_form(h: &HankelSlice, params: &LsaParams) -> Result<f64> {
    check_order(h, params.order())?;
    let g = h.masked_gram().matrix;
    Ok(params.b.dot(&(g * &params.a * h.query())))
}

/// Layered prediction, see [`StackParams`].
pub fn stack_forward(h: &HankelSlice, params: &StackParams) -> Result<f64> {
    let p = params.order();
    check_order(h, p)?;
    let m = h.matrix();
    let cols = m.ncols();
    let mut last: Vec<f64> = (0..cols).map(|c| m[(p, c)]).collect();
    let upper = m.rows(0, p);
    for layer in &params.layers {
        let mut cur = m.clone();
        for (c, v) in last.iter().enumerate() {
            cur[(p, c)] = *v;
        }
        let g = HankelSlice::from_matrix(cur, h.len())?.masked_gram().matrix;
        let k = layer.a.transpose() * (g * &layer.b);
        for (c, v) in last.iter_mut().enumerate() {
            *v += k.dot(&upper.column(c));
        }
    }
    Ok(last[cols - 1])
}

/// Column-wise softmax weights of the prediction column over all `n - p + 1` rows.
pub fn softmax_weights(h: &HankelSlice, params: &SoftmaxParams) -> Result<DVector<f64>> {
    check_order(h, params.order())?;
    let m = h.matrix();
    let q_last = &params.score * m.column(m.ncols() - 1);
    let s = m.transpose() * q_last;
    let mx = s.max();
    let e = s.map(|v| (v - mx).exp());
    let z = e.sum();
    Ok(e / z)
}

/// `[P H M softmax(H^T Q H)]` at the prediction slot.
pub fn softmax_forward(h: &HankelSlice, params: &SoftmaxParams) -> Result<f64> {
    let w = softmax_weights(h, params)?;
    let m = h.matrix();
    let p = params.order();
    let vals = params.value.row(p) * m.columns(0, h.context_cols());
    Ok((0..h.context_cols()).map(|j| w[j] * vals[j]).sum())
}
