//! Hankel inputs with a zero label slot, the masked Gram matrix and cubic features.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::rng::seeded;
use crate::stochastic::ArProcess;

/// `(p+1) x (n-p+1)` Hankel slice of a length-n window; bottom-right entry is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct HankelSlice {
    matrix: DMatrix<f64>,
    order: usize,
    len: usize,
}

/// `G = (1/n) sum_i x^(i) x^(i)^T` over the `n - p` context columns.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    pub normalization: usize,
}

pub fn build_hankel(window: &[f64], p: usize) -> Result<HankelSlice> {
    let n = window.len();
    if p == 0 {
        return invalid("context order must be at least 1");
    }
    if n < p + 1 {
        return invalid(format!("window length {n} below p + 1 = {}", p + 1));
    }
    let cols = n - p + 1;
    let matrix = DMatrix::from_fn(p + 1, cols, |i, j| {
        if i == p && j == cols - 1 {
            0.0
        } else {
            window[i + j]
        }
    });
    Ok(HankelSlice { matrix, order: p, len: n })
}

impl HankelSlice {
    pub fn from_matrix(matrix: DMatrix<f64>, len: usize) -> Result<Self> {
        let rows = matrix.nrows();
        if rows < 2 || matrix.ncols() + rows - 2 != len {
            return invalid("matrix shape does not match a Hankel slice of this length");
        }
        Ok(HankelSlice { matrix, order: rows - 1, len })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// History length `n` (also the Gram normalization).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of context columns `n - p`.
    pub fn context_cols(&self) -> usize {
        self.len - self.order
    }

    /// Query vector `x_{n-p+1:n}`: top `p` entries of the last column.
    pub fn query(&self) -> DVector<f64> {
        let c = self.matrix.ncols() - 1;
        DVector::from_fn(self.order, |i, _| self.matrix[(i, c)])
    }

    pub fn masked_gram(&self) -> GramMatrix {
        masked_gram(self)
    }
}

/// `(1/n) H M H^T` with `M = diag(I_{n-p}, 0)`.
pub fn masked_gram(h: &HankelSlice) -> GramMatrix {
    let m = h.context_cols();
    let ctx = h.matrix.columns(0, m);
    let g = (ctx * ctx.transpose()) / h.len as f64;
    GramMatrix { matrix: g, normalization: h.len }
}

/// Explicit column sum over sliding windows of the raw series.
pub fn gram_by_windows(window: &[f64], p: usize) -> Result<DMatrix<f64>> {
    let n = window.len();
    if n < p + 1 {
        return invalid("window too short");
    }
    let mut g = DMatrix::zeros(p + 1, p + 1);
    for i in 0..n - p {
        let x = DVector::from_column_slice(&window[i..i + p + 1]);
        g += &x * x.transpose();
    }
    Ok(g / n as f64)
}

/// All cubic coordinates `phi[j][r][k] = (1/n) sum_i x_{i+j} x_{i+r} x_{n-p+k}`
/// (0-based `j, r < p+1`, `k < p`).
#[derive(Clone, Debug, PartialEq)]
pub struct CubicFeatures {
    order: usize,
    values: Vec<f64>,
}

impl CubicFeatures {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, j: usize, r: usize, k: usize) -> f64 {
        let q = self.order + 1;
        self.values[(j * q + r) * self.order + k]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `sum_{j,r,k} b_j A_{r,k} phi_{j,r,k}`.
    pub fn contract(&self, b: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
        let q = self.order + 1;
        let mut s = 0.0;
        for j in 0..q {
            for r in 0..q {
                for k in 0..self.order {
                    s += b[j] * a[(r, k)] * self.get(j, r, k);
                }
            }
        }
        s
    }
}

pub fn cubic_features(window: &[f64], p: usize) -> Result<CubicFeatures> {
    let g = build_hankel(window, p)?.masked_gram().matrix;
    let n = window.len();
    let q = p + 1;
    let mut values = Vec::with_capacity(q * q * p);
    for j in 0..q {
        for r in 0..q {
            for k in 0..p {
                values.push(g[(j, r)] * window[n - p + k]);
            }
        }
    }
    Ok(CubicFeatures { order: p, values })
}

/// Max over `(j, r, k)` of the root-mean-square gap between `phi_{j,r,k}` and
/// `gamma_{|j-r|} x_{n-p+k}` across `samples` independent stationary windows.
pub fn feature_collapse_error(proc: &ArProcess, n: usize, p: usize, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return invalid("need at least one sample");
    }
    if n < p + 1 {
        return invalid("window too short");
    }
    let gamma = proc.autocovariances(p)?;
    let q = p + 1;
    let mut sampler = proc.window_sampler()?;
    let mut rng = seeded(seed);
    let mut acc = vec![0.0; q * q * p];
    for _ in 0..samples {
        let w = proc.stationary_window(n, &mut sampler, &mut rng);
        let phi = cubic_features(&w, p)?;
        for j in 0..q {
            for r in 0..q {
                for k in 0..p {
                    let d = phi.get(j, r, k) - gamma.at(j as i64 - r as i64) * w[n - p + k];
                    acc[(j * q + r) * p + k] += d * d;
                }
            }
        }
    }
    Ok(acc.iter().map(|s| (s / samples as f64).sqrt()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn layout_small_cases() {
        let h = build_hankel(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(h.matrix(), &DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 0.0]));
        let h = build_hankel(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(
            h.matrix(),
            &DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0, 3.0, 4.0, 0.0])
        );
        assert_eq!(h.query().as_slice(), &[3.0, 4.0]);
        assert!(build_hankel(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn gram_n3_p1() {
        let x = [0.3, -1.2, 2.0];
        let g = build_hankel(&x, 1).unwrap().masked_gram().matrix;
        let want = DMatrix::from_row_slice(
            2,
            2,
            &[
                x[0] * x[0] + x[1] * x[1],
                x[0] * x[1] + x[1] * x[2],
                x[0] * x[1] + x[1] * x[2],
                x[1] * x[1] + x[2] * x[2],
            ],
        ) / 3.0;
        assert_relative_eq!(g, want, epsilon = 1e-15);
    }

    #[test]
    fn zero_window_is_zero_everywhere() {
        let h = build_hankel(&[0.0; 6], 2).unwrap();
        assert!(h.matrix().iter().all(|v| *v == 0.0));
        assert!(h.masked_gram().matrix.iter().all(|v| *v == 0.0));
        assert!(cubic_features(&[0.0; 6], 2).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn white_noise_offdiagonal_target_is_zero() {
        let proc = ArProcess::new(vec![0.0], 1.0).unwrap();
        // with gamma_1 = 0 the (0,1,k) target vanishes, so the error is just the feature size
        let e = feature_collapse_error(&proc, 400, 1, 200, 1).unwrap();
        assert!(e < 0.2, "{e}");
    }
}
