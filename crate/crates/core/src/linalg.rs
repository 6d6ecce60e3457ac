//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric Toeplitz matrix `T[i][j] = gamma[|i - j|]`.
pub fn toeplitz(gamma: &[f64], dim: usize) -> DMatrix<f64> {
    assert!(gamma.len() >= dim, "need {dim} lags, got {}", gamma.len());
    DMatrix::from_fn(dim, dim, |i, j| gamma[i.abs_diff(j)])
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    // Francis iterations can stall on nilpotent or highly non-normal inputs.
    match Schur::try_new(m.clone(), f64::EPSILON, 20_000) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => gelfand_radius(m),
    }
}

/// `lim ||M^k||^(1/k)` along `k = 2^j` with rescaling after every squaring.
fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
    let mut a = m.clone();
    let mut log_scale = 0.0;
    let mut est = f64::NAN;
    for j in 0..60 {
        let norm = a.norm();
        if norm == 0.0 {
            return 0.0;
        }
        a /= norm;
        log_scale += norm.ln() / 2f64.powi(j);
        est = log_scale.exp();
        a = &a * &a;
    }
    est
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted ascending.
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(m: &DMatrix<f64>) -> SortedEigen {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    SortedEigen { values, vectors }
}

impl SortedEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `V diag(f(lambda)) V^T` over the eigenpairs with `lambda > cutoff`.
    /// Returns the matrix and the number of retained pairs.
    pub fn truncated_inverse(&self, cutoff: f64) -> (DMatrix<f64>, usize) {
        let d = self.values.len();
        let mut out = DMatrix::zeros(d, d);
        let mut rank = 0;
        for k in 0..d {
            let lam = self.values[k];
            if lam > cutoff {
                rank += 1;
                let v = self.vectors.column(k);
                out += (v * v.transpose()) / lam;
            }
        }
        (out, rank)
    }
}

/// Minimum-norm solution of the symmetric system `m x = rhs`, dropping
/// eigenvalues below `rel_cutoff * max|lambda|`.
pub fn sym_pinv_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, rel_cutoff: f64) -> DVector<f64> {
    let eig = sym_eigen(m);
    let scale = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (pinv, _) = eig.truncated_inverse(rel_cutoff * scale);
    pinv * rhs
}

/// Cholesky solve; errors if `m` is not numerically positive definite.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| Error::Singular("Cholesky factorisation failed".into()))
}

/// Least-squares log-log slope and intercept of `log(values)` on `log(xs)`.
pub fn loglog_fit(xs: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != values.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("log-log fit needs at least two points".into()));
    }
    if values.iter().chain(xs).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    Ok(line_fit(&lx, &ly))
}

/// Ordinary least-squares line `y = intercept + slope x`; returns `(slope, intercept)`.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn radius_of_nilpotent_shift_terminates() {
        let m = DMatrix::from_fn(4, 4, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
        assert!(spectral_radius(&m) < 1e-3);
        assert_eq!(gelfand_radius(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn gelfand_matches_rotation_radius() {
        let m = DMatrix::from_row_slice(2, 2, &[0.6, -0.7, 0.7, 0.6]);
        assert_relative_eq!(gelfand_radius(&m), 0.85f64.sqrt(), max_relative = 1e-10);
        let j = DMatrix::from_row_slice(2, 2, &[0.9, 1.0, 0.0, 0.9]);
        assert_relative_eq!(gelfand_radius(&j), 0.9, max_relative = 1e-9);
    }

    #[test]
    fn toeplitz_layout() {
        let t = toeplitz(&[3.0, 2.0, 1.0], 3);
        assert_eq!(t[(0, 2)], 1.0);
        assert_eq!(t[(2, 1)], 2.0);
        assert_eq!(t[(1, 1)], 3.0);
    }

    #[test]
    fn eigen_sorted_and_pinv_of_singular() {
        // rank one: u u^T with u = (1, 2)
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let e = sym_eigen(&m);
        assert!(e.min().abs() < 1e-12);
        assert_relative_eq!(e.max(), 5.0, epsilon = 1e-12);
        let x = sym_pinv_solve(&m, &DVector::from_vec(vec![1.0, 2.0]), 1e-12);
        // minimum-norm solution lies along u
        assert_relative_eq!(x[1], 2.0 * x[0], epsilon = 1e-12);
        assert_relative_eq!(x[0] + 2.0 * x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert_relative_eq!(spectral_radius(&m), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn loglog_recovers_power() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
        let (s, c) = loglog_fit(&xs, &ys).unwrap();
        assert_relative_eq!(s, -1.5, epsilon = 1e-12);
        assert_relative_eq!(c, 3.0f64.ln(), epsilon = 1e-12);
    }
}
