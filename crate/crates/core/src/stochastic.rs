//! Stable AR(p) processes: second-order structure, sampling and classical estimators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{spd_solve, spectral_radius, toeplitz};
use crate::rng::{fill_standard_normal, seeded, standard_normal, SeedRng};

/// Spectral radius threshold for accepting coefficients as stable.
pub const STABILITY_MARGIN: f64 = 1e-10;

/// Innovation distribution, always symmetric with variance `noise_std^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InnovationLaw {
    #[default]
    Gaussian,
    Uniform,
    Laplace,
}

impl InnovationLaw {
    /// One unit-variance draw.
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            InnovationLaw::Gaussian => standard_normal(rng),
            InnovationLaw::Uniform => (2.0 * rng.gen::<f64>() - 1.0) * 3f64.sqrt(),
            InnovationLaw::Laplace => {
                // inverse CDF of Laplace(0, 1/sqrt 2)
                let u = rng.gen::<f64>() - 0.5;
                let mag = -(1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
                u.signum() * mag / 2f64.sqrt()
            }
        }
    }
}

/// AR(p) model `x_t = sum_j rho_j x_{t-j} + eps_t`, coefficients lag-1 first.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArProcess {
    coeffs: Vec<f64>,
    noise_std: f64,
    law: InnovationLaw,
}

#[derive(Deserialize)]
struct ArProcessRaw {
    coeffs: Vec<f64>,
    noise_std: f64,
    #[serde(default)]
    law: InnovationLaw,
}

impl<'de> Deserialize<'de> for ArProcess {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ArProcessRaw::deserialize(d)?;
        ArProcess::with_law(raw.coeffs, raw.noise_std, raw.law).map_err(serde::de::Error::custom)
    }
}

/// Lag-indexed autocovariances `gamma_0..gamma_K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocovTable {
    pub gamma: Vec<f64>,
}

impl AutocovTable {
    pub fn max_lag(&self) -> usize {
        self.gamma.len() - 1
    }

    /// `gamma_{|k|}`.
    pub fn at(&self, k: i64) -> f64 {
        self.gamma[k.unsigned_abs() as usize]
    }

    pub fn autocorrelations(&self) -> Vec<f64> {
        self.gamma.iter().map(|g| g / self.gamma[0]).collect()
    }

    /// Toeplitz matrix of the first `dim` lags.
    pub fn toeplitz(&self, dim: usize) -> DMatrix<f64> {
        toeplitz(&self.gamma, dim)
    }
}

/// Companion matrix: top row rho, ones on the subdiagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct CompanionMatrix {
    pub matrix: DMatrix<f64>,
}

impl CompanionMatrix {
    pub fn from_coeffs(coeffs: &[f64]) -> Self {
        let p = coeffs.len();
        let mut m = DMatrix::zeros(p, p);
        for (j, c) in coeffs.iter().enumerate() {
            m[(0, j)] = *c;
        }
        for i in 1..p {
            m[(i, i - 1)] = 1.0;
        }
        CompanionMatrix { matrix: m }
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.matrix)
    }
}

/// A sampled trajectory with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPath {
    pub values: Vec<f64>,
    pub seed: u64,
    pub burn_in: usize,
}

/// True iff the companion spectral radius is below `1 - 1e-10`.
pub fn check_stability(coeffs: &[f64]) -> Result<bool> {
    if coeffs.is_empty() {
        return invalid("coefficient vector is empty");
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return invalid("coefficients must be finite");
    }
    Ok(CompanionMatrix::from_coeffs(coeffs).spectral_radius() < 1.0 - STABILITY_MARGIN)
}

impl ArProcess {
    pub fn new(coeffs: Vec<f64>, noise_std: f64) -> Result<Self> {
        Self::with_law(coeffs, noise_std, InnovationLaw::Gaussian)
    }

    pub fn with_law(coeffs: Vec<f64>, noise_std: f64, law: InnovationLaw) -> Result<Self> {
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return invalid(format!("noise_std must be positive, got {noise_std}"));
        }
        if !check_stability(&coeffs)? {
            let spectral_radius = CompanionMatrix::from_coeffs(&coeffs).spectral_radius();
            return Err(Error::Unstable { spectral_radius });
        }
        Ok(ArProcess { coeffs, noise_std, law })
    }

    /// Random stable process whose companion eigenvalues have modulus at most
    /// `max_modulus`. Eigenvalues are drawn as conjugate pairs (plus one real
    /// root for odd p) with modulus uniform on `[0, max_modulus]`.
    pub fn random_stable<R: Rng + ?Sized>(
        p: usize,
        max_modulus: f64,
        noise_std: f64,
        law: InnovationLaw,
        rng: &mut R,
    ) -> Result<Self> {
        if p == 0 {
            return invalid("order must be at least 1");
        }
        if !(max_modulus > 0.0 && max_modulus < 1.0) {
            return invalid("max_modulus must lie in (0, 1)");
        }
        // polynomial z^p + c_1 z^{p-1} + ... + c_p, built from its roots
        let mut poly = vec![1.0];
        let mul = |poly: &[f64], quad: &[f64]| {
            let mut out = vec![0.0; poly.len() + quad.len() - 1];
            for (i, a) in poly.iter().enumerate() {
                for (j, b) in quad.iter().enumerate() {
                    out[i + j] += a * b;
                }
            }
            out
        };
        for _ in 0..p / 2 {
            let r = max_modulus * rng.gen::<f64>();
            let theta = std::f64::consts::PI * rng.gen::<f64>();
            poly = mul(&poly, &[1.0, -2.0 * r * theta.cos(), r * r]);
        }
        if p % 2 == 1 {
            let r = max_modulus * (2.0 * rng.gen::<f64>() - 1.0);
            poly = mul(&poly, &[1.0, -r]);
        }
        let coeffs = poly[1..].iter().map(|c| -c).collect();
        Self::with_law(coeffs, noise_std, law)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    pub fn law(&self) -> InnovationLaw {
        self.law
    }

    pub fn companion(&self) -> CompanionMatrix {
        CompanionMatrix::from_coeffs(&self.coeffs)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.companion().spectral_radius()
    }

    /// Coefficients padded with zeros to `p >= order` lags.
    pub fn padded_coeffs(&self, p: usize) -> Result<Vec<f64>> {
        if p < self.order() {
            return invalid(format!("context order {p} below process order {}", self.order()));
        }
        let mut c = self.coeffs.clone();
        c.resize(p, 0.0);
        Ok(c)
    }

    /// Stationary covariance of the state `(x_t, ..., x_{t-p+1})`, from
    /// `Sigma = A Sigma A^T + sigma^2 e_1 e_1^T`.
    pub fn state_covariance(&self) -> Result<DMatrix<f64>> {
        let a = self.companion().matrix;
        let p = a.nrows();
        let kron = a.kronecker(&a);
        let lhs = DMatrix::<f64>::identity(p * p, p * p) - kron;
        let mut rhs = DVector::zeros(p * p);
        rhs[0] = self.noise_var();
        let sol = lhs.lu().solve(&rhs).ok_or(Error::LyapunovSingular)?;
        let sigma = DMatrix::from_column_slice(p, p, sol.as_slice());
        Ok((&sigma + sigma.transpose()) * 0.5)
    }

    /// `gamma_0..gamma_K` via `gamma_k = e_1^T A^k Sigma e_1`.
    pub fn autocovariances(&self, max_lag: usize) -> Result<AutocovTable> {
        let sigma = self.state_covariance()?;
        let p = self.order();
        let mut v: Vec<f64> = (0..p).map(|i| sigma[(i, 0)]).collect();
        let mut gamma = Vec::with_capacity(max_lag + 1);
        for _ in 0..=max_lag {
            gamma.push(v[0]);
            // v <- A v
            let head: f64 = self.coeffs.iter().zip(&v).map(|(c, x)| c * x).sum();
            v.rotate_right(1);
            v[0] = head;
        }
        Ok(AutocovTable { gamma })
    }

    /// Wold coefficients `psi_0..psi_K`, `psi_k = e_1^T A^k e_1`.
    pub fn impulse_response(&self, max_lag: usize) -> Vec<f64> {
        let p = self.order();
        let mut psi: Vec<f64> = Vec::with_capacity(max_lag + 1);
        for k in 0..=max_lag {
            if k == 0 {
                psi.push(1.0);
                continue;
            }
            let mut v = 0.0;
            for j in 1..=p.min(k) {
                v += self.coeffs[j - 1] * psi[k - j];
            }
            psi.push(v);
        }
        psi
    }

    /// Bayes h-step forecast error `sigma^2 sum_{k<h} psi_k^2`.
    pub fn bayes_multistep_mse(&self, h: usize) -> f64 {
        if h == 0 {
            return 0.0;
        }
        let psi = self.impulse_response(h - 1);
        self.noise_var() * psi.iter().map(|v| v * v).sum::<f64>()
    }

    /// `10 p / (1 - spectral radius)` rounded up, capped at 1e5.
    pub fn default_burn_in(&self) -> usize {
        let rad = self.spectral_radius().min(1.0 - STABILITY_MARGIN);
        let b = (10.0 * self.order() as f64 / (1.0 - rad)).ceil();
        b.min(1e5) as usize
    }

    /// Run the recursion from a zero state on the given innovations.
    pub fn filter(&self, innovations: &[f64]) -> Vec<f64> {
        let p = self.order();
        let mut out: Vec<f64> = Vec::with_capacity(innovations.len());
        for (t, e) in innovations.iter().enumerate() {
            let mut v = *e;
            for j in 1..=p.min(t) {
                v += self.coeffs[j - 1] * out[t - j];
            }
            out.push(v);
        }
        out
    }

    fn draw_innovations(&self, rng: &mut SeedRng, out: &mut [f64]) {
        match self.law {
            InnovationLaw::Gaussian => fill_standard_normal(rng, out),
            law => out.iter_mut().for_each(|v| *v = law.draw(rng)),
        }
        out.iter_mut().for_each(|v| *v *= self.noise_std);
    }

    /// Zero-initialised path; `burn_in` leading steps are discarded.
    pub fn sample_path(&self, len: usize, burn_in: usize, seed: u64) -> Result<SeriesPath> {
        if len == 0 {
            return invalid("path length must be positive");
        }
        let mut rng = seeded(seed);
        let mut eps = vec![0.0; len + burn_in];
        self.draw_innovations(&mut rng, &mut eps);
        let mut values = self.filter(&eps);
        values.drain(..burn_in);
        Ok(SeriesPath { values, seed, burn_in })
    }

    /// A draw from the stationary law of `len` consecutive values.
    ///
    /// Gaussian processes start from an exact state draw; other laws fall back
    /// to `default_burn_in` steps from zero.
    pub fn stationary_window(&self, len: usize, sampler: &mut WindowSampler, rng: &mut SeedRng) -> Vec<f64> {
        let p = self.order();
        match &sampler.state_chol {
            Some(l) => {
                let mut z = vec![0.0; p + len];
                fill_standard_normal(rng, &mut z);
                // state (x_{p-1}, ..., x_0) ~ N(0, Sigma)
                let s = l * DVector::from_column_slice(&z[..p]);
                let mut out = Vec::with_capacity(p + len);
                for i in (0..p).rev() {
                    out.push(s[i]);
                }
                for t in 0..len {
                    let mut v = z[p + t] * self.noise_std;
                    let cur = out.len();
                    for j in 1..=p {
                        v += self.coeffs[j - 1] * out[cur - j];
                    }
                    out.push(v);
                }
                out.drain(..p);
                out
            }
            None => {
                let burn = sampler.burn_in;
                let mut eps = vec![0.0; burn + len];
                self.draw_innovations(rng, &mut eps);
                let mut v = self.filter(&eps);
                v.drain(..burn);
                v
            }
        }
    }

    pub fn window_sampler(&self) -> Result<WindowSampler> {
        let state_chol = match self.law {
            InnovationLaw::Gaussian => {
                let sigma = self.state_covariance()?;
                let c = sigma
                    .cholesky()
                    .ok_or_else(|| Error::Singular("state covariance is not positive definite".into()))?;
                Some(c.l())
            }
            _ => None,
        };
        Ok(WindowSampler { state_chol, burn_in: self.default_burn_in() })
    }
}

/// Cached factors for drawing independent stationary windows.
#[derive(Clone, Debug)]
pub struct WindowSampler {
    state_chol: Option<DMatrix<f64>>,
    burn_in: usize,
}

/// Solve `Gamma_p rho = (gamma_1..gamma_p)`.
pub fn yule_walker_solve(gamma: &AutocovTable, p: usize) -> Result<Vec<f64>> {
    if p == 0 || gamma.gamma.len() < p + 1 {
        return invalid(format!("need lags 0..={p}, table has {}", gamma.gamma.len()));
    }
    let g = gamma.toeplitz(p);
    let rhs = DVector::from_iterator(p, (1..=p).map(|k| gamma.gamma[k]));
    Ok(spd_solve(&g, &rhs)?.iter().copied().collect())
}

/// OLS with design rows `(x_{t-1}, ..., x_{t-p})` and response `x_t`.
pub fn ols_fit(path: &[f64], p: usize) -> Result<Vec<f64>> {
    if p == 0 || path.len() <= 2 * p {
        return invalid(format!("path of length {} too short for order {p}", path.len()));
    }
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for t in p..path.len() {
        for i in 0..p {
            let xi = path[t - 1 - i];
            xty[i] += xi * path[t];
            for j in 0..=i {
                xtx[(i, j)] += xi * path[t - 1 - j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    let sol = match xtx.clone().cholesky() {
        Some(c) => c.solve(&xty),
        None => return Err(Error::Singular("X^T X is rank deficient".into())),
    };
    Ok(sol.iter().copied().collect())
}

/// Biased (1/T) sample autocovariances about zero mean.
pub fn sample_autocovariances(x: &[f64], max_lag: usize) -> AutocovTable {
    let t = x.len();
    let gamma = (0..=max_lag)
        .map(|k| {
            if k >= t {
                return 0.0;
            }
            x[..t - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / t as f64
        })
        .collect();
    AutocovTable { gamma }
}
