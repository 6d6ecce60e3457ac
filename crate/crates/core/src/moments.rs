//! Gaussian moment machinery for the Kronecker-lifted feature `Z = vech(G) (x) x`.
//!
//! Index conventions (0-based here, 1-based in CSV output): `q = p + 1`,
//! `vech` stacks the lower triangle column by column, and `Z[v * p + k] =
//! vech(G)[v] * x[k]` with `x = (x_{n-p+1}, ..., x_n)` oldest first.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::stochastic::{ArProcess, InnovationLaw};

/// Largest context order accepted by [`exact_lifted_moments`].
pub const EXACT_MAX_ORDER: usize = 7;
/// Largest history length accepted by [`exact_lifted_moments`].
pub const EXACT_MAX_LEN: usize = 512;

/// All perfect matchings of `{0, .., size-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairingSet {
    pub size: usize,
    pub matchings: Vec<Vec<(usize, usize)>>,
}

pub fn perfect_matchings(size: usize) -> PairingSet {
    fn rec(rest: &[usize], cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        let a = rest[0];
        for i in 1..rest.len() {
            let mut tail: Vec<usize> = rest[1..i].to_vec();
            tail.extend_from_slice(&rest[i + 1..]);
            cur.push((a, rest[i]));
            rec(&tail, cur, out);
            cur.pop();
        }
    }
    let mut matchings = Vec::new();
    if size % 2 == 0 {
        let idx: Vec<usize> = (0..size).collect();
        rec(&idx, &mut Vec::new(), &mut matchings);
    }
    PairingSet { size, matchings }
}

/// `E[X_{i_1} ... X_{i_k}]` for a zero-mean Gaussian vector with covariance `cov`.
pub fn isserlis(cov: &DMatrix<f64>, indices: &[usize]) -> Result<f64> {
    if indices.len() > 8 {
        return Err(Error::GuardExceeded(format!("{} indices (at most 8)", indices.len())));
    }
    if let Some(i) = indices.iter().find(|&&i| i >= cov.nrows()) {
        return invalid(format!("index {i} out of range for a {}x{} covariance", cov.nrows(), cov.ncols()));
    }
    if indices.len() % 2 == 1 {
        return Ok(0.0);
    }
    let pairs = perfect_matchings(indices.len());
    Ok(pairs
        .matchings
        .iter()
        .map(|m| m.iter().map(|&(a, b)| cov[(indices[a], indices[b])]).product::<f64>())
        .sum())
}

/// Column-major lower-triangle ordering of a `dim x dim` symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct VechIndexer {
    dim: usize,
    pairs: Vec<(usize, usize)>,
}

impl VechIndexer {
    pub fn new(dim: usize) -> Self {
        let mut pairs = Vec::with_capacity(dim * (dim + 1) / 2);
        for j in 0..dim {
            for i in j..dim {
                pairs.push((i, j));
            }
        }
        VechIndexer { dim, pairs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(row, col)` with `row >= col`.
    pub fn pair(&self, v: usize) -> (usize, usize) {
        self.pairs[v]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn index_of(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        // entries in columns 0..j, then the offset inside column j
        j * self.dim - j * j.saturating_sub(1) / 2 + (i - j)
    }

    pub fn vech(&self, m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.pairs.iter().map(|&(i, j)| m[(i, j)]))
    }

    pub fn unvech(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
        }
        m
    }

    /// Duplication matrix `D` with `vec(M) = D vech(M)` for symmetric `M`.
    pub fn duplication(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut out = DMatrix::zeros(d * d, self.len());
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            out[(j * d + i, k)] = 1.0;
            out[(i * d + j, k)] = 1.0;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Exact,
    MonteCarlo { samples: usize },
}

/// `S = E[Z Z^T]`, `r = E[Z x^T]`, `Gamma_p = E[x x^T]` for one `(n, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedMoments {
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gamma_p: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
    pub noise_var: f64,
    pub provenance: Provenance,
    pub s_stderr: Option<DMatrix<f64>>,
    pub r_stderr: Option<DMatrix<f64>>,
    pub gamma_stderr: Option<DMatrix<f64>>,
}

impl LiftedMoments {
    pub fn feature_dim(&self) -> usize {
        self.s.nrows()
    }

    /// Long-format CSV; every row names its block and both index coordinates (1-based).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let vech = VechIndexer::new(self.p + 1);
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "block", "row", "col", "row_vech_i", "row_vech_j", "row_lag", "col_vech_i", "col_vech_j", "col_lag",
            "value", "stderr",
        ])?;
        let zcoord = |z: usize| {
            let (i, j) = vech.pair(z / self.p);
            ((i + 1).to_string(), (j + 1).to_string(), (z % self.p + 1).to_string())
        };
        let se = |m: &Option<DMatrix<f64>>, i: usize, j: usize| m.as_ref().map(|m| m[(i, j)].to_string()).unwrap_or_default();
        for i in 0..self.s.nrows() {
            for j in 0..self.s.ncols() {
                let (a, b, c) = zcoord(i);
                let (d, e, f) = zcoord(j);
                out.write_record([
                    "S".into(), (i + 1).to_string(), (j + 1).to_string(), a, b, c, d, e, f,
                    self.s[(i, j)].to_string(), se(&self.s_stderr, i, j),
                ])?;
            }
        }
        for i in 0..self.r.nrows() {
            for t in 0..self.p {
                let (a, b, c) = zcoord(i);
                out.write_record([
                    "r".into(), (i + 1).to_string(), (t + 1).to_string(), a, b, c, String::new(), String::new(),
                    (t + 1).to_string(), self.r[(i, t)].to_string(), se(&self.r_stderr, i, t),
                ])?;
            }
        }
        for s in 0..self.p {
            for t in 0..self.p {
                out.write_record([
                    "Gamma".into(), (s + 1).to_string(), (t + 1).to_string(), String::new(), String::new(),
                    (s + 1).to_string(), String::new(), String::new(), (t + 1).to_string(),
                    self.gamma_p[(s, t)].to_string(), se(&self.gamma_stderr, s, t),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Lag-indexed kernel tables for the exact moments, all centred on their offset.
struct Kernels {
    big_n: usize,
    p: usize,
    gamma: Vec<f64>,
    // L(d1, d2), d in [-p, p]
    lk: Vec<f64>,
    // P(a, b), a, b in [-(p-1), p]
    pk: Vec<f64>,
    // T(a, b, d), a, b in [-(p-1), p], d in [-p, p]
    tk: Vec<f64>,
}

impl Kernels {
    fn build(gamma: Vec<f64>, n: usize, p: usize) -> Self {
        let big_n = n - p;
        let g = |k: i64| gamma[k.unsigned_abs() as usize];
        let nd = 2 * p + 1;
        let na = 2 * p;
        let ni = big_n as i64;
        let pi = p as i64;

        let mut lk = vec![0.0; nd * nd];
        for (i1, d1) in (-pi..=pi).enumerate() {
            for (i2, d2) in (-pi..=pi).enumerate() {
                let mut s = 0.0;
                for h in -(ni - 1)..=(ni - 1) {
                    s += (ni - h.abs()) as f64 * g(h + d1) * g(h + d2);
                }
                lk[i1 * nd + i2] = s;
            }
        }

        let alphas: Vec<i64> = (-(pi - 1)..=pi).collect();
        let mut pk = vec![0.0; na * na];
        for (i1, &a) in alphas.iter().enumerate() {
            for (i2, &b) in alphas.iter().enumerate() {
                pk[i1 * na + i2] = (0..ni).map(|m| g(m - ni + a) * g(m - ni + b)).sum();
            }
        }

        // W(m, b, d) = sum_m' g(m' - N + b) g(m - m' + d)
        let wk: Vec<f64> = (0..ni)
            .into_par_iter()
            .flat_map_iter(|m| {
                let mut row = vec![0.0; na * nd];
                for (ib, &b) in alphas.iter().enumerate() {
                    for (id, d) in (-pi..=pi).enumerate() {
                        row[ib * nd + id] = (0..ni).map(|mp| g(mp - ni + b) * g(m - mp + d)).sum();
                    }
                }
                row
            })
            .collect();
        let mut tk = vec![0.0; na * na * nd];
        for (ia, &a) in alphas.iter().enumerate() {
            for ib in 0..na {
                for id in 0..nd {
                    tk[(ia * na + ib) * nd + id] = (0..ni)
                        .map(|m| g(m - ni + a) * wk[m as usize * na * nd + ib * nd + id])
                        .sum();
                }
            }
        }
        Kernels { big_n, p, gamma, lk, pk, tk }
    }

    fn g(&self, k: i64) -> f64 {
        self.gamma[k.unsigned_abs() as usize]
    }

    fn l(&self, d1: i64, d2: i64) -> f64 {
        let nd = 2 * self.p + 1;
        let o = self.p as i64;
        self.lk[(d1 + o) as usize * nd + (d2 + o) as usize]
    }

    fn pp(&self, a: i64, b: i64) -> f64 {
        let na = 2 * self.p;
        let o = self.p as i64 - 1;
        self.pk[(a + o) as usize * na + (b + o) as usize]
    }

    fn t(&self, a: i64, b: i64, d: i64) -> f64 {
        let na = 2 * self.p;
        let nd = 2 * self.p + 1;
        let oa = self.p as i64 - 1;
        let od = self.p as i64;
        self.tk[((a + oa) as usize * na + (b + oa) as usize) * nd + (d + od) as usize]
    }

    /// `n^2 E[G_ab G_cd x_s x_t]`.
    fn sixth(&self, a: i64, b: i64, c: i64, d: i64, s: i64, t: i64) -> f64 {
        let nn = self.big_n as f64;
        let mut v = nn * nn * self.g(s - t) * self.g(a - b) * self.g(c - d);
        v += self.g(s - t) * (self.l(a - c, b - d) + self.l(a - d, b - c));
        v += nn * self.g(c - d) * (self.pp(a - s, b - t) + self.pp(b - s, a - t));
        v += nn * self.g(a - b) * (self.pp(c - s, d - t) + self.pp(d - s, c - t));
        for (e1, f1) in [(a, b), (b, a)] {
            for (e2, f2) in [(c, d), (d, c)] {
                v += self.t(e1 - s, e2 - t, f1 - f2) + self.t(e1 - t, e2 - s, f1 - f2);
            }
        }
        v
    }

    /// `n E[G_ab x_s x_t]`.
    fn fourth(&self, a: i64, b: i64, s: i64, t: i64) -> f64 {
        self.big_n as f64 * self.g(a - b) * self.g(s - t) + self.pp(a - s, b - t) + self.pp(a - t, b - s)
    }
}

/// Exact lifted moments of a Gaussian AR process.
pub fn exact_lifted_moments(proc: &ArProcess, n: usize, p: usize) -> Result<LiftedMoments> {
    if proc.law() != InnovationLaw::Gaussian {
        return Err(Error::Unsupported("exact moments need Gaussian innovations".into()));
    }
    if p == 0 || n < p + 1 {
        return invalid(format!("need n >= p + 1, got n = {n}, p = {p}"));
    }
    if p > EXACT_MAX_ORDER || n > EXACT_MAX_LEN {
        return Err(Error::GuardExceeded(format!(
            "exact moments limited to p <= {EXACT_MAX_ORDER}, n <= {EXACT_MAX_LEN} (got p = {p}, n = {n})"
        )));
    }
    let gamma = proc.autocovariances(n + p + 1)?;
    let kern = Kernels::build(gamma.gamma.clone(), n, p);
    let vech = VechIndexer::new(p + 1);
    let dim = vech.len() * p;
    let coord = |z: usize| {
        let (i, j) = vech.pair(z / p);
        (i as i64, j as i64, (z % p) as i64)
    };
    let nf = n as f64;
    let rows: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|zi| {
            let (a, b, s) = coord(zi);
            (zi..dim)
                .map(|zj| {
                    let (c, d, t) = coord(zj);
                    kern.sixth(a, b, c, d, s, t) / (nf * nf)
                })
                .collect()
        })
        .collect();
    let mut sm = DMatrix::zeros(dim, dim);
    for (zi, row) in rows.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            sm[(zi, zi + off)] = *v;
            sm[(zi + off, zi)] = *v;
        }
    }
    let r = DMatrix::from_fn(dim, p, |zi, t| {
        let (a, b, s) = coord(zi);
        kern.fourth(a, b, s, t as i64) / nf
    });
    Ok(LiftedMoments {
        s: sm,
        r,
        gamma_p: gamma.toeplitz(p),
        n,
        p,
        noise_var: proc.noise_var(),
        provenance: Provenance::Exact,
        s_stderr: None,
        r_stderr: None,
        gamma_stderr: None,
    })
}

/// Lifted feature `vech(G) (x) x` of one window.
pub fn lifted_feature(window: &[f64], p: usize, vech: &VechIndexer) -> DVector<f64> {
    let n = window.len();
    let q = p + 1;
    let mut g = DMatrix::<f64>::zeros(q, q);
    for c in 0..n - p {
        let h = &window[c..c + q];
        for i in 0..q {
            for j in 0..=i {
                g[(i, j)] += h[i] * h[j];
            }
        }
    }
    let x = &window[n - p..];
    let mut z = DVector::zeros(vech.len() * p);
    for (v, &(i, j)) in vech.pairs().iter().enumerate() {
        let gij = g[(i, j)] / n as f64;
        for k in 0..p {
            z[v * p + k] = gij * x[k];
        }
    }
    z
}

const MC_CHUNK: usize = 4096;

struct MomentSums {
    s: Vec<f64>,
    s2: Vec<f64>,
    r: Vec<f64>,
    r2: Vec<f64>,
    g: Vec<f64>,
    g2: Vec<f64>,
}

impl MomentSums {
    fn zeros(dim: usize, p: usize) -> Self {
        MomentSums {
            s: vec![0.0; dim * dim],
            s2: vec![0.0; dim * dim],
            r: vec![0.0; dim * p],
            r2: vec![0.0; dim * p],
            g: vec![0.0; p * p],
            g2: vec![0.0; p * p],
        }
    }

    fn add(&mut self, other: &MomentSums) {
        for (a, b) in [
            (&mut self.s, &other.s),
            (&mut self.s2, &other.s2),
            (&mut self.r, &other.r),
            (&mut self.r2, &other.r2),
            (&mut self.g, &other.g),
            (&mut self.g2, &other.g2),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Sample averages over independent stationary windows, with entrywise standard errors.
///
/// Samples are drawn in fixed chunks with their own derived seeds, so the result
/// does not depend on the thread count.
pub fn mc_lifted_moments(proc: &ArProcess, n: usize, p: usize, samples: usize, seed: u64) -> Result<LiftedMoments> {
    if p == 0 || n < p + 1 {
        return invalid(format!("need n >= p + 1, got n = {n}, p = {p}"));
    }
    if samples < 2 {
        return invalid("need at least two samples");
    }
    let vech = VechIndexer::new(p + 1);
    let dim = vech.len() * p;
    let sampler = proc.window_sampler()?;
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts: Vec<MomentSums> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeded(derive_seed(seed, "mc-lifted-moments", c as u64));
            let mut sampler = sampler.clone();
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut acc = MomentSums::zeros(dim, p);
            for _ in 0..count {
                let w = proc.stationary_window(n, &mut sampler, &mut rng);
                let z = lifted_feature(&w, p, &vech);
                let x = &w[n - p..];
                for i in 0..dim {
                    for j in i..dim {
                        let v = z[i] * z[j];
                        acc.s[i * dim + j] += v;
                        acc.s2[i * dim + j] += v * v;
                    }
                    for t in 0..p {
                        let v = z[i] * x[t];
                        acc.r[i * p + t] += v;
                        acc.r2[i * p + t] += v * v;
                    }
                }
                for s in 0..p {
                    for t in 0..p {
                        let v = x[s] * x[t];
                        acc.g[s * p + t] += v;
                        acc.g2[s * p + t] += v * v;
                    }
                }
            }
            acc
        })
        .collect();
    let mut tot = MomentSums::zeros(dim, p);
    for part in &parts {
        tot.add(part);
    }
    let ns = samples as f64;
    let mean_se = |sum: f64, sq: f64| {
        let m = sum / ns;
        let var = (sq / ns - m * m).max(0.0) * ns / (ns - 1.0);
        (m, (var / ns).sqrt())
    };
    let mut s = DMatrix::zeros(dim, dim);
    let mut s_se = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let (m, e) = mean_se(tot.s[i * dim + j], tot.s2[i * dim + j]);
            s[(i, j)] = m;
            s[(j, i)] = m;
            s_se[(i, j)] = e;
            s_se[(j, i)] = e;
        }
    }
    let mut r = DMatrix::zeros(dim, p);
    let mut r_se = DMatrix::zeros(dim, p);
    for i in 0..dim {
        for t in 0..p {
            let (m, e) = mean_se(tot.r[i * p + t], tot.r2[i * p + t]);
            r[(i, t)] = m;
            r_se[(i, t)] = e;
        }
    }
    let mut g = DMatrix::zeros(p, p);
    let mut g_se = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            let (m, e) = mean_se(tot.g[a * p + b], tot.g2[a * p + b]);
            g[(a, b)] = m;
            g_se[(a, b)] = e;
        }
    }
    Ok(LiftedMoments {
        s,
        r,
        gamma_p: g,
        n,
        p,
        noise_var: proc.noise_var(),
        provenance: Provenance::MonteCarlo { samples },
        s_stderr: Some(s_se),
        r_stderr: Some(r_se),
        gamma_stderr: Some(g_se),
    })
}

/// Restricted one-parameter fit `x_hat = alpha G_21 x_n` for AR(1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ar1WarmStart {
    /// `E[x_n^2 G_21]`
    pub n_n: f64,
    /// `E[x_n^2 G_21^2]`
    pub d_n: f64,
    pub alpha: f64,
    /// `min_alpha E[(alpha G_21 x_n - rho x_n)^2]`
    pub min_loss: f64,
    pub variance: f64,
}

fn check_ar1(rho: f64, sigma_eps: f64, n: usize) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return invalid(format!("|rho| must be below 1, got {rho}"));
    }
    if !(sigma_eps > 0.0) {
        return invalid("sigma_eps must be positive");
    }
    if n < 3 {
        return invalid("n must be at least 3");
    }
    Ok(())
}

/// Closed-form warm-start moments.
pub fn ar1_warm_start(rho: f64, sigma_eps: f64, n: usize) -> Result<Ar1WarmStart> {
    check_ar1(rho, sigma_eps, n)?;
    let r2 = rho * rho;
    let s2 = sigma_eps * sigma_eps / (1.0 - r2);
    let k = |m: usize| r2 * (1.0 - r2.powi(m as i32)) / (1.0 - r2);
    let h = |m: usize| {
        let m_ = m as f64;
        r2 * (1.0 - (m_ + 1.0) * r2.powi(m as i32) + m_ * r2.powi(m as i32 + 1)) / ((1.0 - r2) * (1.0 - r2))
    };
    let nf = n as f64;
    // (2 / rho) K_{n-1} written without the removable 1/rho
    let two_k_over_rho = 2.0 * rho * (1.0 - r2.powi(n as i32 - 1)) / (1.0 - r2);
    let n_n = s2 * s2 / nf * ((nf - 1.0) * rho + two_k_over_rho);
    let d_n = s2 * s2 * s2 / (nf * nf)
        * ((nf + 1.0) + nf * (nf - 1.0) * r2 - 2.0 * k(n - 1) + (8.0 * nf - 6.0) * k(n - 2) + 12.0 * h(n - 1));
    let alpha = rho * n_n / d_n;
    let min_loss = (r2 * s2 - r2 * n_n * n_n / d_n).max(0.0);
    Ok(Ar1WarmStart { n_n, d_n, alpha, min_loss, variance: s2 })
}

/// `(N_n, D_n)` by direct pairing enumeration over window positions.
pub fn ar1_warm_start_oracle(rho: f64, sigma_eps: f64, n: usize) -> Result<(f64, f64)> {
    check_ar1(rho, sigma_eps, n)?;
    let s2 = sigma_eps * sigma_eps / (1.0 - rho * rho);
    // variables: 0 = x_n, then pairs (x_i, x_{i+1})
    let pos = |i: usize| -> i64 { i as i64 };
    let cov_of = |ps: &[i64]| {
        DMatrix::from_fn(ps.len(), ps.len(), |a, b| s2 * rho.powi((ps[a] - ps[b]).unsigned_abs() as i32))
    };
    let last = pos(n);
    let mut nn = 0.0;
    for i in 1..n {
        let c = cov_of(&[last, pos(i), pos(i + 1)]);
        nn += isserlis(&c, &[0, 0, 1, 2])?;
    }
    let mut dd = 0.0;
    for i in 1..n {
        for j in 1..n {
            let c = cov_of(&[last, pos(i), pos(i + 1), pos(j), pos(j + 1)]);
            dd += isserlis(&c, &[0, 0, 1, 2, 3, 4])?;
        }
    }
    let nf = n as f64;
    Ok((nn / nf, dd / (nf * nf)))
}
