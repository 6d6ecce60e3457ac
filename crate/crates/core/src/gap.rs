//! Schur-complement gap between the best one-layer LSA readout and the best linear predictor.
//!
//! Coefficient vectors passed in are lag-1 first, as in [`ArProcess`]. The lifted
//! moments use the oldest-first query `x`, so the target is `y = w^T x + eps` with
//! `w` the coefficients in reverse order; every quadratic form below uses `w`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::LsaParams;
use crate::error::{invalid, Error, Result};
use crate::linalg::{loglog_fit, sym_eigen};
use crate::moments::{exact_lifted_moments, mc_lifted_moments, LiftedMoments, Provenance, VechIndexer};
use crate::rng::{derive_seed, seeded, standard_normal};
use crate::stochastic::{check_stability, ArProcess};

/// Relative eigenvalue cutoff used by [`compute_gap`].
pub const GAP_REL_CUTOFF: f64 = 1e-12;

/// Numerical rank cutoff `dim * eps * lambda_max` for exactly computed moments.
pub fn rank_tolerance(eig_max: f64, dim: usize) -> f64 {
    dim as f64 * f64::EPSILON * eig_max.abs()
}

/// How `S^{-1}` is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InverseMode {
    /// Refuse when `S` has an eigenvalue below the cutoff.
    Strict,
    /// Drop eigenvalues below the cutoff.
    Pseudo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub n: usize,
    pub p: usize,
    pub delta: DMatrix<f64>,
    pub eig_min: f64,
    pub eig_max: f64,
    /// `w^T Delta w`
    pub excess: f64,
    /// Lifted optimum `S^{-1} r w`.
    pub eta: DVector<f64>,
    /// `sigma_eps^2 + excess`
    pub class_risk: f64,
    pub s_eig_min: f64,
    pub s_eig_max: f64,
    pub s_rank: usize,
}

impl GapReport {
    pub fn s_condition(&self) -> f64 {
        if self.s_eig_min > 0.0 {
            self.s_eig_max / self.s_eig_min
        } else {
            f64::INFINITY
        }
    }
}

/// Lag-1-first coefficients to oldest-first window weights, padded to `p`.
pub fn window_weights(rho: &[f64], p: usize) -> Result<DVector<f64>> {
    if rho.len() > p {
        return invalid(format!("{} coefficients exceed the context order {p}", rho.len()));
    }
    let mut w = DVector::zeros(p);
    for (j, r) in rho.iter().enumerate() {
        w[p - 1 - j] = *r;
    }
    Ok(w)
}

/// `Delta = Gamma_p - r^T S^{-1} r`, its spectrum and the excess risk for `rho`.
pub fn compute_gap(moments: &LiftedMoments, rho: &[f64], mode: InverseMode) -> Result<GapReport> {
    let p = moments.p;
    let w = window_weights(rho, p)?;
    let eig = sym_eigen(&moments.s);
    let cutoff = match moments.provenance {
        Provenance::Exact => rank_tolerance(eig.max(), moments.feature_dim()),
        Provenance::MonteCarlo { .. } => GAP_REL_CUTOFF * eig.max().abs(),
    };
    if mode == InverseMode::Strict && eig.min() <= cutoff {
        return Err(Error::NotPositiveDefinite { eig_min: eig.min(), tolerance: cutoff });
    }
    let (s_inv, rank) = eig.truncated_inverse(cutoff);
    let sr = &s_inv * &moments.r;
    let delta = &moments.gamma_p - moments.r.transpose() * &sr;
    let delta = (&delta + delta.transpose()) * 0.5;
    let d_eig = sym_eigen(&delta);
    let excess = (w.transpose() * &delta * &w)[(0, 0)];
    let eta = &sr * &w;
    Ok(GapReport {
        n: moments.n,
        p,
        eig_min: d_eig.min(),
        eig_max: d_eig.max(),
        excess,
        eta,
        class_risk: moments.noise_var + excess,
        s_eig_min: eig.min(),
        s_eig_max: eig.max(),
        s_rank: rank,
        delta,
    })
}

/// Population risk `E[(y - eta^T Z)^2]` under the moments.
pub fn lifted_risk(moments: &LiftedMoments, rho: &[f64], eta: &DVector<f64>) -> Result<f64> {
    let w = window_weights(rho, moments.p)?;
    let quad = (eta.transpose() * &moments.s * eta)[(0, 0)];
    let cross = (eta.transpose() * &moments.r * &w)[(0, 0)];
    let base = (w.transpose() * &moments.gamma_p * &w)[(0, 0)];
    Ok(moments.noise_var + base + quad - 2.0 * cross)
}

/// Risk of a concrete one-layer readout under the moments.
pub fn readout_risk(moments: &LiftedMoments, rho: &[f64], params: &LsaParams) -> Result<f64> {
    lifted_risk(moments, rho, &params.lifted())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MomentMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

pub fn lifted_moments(proc: &ArProcess, n: usize, p: usize, mode: MomentMode) -> Result<LiftedMoments> {
    match mode {
        MomentMode::Exact => exact_lifted_moments(proc, n, p),
        MomentMode::MonteCarlo { samples, seed } => mc_lifted_moments(proc, n, p, samples, seed),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub grid: Vec<usize>,
    pub excess: Vec<f64>,
    pub eig_min: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub n_excess: Vec<f64>,
}

impl RateFit {
    /// Fit from precomputed values.
    pub fn from_values(grid: Vec<usize>, excess: Vec<f64>, eig_min: Vec<f64>) -> Result<Self> {
        if grid.len() < 4 || grid.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("rate grid must be strictly increasing with at least 4 points");
        }
        let xs: Vec<f64> = grid.iter().map(|&n| n as f64).collect();
        let (slope, intercept) = loglog_fit(&xs, &excess)?;
        let n_excess = xs.iter().zip(&excess).map(|(n, e)| n * e).collect();
        Ok(RateFit { grid, excess, eig_min, slope, intercept, n_excess })
    }

    /// `n * excess` at the last grid point over the one before.
    pub fn last_ratio(&self) -> f64 {
        let k = self.n_excess.len();
        self.n_excess[k - 1] / self.n_excess[k - 2]
    }

    /// Columns `n, excess, n_excess, eig_min, slope`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "excess", "n_excess", "eig_min", "slope"])?;
        for i in 0..self.grid.len() {
            out.write_record([
                self.grid[i].to_string(),
                self.excess[i].to_string(),
                self.n_excess[i].to_string(),
                self.eig_min[i].to_string(),
                self.slope.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Excess risk across a grid of history lengths and its log-log slope.
pub fn rate_fit(proc: &ArProcess, p: usize, grid: &[usize], mode: MomentMode) -> Result<RateFit> {
    let reports: Vec<Result<GapReport>> = grid
        .par_iter()
        .map(|&n| {
            let m = lifted_moments(proc, n, p, mode)?;
            compute_gap(&m, proc.coeffs(), InverseMode::Strict)
        })
        .collect();
    let mut excess = Vec::with_capacity(grid.len());
    let mut eig_min = Vec::with_capacity(grid.len());
    for r in reports {
        let r = r?;
        excess.push(r.excess);
        eig_min.push(r.eig_min);
    }
    RateFit::from_values(grid.to_vec(), excess, eig_min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rho: Vec<f64>,
    pub excess: f64,
    pub eig_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformGapSweep {
    pub points: Vec<SweepPoint>,
    pub min_excess: f64,
    /// Smallest `eig_min(Delta)` over the sweep.
    pub lambda_min: f64,
    /// `lambda_min * r^2`
    pub lower_bound: f64,
    pub bound_holds: bool,
}

/// Exact excess risk over stable coefficients with `r <= |rho| <= r_max`.
///
/// For `p = 1` the shell is the grid `+-linspace(r, r_max, resolution)`; for larger
/// `p`, `resolution` stable draws with uniform direction and radius.
pub fn uniform_gap_sweep(
    p: usize,
    r: f64,
    r_max: f64,
    n: usize,
    resolution: usize,
    noise_std: f64,
    seed: u64,
) -> Result<UniformGapSweep> {
    if !(0.0 < r && r <= r_max) || resolution == 0 {
        return invalid("need 0 < r <= r_max and a positive resolution");
    }
    let mut cands: Vec<Vec<f64>> = Vec::new();
    if p == 1 {
        for i in 0..resolution {
            let t = if resolution == 1 { 0.0 } else { i as f64 / (resolution - 1) as f64 };
            let v = r + t * (r_max - r);
            cands.push(vec![v]);
            cands.push(vec![-v]);
        }
    } else {
        let mut rng = seeded(seed);
        let mut tries = 0;
        while cands.len() < resolution {
            tries += 1;
            if tries > 1000 * resolution {
                return invalid("could not draw enough stable coefficients on the shell");
            }
            let dir: Vec<f64> = (0..p).map(|_| standard_normal(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rad = r + (r_max - r) * rng.gen::<f64>();
            let rho: Vec<f64> = dir.iter().map(|v| v / norm * rad).collect();
            if check_stability(&rho)? {
                cands.push(rho);
            }
        }
    }
    let points: Vec<Result<SweepPoint>> = cands
        .into_par_iter()
        .map(|rho| {
            let proc = ArProcess::new(rho.clone(), noise_std)?;
            let m = exact_lifted_moments(&proc, n, p)?;
            let g = compute_gap(&m, &rho, InverseMode::Strict)?;
            Ok(SweepPoint { rho, excess: g.excess, eig_min: g.eig_min })
        })
        .collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    let min_excess = points.iter().map(|s| s.excess).fold(f64::INFINITY, f64::min);
    let lambda_min = points.iter().map(|s| s.eig_min).fold(f64::INFINITY, f64::min);
    let lower_bound = lambda_min * r * r;
    let bound_holds = points.iter().all(|s| s.excess >= lower_bound * (1.0 - 1e-12));
    Ok(UniformGapSweep { points, min_excess, lambda_min, lower_bound, bound_holds })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiLayerGap {
    pub depth: usize,
    pub delta: DMatrix<f64>,
    pub trace: f64,
    /// Batch-means standard error of the trace.
    pub trace_stderr: f64,
    /// Batch-means standard errors of the entries of `delta`.
    pub delta_stderr: DMatrix<f64>,
    pub eig_min: f64,
    pub feature_dim: usize,
    pub rank: usize,
}

const ML_BATCHES: usize = 20;

struct StackedSums {
    s: DMatrix<f64>,
    r: DMatrix<f64>,
    g: DMatrix<f64>,
    count: usize,
}

/// Layer-wise Gram half-vectorisations `vech(G^(l))`, `l < depth`, of one window.
pub fn layer_grams(window: &[f64], p: usize, layers: &[LsaParams], depth: usize, vech: &VechIndexer) -> Vec<DVector<f64>> {
    let n = window.len();
    let m = n - p;
    let q = p + 1;
    let mut last: Vec<f64> = (0..=m).map(|c| if c < m { window[c + p] } else { 0.0 }).collect();
    let mut out = Vec::with_capacity(depth);
    for l in 0..depth {
        let mut g = DMatrix::<f64>::zeros(q, q);
        for c in 0..m {
            for i in 0..q {
                let hi = if i < p { window[c + i] } else { last[c] };
                for j in 0..=i {
                    let hj = if j < p { window[c + j] } else { last[c] };
                    g[(i, j)] += hi * hj;
                }
            }
        }
        for i in 0..q {
            for j in 0..i {
                g[(j, i)] = g[(i, j)];
            }
        }
        g /= n as f64;
        out.push(vech.vech(&g));
        if l + 1 < depth {
            let layer = &layers[l];
            let k = layer.a.transpose() * (&g * &layer.b);
            for (c, v) in last.iter_mut().enumerate() {
                *v += (0..p).map(|i| k[i] * window[c + i]).sum::<f64>();
            }
        }
    }
    out
}

fn pinv_gap(s: &DMatrix<f64>, r: &DMatrix<f64>, g: &DMatrix<f64>, rel_cutoff: f64) -> (DMatrix<f64>, usize) {
    let eig = sym_eigen(s);
    let (s_inv, rank) = eig.truncated_inverse(rel_cutoff * eig.max().abs());
    let d = g - r.transpose() * s_inv * r;
    ((&d + d.transpose()) * 0.5, rank)
}

/// Monte Carlo gaps `Delta_{n,L}` for `L = 1..=max_depth` on shared samples.
///
/// Depth `L` uses the stacked features `vech(G^(l)) (x) x` for `l < L`, where
/// `G^(l)` is the Gram after `l` layered updates with `layers[0..l]`.
pub fn multilayer_gap(
    proc: &ArProcess,
    p: usize,
    n: usize,
    layers: &[LsaParams],
    max_depth: usize,
    samples: usize,
    seed: u64,
    rel_cutoff: f64,
) -> Result<Vec<MultiLayerGap>> {
    if max_depth == 0 || layers.len() + 1 < max_depth {
        return invalid(format!("depth {max_depth} needs {} layer parameters", max_depth.saturating_sub(1)));
    }
    if layers.iter().any(|l| l.order() != p) {
        return invalid("layer parameters have the wrong order");
    }
    if n < p + 1 {
        return invalid("history too short");
    }
    let vech = VechIndexer::new(p + 1);
    let block = vech.len() * p;
    let dim = block * max_depth;
    if samples < ML_BATCHES * (dim + 1) {
        return Err(Error::InvalidArgument(format!(
            "{samples} samples are too few for a stable pseudoinverse of dimension {dim}"
        )));
    }
    let sampler = proc.window_sampler()?;
    let per = samples.div_ceil(ML_BATCHES);
    let batches: Vec<StackedSums> = (0..ML_BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut rng = seeded(derive_seed(seed, "multilayer-gap", b as u64));
            let mut sampler = sampler.clone();
            let count = per.min(samples.saturating_sub(b * per));
            let mut acc =
                StackedSums { s: DMatrix::zeros(dim, dim), r: DMatrix::zeros(dim, p), g: DMatrix::zeros(p, p), count };
            let mut f = DVector::zeros(dim);
            for _ in 0..count {
                let w = proc.stationary_window(n, &mut sampler, &mut rng);
                let x = DVector::from_column_slice(&w[n - p..]);
                let grams = layer_grams(&w, p, layers, max_depth, &vech);
                for (l, g) in grams.iter().enumerate() {
                    for v in 0..vech.len() {
                        for k in 0..p {
                            f[l * block + v * p + k] = g[v] * x[k];
                        }
                    }
                }
                acc.s.syger(1.0, &f, &f, 1.0);
                acc.r.ger(1.0, &f, &x, 1.0);
                acc.g.ger(1.0, &x, &x, 1.0);
            }
            acc.s.fill_upper_triangle_with_lower_triangle();
            acc
        })
        .collect();

    let mut total = StackedSums { s: DMatrix::zeros(dim, dim), r: DMatrix::zeros(dim, p), g: DMatrix::zeros(p, p), count: 0 };
    for b in &batches {
        total.s += &b.s;
        total.r += &b.r;
        total.g += &b.g;
        total.count += b.count;
    }
    let mut out = Vec::with_capacity(max_depth);
    for depth in 1..=max_depth {
        let d = block * depth;
        let moments = |acc: &StackedSums| {
            let c = acc.count as f64;
            (
                acc.s.view((0, 0), (d, d)).into_owned() / c,
                acc.r.view((0, 0), (d, p)).into_owned() / c,
                &acc.g / c,
            )
        };
        let (s, r, g) = moments(&total);
        let (delta, rank) = pinv_gap(&s, &r, &g, rel_cutoff);
        let per_batch: Vec<DMatrix<f64>> = batches
            .iter()
            .map(|b| {
                let (s, r, g) = moments(b);
                pinv_gap(&s, &r, &g, rel_cutoff).0
            })
            .collect();
        let bn = per_batch.len() as f64;
        let mean = per_batch.iter().fold(DMatrix::zeros(p, p), |a, m| a + m) / bn;
        let var = per_batch.iter().fold(DMatrix::zeros(p, p), |a, m| {
            let dm = m - &mean;
            a + dm.component_mul(&dm)
        }) / (bn - 1.0);
        let delta_stderr = var.map(|v| (v / bn).sqrt());
        let traces: Vec<f64> = per_batch.iter().map(|m| m.trace()).collect();
        let tm = traces.iter().sum::<f64>() / bn;
        let tv = traces.iter().map(|t| (t - tm) * (t - tm)).sum::<f64>() / (bn - 1.0);
        out.push(MultiLayerGap {
            depth,
            trace: delta.trace(),
            trace_stderr: (tv / bn).sqrt(),
            delta_stderr,
            eig_min: sym_eigen(&delta).min(),
            feature_dim: d,
            rank,
            delta,
        });
    }
    Ok(out)
}

/// Default fixed parameters for the multi-layer features: constructive weights per layer.
pub fn constructive_layers(proc: &ArProcess, p: usize, count: usize) -> Result<Vec<LsaParams>> {
    let gamma = proc.autocovariances(p)?;
    let c = LsaParams::constructive(&gamma, p)?;
    Ok(vec![c; count])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskLadder {
    pub bayes: f64,
    pub linear: f64,
    pub lsa: f64,
    pub variance: f64,
}

/// Bayes risk, best `p`-lag linear risk and best one-layer LSA risk (exact moments).
pub fn risk_decomposition(proc: &ArProcess, p: usize, n: usize) -> Result<RiskLadder> {
    let rho = proc.padded_coeffs(p)?;
    let gamma = proc.autocovariances(p)?;
    let g = gamma.toeplitz(p);
    let c = DVector::from_iterator(p, (1..=p).map(|k| gamma.gamma[k]));
    let proj = crate::linalg::spd_solve(&g, &c)?;
    let linear = gamma.gamma[0] - c.dot(&proj);
    let m = exact_lifted_moments(proc, n, p)?;
    let gap = compute_gap(&m, &rho, InverseMode::Strict)?;
    Ok(RiskLadder { bayes: proc.noise_var(), linear, lsa: gap.class_risk, variance: gamma.gamma[0] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn population_limit_has_zero_gap() {
        // S = (u u^T) (x) Gamma, r = u (x) Gamma with u = vech(Gamma_{p+1})
        let proc = ArProcess::new(vec![0.5, 0.2], 1.0).unwrap();
        let p = 2;
        let gamma = proc.autocovariances(p + 1).unwrap();
        let u = VechIndexer::new(p + 1).vech(&gamma.toeplitz(p + 1));
        let gp = gamma.toeplitz(p);
        let s = (&u * u.transpose()).kronecker(&gp);
        let r = u.kronecker(&gp);
        let m = LiftedMoments {
            s,
            r,
            gamma_p: gp,
            n: usize::MAX,
            p,
            noise_var: 1.0,
            provenance: crate::moments::Provenance::Exact,
            s_stderr: None,
            r_stderr: None,
            gamma_stderr: None,
        };
        assert!(matches!(compute_gap(&m, &[0.5, 0.2], InverseMode::Strict), Err(Error::NotPositiveDefinite { .. })));
        let g = compute_gap(&m, &[0.5, 0.2], InverseMode::Pseudo).unwrap();
        assert!(g.delta.iter().all(|v| v.abs() < 1e-10), "{}", g.delta);
    }

    #[test]
    fn synthetic_inverse_n_rate() {
        let grid = vec![10, 20, 40, 80, 160];
        let excess: Vec<f64> = grid.iter().map(|&n| 3.7 / n as f64).collect();
        let fit = RateFit::from_values(grid, excess, vec![0.0; 5]).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-10);
        assert_relative_eq!(fit.last_ratio(), 1.0, epsilon = 1e-12);
        assert!(RateFit::from_values(vec![10, 20, 20, 40], vec![1.0; 4], vec![0.0; 4]).is_err());
    }

    #[test]
    fn excess_is_quadratic_along_ray() {
        let proc = ArProcess::new(vec![0.6], 1.0).unwrap();
        let m = exact_lifted_moments(&proc, 12, 1).unwrap();
        let a = compute_gap(&m, &[0.3], InverseMode::Strict).unwrap();
        let b = compute_gap(&m, &[0.6], InverseMode::Strict).unwrap();
        assert_relative_eq!(b.excess, 4.0 * a.excess, max_relative = 1e-12);
    }

    #[test]
    fn gap_value_ar1_n10() {
        // frozen from an independent pairing-enumeration computation
        let proc = ArProcess::new(vec![0.9], 1.0).unwrap();
        let m = exact_lifted_moments(&proc, 10, 1).unwrap();
        let g = compute_gap(&m, &[0.9], InverseMode::Strict).unwrap();
        assert_relative_eq!(g.delta[(0, 0)], 0.7756538368469572, max_relative = 1e-9);
        assert_relative_eq!(g.class_risk, 1.0 + 0.81 * g.delta[(0, 0)], max_relative = 1e-12);
    }

    #[test]
    fn risk_ladder_ordering() {
        let proc = ArProcess::new(vec![0.5, -0.3], 0.7).unwrap();
        let l = risk_decomposition(&proc, 2, 15).unwrap();
        assert_relative_eq!(l.linear, l.bayes, max_relative = 1e-10);
        assert!(l.lsa > l.linear);
        assert!(l.lsa < l.variance);
    }

    #[test]
    fn window_weights_reverse() {
        assert_eq!(window_weights(&[0.5, 0.2], 3).unwrap().as_slice(), &[0.0, 0.2, 0.5]);
        assert!(window_weights(&[0.1, 0.2], 1).is_err());
    }
}
