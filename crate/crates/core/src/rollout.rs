//! Chain-of-thought rollouts, compounding error curves and failure horizons.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{softmax_forward, stack_forward, SoftmaxParams, StackParams};
use crate::error::{invalid, Result};
use crate::hankel::build_hankel;
use crate::linalg::line_fit;
use crate::rng::{derive_seed, seeded};
use crate::stochastic::ArProcess;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorTag {
    TrainedLsa,
    TrainedSoftmax,
    OlsPlugIn,
    Bayes,
}

impl PredictorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorTag::TrainedLsa => "lsa",
            PredictorTag::TrainedSoftmax => "softmax",
            PredictorTag::OlsPlugIn => "ols",
            PredictorTag::Bayes => "bayes",
        }
    }
}

/// A one-step predictor reading the tail of a series.
pub trait Forecaster: Sync {
    /// Minimum number of trailing values needed.
    fn context_len(&self) -> usize;
    /// Number of lags in the state `s_n` used for collapse envelopes.
    fn order(&self) -> usize;
    /// Prediction of the value following `series`; `series` starts at the original history.
    fn predict_next(&self, series: &[f64]) -> f64;
    fn tag(&self) -> PredictorTag;
}

/// `x_hat = sum_j c_j x_{t-j}` with lag-1-first coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearForecaster {
    pub coeffs: Vec<f64>,
    pub tag: PredictorTag,
}

impl LinearForecaster {
    pub fn bayes(proc: &ArProcess) -> Self {
        LinearForecaster { coeffs: proc.coeffs().to_vec(), tag: PredictorTag::Bayes }
    }

    pub fn ols(coeffs: Vec<f64>) -> Self {
        LinearForecaster { coeffs, tag: PredictorTag::OlsPlugIn }
    }
}

impl Forecaster for LinearForecaster {
    fn context_len(&self) -> usize {
        self.coeffs.len()
    }

    fn order(&self) -> usize {
        self.coeffs.len()
    }

    fn predict_next(&self, series: &[f64]) -> f64 {
        let t = series.len();
        self.coeffs.iter().enumerate().map(|(j, c)| c * series[t - 1 - j]).sum()
    }

    fn tag(&self) -> PredictorTag {
        self.tag
    }
}

/// How an attention predictor sees a rollout that has outgrown its training history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContextPolicy {
    /// Always the last `n` values.
    #[default]
    Sliding,
    /// The whole series so far; the Gram normalisation grows with it.
    Growing,
}

fn context<'a>(series: &'a [f64], n: usize, policy: ContextPolicy) -> &'a [f64] {
    match policy {
        ContextPolicy::Sliding => &series[series.len() - n..],
        ContextPolicy::Growing => series,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsaForecaster {
    pub stack: StackParams,
    pub n: usize,
    pub policy: ContextPolicy,
}

impl Forecaster for LsaForecaster {
    fn context_len(&self) -> usize {
        self.n
    }

    fn order(&self) -> usize {
        self.stack.order()
    }

    fn predict_next(&self, series: &[f64]) -> f64 {
        let h = build_hankel(context(series, self.n, self.policy), self.stack.order()).expect("history too short");
        stack_forward(&h, &self.stack).expect("order checked")
    }

    fn tag(&self) -> PredictorTag {
        PredictorTag::TrainedLsa
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxForecaster {
    pub params: SoftmaxParams,
    pub n: usize,
    pub policy: ContextPolicy,
}

impl Forecaster for SoftmaxForecaster {
    fn context_len(&self) -> usize {
        self.n
    }

    fn order(&self) -> usize {
        self.params.order()
    }

    fn predict_next(&self, series: &[f64]) -> f64 {
        let h = build_hankel(context(series, self.n, self.policy), self.params.order()).expect("history too short");
        softmax_forward(&h, &self.params).expect("order checked")
    }

    fn tag(&self) -> PredictorTag {
        PredictorTag::TrainedSoftmax
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub tag: PredictorTag,
    pub seed: Option<u64>,
    /// `x_hat_{n+1..n+T}`
    pub predictions: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    pub sq_errors: Option<Vec<f64>>,
    pub cmse: Option<Vec<f64>>,
    /// Euclidean norm of the last `order` history values.
    pub state_norm: f64,
}

/// `CMSE(k) = (1/k) sum_{t<=k} e_t`.
pub fn cmse_curve(sq_errors: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    sq_errors
        .iter()
        .enumerate()
        .map(|(k, e)| {
            acc += e;
            acc / (k + 1) as f64
        })
        .collect()
}

/// Feed predictions back as inputs for `steps` steps; ground truth past the
/// history is only used for scoring.
pub fn cot_rollout<F: Forecaster + ?Sized>(
    pred: &F,
    history: &[f64],
    steps: usize,
    truth: Option<&[f64]>,
) -> Result<RolloutTrace> {
    if history.len() < pred.context_len() || history.len() < pred.order() + 1 {
        return invalid(format!(
            "history of length {} too short for a predictor needing {}",
            history.len(),
            pred.context_len().max(pred.order() + 1)
        ));
    }
    if let Some(t) = truth {
        if t.len() < steps {
            return invalid("ground truth shorter than the rollout");
        }
    }
    let mut series = history.to_vec();
    series.reserve(steps);
    let mut predictions = Vec::with_capacity(steps);
    for _ in 0..steps {
        let y = pred.predict_next(&series);
        predictions.push(y);
        series.push(y);
    }
    let k = pred.order();
    let state_norm = history[history.len() - k..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let (truth, sq_errors, cmse) = match truth {
        Some(t) => {
            let t = t[..steps].to_vec();
            let e: Vec<f64> = t.iter().zip(&predictions).map(|(a, b)| sq_error(*a, *b)).collect();
            let c = cmse_curve(&e);
            (Some(t), Some(e), Some(c))
        }
        None => (None, None, None),
    };
    Ok(RolloutTrace { tag: pred.tag(), seed: None, predictions, truth, sq_errors, cmse, state_norm })
}

/// Squared error, `+inf` once a diverged prediction is no longer finite.
fn sq_error(truth: f64, pred: f64) -> f64 {
    let e = (truth - pred) * (truth - pred);
    if e.is_finite() {
        e
    } else {
        f64::INFINITY
    }
}

/// Recursive Bayes forecast from the true coefficients.
pub fn bayes_rollout(proc: &ArProcess, history: &[f64], steps: usize) -> Result<RolloutTrace> {
    cot_rollout(&LinearForecaster::bayes(proc), history, steps, None)
}

/// `e_1^T A^t s_n` for `t = 1..=steps`, with `s_n = (x_n, ..., x_{n-p+1})`.
pub fn companion_power_forecast(proc: &ArProcess, history: &[f64], steps: usize) -> Result<Vec<f64>> {
    let p = proc.order();
    if history.len() < p {
        return invalid("history shorter than the process order");
    }
    let a = proc.companion().matrix;
    let mut s = DVector::from_iterator(p, (0..p).map(|i| history[history.len() - 1 - i]));
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        s = &a * s;
        out.push(s[0]);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseFit {
    /// Fitted per-step decay factor.
    pub beta: f64,
    /// Fitted constant, relative to the state norm.
    pub c: f64,
    /// Smallest constant with `|x_hat_t| <= c_env beta^t |s_n|` at every used step.
    pub c_env: f64,
    pub points_used: usize,
    pub collapses: bool,
    pub divergent: bool,
}

/// Least-squares fit of `log|x_hat_t|` on `t` over entries with `|x_hat_t| > 1e-12`.
pub fn collapse_diagnostics(trace: &RolloutTrace) -> Result<CollapseFit> {
    let pts: Vec<(f64, f64)> = trace
        .predictions
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-12)
        .map(|(t, v)| ((t + 1) as f64, v.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return invalid("fewer than two nonzero predictions to fit");
    }
    let ts: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ls: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (slope, intercept) = line_fit(&ts, &ls);
    let norm = if trace.state_norm > 0.0 { trace.state_norm } else { 1.0 };
    let resid = pts.iter().map(|(t, l)| l - intercept - slope * t).fold(f64::NEG_INFINITY, f64::max);
    let beta = slope.exp();
    Ok(CollapseFit {
        beta,
        c: intercept.exp() / norm,
        c_env: (intercept + resid.max(0.0)).exp() / norm,
        points_used: pts.len(),
        collapses: beta < 1.0,
        divergent: beta > 1.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompoundingCurve {
    pub tag: PredictorTag,
    /// `MSE(h)` for `h = 1..=H`.
    pub mse: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Bayes `MSE*(h)`.
    pub theory: Vec<f64>,
    pub variance: f64,
    pub samples: usize,
}

const CURVE_CHUNK: usize = 256;

/// Monte Carlo CoT error at horizons `1..=max_h` from independent stationary starts.
pub fn compounding_curve<F: Forecaster + ?Sized>(
    proc: &ArProcess,
    pred: &F,
    max_h: usize,
    samples: usize,
    seed: u64,
) -> Result<CompoundingCurve> {
    if max_h == 0 || samples < 2 {
        return invalid("need a positive horizon and at least two samples");
    }
    let hist = pred.context_len().max(pred.order() + 1);
    let sampler = proc.window_sampler()?;
    let chunks = samples.div_ceil(CURVE_CHUNK);
    let parts: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeded(derive_seed(seed, "compounding-curve", c as u64));
            let mut sampler = sampler.clone();
            let count = CURVE_CHUNK.min(samples - c * CURVE_CHUNK);
            let mut s = vec![0.0; max_h];
            let mut s2 = vec![0.0; max_h];
            for _ in 0..count {
                let w = proc.stationary_window(hist + max_h, &mut sampler, &mut rng);
                let tr = cot_rollout(pred, &w[..hist], max_h, Some(&w[hist..]))?;
                for (h, e) in tr.sq_errors.unwrap().iter().enumerate() {
                    s[h] += e;
                    s2[h] += e * e;
                }
            }
            Ok((s, s2))
        })
        .collect();
    let mut s = vec![0.0; max_h];
    let mut s2 = vec![0.0; max_h];
    for part in parts {
        let (a, b) = part?;
        for h in 0..max_h {
            s[h] += a[h];
            s2[h] += b[h];
        }
    }
    let ns = samples as f64;
    let mse: Vec<f64> = s.iter().map(|v| v / ns).collect();
    let stderr = (0..max_h)
        .map(|h| {
            if !s2[h].is_finite() {
                return f64::INFINITY;
            }
            let var = (s2[h] / ns - mse[h] * mse[h]).max(0.0) * ns / (ns - 1.0);
            (var / ns).sqrt()
        })
        .collect();
    let theory = (1..=max_h).map(|h| proc.bayes_multistep_mse(h)).collect();
    let variance = proc.autocovariances(0)?.gamma[0];
    Ok(CompoundingCurve { tag: pred.tag(), mse, stderr, theory, variance, samples })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub tau: f64,
    /// Smallest `h >= 1` with `MSE(h) >= tau * variance`; `None` if never reached.
    pub horizon: Option<usize>,
    pub variance: f64,
}

pub fn failure_horizon(mse: &[f64], tau: f64, variance: f64) -> Result<HorizonReport> {
    if !(tau > 0.0 && tau < 1.0) {
        return invalid(format!("tau must lie in (0, 1), got {tau}"));
    }
    if !(variance > 0.0) {
        return invalid("variance must be positive");
    }
    let horizon = mse.iter().position(|m| *m >= tau * variance).map(|i| i + 1);
    Ok(HorizonReport { tau, horizon, variance })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcingEval {
    pub predictions: Vec<f64>,
    pub sq_errors: Vec<f64>,
    pub mse: f64,
    pub cmse: Vec<f64>,
}

/// One-step predictions of `path[t]` from `path[..t]` for `t` in `start..path.len()`.
pub fn teacher_forcing_eval<F: Forecaster + ?Sized>(pred: &F, path: &[f64], start: usize) -> Result<TeacherForcingEval> {
    if start < pred.context_len() || start >= path.len() {
        return invalid(format!("start {start} needs {} values of history and a target", pred.context_len()));
    }
    let predictions: Vec<f64> = (start..path.len()).map(|t| pred.predict_next(&path[..t])).collect();
    let sq_errors: Vec<f64> = predictions.iter().zip(&path[start..]).map(|(a, b)| sq_error(*b, *a)).collect();
    let mse = sq_errors.iter().sum::<f64>() / sq_errors.len() as f64;
    let cmse = cmse_curve(&sq_errors);
    Ok(TeacherForcingEval { predictions, sq_errors, mse, cmse })
}

/// Long-format CSV: `predictor, seed, t, prediction, truth, sq_error, cmse` (t is 1-based).
pub fn write_traces<W: Write>(w: W, traces: &[RolloutTrace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["predictor", "seed", "t", "prediction", "truth", "sq_error", "cmse"])?;
    for tr in traces {
        for (t, y) in tr.predictions.iter().enumerate() {
            let opt = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v[t].to_string()).unwrap_or_default();
            out.write_record([
                tr.tag.as_str().to_string(),
                tr.seed.map(|s| s.to_string()).unwrap_or_default(),
                (t + 1).to_string(),
                y.to_string(),
                opt(&tr.truth),
                opt(&tr.sq_errors),
                opt(&tr.cmse),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ar1_bayes_rollout_is_geometric() {
        let proc = ArProcess::new(vec![0.9], 1.0).unwrap();
        let tr = bayes_rollout(&proc, &[0.3, -1.0, 2.0], 30).unwrap();
        for (h, v) in tr.predictions.iter().enumerate() {
            assert_relative_eq!(*v, 2.0 * 0.9f64.powi(h as i32 + 1), max_relative = 1e-12);
        }
        let fit = collapse_diagnostics(&tr).unwrap();
        assert!((fit.beta - 0.9).abs() < 1e-6);
        assert!(fit.collapses);
    }

    #[test]
    fn diverged_rollout_scores_infinite_error() {
        let pred = LinearForecaster::ols(vec![1e200]);
        let tr = cot_rollout(&pred, &[1.0, 1.0], 4, Some(&[0.0; 4])).unwrap();
        let e = tr.sq_errors.unwrap();
        assert!(e.iter().all(|v| *v == f64::INFINITY));
        assert!(tr.predictions[2].is_infinite() || tr.predictions[2].is_nan());
    }

    #[test]
    fn zero_history_zero_rollout() {
        let pred = LinearForecaster::ols(vec![0.4, -0.2, 0.1]);
        let tr = cot_rollout(&pred, &[0.0; 5], 20, None).unwrap();
        assert!(tr.predictions.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bayes_ar2_against_hand_recursion() {
        let proc = ArProcess::new(vec![0.5, 0.3], 1.0).unwrap();
        let hist = [0.0, 1.0, -0.5];
        let tr = bayes_rollout(&proc, &hist, 20).unwrap();
        let (mut a, mut b) = (-0.5, 1.0);
        for v in &tr.predictions {
            let next = 0.5 * a + 0.3 * b;
            assert_relative_eq!(*v, next, epsilon = 1e-14);
            b = a;
            a = next;
        }
        assert_relative_eq!(tr.predictions[0], 0.5 * -0.5 + 0.3 * 1.0, epsilon = 1e-15);
        let cp = companion_power_forecast(&proc, &hist, 20).unwrap();
        for (x, y) in cp.iter().zip(&tr.predictions) {
            assert_relative_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn explosive_predictor_is_flagged() {
        let pred = LinearForecaster::ols(vec![1.2]);
        let tr = cot_rollout(&pred, &[1.0, 1.0], 20, None).unwrap();
        let fit = collapse_diagnostics(&tr).unwrap();
        assert!(fit.divergent && fit.beta > 1.0);
    }

    #[test]
    fn failure_horizon_ar1() {
        let proc = ArProcess::new(vec![0.9], 0.19f64.sqrt()).unwrap();
        let mse: Vec<f64> = (1..=50).map(|h| proc.bayes_multistep_mse(h)).collect();
        assert_eq!(failure_horizon(&mse, 0.5, 1.0).unwrap().horizon, Some(4));
        assert_eq!(failure_horizon(&mse, 1e-6, 1.0).unwrap().horizon, Some(1));
        assert_eq!(failure_horizon(&mse[..2], 0.9, 1.0).unwrap().horizon, None);
        assert!(failure_horizon(&mse, 1.0, 1.0).is_err());
    }

    #[test]
    fn periodic_memorisation_has_zero_error() {
        let period = [1.0, -2.0, 0.5, 3.0];
        let path: Vec<f64> = (0..40).map(|t| period[t % 4]).collect();
        let pred = LinearForecaster::ols(vec![0.0, 0.0, 0.0, 1.0]);
        let tf = teacher_forcing_eval(&pred, &path, 4).unwrap();
        assert_eq!(tf.mse, 0.0);
        assert_eq!(tf.cmse, cmse_curve(&tf.sq_errors));
    }

    #[test]
    fn bayes_curve_matches_theory() {
        let proc = ArProcess::new(vec![0.9], 0.19f64.sqrt()).unwrap();
        let c = compounding_curve(&proc, &LinearForecaster::bayes(&proc), 10, 20_000, 3).unwrap();
        for h in [1, 5, 10] {
            let want = 1.0 - 0.81f64.powi(h as i32);
            assert!((c.mse[h - 1] - want).abs() < 3.0 * c.stderr[h - 1], "h={h}: {} vs {want}", c.mse[h - 1]);
        }
        assert_relative_eq!(c.theory[0], 0.19, max_relative = 1e-12);
    }
}
