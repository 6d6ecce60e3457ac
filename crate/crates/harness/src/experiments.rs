//! Execution of the twelve experiment kinds over `(seed, p)` sweep cells.

use arlab_core::attention::{
    train_bilinear, train_gradient, AlsConfig, Dataset, LsaParams, Optimizer, PreparedDataset, SoftmaxParams,
    StackParams, TrainConfig, Trainable,
};
use arlab_core::gap::{
    compute_gap, constructive_layers, multilayer_gap, rate_fit, uniform_gap_sweep, window_weights, InverseMode,
    MomentMode, GAP_REL_CUTOFF,
};
use arlab_core::hankel::feature_collapse_error;
use arlab_core::moments::{ar1_warm_start, ar1_warm_start_oracle, exact_lifted_moments};
use arlab_core::rng::{derive_seed, seeded};
use arlab_core::rollout::{
    collapse_diagnostics, compounding_curve, cot_rollout, failure_horizon, teacher_forcing_eval, ContextPolicy,
    Forecaster, LinearForecaster, LsaForecaster, PredictorTag, SoftmaxForecaster,
};
use arlab_core::stochastic::{ols_fit, sample_autocovariances, ArProcess};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::results::{Coord, ResultRow, RowSink};
use crate::{HarnessError, Result};

/// Largest n for which the warm-start oracle is also evaluated.
const ORACLE_MAX_LEN: usize = 200;
/// Rollout length for the collapse fit.
const COLLAPSE_STEPS: usize = 200;

/// Runs every `(seed, p)` cell of `cfg` in the current rayon pool; rows come back in cell order.
pub fn run_rows(cfg: &ExperimentConfig, config_hash: &str) -> Result<Vec<ResultRow>> {
    let cells: Vec<(u64, usize)> =
        cfg.experiment.seeds.iter().flat_map(|&s| cfg.orders().into_iter().map(move |p| (s, p))).collect();
    let parts: Vec<Result<Vec<ResultRow>>> = cells
        .par_iter()
        .map(|&(seed, p)| {
            let mut sink = RowSink::new(cfg.name(), config_hash);
            run_cell(cfg, seed, p, &mut sink)?;
            Ok(sink.rows)
        })
        .collect();
    let mut rows = Vec::new();
    for part in parts {
        rows.extend(part?);
    }
    Ok(rows)
}

fn run_cell(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    match cfg.kind() {
        ExperimentKind::ExactGap => exact_gap(cfg, seed, p, sink),
        ExperimentKind::McGap => mc_gap(cfg, seed, p, sink),
        ExperimentKind::Rate => rate(cfg, seed, p, sink),
        ExperimentKind::UniformGap => uniform_gap(cfg, seed, p, sink),
        ExperimentKind::Multilayer => multilayer(cfg, seed, p, sink),
        ExperimentKind::Ar1Warmstart => ar1(cfg, seed, p, sink),
        ExperimentKind::TrainEvalTf => train_eval_tf(cfg, seed, p, sink),
        ExperimentKind::TrainEvalCot => train_eval_cot(cfg, seed, p, sink),
        ExperimentKind::ContextScan => context_scan(cfg, seed, p, sink),
        ExperimentKind::LayerScan => layer_scan(cfg, seed, p, sink),
        ExperimentKind::SoftmaxCompare => softmax_compare(cfg, seed, p, sink),
        ExperimentKind::FeatureCollapse => feature_collapse(cfg, seed, p, sink),
    }
}

/// The fixed process, or one drawn from `(seed, p)`.
pub fn process_for(cfg: &ExperimentConfig, seed: u64, p: usize) -> Result<ArProcess> {
    let pr = &cfg.process;
    let proc = match &pr.coeffs {
        Some(c) => ArProcess::with_law(c.clone(), pr.noise_std, pr.innovation)?,
        None => {
            let mut rng = seeded(derive_seed(seed, "process", p as u64));
            ArProcess::random_stable(cfg.process_order(p), pr.max_modulus, pr.noise_std, pr.innovation, &mut rng)?
        }
    };
    Ok(proc)
}

fn exact_gap(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let proc = process_for(cfg, seed, p)?;
    for n in cfg.contexts(p) {
        let m = exact_lifted_moments(&proc, n, p)?;
        let g = compute_gap(&m, proc.coeffs(), InverseMode::Pseudo)?;
        let at = Coord::new(seed, p).n(n);
        sink.value(at, "eig_min", g.eig_min);
        sink.value(at, "eig_max", g.eig_max);
        sink.value(at, "excess", g.excess);
        sink.value(at, "class_risk", g.class_risk);
        sink.value(at, "delta_trace", g.delta.trace());
        sink.value(at, "s_rank", g.s_rank as f64);
        sink.value(at, "s_condition", g.s_condition());
    }
    Ok(())
}

fn mc_gap(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let proc = process_for(cfg, seed, p)?;
    let w = window_weights(proc.coeffs(), p)?;
    for n in cfg.contexts(p) {
        let s = derive_seed(seed, "mc-gap", (p * 100_000 + n) as u64);
        let gaps = multilayer_gap(&proc, p, n, &[], 1, cfg.grid.mc_samples, s, GAP_REL_CUTOFF)?;
        let g = &gaps[0];
        let at = Coord::new(seed, p).n(n);
        sink.push(at, "delta_trace", None, g.trace, Some(g.trace_stderr));
        sink.value(at, "eig_min", g.eig_min);
        sink.value(at, "excess", (w.transpose() * &g.delta * &w)[(0, 0)]);
        sink.value(at, "s_rank", g.rank as f64);
    }
    Ok(())
}

fn rate(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let proc = process_for(cfg, seed, p)?;
    let grid = cfg.contexts(p);
    let fit = rate_fit(&proc, p, &grid, MomentMode::Exact)?;
    for (i, &n) in fit.grid.iter().enumerate() {
        let at = Coord::new(seed, p).n(n);
        sink.value(at, "excess", fit.excess[i]);
        sink.value(at, "n_excess", fit.n_excess[i]);
        sink.value(at, "eig_min", fit.eig_min[i]);
    }
    let at = Coord::new(seed, p);
    sink.value(at, "slope", fit.slope);
    sink.value(at, "intercept", fit.intercept);
    sink.value(at, "last_ratio", fit.last_ratio());
    Ok(())
}

fn uniform_gap(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let [r, r_max] = cfg.grid.shell;
    for n in cfg.contexts(p) {
        let s = derive_seed(seed, "uniform-gap", (p * 100_000 + n) as u64);
        let sw = uniform_gap_sweep(p, r, r_max, n, cfg.grid.resolution, cfg.process.noise_std, s)?;
        let at = Coord::new(seed, p).n(n);
        sink.value(at, "min_excess", sw.min_excess);
        sink.value(at, "lambda_min", sw.lambda_min);
        sink.value(at, "lower_bound", sw.lower_bound);
        sink.value(at, "bound_holds", if sw.bound_holds { 1.0 } else { 0.0 });
        let excess: Vec<f64> = sw.points.iter().map(|pt| pt.excess).collect();
        sink.curve(at, "point_excess", &excess, None);
    }
    Ok(())
}

fn multilayer(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let proc = process_for(cfg, seed, p)?;
    let depth = *cfg.grid.layers.iter().max().expect("validated");
    let layers = constructive_layers(&proc, p, depth - 1)?;
    let w = window_weights(proc.coeffs(), p)?;
    for n in cfg.contexts(p) {
        let s = derive_seed(seed, "multilayer", (p * 100_000 + n) as u64);
        let gaps = multilayer_gap(&proc, p, n, &layers, depth, cfg.grid.mc_samples, s, GAP_REL_CUTOFF)?;
        for g in gaps.iter().filter(|g| cfg.grid.layers.contains(&g.depth)) {
            let at = Coord::new(seed, p).n(n).layers(g.depth);
            sink.push(at, "delta_trace", None, g.trace, Some(g.trace_stderr));
            sink.value(at, "eig_min", g.eig_min);
            sink.value(at, "excess", (w.transpose() * &g.delta * &w)[(0, 0)]);
            sink.value(at, "rank", g.rank as f64);
        }
    }
    Ok(())
}

fn ar1(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let proc = process_for(cfg, seed, p)?;
    let rho = proc.coeffs()[0];
    for n in cfg.contexts(p) {
        let w = ar1_warm_start(rho, proc.noise_std(), n)?;
        let at = Coord::new(seed, p).n(n);
        sink.value(at, "n_n", w.n_n);
        sink.value(at, "d_n", w.d_n);
        sink.value(at, "alpha", w.alpha);
        sink.value(at, "alpha_times_variance", w.alpha * w.variance);
        sink.value(at, "min_loss", w.min_loss);
        if n <= ORACLE_MAX_LEN {
            let (nn, dn) = ar1_warm_start_oracle(rho, proc.noise_std(), n)?;
            sink.value(at, "n_n_oracle", nn);
            sink.value(at, "d_n_oracle", dn);
        }
        if p == 1 && n <= arlab_core::moments::EXACT_MAX_LEN {
            let m = exact_lifted_moments(&proc, n, 1)?;
            let g = compute_gap(&m, &[rho], InverseMode::Strict)?;
            sink.value(at, "lifted_excess", g.excess);
        }
    }
    Ok(())
}

fn feature_collapse(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let proc = process_for(cfg, seed, p)?;
    for n in cfg.contexts(p) {
        let s = derive_seed(seed, "feature-collapse", (p * 100_000 + n) as u64);
        let e = feature_collapse_error(&proc, n, p, cfg.grid.mc_samples, s)?;
        sink.value(Coord::new(seed, p).n(n), "collapse_rms", e);
    }
    Ok(())
}

/// A series split into train/validation/test segments and standardised by the training scale.
pub struct SplitSeries {
    pub proc: ArProcess,
    pub raw: Vec<f64>,
    pub z: Vec<f64>,
    pub scale: f64,
    pub train_end: usize,
    pub val_end: usize,
}

impl SplitSeries {
    pub fn new(cfg: &ExperimentConfig, seed: u64, p: usize) -> Result<Self> {
        let proc = process_for(cfg, seed, p)?;
        let t = cfg.grid.series_length;
        let path = proc.sample_path(t, proc.default_burn_in(), derive_seed(seed, "series", p as u64))?;
        let [a, b, _] = cfg.grid.splits;
        let train_end = (a * t as f64) as usize;
        let val_end = ((a + b) * t as f64) as usize;
        let raw = path.values;
        let ms = raw[..train_end].iter().map(|v| v * v).sum::<f64>() / train_end as f64;
        let scale = ms.sqrt();
        if !(scale > 0.0) {
            return Err(HarnessError::Guard("training segment has zero scale".into()));
        }
        let z = raw.iter().map(|v| v / scale).collect();
        Ok(SplitSeries { proc, raw, z, scale, train_end, val_end })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Standardised datasets for one history length. Test targets do not depend on `n`.
pub struct Splits {
    pub n: usize,
    pub train: PreparedDataset,
    pub val: PreparedDataset,
    pub test: PreparedDataset,
}

impl Splits {
    pub fn new(s: &SplitSeries, n: usize, p: usize) -> Result<Self> {
        let train = Dataset::from_series(&s.z, n, n..s.train_end)?;
        let val = Dataset::from_series(&s.z, n, s.train_end..s.val_end)?;
        let test = Dataset::from_series(&s.z, n, s.val_end..s.len())?;
        Ok(Splits {
            n,
            train: PreparedDataset::new(train, p)?,
            val: PreparedDataset::new(val, p)?,
            test: PreparedDataset::new(test, p)?,
        })
    }
}

/// Forecaster on raw values wrapping one fitted on standardised values.
pub struct Scaled<F> {
    pub inner: F,
    pub scale: f64,
}

impl<F: Forecaster> Forecaster for Scaled<F> {
    fn context_len(&self) -> usize {
        self.inner.context_len()
    }

    fn order(&self) -> usize {
        self.inner.order()
    }

    fn predict_next(&self, series: &[f64]) -> f64 {
        let z: Vec<f64> = series.iter().map(|v| v / self.scale).collect();
        self.scale * self.inner.predict_next(&z)
    }

    fn tag(&self) -> PredictorTag {
        self.inner.tag()
    }
}

/// Mean squared error with its standard error over `(prediction, truth)` pairs.
fn mse_se(preds: &[f64], truth: &[f64], scale: f64) -> (f64, f64) {
    let e: Vec<f64> = preds.iter().zip(truth).map(|(a, b)| ((a - b) * scale).powi(2)).collect();
    mean_se(&e)
}

fn mean_se(e: &[f64]) -> (f64, f64) {
    let m = e.len() as f64;
    let mean = e.iter().sum::<f64>() / m;
    if !mean.is_finite() {
        return (f64::INFINITY, f64::INFINITY);
    }
    if e.len() < 2 {
        return (mean, 0.0);
    }
    let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn test_mse<M: Trainable>(model: &M, d: &PreparedDataset, scale: f64) -> (f64, f64) {
    mse_se(&d.predictions(model), d.dataset().targets(), scale)
}

fn train_config(cfg: &ExperimentConfig, seed: u64, label: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.train.learning_rate,
        batch_size: cfg.train.batch_size,
        max_epochs: cfg.train.max_epochs,
        seed: derive_seed(seed, "train", label),
        tolerance: cfg.train.tolerance,
        optimizer: Optimizer::Momentum { beta: cfg.train.momentum },
        splits: cfg.grid.splits,
    }
}

/// One layer by ALS, started from the constructive weights of the sample autocovariances.
pub fn fit_one_layer(cfg: &ExperimentConfig, s: &SplitSeries, d: &Splits, p: usize) -> Result<StackParams> {
    let gamma = sample_autocovariances(&s.z[..s.train_end], p);
    let init = LsaParams::constructive(&gamma, p).unwrap_or_else(|_| LsaParams::neutral(p));
    let als = AlsConfig { max_sweeps: cfg.train.als_sweeps, tolerance: cfg.train.als_tolerance, ..Default::default() };
    let out = train_bilinear(&d.train, init, &als)?;
    Ok(StackParams::new(vec![out.params])?)
}

/// Appends a neutral layer to `prev` and trains the whole stack by gradient descent.
pub fn deepen(cfg: &ExperimentConfig, prev: &StackParams, d: &Splits, seed: u64, label: u64) -> Result<StackParams> {
    let init = prev.pushed(LsaParams::neutral(prev.order()));
    let out = train_gradient(init, &d.train, Some(&d.val), &train_config(cfg, seed, label))?;
    Ok(out.params)
}

/// Stacks of every depth up to `max_depth`, each warm-started from the previous one.
pub fn fit_stack_chain(
    cfg: &ExperimentConfig,
    s: &SplitSeries,
    d: &Splits,
    p: usize,
    seed: u64,
    max_depth: usize,
) -> Result<Vec<StackParams>> {
    let mut chain = vec![fit_one_layer(cfg, s, d, p)?];
    for depth in 2..=max_depth {
        let label = (p * 1_000_000 + d.n * 100 + depth) as u64;
        let next = deepen(cfg, chain.last().unwrap(), d, seed, label)?;
        chain.push(next);
    }
    Ok(chain)
}

struct Baselines {
    ols: LinearForecaster,
    ols_mse: (f64, f64),
    bayes_mse: (f64, f64),
}

fn baselines(s: &SplitSeries, p: usize) -> Result<Baselines> {
    let ols = LinearForecaster::ols(ols_fit(&s.z[..s.train_end], p)?);
    let tf = teacher_forcing_eval(&ols, &s.z, s.val_end)?;
    let ols_mse = mse_se(&tf.predictions, &s.z[s.val_end..], s.scale);
    let bayes = LinearForecaster::bayes(&s.proc);
    let tf = teacher_forcing_eval(&bayes, &s.raw, s.val_end)?;
    let bayes_mse = mean_se(&tf.sq_errors);
    Ok(Baselines { ols, ols_mse, bayes_mse })
}

fn log_steps(len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = 1usize;
    while k <= len {
        out.push(k);
        k = ((k as f64) * 1.5).ceil() as usize;
    }
    if out.last() != Some(&len) {
        out.push(len);
    }
    out
}

fn push_mse(sink: &mut RowSink, at: Coord, metric: &str, v: (f64, f64)) {
    sink.push(at, metric, None, v.0, Some(v.1));
}

fn train_eval_tf(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let s = SplitSeries::new(cfg, seed, p)?;
    let base = baselines(&s, p)?;
    let max_depth = *cfg.grid.layers.iter().max().expect("validated");
    for n in cfg.contexts(p) {
        let d = Splits::new(&s, n, p)?;
        let chain = fit_stack_chain(cfg, &s, &d, p, seed, max_depth)?;
        for &l in &cfg.grid.layers {
            let model = &chain[l - 1];
            let at = Coord::new(seed, p).n(n).layers(l);
            push_mse(sink, at, "tf_mse_lsa", test_mse(model, &d.test, s.scale));
            push_mse(sink, at, "tf_mse_ols", base.ols_mse);
            push_mse(sink, at, "tf_mse_bayes", base.bayes_mse);
            sink.value(at, "train_mse_lsa", d.train.mse(model) * s.scale * s.scale);
            let preds = d.test.predictions(model);
            let e: Vec<f64> = preds
                .iter()
                .zip(d.test.dataset().targets())
                .map(|(a, b)| ((a - b) * s.scale).powi(2))
                .collect();
            let cmse = arlab_core::rollout::cmse_curve(&e);
            for k in log_steps(cmse.len()) {
                sink.push(at, "tf_cmse_lsa", Some(k), cmse[k - 1], None);
            }
        }
        let at = Coord::new(seed, p).n(n);
        let ols_tf = teacher_forcing_eval(&Scaled { inner: base.ols.clone(), scale: s.scale }, &s.raw, s.val_end)?;
        for k in log_steps(ols_tf.cmse.len()) {
            sink.push(at, "tf_cmse_ols", Some(k), ols_tf.cmse[k - 1], None);
        }
    }
    Ok(())
}

fn context_scan(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let s = SplitSeries::new(cfg, seed, p)?;
    let base = baselines(&s, p)?;
    for n in cfg.contexts(p) {
        let d = Splits::new(&s, n, p)?;
        let model = fit_one_layer(cfg, &s, &d, p)?;
        let at = Coord::new(seed, p).n(n).layers(1);
        push_mse(sink, at, "tf_mse_lsa", test_mse(&model, &d.test, s.scale));
        push_mse(sink, at, "tf_mse_ols", base.ols_mse);
        push_mse(sink, at, "tf_mse_bayes", base.bayes_mse);
    }
    Ok(())
}

fn layer_scan(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let s = SplitSeries::new(cfg, seed, p)?;
    let base = baselines(&s, p)?;
    let max_depth = *cfg.grid.layers.iter().max().expect("validated");
    for n in cfg.contexts(p) {
        let d = Splits::new(&s, n, p)?;
        let chain = fit_stack_chain(cfg, &s, &d, p, seed, max_depth)?;
        for &l in &cfg.grid.layers {
            let model = &chain[l - 1];
            let at = Coord::new(seed, p).n(n).layers(l);
            push_mse(sink, at, "tf_mse_lsa", test_mse(model, &d.test, s.scale));
            sink.value(at, "val_mse_lsa", d.val.mse(model) * s.scale * s.scale);
            sink.value(at, "train_mse_lsa", d.train.mse(model) * s.scale * s.scale);
            push_mse(sink, at, "tf_mse_ols", base.ols_mse);
        }
    }
    Ok(())
}

fn softmax_compare(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let s = SplitSeries::new(cfg, seed, p)?;
    let base = baselines(&s, p)?;
    for n in cfg.contexts(p) {
        let d = Splits::new(&s, n, p)?;
        let lsa = fit_one_layer(cfg, &s, &d, p)?;
        let mut rng = seeded(derive_seed(seed, "softmax-init", (p * 100_000 + n) as u64));
        let init = SoftmaxParams::random(p, cfg.train.init_scale, &mut rng);
        let out = train_gradient(init, &d.train, Some(&d.val), &train_config(cfg, seed, (p * 100_000 + n) as u64))?;
        let at = Coord::new(seed, p).n(n).layers(1);
        push_mse(sink, at, "tf_mse_softmax", test_mse(&out.params, &d.test, s.scale));
        push_mse(sink, at, "tf_mse_lsa", test_mse(&lsa, &d.test, s.scale));
        push_mse(sink, at, "tf_mse_ols", base.ols_mse);
        push_mse(sink, at, "tf_mse_bayes", base.bayes_mse);
        sink.value(at, "softmax_epochs", out.steps as f64);
        let sf = Scaled { inner: SoftmaxForecaster { params: out.params, n, policy: ContextPolicy::Sliding }, scale: s.scale };
        let tr = cot_rollout(&sf, &s.raw[s.val_end - n..s.val_end], cfg.grid.horizon, Some(&s.raw[s.val_end..]))?;
        sink.curve(at, "cot_cmse_softmax", tr.cmse.as_deref().unwrap_or(&[]), None);
    }
    Ok(())
}

/// Rollout starts inside the test segment, spaced by the horizon.
fn test_starts(s: &SplitSeries, n: usize, h: usize) -> Vec<usize> {
    let first = s.val_end.max(n);
    (0..).map(|k| first + k * h).take_while(|t| t + h <= s.len()).collect()
}

/// Per-step mean squared CoT error over test starts, plus the CMSE of the mean curve.
fn empirical_cot<F: Forecaster + ?Sized>(pred: &F, s: &SplitSeries, n: usize, h: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let starts = test_starts(s, n, h);
    let hist = n.max(pred.context_len());
    let mut errs = vec![Vec::with_capacity(starts.len()); h];
    for &t0 in &starts {
        if t0 < hist {
            continue;
        }
        let tr = cot_rollout(pred, &s.raw[t0 - hist..t0], h, Some(&s.raw[t0..t0 + h]))?;
        for (k, e) in tr.sq_errors.unwrap().iter().enumerate() {
            errs[k].push(*e);
        }
    }
    let (mean, se): (Vec<f64>, Vec<f64>) = errs.iter().map(|e| mean_se(e)).unzip();
    Ok((mean, se))
}

fn train_eval_cot(cfg: &ExperimentConfig, seed: u64, p: usize, sink: &mut RowSink) -> Result<()> {
    let s = SplitSeries::new(cfg, seed, p)?;
    let base = baselines(&s, p)?;
    let h = cfg.grid.horizon;
    let gamma0 = s.proc.autocovariances(0)?.gamma[0];
    let sample_var = s.raw[s.val_end..].iter().map(|v| v * v).sum::<f64>() / (s.len() - s.val_end) as f64;
    let max_depth = *cfg.grid.layers.iter().max().expect("validated");
    let bayes = LinearForecaster::bayes(&s.proc);
    let ols = Scaled { inner: base.ols.clone(), scale: s.scale };
    let theory: Vec<f64> = (1..=h).map(|k| s.proc.bayes_multistep_mse(k)).collect();

    let coord0 = Coord::new(seed, p);
    sink.value(coord0, "variance_exact", gamma0);
    sink.value(coord0, "variance_sample", sample_var);
    sink.curve(coord0, "theory_mse_bayes", &theory, None);
    for &tau in &cfg.grid.taus {
        let hr = failure_horizon(&theory, tau, gamma0)?;
        sink.value(coord0, &format!("horizon_bayes_tau{tau}"), horizon_value(hr.horizon));
    }

    for n in cfg.contexts(p) {
        let d = Splits::new(&s, n, p)?;
        let chain = fit_stack_chain(cfg, &s, &d, p, seed, max_depth)?;
        let at_n = coord0.n(n);
        let label = (p * 100_000 + n) as u64;

        let (bm, bse) = empirical_cot(&bayes, &s, n, h)?;
        sink.curve(at_n, "cot_mse_bayes", &bm, Some(&bse));
        sink.curve(at_n, "cot_cmse_bayes", &arlab_core::rollout::cmse_curve(&bm), None);
        let (om, ose) = empirical_cot(&ols, &s, n, h)?;
        sink.curve(at_n, "cot_mse_ols", &om, Some(&ose));
        sink.curve(at_n, "cot_cmse_ols", &arlab_core::rollout::cmse_curve(&om), None);
        let oc = compounding_curve(&s.proc, &ols, h, cfg.grid.mc_samples, derive_seed(seed, "cot-ols", label))?;
        sink.curve(at_n, "mc_mse_ols", &oc.mse, Some(&oc.stderr));
        for &tau in &cfg.grid.taus {
            let hr = failure_horizon(&oc.mse, tau, gamma0)?;
            sink.value(at_n, &format!("horizon_ols_tau{tau}"), horizon_value(hr.horizon));
        }

        for &l in &cfg.grid.layers {
            let at = at_n.layers(l);
            let lsa = Scaled {
                inner: LsaForecaster { stack: chain[l - 1].clone(), n, policy: ContextPolicy::Sliding },
                scale: s.scale,
            };
            push_mse(sink, at, "tf_mse_lsa", test_mse(&chain[l - 1], &d.test, s.scale));
            push_mse(sink, at, "tf_mse_ols", base.ols_mse);
            let (lm, lse) = empirical_cot(&lsa, &s, n, h)?;
            sink.curve(at, "cot_mse_lsa", &lm, Some(&lse));
            sink.curve(at, "cot_cmse_lsa", &arlab_core::rollout::cmse_curve(&lm), None);
            let lc = compounding_curve(&s.proc, &lsa, h, cfg.grid.mc_samples, derive_seed(seed, "cot-lsa", label + l as u64))?;
            sink.curve(at, "mc_mse_lsa", &lc.mse, Some(&lc.stderr));
            for &tau in &cfg.grid.taus {
                let hr = failure_horizon(&lc.mse, tau, gamma0)?;
                sink.value(at, &format!("horizon_lsa_tau{tau}"), horizon_value(hr.horizon));
            }
            let t0 = test_starts(&s, n, h)[0];
            let tr = cot_rollout(&lsa, &s.raw[t0 - n..t0], COLLAPSE_STEPS, None)?;
            if let Ok(fit) = collapse_diagnostics(&tr) {
                sink.value(at, "beta_lsa", fit.beta);
                sink.value(at, "c_env_lsa", fit.c_env);
            }
        }
    }
    Ok(())
}

/// Horizon as a number; `inf` when the threshold is never crossed.
fn horizon_value(h: Option<usize>) -> f64 {
    h.map(|v| v as f64).unwrap_or(f64::INFINITY)
}
