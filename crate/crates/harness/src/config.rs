//! Experiment configuration: TOML with `[experiment]`, `[process]`, `[grid]` and `[train]` tables.

use std::fmt;
use std::path::Path;

use arlab_core::moments::{EXACT_MAX_LEN, EXACT_MAX_ORDER};
use arlab_core::stochastic::{check_stability, InnovationLaw};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ExactGap,
    McGap,
    Rate,
    UniformGap,
    Multilayer,
    Ar1Warmstart,
    TrainEvalTf,
    TrainEvalCot,
    ContextScan,
    LayerScan,
    SoftmaxCompare,
    FeatureCollapse,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 12] = [
        ExperimentKind::ExactGap,
        ExperimentKind::McGap,
        ExperimentKind::Rate,
        ExperimentKind::UniformGap,
        ExperimentKind::Multilayer,
        ExperimentKind::Ar1Warmstart,
        ExperimentKind::TrainEvalTf,
        ExperimentKind::TrainEvalCot,
        ExperimentKind::ContextScan,
        ExperimentKind::LayerScan,
        ExperimentKind::SoftmaxCompare,
        ExperimentKind::FeatureCollapse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ExactGap => "exact-gap",
            ExperimentKind::McGap => "mc-gap",
            ExperimentKind::Rate => "rate",
            ExperimentKind::UniformGap => "uniform-gap",
            ExperimentKind::Multilayer => "multilayer",
            ExperimentKind::Ar1Warmstart => "ar1-warmstart",
            ExperimentKind::TrainEvalTf => "train-eval-tf",
            ExperimentKind::TrainEvalCot => "train-eval-cot",
            ExperimentKind::ContextScan => "context-scan",
            ExperimentKind::LayerScan => "layer-scan",
            ExperimentKind::SoftmaxCompare => "softmax-compare",
            ExperimentKind::FeatureCollapse => "feature-collapse",
        }
    }

    fn uses_exact_moments(self) -> bool {
        matches!(self, ExperimentKind::ExactGap | ExperimentKind::Rate | ExperimentKind::UniformGap)
    }

    fn trains(self) -> bool {
        matches!(
            self,
            ExperimentKind::TrainEvalTf
                | ExperimentKind::TrainEvalCot
                | ExperimentKind::ContextScan
                | ExperimentKind::LayerScan
                | ExperimentKind::SoftmaxCompare
        )
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ExperimentKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSection {
    /// Order of seed-drawn processes; defaults to each context order.
    #[serde(default)]
    pub order: Option<usize>,
    /// Fixed lag-1-first coefficients; overrides seed-drawn processes.
    #[serde(default)]
    pub coeffs: Option<Vec<f64>>,
    #[serde(default = "default_max_modulus")]
    pub max_modulus: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default)]
    pub innovation: InnovationLaw,
}

impl Default for ProcessSection {
    fn default() -> Self {
        ProcessSection {
            order: None,
            coeffs: None,
            max_modulus: default_max_modulus(),
            noise_std: default_noise_std(),
            innovation: InnovationLaw::Gaussian,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Context orders `p`; defaults to the process order.
    #[serde(default)]
    pub orders: Option<Vec<usize>>,
    /// Absolute history lengths `n`.
    #[serde(default)]
    pub contexts: Option<Vec<usize>>,
    /// History lengths `n = p + offset`; used when `contexts` is absent.
    #[serde(default)]
    pub context_offsets: Option<Vec<usize>>,
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    #[serde(default = "default_series_length")]
    pub series_length: usize,
    #[serde(default = "default_splits")]
    pub splits: [f64; 3],
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Coefficient-norm shell `[r, r_max]` for the uniform gap.
    #[serde(default = "default_shell")]
    pub shell: [f64; 2],
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            orders: None,
            contexts: None,
            context_offsets: None,
            layers: default_layers(),
            series_length: default_series_length(),
            splits: default_splits(),
            horizon: default_horizon(),
            taus: default_taus(),
            mc_samples: default_mc_samples(),
            shell: default_shell(),
            resolution: default_resolution(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_als_sweeps")]
    pub als_sweeps: usize,
    #[serde(default = "default_tolerance")]
    pub als_tolerance: f64,
    /// Scale of the random softmax initialisation.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            momentum: default_momentum(),
            tolerance: default_tolerance(),
            als_sweeps: default_als_sweeps(),
            als_tolerance: default_tolerance(),
            init_scale: default_init_scale(),
        }
    }
}

fn default_max_modulus() -> f64 {
    0.9
}
fn default_noise_std() -> f64 {
    0.05
}
fn default_layers() -> Vec<usize> {
    vec![1]
}
fn default_series_length() -> usize {
    50_000
}
fn default_splits() -> [f64; 3] {
    [0.70, 0.15, 0.15]
}
fn default_horizon() -> usize {
    50
}
fn default_taus() -> Vec<f64> {
    vec![0.3, 0.5, 0.7, 0.9]
}
fn default_mc_samples() -> usize {
    100_000
}
fn default_shell() -> [f64; 2] {
    [0.2, 0.95]
}
fn default_resolution() -> usize {
    20
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    512
}
fn default_epochs() -> usize {
    100
}
fn default_momentum() -> f64 {
    0.9
}
fn default_tolerance() -> f64 {
    1e-10
}
fn default_als_sweeps() -> usize {
    500
}
fn default_init_scale() -> f64 {
    0.1
}

/// Caps applied by `--fast`.
pub const FAST_MC_SAMPLES: usize = 10_000;
pub const FAST_MAX_EPOCHS: usize = 10;
pub const FAST_ALS_SWEEPS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub process: ProcessSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub train: TrainSection,
    /// Reductions applied by `--fast`, filled in by [`ExperimentConfig::apply_fast`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reductions: Vec<String>,
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the resolved config stored in a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
            let cfg = v.get("config").ok_or_else(|| invalid("manifest has no `config` entry"))?;
            let cfg: ExperimentConfig = serde_json::from_value(cfg.clone()).map_err(|e| invalid(e.to_string()))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::from_toml_str(&text)
    }

    pub fn name(&self) -> &str {
        self.experiment.name.as_deref().unwrap_or(self.experiment.kind.as_str())
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment.kind
    }

    /// Context orders `p` of the sweep.
    pub fn orders(&self) -> Vec<usize> {
        if let Some(o) = &self.grid.orders {
            return o.clone();
        }
        if let Some(c) = &self.process.coeffs {
            return vec![c.len()];
        }
        vec![self.process.order.unwrap_or(1)]
    }

    /// History lengths for context order `p`.
    pub fn contexts(&self, p: usize) -> Vec<usize> {
        match (&self.grid.contexts, &self.grid.context_offsets) {
            (Some(c), _) => c.clone(),
            (None, Some(o)) => o.iter().map(|d| p + d).collect(),
            (None, None) => vec![p + 5],
        }
    }

    /// Order of the data-generating process for context order `p`.
    pub fn process_order(&self, p: usize) -> usize {
        match (&self.process.coeffs, self.process.order) {
            (Some(c), _) => c.len(),
            (None, Some(o)) => o,
            (None, None) => p,
        }
    }

    pub fn apply_fast(&mut self) {
        let mut notes = Vec::new();
        if self.grid.mc_samples > FAST_MC_SAMPLES {
            notes.push(format!("mc_samples {} -> {FAST_MC_SAMPLES}", self.grid.mc_samples));
            self.grid.mc_samples = FAST_MC_SAMPLES;
        }
        if self.train.max_epochs > FAST_MAX_EPOCHS && self.kind().trains() {
            notes.push(format!("max_epochs {} -> {FAST_MAX_EPOCHS}", self.train.max_epochs));
            self.train.max_epochs = FAST_MAX_EPOCHS;
        }
        if self.train.als_sweeps > FAST_ALS_SWEEPS && self.kind().trains() {
            notes.push(format!("als_sweeps {} -> {FAST_ALS_SWEEPS}", self.train.als_sweeps));
            self.train.als_sweeps = FAST_ALS_SWEEPS;
        }
        self.reductions.extend(notes);
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(invalid("experiment.seeds is empty"));
        }
        let mut sorted = e.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != e.seeds.len() {
            return Err(invalid("experiment.seeds contains duplicates"));
        }
        let pr = &self.process;
        if !(pr.noise_std > 0.0 && pr.noise_std.is_finite()) {
            return Err(invalid("process.noise_std must be positive"));
        }
        if !(pr.max_modulus > 0.0 && pr.max_modulus < 1.0) {
            return Err(invalid("process.max_modulus must lie in (0, 1)"));
        }
        if pr.order == Some(0) {
            return Err(invalid("process.order must be at least 1"));
        }
        if let Some(c) = &pr.coeffs {
            match check_stability(c) {
                Ok(true) => {}
                Ok(false) => return Err(invalid(format!("process.coeffs {c:?} are not stable"))),
                Err(err) => return Err(invalid(err.to_string())),
            }
        }
        if self.kind() == ExperimentKind::Ar1Warmstart
            && (self.process.coeffs.as_ref().map(|c| c.len()) != Some(1) || self.process.innovation != InnovationLaw::Gaussian)
        {
            return Err(invalid("ar1-warmstart needs a single fixed Gaussian coefficient"));
        }

        let g = &self.grid;
        let orders = self.orders();
        if orders.is_empty() || orders.contains(&0) {
            return Err(invalid("grid.orders must be nonempty and positive"));
        }
        if matches!(&g.contexts, Some(c) if c.is_empty()) || matches!(&g.context_offsets, Some(o) if o.is_empty()) {
            return Err(invalid("context grid is empty"));
        }
        if g.layers.is_empty() || g.layers.contains(&0) {
            return Err(invalid("grid.layers must be nonempty and positive"));
        }
        if g.taus.is_empty() || g.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(invalid("grid.taus must be nonempty with entries in (0, 1)"));
        }
        if g.splits.iter().any(|s| !(*s > 0.0)) || (g.splits.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("grid.splits must be positive and sum to 1"));
        }
        if g.horizon == 0 || g.mc_samples < 2 || g.resolution == 0 {
            return Err(invalid("grid.horizon, grid.mc_samples and grid.resolution must be positive"));
        }
        if !(0.0 < g.shell[0] && g.shell[0] <= g.shell[1]) {
            return Err(invalid("grid.shell must satisfy 0 < r <= r_max"));
        }
        for &p in &orders {
            if let Some(c) = &pr.coeffs {
                if c.len() > p {
                    return Err(invalid(format!("context order {p} is below the process order {}", c.len())));
                }
            }
            for n in self.contexts(p) {
                if n < p + 1 {
                    return Err(invalid(format!("history length {n} is below p + 1 = {}", p + 1)));
                }
                if self.kind().uses_exact_moments() && (n > EXACT_MAX_LEN || p > EXACT_MAX_ORDER) {
                    return Err(HarnessError::Guard(format!(
                        "exact moments support n <= {EXACT_MAX_LEN} and p <= {EXACT_MAX_ORDER}, got n = {n}, p = {p}"
                    )));
                }
                if self.kind().trains() {
                    let train_len = (g.splits[0] * g.series_length as f64) as usize;
                    let test_len = g.series_length - ((g.splits[0] + g.splits[1]) * g.series_length as f64) as usize;
                    if train_len <= n + 1 || test_len <= g.horizon || test_len < 2 {
                        return Err(invalid(format!(
                            "series_length {} too short for n = {n} and horizon {}",
                            g.series_length, g.horizon
                        )));
                    }
                }
            }
        }
        let t = &self.train;
        if !(t.learning_rate > 0.0) || t.batch_size == 0 || t.max_epochs == 0 || t.als_sweeps == 0 {
            return Err(invalid("train.learning_rate, batch_size, max_epochs and als_sweeps must be positive"));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(invalid("train.momentum must lie in [0, 1)"));
        }
        if !(t.tolerance >= 0.0 && t.als_tolerance >= 0.0 && t.init_scale > 0.0) {
            return Err(invalid("train tolerances must be nonnegative and init_scale positive"));
        }
        Ok(())
    }
}
