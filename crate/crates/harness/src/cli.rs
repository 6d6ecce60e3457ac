//! `arlab run | aggregate | plot`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::aggregate::{summarize, write_summary};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::experiments::run_rows;
use crate::manifest::{blob_hash, config_hash, sha256_hex, Manifest};
use crate::plot::{build_charts, write_charts};
use crate::results::{read_rows, write_rows};
use crate::{HarnessError, Result};

#[derive(Debug, Parser)]
#[command(name = "arlab", version, about = "Seeded AR / linear-attention experiment sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment config (TOML, or a previous manifest.json).
    Run(RunArgs),
    /// Mean and SEM over seeds for every grid point.
    Aggregate {
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SVG charts from a results file.
    Plot {
        results: PathBuf,
        /// Chart layout; read from a sibling manifest.json when omitted.
        #[arg(long)]
        kind: Option<ExperimentKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweep cells (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Reduced Monte Carlo and epoch budgets.
    #[arg(long)]
    pub fast: bool,
    #[arg(long, value_delimiter = ',')]
    pub seed_override: Option<Vec<u64>>,
    /// Also write SVG charts next to the results.
    #[arg(long)]
    pub plot: bool,
}

impl RunArgs {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        RunArgs { config: config.into(), out: None, jobs: None, fast: false, seed_override: None, plot: false }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub results: PathBuf,
    pub manifest: Manifest,
}

/// Loads, adjusts and validates the config named by `args`.
pub fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seeds) = &args.seed_override {
        cfg.experiment.seeds = seeds.clone();
    }
    if args.fast {
        cfg.apply_fast();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &RunArgs) -> Result<RunOutput> {
    let input = std::fs::read(&args.config).map_err(|e| HarnessError::Io(format!("{}: {e}", args.config.display())))?;
    let cfg = resolve_config(args)?;
    let hash = config_hash(&cfg);
    let jobs = args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if jobs == 0 {
        return Err(HarnessError::Config("--jobs must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    let rows = pool.install(|| run_rows(&cfg, &hash))?;

    let dir = args
        .out
        .clone()
        .or_else(|| cfg.experiment.output.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results").join(cfg.name()));
    std::fs::create_dir_all(&dir)?;
    let mut buf = Vec::new();
    write_rows(&mut buf, &rows)?;
    let results = dir.join("results.csv");
    std::fs::write(&results, &buf)?;

    let manifest = Manifest {
        tool: "arlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: cfg.name().into(),
        kind: cfg.kind().as_str().into(),
        config_hash: hash,
        input_hash: blob_hash(&input),
        input_path: args.config.display().to_string(),
        fast: args.fast,
        seed_override: args.seed_override.clone(),
        reductions: cfg.reductions.clone(),
        rows: rows.len(),
        results_sha256: sha256_hex(&buf),
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    if args.plot {
        write_charts(&build_charts(&rows, Some(cfg.kind())), &dir)?;
    }
    Ok(RunOutput { dir, results, manifest })
}

/// Writes `summary.csv` (into `out`, else next to `results`).
pub fn aggregate(results: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let rows = read_rows(open(results)?)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| parent_dir(results));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("summary.csv");
    let file = std::fs::File::create(&path)?;
    write_summary(file, &summarize(&rows))?;
    Ok(path)
}

/// Writes charts; an empty result set writes nothing and only warns.
pub fn plot(results: &Path, kind: Option<ExperimentKind>, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let rows = read_rows(open(results)?)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| parent_dir(results));
    let kind = kind.or_else(|| sibling_kind(results));
    let charts = build_charts(&rows, kind);
    if charts.is_empty() {
        eprintln!("warning: {} has no plottable rows; no charts written", results.display());
        return Ok(Vec::new());
    }
    write_charts(&charts, &dir)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn sibling_kind(results: &Path) -> Option<ExperimentKind> {
    let text = std::fs::read_to_string(parent_dir(results).join("manifest.json")).ok()?;
    let m: serde_json::Value = serde_json::from_str(&text).ok()?;
    m.get("kind")?.as_str()?.parse().ok()
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let res = match &cli.command {
        Command::Run(args) => run(args).map(|o| {
            println!("{} rows -> {}", o.manifest.rows, o.results.display());
        }),
        Command::Aggregate { results, out } => aggregate(results, out.as_deref()).map(|p| println!("{}", p.display())),
        Command::Plot { results, kind, out } => plot(results, *kind, out.as_deref()).map(|ps| {
            for p in ps {
                println!("{}", p.display());
            }
        }),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
