//! `drcurve`: estimate effect curves from CSV data, select bandwidths, run the
//! simulation study and export simulated data.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure.

mod config;
mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drcurve::bandwidth::risk_table;
use drcurve::nuisance::{
    default_floor, fit_outcome_regression, fit_treatment_density_beta, fit_treatment_density_locscale,
    ConditionalDensity, FeatureMap, Link,
};
use drcurve::simulate::dgp::{self, SUPPORT, TREATMENT_SCALE};
use drcurve::simulate::{generate_data, run_study_with, BandwidthMode, TruthOracle};
use drcurve::{
    marginalize, oracle_bandwidth, select_bandwidth, BandwidthSearch, CurveEstimator, Dataset, EstimatorKind,
    KernelFamily, KernelSpec, NuisanceFit, VarianceMethod,
};
use serde::Serialize;

use config::{BandwidthChoice, EstimateConfig, RunConfig, TreatmentModel};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Numerical(_) => 3,
        }
    }

    pub fn from_core(e: drcurve::Error) -> Self {
        use drcurve::Error as E;
        match e {
            E::InvalidInput(_) | E::DomainError(_) => Self::Input(e.to_string()),
            E::SingularDesign { .. }
            | E::NoConvergence { .. }
            | E::RankDeficient
            | E::DegenerateScale { .. }
            | E::TooManyFailures { .. } => Self::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "drcurve", version, about = "Doubly robust estimation of continuous-treatment effect curves")]
struct Cli {
    /// Worker threads; defaults to all available cores. Results do not depend on it.
    #[arg(long, global = true, env = "DRCURVE_THREADS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the effect curve on a grid and write it as CSV plus JSON metadata.
    Estimate(EstimateArgs),
    /// Run a simulation study described by the `simulation` config section.
    Simulate(SimulateArgs),
    /// Select a bandwidth by leave-one-out risk and print the risk table.
    Bandwidth(BandwidthArgs),
    /// Write a simulated dataset or the true curve of the simulation design.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Reg,
    Ipw,
    Dr,
}

impl From<KindArg> for EstimatorKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Reg => Self::Reg,
            KindArg::Ipw => Self::Ipw,
            KindArg::Dr => Self::Dr,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Epanechnikov,
    Uniform,
    TruncatedGaussian,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Epanechnikov => Self::Epanechnikov,
            KernelArg::Uniform => Self::Uniform,
            KernelArg::TruncatedGaussian => Self::TruncatedGaussian,
        }
    }
}

#[derive(Args, Debug)]
struct MethodArgs {
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// loo, oracle (simulation design only) or a fixed bandwidth.
    #[arg(long)]
    bandwidth: Option<BandwidthChoice>,
}

impl MethodArgs {
    fn apply(&self, cfg: &mut EstimateConfig) {
        if let Some(k) = self.kind {
            cfg.kind = k.into();
        }
        if let Some(k) = self.kernel {
            cfg.kernel = k.into();
        }
        if let Some(b) = self.bandwidth {
            cfg.bandwidth = b;
        }
    }
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Curve CSV; metadata goes to the same path with a .json extension.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    ci_level: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Table CSV; the full report goes to the same path with a .json extension.
    #[arg(long)]
    output: PathBuf,
    /// Overrides the base seed of the study.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct BandwidthArgs {
    #[arg(long)]
    input: PathBuf,
    /// Optional CSV for the risk table.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long)]
    h_min: Option<f64>,
    #[arg(long)]
    h_max: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum ExportWhat {
    /// A dataset drawn from the simulation design.
    #[default]
    Data,
    /// Columns a, theta, varpi of the simulation design.
    Truth,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    what: ExportWhat,
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bandwidth(args) => cmd_bandwidth(args),
        Command::Export(args) => cmd_export(args),
    }
}

/// `path` with its extension replaced by `.json`, or `.meta.json` appended
/// when that would overwrite `path`.
fn companion_json(path: &Path) -> PathBuf {
    let json = path.with_extension("json");
    if json == path {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    } else {
        json
    }
}

fn fit_nuisance(data: &Dataset, cfg: &EstimateConfig) -> Result<NuisanceFit, CliError> {
    let p = data.covariates().ncols();
    let density: Arc<dyn ConditionalDensity> = match &cfg.treatment_model {
        TreatmentModel::LocationScale { mean, scale } => {
            let linear = FeatureMap::linear(p);
            Arc::new(fit_treatment_density_locscale(
                data,
                mean.as_ref().unwrap_or(&linear),
                scale.as_ref().unwrap_or(&linear),
            )
            .map_err(CliError::from_core)?)
        }
        TreatmentModel::Beta { mean, scale, precision } => Arc::new(
            fit_treatment_density_beta(data, mean.as_ref().unwrap_or(&FeatureMap::linear(p)), *scale, *precision)
                .map_err(CliError::from_core)?,
        ),
        TreatmentModel::Simulation { model } => Arc::new(
            fit_treatment_density_beta(
                data,
                &dgp::treatment_design(model.is_correct()),
                TREATMENT_SCALE,
                TREATMENT_SCALE,
            )
            .map_err(CliError::from_core)?,
        ),
    };
    let om = &cfg.outcome_model;
    let (design, link) = match om.simulation {
        Some(model) => (dgp::outcome_design(model.is_correct()), Link::Logistic),
        None => {
            let default_link = if data.has_binary_outcome() { Link::Logistic } else { Link::Identity };
            (
                om.design.clone().unwrap_or_else(|| FeatureMap::linear_with_treatment(p)),
                om.link.unwrap_or(default_link),
            )
        }
    };
    let regression = fit_outcome_regression(data, &design, link).map_err(CliError::from_core)?;
    let floor = cfg.floor.unwrap_or_else(|| default_floor(data.support_length()));
    Ok(marginalize(data, density, Arc::new(regression), floor))
}

fn search_range(data: &Dataset, cfg: &EstimateConfig) -> Result<BandwidthSearch, CliError> {
    match &cfg.search {
        Some(s) => Ok(s.clone()),
        None => BandwidthSearch::default_for(data.treatment()).map_err(CliError::from_core),
    }
}

/// The true curve of the simulation design, for oracle bandwidths.
fn simulation_truth(data: &Dataset) -> Result<impl Fn(f64) -> f64 + Sync, CliError> {
    let (lo, hi) = data.support();
    if lo < SUPPORT.0 || hi > SUPPORT.1 {
        return Err(CliError::Input(format!(
            "oracle bandwidth needs data from the simulation design (treatment in [{}, {}])",
            SUPPORT.0, SUPPORT.1
        )));
    }
    let oracle = TruthOracle::shared();
    Ok(move |a: f64| oracle.theta(a))
}

#[derive(Debug, Serialize)]
struct EstimateMetadata {
    version: &'static str,
    kind: EstimatorKind,
    kernel: KernelFamily,
    bandwidth_mode: &'static str,
    bandwidth: Option<f64>,
    risk_at_bandwidth: Option<f64>,
    search: Option<BandwidthSearch>,
    n: usize,
    p: usize,
    support: (f64, f64),
    floor: f64,
    floored_count: usize,
    grid_points: usize,
    skipped: Vec<f64>,
    ci_level: Option<f64>,
    variance: Option<VarianceMethod>,
    seed: Option<u64>,
    warnings: Vec<String>,
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let config = RunConfig::load(args.common.config.as_deref())?;
    let mut cfg = config.estimate.clone();
    args.method.apply(&mut cfg);
    if let Some(level) = args.ci_level {
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::Input(format!("--ci-level {level} not in (0, 1)")));
        }
        cfg.ci_level = Some(level);
    }
    let data = io::read_dataset(&args.input, cfg.support)?;
    let fit = fit_nuisance(&data, &cfg)?;
    let estimator = CurveEstimator::new(&data, &fit, cfg.kind);
    let grid = cfg.grid.resolve(data.treatment());
    let mut warnings = Vec::new();

    let mut search = None;
    let mut risk = None;
    let (mode, bandwidth) = match (cfg.kind, cfg.bandwidth) {
        (EstimatorKind::Reg, _) => ("none", None),
        (_, BandwidthChoice::Fixed(h)) => ("fixed", Some(h)),
        (_, BandwidthChoice::Select(m)) => {
            let pseudo = &estimator.pseudo().expect("pseudo-outcomes for smoothing estimators").values;
            let range = search_range(&data, &cfg)?;
            let (label, result) = match m {
                BandwidthMode::Loo => ("loo", select_bandwidth(data.treatment(), pseudo, cfg.kernel, &range)),
                BandwidthMode::Oracle => {
                    let truth = simulation_truth(&data)?;
                    ("oracle", oracle_bandwidth(data.treatment(), &truth, pseudo, cfg.kernel, &range))
                }
            };
            let h = result.bandwidth().ok_or_else(|| {
                CliError::Numerical(format!("no bandwidth in [{}, {}] has finite risk", range.h_min, range.h_max))
            })?;
            if h <= range.h_min * (1.0 + 1e-9) || h >= range.h_max * (1.0 - 1e-9) {
                warnings.push(format!("selected bandwidth {h} is at the edge of the search range"));
            }
            risk = result.risk_at_selected;
            search = Some(result);
            (label, Some(h))
        }
    };

    let spec = KernelSpec::new(cfg.kernel, bandwidth.unwrap_or(1.0)).map_err(CliError::from_core)?;
    let mut curve = estimator.estimate(&grid, &spec).map_err(CliError::from_core)?;
    let with_ci = cfg.kind != EstimatorKind::Reg && cfg.ci_level.is_some();
    if let (true, Some(level)) = (with_ci, cfg.ci_level) {
        curve = estimator.add_wald_ci(&curve, level, cfg.variance).map_err(CliError::from_core)?;
    }
    if !curve.skipped.is_empty() {
        warnings.push(format!("{} grid points skipped (singular local design)", curve.skipped.len()));
    }
    if curve.floored_count > 0 {
        warnings.push(format!("{} observations had their treatment density floored", curve.floored_count));
    }

    io::write_curve(&args.output, &curve)?;
    let meta = EstimateMetadata {
        version: env!("CARGO_PKG_VERSION"),
        kind: cfg.kind,
        kernel: cfg.kernel,
        bandwidth_mode: mode,
        bandwidth,
        risk_at_bandwidth: risk,
        search,
        n: data.len(),
        p: data.covariates().ncols(),
        support: data.support(),
        floor: fit.floor(),
        floored_count: curve.floored_count,
        grid_points: curve.len(),
        skipped: curve.skipped.clone(),
        ci_level: cfg.ci_level.filter(|_| with_ci),
        variance: with_ci.then_some(cfg.variance),
        seed: args.common.seed.or(config.seed),
        warnings,
    };
    io::write_json(&companion_json(&args.output), &meta)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let config = RunConfig::load(Some(&args.config))?;
    let mut sim = config
        .simulation
        .ok_or_else(|| CliError::Input(format!("{}: config has no `simulation` section", args.config.display())))?;
    if let Some(seed) = args.seed.or(config.seed) {
        sim.base_seed = seed;
    }
    let total = sim.replications;
    let step = (total / 10).max(1);
    eprintln!("simulate: n = {}, {} replications, {}", sim.n, total, sim.correct_model_label());
    let progress = move |done: usize, total: usize| {
        if done % step == 0 || done == total {
            eprintln!("simulate: {done}/{total} replications");
        }
    };
    let report = run_study_with(&sim, TruthOracle::shared(), &progress).map_err(CliError::from_core)?;
    io::write_text(&args.output, &report.to_csv())?;
    io::write_json(&companion_json(&args.output), &report)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn cmd_bandwidth(args: BandwidthArgs) -> Result<(), CliError> {
    let config = RunConfig::load(args.common.config.as_deref())?;
    let mut cfg = config.estimate.clone();
    if let Some(k) = args.kind {
        cfg.kind = k.into();
    }
    if let Some(k) = args.kernel {
        cfg.kernel = k.into();
    }
    if cfg.kind == EstimatorKind::Reg {
        return Err(CliError::Input("the regression estimator has no bandwidth".into()));
    }
    let data = io::read_dataset(&args.input, cfg.support)?;
    let mut range = search_range(&data, &cfg)?;
    if args.h_min.is_some() || args.h_max.is_some() {
        range = BandwidthSearch {
            h_min: args.h_min.unwrap_or(range.h_min),
            h_max: args.h_max.unwrap_or(range.h_max),
            ..range
        };
        range.validate().map_err(|e| CliError::Input(e.to_string()))?;
    }
    let fit = fit_nuisance(&data, &cfg)?;
    let estimator = CurveEstimator::new(&data, &fit, cfg.kind);
    let pseudo = &estimator.pseudo().expect("pseudo-outcomes for smoothing estimators").values;

    let table = risk_table(data.treatment(), pseudo, cfg.kernel, &range);
    if !table.iter().any(|(_, r)| r.is_finite()) {
        return Err(CliError::Numerical(format!(
            "leave-one-out risk is infinite at every bandwidth in [{}, {}]",
            range.h_min, range.h_max
        )));
    }
    let result = select_bandwidth(data.treatment(), pseudo, cfg.kernel, &range);
    let h = result
        .bandwidth()
        .ok_or_else(|| CliError::Numerical("no bandwidth with finite leave-one-out risk".into()))?;
    println!("h = {h}");
    println!("risk = {}", result.risk_at_selected.unwrap_or(f64::INFINITY));
    println!("h,risk");
    for (h, r) in &table {
        println!("{h},{r}");
    }
    if let Some(path) = &args.output {
        io::write_pairs(path, ["h", "risk"], &table)?;
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    let config = RunConfig::load(args.common.config.as_deref())?;
    match args.what {
        ExportWhat::Data => {
            let n = args.n.unwrap_or(config.export.n);
            if n < 2 {
                return Err(CliError::Input(format!("n must be at least 2, got {n}")));
            }
            let seed = args.common.seed.or(config.seed).unwrap_or(0);
            io::write_dataset(&args.output, &generate_data(n, seed))
        }
        ExportWhat::Truth => {
            let oracle = TruthOracle::shared();
            let points = args.n.unwrap_or(config.export.truth_points).max(2);
            let rows: Vec<String> = drcurve::estimator::linspace(SUPPORT.0, SUPPORT.1, points)
                .into_iter()
                .map(|a| format!("{a},{},{}", oracle.theta(a), oracle.varpi(a)))
                .collect();
            io::write_text(&args.output, &format!("a,theta,varpi\n{}\n", rows.join("\n")))
        }
    }
}
