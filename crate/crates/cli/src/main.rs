//! `aisil`: simulate data, fit models, study filter variance, pool runs and
//! check kernels.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aisil::diagnostics::{
    aggregate_runs, enumeration_harness, geweke_harness, pf_variance_harness, FactorGeweke, HarnessVerdict, SvGeweke, ToyModel,
    ToyPgKernel,
};
use aisil::experiment::{find_summaries, load_summary, run_experiment, write_aggregate, ExperimentError, RunConfig};
use aisil::factor::{FactorHmcKernel, FactorMarginalSeries, FactorPgKernel, FactorTheta};
use aisil::hmc::HmcConfig;
use aisil::io::{load_returns, write_table, InputMode, Table};
use aisil::simulate::{default_factor_theta, simulate_factor, simulate_sv};
use aisil::sv::{SvHmcKernel, SvPgKernel, SvPrior, SvSeries, SvTheta};
use aisil::{DataError, Execution, Role, RngStream};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aisil", version, about = "Density-tempered SMC for stochastic-volatility models")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimModel {
    Sv,
    Factor,
}

#[derive(Clone, Copy, ValueEnum)]
enum Harness {
    /// Particle Gibbs on the enumerable toy model.
    Toy,
    SvPg,
    SvHmc,
    FactorPg,
    FactorHmc,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a data set and its latent states.
    Simulate {
        #[arg(long, value_enum, default_value = "sv")]
        model: SimModel,
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long, default_value_t = 0.98, allow_hyphen_values = true)]
        phi: f64,
        #[arg(long, default_value_t = 0.025)]
        tau2: f64,
        #[arg(long, default_value_t = 5)]
        series: usize,
        #[arg(long, default_value_t = 1)]
        factors: usize,
        /// Factor-model parameters as JSON (overrides --series/--factors).
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model for every configured seed.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        mode: Option<InputMode>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Variance of the bootstrap-filter log-likelihood across particle counts.
    PfVariance {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "returns")]
        mode: InputMode,
        /// Parameters as JSON: an SV parameter object for one series, a
        /// factor parameter object otherwise.
        #[arg(long)]
        theta: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "100,250,500,1000")]
        particles: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        replications: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        sequential: bool,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pool the run summaries found under an experiment directory.
    Aggregate {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run a kernel-invariance harness.
    Check {
        #[arg(long, value_enum, default_value = "toy")]
        harness: Harness,
        #[arg(long, default_value_t = 20_000)]
        iterations: usize,
        /// Temperature; the continuous harnesses accept only 0 and 1.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
}

enum Failure {
    Config(String),
    Data(String),
    Engine(String),
    Harness(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Engine(_) => 4,
            Failure::Harness(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Engine(m) | Failure::Harness(m) => m,
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(m) => Failure::Config(m),
            ExperimentError::Data(d) => Failure::Data(d.to_string()),
            e @ ExperimentError::Engine { .. } => Failure::Engine(e.to_string()),
            e @ ExperimentError::Output { .. } => Failure::Data(e.to_string()),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("serialises") + "\n";
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    model: SimModel,
    horizon: usize,
    seed: u64,
    sv: SvTheta,
    series: usize,
    factors: usize,
    theta_path: Option<PathBuf>,
    out: &Path,
) -> Result<(), Failure> {
    if horizon < 2 {
        return Err(Failure::Config("horizon must be at least 2".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    let mut rng = RngStream::new(seed).at(0, 0, 0, Role::Simulate);
    match model {
        SimModel::Sv => {
            if !(sv.phi.abs() < 1.0 && sv.tau2 >= 0.0 && sv.mu.is_finite()) {
                return Err(Failure::Config("need |phi| < 1 and tau2 >= 0".into()));
            }
            let (x, y) = simulate_sv(&sv, horizon, &mut rng);
            write_table(&out.join("y.csv"), &Table { names: vec!["y".into()], columns: vec![y] })?;
            write_table(&out.join("states.csv"), &Table { names: vec!["x".into()], columns: vec![x] })?;
            write_json(&out.join("theta.json"), &sv)
        }
        SimModel::Factor => {
            let theta: FactorTheta = match theta_path {
                Some(p) => read_json(&p)?,
                None => {
                    if factors < 1 || factors > series {
                        return Err(Failure::Config("need 1 <= factors <= series".into()));
                    }
                    default_factor_theta(series, factors)
                }
            };
            if theta.beta.len() != theta.series() * theta.factors() || !theta.is_lower_triangular() {
                return Err(Failure::Config("loadings must be a lower-triangular S x K matrix".into()));
            }
            let (x, y) = simulate_factor(&theta, horizon, &mut rng);
            let names = (0..y.len()).map(|s| format!("y_{s}")).collect();
            write_table(&out.join("y.csv"), &Table { names, columns: y })?;
            let mut names: Vec<String> = (0..x.h.len()).map(|s| format!("h_{s}")).collect();
            names.extend((0..x.lambda.len()).map(|k| format!("lambda_{k}")));
            names.extend((0..x.f.len()).map(|k| format!("f_{k}")));
            let columns = x.h.into_iter().chain(x.lambda).chain(x.f).collect();
            write_table(&out.join("states.csv"), &Table { names, columns })?;
            write_json(&out.join("theta.json"), &theta)
        }
    }
}

fn fit(
    config: Option<PathBuf>,
    overrides: Vec<String>,
    data: Option<PathBuf>,
    mode: Option<InputMode>,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(&p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    for o in &overrides {
        cfg.set(o).map_err(Failure::Config)?;
    }
    if let Some(d) = data {
        cfg.data = Some(d);
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(o) = output {
        cfg.output = o;
    }
    cfg.validate().map_err(Failure::Config)?;
    let path = cfg.data.clone().ok_or_else(|| Failure::Config("no data file given".into()))?;
    let table = load_returns(&path, cfg.mode)?;
    let report = run_experiment(&cfg, &table)?;
    let a = &report.aggregate;
    println!("runs: {}  mean stages: {:.1}", a.runs, a.mean_stages);
    println!("log marginal likelihood: {} (between-run sd {})", a.mean_log_marginal_likelihood, a.between_run_sd_log_marginal_likelihood);
    for j in 0..a.parameter_names.len() {
        println!("{:>12}  mean {:>12.6}  sd {:>10.6}", a.parameter_names[j], a.pooled_means[j], a.pooled_sds[j]);
    }
    println!("artifacts in {}", cfg.output.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn pf_variance(
    data: &Path,
    mode: InputMode,
    theta_path: &Path,
    particles: &[usize],
    reps: usize,
    seed: u64,
    a: f64,
    sequential: bool,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let table = load_returns(data, mode)?;
    let streams = RngStream::new(seed);
    let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
    let report = if table.columns.len() == 1 {
        let theta: SvTheta = read_json(theta_path)?;
        let series = SvSeries::from_theta(&theta, &table.columns[0]);
        pf_variance_harness(&series, particles, reps, a, &streams, 0, exec)
    } else {
        let theta: FactorTheta = read_json(theta_path)?;
        if theta.series() != table.columns.len() {
            return Err(Failure::Config(format!(
                "parameters describe {} series, data has {}",
                theta.series(),
                table.columns.len()
            )));
        }
        let series = FactorMarginalSeries::new(&theta, &table.columns);
        pf_variance_harness(&series, particles, reps, a, &streams, 0, exec)
    }
    .map_err(Failure::Config)?;
    match out {
        Some(p) => std::fs::write(&p, report.to_csv()).map_err(|e| Failure::Data(format!("{}: {e}", p.display()))),
        None => {
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

fn aggregate(dir: &Path) -> Result<(), Failure> {
    let paths = find_summaries(dir)?;
    if paths.is_empty() {
        return Err(Failure::Data(format!("no run_*/summary.json under {}", dir.display())));
    }
    let runs = paths.iter().map(|p| load_summary(p)).collect::<Result<Vec<_>, _>>()?;
    let table = aggregate_runs(&runs).map_err(Failure::Data)?;
    write_aggregate(dir, &table)?;
    print!("{}", table.to_csv());
    Ok(())
}

fn check(harness: Harness, iterations: usize, a: f64, seed: u64, alpha: f64) -> Result<(), Failure> {
    let mut rng = RngStream::new(seed).at(0, 0, 0, Role::Harness);
    let hmc = HmcConfig { leapfrog_steps: 10, step_size: 0.1, ..Default::default() };
    let prior = SvPrior::default();
    let sv = SvGeweke { prior, horizon: 10 };
    let factor = FactorGeweke { prior, series: 2, factors: 1, horizon: 8 };
    let verdict: HarnessVerdict = match harness {
        Harness::Toy => {
            let model = ToyModel::new(vec![0.4, -1.1, 0.9]);
            let kernel = ToyPgKernel { particles: 2, broken: false };
            enumeration_harness(&model, &kernel, &model.cells(), a, iterations, &mut rng)
        }
        Harness::SvPg => geweke_harness(&sv, &SvPgKernel { particles: 10 }, a, iterations, 1, 20, &mut rng),
        Harness::SvHmc => geweke_harness(&sv, &SvHmcKernel::new(hmc), a, iterations, 1, 20, &mut rng),
        Harness::FactorPg => geweke_harness(&factor, &FactorPgKernel { particles: 10 }, a, iterations, 1, 20, &mut rng),
        Harness::FactorHmc => geweke_harness(&factor, &FactorHmcKernel::new(hmc), a, iterations, 1, 20, &mut rng),
    }
    .map_err(Failure::Config)?;
    for i in 0..verdict.names.len() {
        println!(
            "{:>16}  chi2 {:>9.3}  dof {:>3}  p {:.4}",
            verdict.names[i], verdict.statistics[i], verdict.dof[i], verdict.p_values[i]
        );
    }
    println!("combined p = {:.4}", verdict.combined_p_value);
    if verdict.passed(alpha) {
        println!("PASS at level {alpha}");
        Ok(())
    } else {
        Err(Failure::Harness(format!("invariance rejected at level {alpha}")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    let result = match cli.command {
        Command::Simulate { model, horizon, seed, mu, phi, tau2, series, factors, theta, out } => {
            simulate(model, horizon, seed, SvTheta::new(mu, phi, tau2), series, factors, theta, &out)
        }
        Command::Fit { config, overrides, data, mode, output } => fit(config, overrides, data, mode, output),
        Command::PfVariance { data, mode, theta, particles, replications, seed, temperature, sequential, out } => {
            pf_variance(&data, mode, &theta, &particles, replications, seed, temperature, sequential, out)
        }
        Command::Aggregate { dir } => aggregate(&dir),
        Command::Check { harness, iterations, temperature, seed, alpha } => check(harness, iterations, temperature, seed, alpha),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
