//! Run configuration and multi-seed experiment orchestration.
//!
//! Each seed gets its own directory `run_<seed>` holding
//!
//! * `summary.json`: posterior means/sds, log evidence, stage count
//!   (deterministic given the configuration);
//! * `record.json`: the full temperature ladder and per-stage diagnostics;
//! * `timing.json`: wall-clock seconds (the only non-deterministic file);
//! * `draws.csv` and/or `draws.bin`: final parameter draws with weights;
//! * `state_mean.csv`: posterior mean of the summarised state path;
//! * `kde/<parameter>.csv`: density estimates of each parameter.
//!
//! An aborted run writes `error.json` (with the partial ladder) instead of
//! the summary. The experiment directory also receives `aggregate.json` and
//! `aggregate.csv` pooling all completed runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{aggregate_runs, kde_export, state_mean, summarize_run, AggregateTable, GridSpec, RunSummary};
use crate::error::{DataError, EngineError, ModelError};
use crate::exec::{map_indexed, Execution};
use crate::factor::{FactorHmcKernel, FactorPgKernel, FactorSvModel};
use crate::hmc::HmcConfig;
use crate::io::{write_binary, write_table, InputMode, Table};
use crate::rng::RngStream;
use crate::ssm::ModelInterface;
use crate::sv::{SvHmcKernel, SvModel, SvPgKernel, SvPrior};
use crate::temper::{run_aisil, EngineConfig, MoveKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Sv,
    Factor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Pg,
    Hmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DrawsFormat {
    #[default]
    Csv,
    Binary,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Number of factors `K` (factor model only).
    pub factors: usize,
    pub kernel: KernelKind,
    /// Cloud size `M`.
    pub particles: usize,
    /// Particles per conditional SMC sweep `N`.
    pub filter_particles: usize,
    /// Markov moves per stage `R`.
    pub repetitions: usize,
    /// Leapfrog steps `L`.
    pub leapfrog_steps: usize,
    pub ess_fraction: f64,
    pub step_size: f64,
    pub target_rate: f64,
    pub adaptation_gain: f64,
    pub grid_size: usize,
    pub max_stages: usize,
    /// Number of runs when `seeds` is empty; seeds are then
    /// `base_seed, base_seed + 1, ...`.
    pub runs: usize,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub data: Option<PathBuf>,
    pub mode: InputMode,
    pub output: PathBuf,
    pub draws_format: DrawsFormat,
    pub kde_points: usize,
    pub execution: Execution,
    pub prior: SvPrior,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Sv,
            factors: 1,
            kernel: KernelKind::Pg,
            particles: 560,
            filter_particles: 250,
            repetitions: 10,
            leapfrog_steps: 100,
            ess_fraction: 0.8,
            step_size: 0.1,
            target_rate: 0.65,
            adaptation_gain: 1.0,
            grid_size: 1000,
            max_stages: 10_000,
            runs: 10,
            base_seed: 1,
            seeds: Vec::new(),
            data: None,
            mode: InputMode::Returns,
            output: PathBuf::from("out"),
            draws_format: DrawsFormat::Csv,
            kde_points: 512,
            execution: Execution::Parallel,
            prior: SvPrior::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    /// Applies a `key=value` override; nested keys use dots
    /// (`prior.a0=20`). Values are parsed as TOML, falling back to a bare
    /// string.
    pub fn set(&mut self, assignment: &str) -> Result<(), String> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| format!("override '{assignment}' is not key=value"))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| e.to_string())?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_table_mut()
                .ok_or_else(|| format!("'{key}' does not name a configuration field"))?
                .entry(part.to_string())
                .or_insert(toml::Value::Table(toml::Table::new()));
        }
        *slot = value;
        *self = root.try_into().map_err(|e: toml::de::Error| format!("override '{assignment}': {e}"))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("particles", self.particles),
            ("filter_particles", self.filter_particles),
            ("repetitions", self.repetitions),
            ("leapfrog_steps", self.leapfrog_steps),
            ("grid_size", self.grid_size),
            ("max_stages", self.max_stages),
            ("kde_points", self.kde_points),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v < 1) {
            return Err(format!("{name} must be at least 1"));
        }
        if self.seeds.is_empty() && self.runs < 1 {
            return Err("runs must be at least 1".into());
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction < 1.0) {
            return Err("ess_fraction must lie in (0, 1)".into());
        }
        if self.particles < 2 {
            return Err("particles must be at least 2".into());
        }
        if self.model == ModelKind::Factor && self.factors < 1 {
            return Err("factors must be at least 1".into());
        }
        self.hmc().validate()?;
        self.prior.validate().map_err(|e| e.to_string())?;
        self.engine().validate(self.particles).map_err(|e| e.to_string())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.runs as u64).map(|i| self.base_seed + i).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            ess_fraction: self.ess_fraction,
            grid_size: self.grid_size,
            repetitions: self.repetitions,
            max_stages: self.max_stages,
            execution: self.execution,
        }
    }

    pub fn hmc(&self) -> HmcConfig {
        HmcConfig {
            leapfrog_steps: self.leapfrog_steps,
            step_size: self.step_size,
            target_rate: self.target_rate,
            gain: self.adaptation_gain,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("run with seed {seed} aborted: {source}")]
    Engine { seed: u64, source: EngineError },
    #[error("writing {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

impl From<ModelError> for ExperimentError {
    fn from(e: ModelError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

fn out_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Output { path: path.display().to_string(), source }
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(out_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialises");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub seconds: f64,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunOutcome>,
    pub aggregate: AggregateTable,
}

pub fn run_dir(output: &Path, seed: u64) -> PathBuf {
    output.join(format!("run_{seed}"))
}

/// Runs one seed and writes its artifacts into `dir`.
pub fn fit_one<M, K>(model: &M, mut kernel: K, config: &RunConfig, seed: u64, dir: &Path) -> Result<RunOutcome, ExperimentError>
where
    M: ModelInterface,
    K: MoveKernel<M>,
{
    fs::create_dir_all(dir).map_err(out_err(dir))?;
    let streams = RngStream::new(seed);
    let start = Instant::now();
    let result = run_aisil(model, &mut kernel, config.particles, &config.engine(), &streams, 0);
    let seconds = start.elapsed().as_secs_f64();
    let run = match result {
        Ok(run) => run,
        Err(e) => {
            #[derive(Serialize)]
            struct Failure<'a> {
                seed: u64,
                error: String,
                partial_record: Option<&'a crate::temper::TemperRecord>,
            }
            let failure = Failure { seed, error: e.to_string(), partial_record: e.partial_record() };
            write_text(&dir.join("error.json"), &to_json(&failure))?;
            return Err(ExperimentError::Engine { seed, source: e });
        }
    };
    let summary = summarize_run(model, &run.cloud, &run.record, seed);
    write_text(&dir.join("summary.json"), &to_json(&summary))?;
    write_text(&dir.join("record.json"), &run.record.to_json())?;
    write_text(&dir.join("timing.json"), &to_json(&serde_json::json!({ "seconds": seconds })))?;

    let names = model.parameter_names();
    let flat: Vec<Vec<f64>> = run.cloud.thetas().map(|t| model.flatten_theta(t)).collect();
    let mut columns: Vec<Vec<f64>> = (0..names.len()).map(|j| flat.iter().map(|r| r[j]).collect()).collect();
    columns.push(run.cloud.weights());
    let mut header = names.clone();
    header.push("weight".into());
    let draws = Table { names: header, columns };
    if matches!(config.draws_format, DrawsFormat::Csv | DrawsFormat::Both) {
        write_table(&dir.join("draws.csv"), &draws)?;
    }
    if matches!(config.draws_format, DrawsFormat::Binary | DrawsFormat::Both) {
        write_binary(&dir.join("draws.bin"), &draws)?;
    }
    let states = Table { names: vec!["state_mean".into()], columns: vec![state_mean(model, &run.cloud)] };
    write_table(&dir.join("state_mean.csv"), &states)?;

    let kde_dir = dir.join("kde");
    fs::create_dir_all(&kde_dir).map_err(out_err(&kde_dir))?;
    for (name, column) in names.iter().zip(&draws.columns) {
        let d = kde_export(column, GridSpec::Auto { points: config.kde_points });
        let t = Table { names: vec!["x".into(), "density".into()], columns: vec![d.x, d.density] };
        write_table(&kde_dir.join(format!("{name}.csv")), &t)?;
    }
    Ok(RunOutcome { summary, seconds, dir: dir.to_path_buf() })
}

fn fit_all<M, K>(model: &M, kernel: &K, config: &RunConfig) -> Result<Vec<RunOutcome>, ExperimentError>
where
    M: ModelInterface,
    K: MoveKernel<M> + Clone + Send + Sync,
{
    let seeds = config.seed_list();
    let results = map_indexed(seeds.len(), config.execution, |i| {
        let seed = seeds[i];
        fit_one(model, kernel.clone(), config, seed, &run_dir(&config.output, seed))
    });
    results.into_iter().collect()
}

/// Fits the configured model to `data` (one column per series) for every
/// seed and writes the artifacts under `config.output`.
pub fn run_experiment(config: &RunConfig, data: &Table) -> Result<ExperimentReport, ExperimentError> {
    config.validate().map_err(ExperimentError::Config)?;
    fs::create_dir_all(&config.output).map_err(out_err(&config.output))?;
    write_text(&config.output.join("config.toml"), &config.to_toml())?;
    let runs = match config.model {
        ModelKind::Sv => {
            if data.columns.len() != 1 {
                return Err(ExperimentError::Config(format!(
                    "the univariate model takes exactly one series, found {}",
                    data.columns.len()
                )));
            }
            let model = SvModel::new(data.columns[0].clone(), config.prior)?;
            match config.kernel {
                KernelKind::Pg => fit_all(&model, &SvPgKernel { particles: config.filter_particles }, config)?,
                KernelKind::Hmc => fit_all(&model, &SvHmcKernel::new(config.hmc()), config)?,
            }
        }
        ModelKind::Factor => {
            let model = FactorSvModel::new(data.columns.clone(), config.factors, config.prior)?;
            match config.kernel {
                KernelKind::Pg => fit_all(&model, &FactorPgKernel { particles: config.filter_particles }, config)?,
                KernelKind::Hmc => fit_all(&model, &FactorHmcKernel::new(config.hmc()), config)?,
            }
        }
    };
    let summaries: Vec<RunSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let aggregate = aggregate_runs(&summaries).map_err(ExperimentError::Config)?;
    write_aggregate(&config.output, &aggregate)?;
    Ok(ExperimentReport { runs, aggregate })
}

pub fn write_aggregate(dir: &Path, table: &AggregateTable) -> Result<(), ExperimentError> {
    write_text(&dir.join("aggregate.json"), &to_json(table))?;
    write_text(&dir.join("aggregate.csv"), &table.to_csv())
}

pub fn load_summary(path: &Path) -> Result<RunSummary, ExperimentError> {
    let text = fs::read_to_string(path).map_err(out_err(path))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Data(DataError::Malformed(format!("{}: {e}", path.display()))))
}

/// Finds `run_*/summary.json` under `dir`, sorted by path.
pub fn find_summaries(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(out_err(dir))? {
        let entry = entry.map_err(out_err(dir))?;
        let p = entry.path().join("summary.json");
        if entry.file_name().to_string_lossy().starts_with("run_") && p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
