//! Posterior summaries of a single run and pooling across runs.

use serde::{Deserialize, Serialize};

use crate::ssm::{ModelInterface, ParticleCloud};
use crate::temper::{estimate_log_marginal_likelihood, TemperRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub parameter_names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub log_marginal_likelihood: f64,
    pub stages: usize,
}

/// Weighted posterior means and standard deviations of the flattened
/// parameters of the final cloud.
pub fn summarize_run<M: ModelInterface>(
    model: &M,
    cloud: &ParticleCloud<M::Theta, M::State>,
    record: &TemperRecord,
    seed: u64,
) -> RunSummary {
    let names = model.parameter_names();
    let w = cloud.weights();
    let flat: Vec<Vec<f64>> = cloud.thetas().map(|t| model.flatten_theta(t)).collect();
    let d = names.len();
    let mut means = vec![0.0; d];
    for (row, wi) in flat.iter().zip(&w) {
        for j in 0..d {
            means[j] += wi * row[j];
        }
    }
    let mut sds = vec![0.0; d];
    for (row, wi) in flat.iter().zip(&w) {
        for j in 0..d {
            sds[j] += wi * (row[j] - means[j]).powi(2);
        }
    }
    for v in sds.iter_mut() {
        *v = v.sqrt();
    }
    RunSummary {
        seed,
        parameter_names: names,
        means,
        sds,
        log_marginal_likelihood: estimate_log_marginal_likelihood(record).unwrap_or(f64::NAN),
        stages: record.stage_count(),
    }
}

/// Posterior mean of the model's state summary path.
pub fn state_mean<M: ModelInterface>(model: &M, cloud: &ParticleCloud<M::Theta, M::State>) -> Vec<f64> {
    let w = cloud.weights();
    let mut out: Vec<f64> = Vec::new();
    for (x, wi) in cloud.states().zip(&w) {
        let s = model.state_summary(x);
        if out.is_empty() {
            out = vec![0.0; s.len()];
        }
        for (o, v) in out.iter_mut().zip(&s) {
            *o += wi * v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub runs: usize,
    pub parameter_names: Vec<String>,
    /// Average of the per-run posterior means.
    pub pooled_means: Vec<f64>,
    /// Average of the per-run posterior standard deviations.
    pub pooled_sds: Vec<f64>,
    /// Between-run standard deviation of the posterior means.
    pub between_run_sds: Vec<f64>,
    pub mean_log_marginal_likelihood: f64,
    pub between_run_sd_log_marginal_likelihood: f64,
    pub mean_stages: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate_runs(runs: &[RunSummary]) -> Result<AggregateTable, String> {
    let first = runs.first().ok_or("no runs to aggregate")?;
    if runs.iter().any(|r| r.parameter_names != first.parameter_names) {
        return Err("runs have different parameter sets".into());
    }
    let d = first.parameter_names.len();
    let mut pooled_means = Vec::with_capacity(d);
    let mut pooled_sds = Vec::with_capacity(d);
    let mut between = Vec::with_capacity(d);
    for j in 0..d {
        let means: Vec<f64> = runs.iter().map(|r| r.means[j]).collect();
        let sds: Vec<f64> = runs.iter().map(|r| r.sds[j]).collect();
        let (m, b) = mean_sd(&means);
        pooled_means.push(m);
        between.push(b);
        pooled_sds.push(mean_sd(&sds).0);
    }
    let lz: Vec<f64> = runs.iter().map(|r| r.log_marginal_likelihood).collect();
    let (mean_lz, sd_lz) = mean_sd(&lz);
    let stages: Vec<f64> = runs.iter().map(|r| r.stages as f64).collect();
    Ok(AggregateTable {
        runs: runs.len(),
        parameter_names: first.parameter_names.clone(),
        pooled_means,
        pooled_sds,
        between_run_sds: between,
        mean_log_marginal_likelihood: mean_lz,
        between_run_sd_log_marginal_likelihood: sd_lz,
        mean_stages: mean_sd(&stages).0,
    })
}

impl AggregateTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,mean,posterior_sd,between_run_sd\n");
        for j in 0..self.parameter_names.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.parameter_names[j], self.pooled_means[j], self.pooled_sds[j], self.between_run_sds[j]
            ));
        }
        s.push_str(&format!(
            "log_marginal_likelihood,{},,{}\n",
            self.mean_log_marginal_likelihood, self.between_run_sd_log_marginal_likelihood
        ));
        s.push_str(&format!("stages,{},,\n", self.mean_stages));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seed: u64, m: f64, lz: f64) -> RunSummary {
        RunSummary {
            seed,
            parameter_names: vec!["a".into()],
            means: vec![m],
            sds: vec![0.1],
            log_marginal_likelihood: lz,
            stages: 10,
        }
    }

    #[test]
    fn single_run_passes_through() {
        let t = aggregate_runs(&[run(1, 0.5, -10.0)]).unwrap();
        assert_eq!(t.pooled_means, vec![0.5]);
        assert_eq!(t.mean_log_marginal_likelihood, -10.0);
        assert_eq!(t.between_run_sd_log_marginal_likelihood, 0.0);
    }

    #[test]
    fn identical_runs_have_zero_spread() {
        let t = aggregate_runs(&[run(1, 0.5, -10.0), run(2, 0.5, -10.0), run(3, 0.5, -10.0)]).unwrap();
        assert_eq!(t.between_run_sds, vec![0.0]);
        assert_eq!(t.between_run_sd_log_marginal_likelihood, 0.0);
    }
}
