//! Variance of the particle-filter log-likelihood estimate as a function of
//! the number of particles.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::exec::{map_indexed, Execution};
use crate::filter::bootstrap_log_likelihood;
use crate::rng::{Role, RngStream};
use crate::ssm::StateSpaceModel;

pub const MIN_REPLICATIONS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub particles: usize,
    pub replications: usize,
    /// Replications that ended with a degenerate filter; excluded below.
    pub failures: usize,
    pub mean_log_likelihood: f64,
    /// Unbiased sample variance of the log-likelihood estimates.
    pub variance: f64,
    /// Median wall-clock seconds per filter pass.
    pub median_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub temperature: f64,
    pub rows: Vec<VarianceRow>,
}

impl VarianceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("particles,replications,failures,mean_log_likelihood,variance,median_seconds\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.particles, r.replications, r.failures, r.mean_log_likelihood, r.variance, r.median_seconds
            ));
        }
        s
    }
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs the bootstrap filter `reps` times for each particle count. Replication
/// `r` at count `N` draws from stream `(run, r, N, Harness)`.
pub fn pf_variance_harness<S: StateSpaceModel>(
    model: &S,
    particle_counts: &[usize],
    reps: usize,
    a: f64,
    streams: &RngStream,
    run: u64,
    execution: Execution,
) -> Result<VarianceReport, String> {
    if reps < MIN_REPLICATIONS {
        return Err(format!("at least {MIN_REPLICATIONS} replications are required, got {reps}"));
    }
    let mut rows = Vec::with_capacity(particle_counts.len());
    for &n in particle_counts {
        let results = map_indexed(reps, execution, |r| {
            let mut rng = streams.at(run, r as u64, n as u64, Role::Harness);
            let start = Instant::now();
            let ll = bootstrap_log_likelihood(model, n, a, &mut rng);
            (ll, start.elapsed().as_secs_f64())
        });
        let ok: Vec<f64> = results.iter().filter_map(|(ll, _)| ll.as_ref().ok().copied()).collect();
        let times: Vec<f64> = results.iter().map(|(_, t)| *t).collect();
        rows.push(VarianceRow {
            particles: n,
            replications: reps,
            failures: reps - ok.len(),
            mean_log_likelihood: ok.iter().sum::<f64>() / ok.len() as f64,
            variance: sample_variance(&ok),
            median_seconds: median(&times),
        });
    }
    Ok(VarianceReport { temperature: a, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    struct Constant;
    impl StateSpaceModel for Constant {
        type Particle = f64;
        fn horizon(&self) -> usize {
            4
        }
        fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
            rng.random()
        }
        fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, _p: &f64, rng: &mut R) -> f64 {
            rng.random()
        }
        fn initial_logdensity(&self, _x: &f64) -> f64 {
            0.0
        }
        fn transition_logdensity(&self, _t: usize, _p: &f64, _x: &f64) -> f64 {
            0.0
        }
        fn observation_logdensity(&self, _t: usize, _x: &f64) -> f64 {
            -1.25
        }
    }

    #[test]
    fn constant_likelihood_has_zero_variance() {
        let rep = pf_variance_harness(&Constant, &[10, 50], 30, 1.0, &RngStream::new(1), 0, Execution::Sequential).unwrap();
        for r in rep.rows {
            assert_eq!(r.variance, 0.0);
            assert_eq!(r.failures, 0);
        }
    }

    #[test]
    fn too_few_replications() {
        assert!(pf_variance_harness(&Constant, &[10], 5, 1.0, &RngStream::new(1), 0, Execution::Sequential).is_err());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
