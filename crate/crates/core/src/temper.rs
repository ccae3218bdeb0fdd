//! The density-tempering loop.
//!
//! Each stage picks the next temperature from the effective sample size,
//! reweights by the likelihood increment, resamples systematically and then
//! applies `R` sweeps of a Markov kernel that leaves the new tempered target
//! invariant. The log normalising-constant increments accumulate into an
//! estimate of `log p(y)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::{EngineError, FilterError};
use crate::exec::{map_mut, Execution};
use crate::filter::resample_indices;
use crate::rng::{Role, RngStream, StreamRng};
use crate::ssm::{init_cloud, ModelInterface, Particle, ParticleCloud};
use crate::stats::{exp_weights, log_sum_exp};

/// Temperature increments smaller than this count toward the collapse guard.
pub const INCREMENT_FLOOR: f64 = 1e-8;
/// Consecutive sub-floor increments tolerated before aborting.
pub const INCREMENT_FLOOR_COUNT: usize = 5;
/// Maximum nested grid refinements in the temperature search.
const MAX_REFINEMENTS: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Target ESS as a fraction of the cloud size.
    pub ess_fraction: f64,
    pub grid_size: usize,
    pub repetitions: usize,
    pub max_stages: usize,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { ess_fraction: 0.8, grid_size: 1000, repetitions: 10, max_stages: 10_000, execution: Execution::Parallel }
    }
}

impl EngineConfig {
    pub fn ess_target(&self, m: usize) -> f64 {
        self.ess_fraction * m as f64
    }

    pub fn validate(&self, m: usize) -> Result<(), EngineError> {
        let target = self.ess_target(m);
        if !(target > 1.0 && target <= m as f64) {
            return Err(EngineError::Config(format!(
                "ESS target {target} must lie in (1, {m}]"
            )));
        }
        if self.grid_size < 2 {
            return Err(EngineError::Config("grid size must be at least 2".into()));
        }
        if self.repetitions < 1 {
            return Err(EngineError::Config("at least one Markov move per stage is required".into()));
        }
        if self.max_stages < 1 {
            return Err(EngineError::Config("max_stages must be positive".into()));
        }
        Ok(())
    }
}

/// Acceptance counters accumulated by a kernel, one slot per named counter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub accepted: Vec<u64>,
    pub attempted: Vec<u64>,
    pub divergent: u64,
}

impl MoveStats {
    pub fn new(counters: usize) -> Self {
        Self { accepted: vec![0; counters], attempted: vec![0; counters], divergent: 0 }
    }

    pub fn record(&mut self, counter: usize, accepted: bool) {
        self.attempted[counter] += 1;
        if accepted {
            self.accepted[counter] += 1;
        }
    }

    pub fn merge(&mut self, other: &MoveStats) {
        if self.accepted.len() < other.accepted.len() {
            self.accepted.resize(other.accepted.len(), 0);
            self.attempted.resize(other.attempted.len(), 0);
        }
        for (i, (&a, &n)) in other.accepted.iter().zip(&other.attempted).enumerate() {
            self.accepted[i] += a;
            self.attempted[i] += n;
        }
        self.divergent += other.divergent;
    }

    pub fn rate(&self, counter: usize) -> Option<f64> {
        let n = self.attempted[counter];
        (n > 0).then(|| self.accepted[counter] as f64 / n as f64)
    }

    pub fn rates(&self) -> Vec<Option<f64>> {
        (0..self.attempted.len()).map(|i| self.rate(i)).collect()
    }
}

/// A Markov kernel leaving `p(y | theta, x)^a p(x | theta) p(theta)` invariant.
///
/// `apply` must be a pure function of its inputs and the supplied RNG; tuning
/// state lives in `self` and is only changed at stage barriers through
/// `end_stage`.
pub trait MoveKernel<M: ModelInterface>: Sync {
    fn counter_names(&self) -> Vec<String>;

    fn apply(
        &self,
        model: &M,
        theta: &mut M::Theta,
        state: &mut M::State,
        a: f64,
        rng: &mut StreamRng,
    ) -> Result<MoveStats, FilterError>;

    /// Called once per stage with the cloud-wide counters.
    fn end_stage(&mut self, _stage: usize, _stats: &MoveStats) {}

    /// Current tuning values (for example step sizes) for telemetry.
    fn tuning(&self) -> Vec<(String, f64)> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageRecord {
    pub index: usize,
    pub temperature: f64,
    /// ESS of the reweighted cloud, before resampling.
    pub ess_before_resample: f64,
    pub ess_after_resample: f64,
    /// Largest ESS change between the chosen grid point and its neighbours.
    pub ess_tolerance: f64,
    pub terminal: bool,
    pub refinements: usize,
    pub log_z_increment: f64,
    pub acceptance: Vec<Option<f64>>,
    pub divergent: u64,
    pub tuning: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TemperRecord {
    pub cloud_size: usize,
    pub ess_target: f64,
    pub ladder: Vec<f64>,
    pub stages: Vec<StageRecord>,
    pub counter_names: Vec<String>,
    pub tuning_names: Vec<String>,
    pub complete: bool,
}

impl TemperRecord {
    fn new(cloud_size: usize, ess_target: f64, counter_names: Vec<String>, tuning_names: Vec<String>) -> Self {
        Self { cloud_size, ess_target, ladder: vec![0.0], stages: Vec::new(), counter_names, tuning_names, complete: false }
    }

    /// Number of stages `P`.
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serialises")
    }
}

/// Sum of the per-stage log normalising-constant increments.
pub fn estimate_log_marginal_likelihood(record: &TemperRecord) -> Result<f64, EngineError> {
    let last = record.ladder.last().copied().unwrap_or(0.0);
    if !record.complete || last != 1.0 {
        return Err(EngineError::IncompleteRecord { last });
    }
    Ok(record.stages.iter().map(|s| s.log_z_increment).sum())
}

/// `1 / sum W_i^2` for normalised weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// ESS of normalised log-weights.
pub fn ess_from_log(log_w: &[f64]) -> f64 {
    let mut w = Vec::with_capacity(log_w.len());
    exp_weights(log_w, &mut w);
    ess(&w)
}

/// ESS after multiplying normalised weights by `exp(delta * ll)`.
pub fn ess_after_increment(log_w: &[f64], log_lik: &[f64], delta: f64) -> f64 {
    let mut one = Vec::with_capacity(log_w.len());
    let mut two = Vec::with_capacity(log_w.len());
    for (&w, &l) in log_w.iter().zip(log_lik) {
        let v = w + delta * l;
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        one.push(v);
        two.push(2.0 * v);
    }
    let l1 = log_sum_exp(&one);
    if l1 == f64::NEG_INFINITY {
        return 0.0;
    }
    (2.0 * l1 - log_sum_exp(&two)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureChoice {
    pub temperature: f64,
    pub ess: f64,
    pub ess_tolerance: f64,
    pub terminal: bool,
    pub refinements: usize,
}

/// Grid search for the next temperature.
///
/// Returns exactly 1 when the ESS at `a = 1` reaches the target. Otherwise
/// `grid_size` equally spaced candidates in `(a_prev, hi]` are scored by
/// `|ESS - target|` (ties go to the larger temperature). When the first
/// candidate already falls below the target, the search recurses into
/// `(a_prev, a_prev + step]` instead, so the chosen increment can be
/// arbitrarily small when the likelihood is very informative.
pub fn find_next_temperature(
    log_w: &[f64],
    log_lik: &[f64],
    a_prev: f64,
    ess_target: f64,
    grid_size: usize,
) -> TemperatureChoice {
    assert!((0.0..1.0).contains(&a_prev), "previous temperature {a_prev} outside [0, 1)");
    let at = |a: f64| ess_after_increment(log_w, log_lik, a - a_prev);
    let ess_one = at(1.0);
    if ess_one >= ess_target {
        return TemperatureChoice { temperature: 1.0, ess: ess_one, ess_tolerance: 0.0, terminal: true, refinements: 0 };
    }
    let ess_prev = at(a_prev);
    let mut hi = 1.0;
    let mut depth = 0;
    let g = grid_size;
    let mut values = vec![0.0; g + 1];
    loop {
        let step = (hi - a_prev) / g as f64;
        let point = |k: usize| if k == g { hi } else { a_prev + k as f64 * step };
        values[0] = ess_prev;
        let mut best = 1;
        let mut best_gap = f64::INFINITY;
        for k in 1..=g {
            values[k] = at(point(k));
            let gap = (values[k] - ess_target).abs();
            if gap <= best_gap {
                best_gap = gap;
                best = k;
            }
        }
        let can_refine = depth < MAX_REFINEMENTS && a_prev + step / g as f64 > a_prev && point(1) < hi;
        if values[1] < ess_target && can_refine {
            hi = point(1);
            depth += 1;
            continue;
        }
        let left = (values[best] - values[best - 1]).abs();
        let right = if best < g { (values[best + 1] - values[best]).abs() } else { 0.0 };
        return TemperatureChoice {
            temperature: point(best),
            ess: values[best],
            ess_tolerance: left.max(right),
            terminal: false,
            refinements: depth,
        };
    }
}

/// `log w_i <- log W_i + delta * ll_i`, then renormalise. Returns the log of
/// `sum_i W_i exp(delta * ll_i)`, the normalising-constant ratio estimate.
/// The slice is left unchanged when every new weight is zero.
pub fn reweight_log_weights(log_w: &mut [f64], log_lik: &[f64], delta: f64) -> f64 {
    let mut updated: Vec<f64> = log_w
        .iter()
        .zip(log_lik)
        .map(|(&w, &l)| {
            let v = w + delta * l;
            if v.is_nan() { f64::NEG_INFINITY } else { v }
        })
        .collect();
    let lse = log_sum_exp(&updated);
    if lse.is_finite() {
        for v in updated.iter_mut() {
            *v -= lse;
        }
        log_w.copy_from_slice(&updated);
    }
    lse
}

/// Reweights the cloud from `a_prev` to `a_new`.
pub fn reweight<Th, St>(cloud: &mut ParticleCloud<Th, St>, a_new: f64, a_prev: f64) -> f64 {
    let ll = cloud.log_likelihoods();
    let inc = reweight_log_weights(&mut cloud.log_weights, &ll, a_new - a_prev);
    cloud.normalized = inc.is_finite();
    inc
}

/// Systematic resampling of `(theta, x)` pairs; weights reset to `1/M`.
pub fn resample_cloud<Th: Clone, St: Clone, R: Rng + ?Sized>(cloud: &mut ParticleCloud<Th, St>, rng: &mut R) {
    let w = cloud.weights();
    let idx = resample_indices(&w, rng.random());
    let m = cloud.len();
    let particles: Vec<Particle<Th, St>> = idx.iter().map(|&i| cloud.particles[i].clone()).collect();
    cloud.particles = particles;
    cloud.log_weights = vec![-(m as f64).ln(); m];
    cloud.normalized = true;
}

#[derive(Debug, Clone)]
pub struct AisilRun<Th, St> {
    pub cloud: ParticleCloud<Th, St>,
    pub record: TemperRecord,
}

impl<Th, St> AisilRun<Th, St> {
    pub fn log_marginal_likelihood(&self) -> f64 {
        estimate_log_marginal_likelihood(&self.record).expect("completed run")
    }
}

/// Runs the tempering loop from the prior to the posterior.
///
/// Random streams: the initial cloud uses `(run, i, 0, Init)`, stage `p`
/// resampling uses `(run, 0, p, Resample)` and the moves of particle `i` at
/// stage `p` use `(run, i, p, Move)`. Results therefore do not depend on the
/// execution mode.
pub fn run_aisil<M, K>(
    model: &M,
    kernel: &mut K,
    m: usize,
    config: &EngineConfig,
    streams: &RngStream,
    run: u64,
) -> Result<AisilRun<M::Theta, M::State>, EngineError>
where
    M: ModelInterface,
    K: MoveKernel<M>,
{
    config.validate(m)?;
    let ess_target = config.ess_target(m);
    let mut cloud = init_cloud(model, m, streams, run, config.execution)?;
    let tuning_names = kernel.tuning().into_iter().map(|(n, _)| n).collect();
    let mut record = TemperRecord::new(m, ess_target, kernel.counter_names(), tuning_names);
    let mut a = 0.0;
    let mut small_steps = 0;
    let mut stage = 0;
    while a < 1.0 {
        stage += 1;
        if stage > config.max_stages {
            return Err(EngineError::StageGuard { stages: config.max_stages, temperature: a, record: Box::new(record) });
        }
        let ll = cloud.log_likelihoods();
        let choice = find_next_temperature(&cloud.log_weights, &ll, a, ess_target, config.grid_size);
        let a_new = choice.temperature;
        let log_z_increment = reweight(&mut cloud, a_new, a);
        if !log_z_increment.is_finite() {
            return Err(EngineError::DegenerateCloud { stage, record: Box::new(record) });
        }
        let ess_before = ess_from_log(&cloud.log_weights);
        let mut rng = streams.at(run, 0, stage as u64, Role::Resample);
        resample_cloud(&mut cloud, &mut rng);
        let ess_after = ess_from_log(&cloud.log_weights);

        let reps = config.repetitions;
        let outcomes = map_mut(&mut cloud.particles, config.execution, |i, p| {
            let mut rng = streams.at(run, i as u64, stage as u64, Role::Move);
            let mut stats = MoveStats::new(0);
            for _ in 0..reps {
                stats.merge(&kernel.apply(model, &mut p.theta, &mut p.state, a_new, &mut rng)?);
            }
            p.log_likelihood = model.log_likelihood(&p.theta, &p.state);
            Ok(stats)
        });
        let mut stats = MoveStats::new(record.counter_names.len());
        for o in outcomes {
            match o {
                Ok(s) => stats.merge(&s),
                Err(source) => return Err(EngineError::Move { stage, source, record: Box::new(record) }),
            }
        }
        kernel.end_stage(stage, &stats);

        let acceptance = stats.rates();
        info!(
            stage,
            temperature = a_new,
            ess = ess_before,
            acceptance = ?acceptance,
            "tempering stage"
        );
        record.ladder.push(a_new);
        record.stages.push(StageRecord {
            index: stage,
            temperature: a_new,
            ess_before_resample: ess_before,
            ess_after_resample: ess_after,
            ess_tolerance: choice.ess_tolerance,
            terminal: choice.terminal,
            refinements: choice.refinements,
            log_z_increment,
            acceptance,
            divergent: stats.divergent,
            tuning: kernel.tuning().into_iter().map(|(_, v)| v).collect(),
        });

        if a_new - a < INCREMENT_FLOOR {
            small_steps += 1;
            if small_steps >= INCREMENT_FLOOR_COUNT {
                return Err(EngineError::IncrementCollapse {
                    stage,
                    floor: INCREMENT_FLOOR,
                    count: small_steps,
                    record: Box::new(record),
                });
            }
        } else {
            small_steps = 0;
        }
        a = a_new;
    }
    record.complete = true;
    Ok(AisilRun { cloud, record })
}
