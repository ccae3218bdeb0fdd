//! Checks that a move kernel leaves its tempered target invariant.
//!
//! Two harnesses are provided. [`enumeration_harness`] works on models whose
//! joint `(theta, x)` space is finite: it starts each replicate from an exact
//! draw of the tempered target, applies the kernel once and compares the
//! landing cells with the target probabilities by a chi-square test.
//! [`geweke_harness`] handles continuous models at `a = 0` and `a = 1`, where
//! exact joint draws are available from the prior (and, at `a = 1`, by
//! simulating the data): after the kernel, the parameters and states must
//! still be distributed as the prior, which is checked through probability
//! integral transforms.

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma_ur;

use crate::error::{FilterError, ModelError};
use crate::factor::{free_loadings, FactorState, FactorSvModel, FactorTheta};
use crate::filter::csmc_backward;
use crate::rng::StreamRng;
use crate::simulate::{factor_observations, sv_observations};
use crate::ssm::{log_tempered_target, ModelInterface, StateSpaceModel};
use crate::stats::{normal_logpdf, exp_weights, std_normal_cdf};
use crate::sv::{SvModel, SvPrior, SvTheta};
use crate::temper::{MoveKernel, MoveStats};

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessVerdict {
    pub names: Vec<String>,
    pub statistics: Vec<f64>,
    pub dof: Vec<usize>,
    pub p_values: Vec<f64>,
    /// Bonferroni-adjusted minimum p-value.
    pub combined_p_value: f64,
}

impl HarnessVerdict {
    fn from_tests(tests: Vec<(String, f64, usize)>) -> Self {
        let mut v = HarnessVerdict { names: vec![], statistics: vec![], dof: vec![], p_values: vec![], combined_p_value: 1.0 };
        for (name, stat, dof) in tests {
            let p = ChiSquared::new(dof as f64).map(|d| d.sf(stat)).unwrap_or(f64::NAN);
            v.names.push(name);
            v.statistics.push(stat);
            v.dof.push(dof);
            v.p_values.push(p);
        }
        let min_p = v.p_values.iter().cloned().fold(1.0, f64::min);
        v.combined_p_value = (min_p * v.p_values.len() as f64).min(1.0);
        v
    }

    pub fn passed(&self, alpha: f64) -> bool {
        self.combined_p_value > alpha
    }
}

fn pearson(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

/// Leaves the draw untouched. Useful as a control.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityKernel;

impl<M: ModelInterface> MoveKernel<M> for IdentityKernel {
    fn counter_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn apply(&self, _model: &M, _theta: &mut M::Theta, _x: &mut M::State, _a: f64, _rng: &mut StreamRng) -> Result<MoveStats, FilterError> {
        Ok(MoveStats::new(0))
    }
}

/// Applies `kernel` once to `iterations` exact draws from the tempered
/// target restricted to `cells` (which must cover its support) and tests
/// the landing frequencies. Cells with zero target mass are not allowed.
pub fn enumeration_harness<M, K>(
    model: &M,
    kernel: &K,
    cells: &[(M::Theta, M::State)],
    a: f64,
    iterations: usize,
    rng: &mut StreamRng,
) -> Result<HarnessVerdict, String>
where
    M: ModelInterface,
    M::Theta: PartialEq,
    M::State: PartialEq,
    K: MoveKernel<M>,
{
    if cells.len() < 2 {
        return Err("need at least two cells".into());
    }
    let log_p: Vec<f64> = cells.iter().map(|(th, x)| log_tempered_target(model, th, x, a)).collect();
    if log_p.iter().any(|v| !v.is_finite()) {
        return Err("every cell must have positive target mass".into());
    }
    let mut probs = Vec::new();
    exp_weights(&log_p, &mut probs);
    let mut cdf = probs.clone();
    for i in 1..cdf.len() {
        cdf[i] += cdf[i - 1];
    }
    let mut counts = vec![0u64; cells.len()];
    for _ in 0..iterations {
        let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        let start = cdf.partition_point(|&c| c <= u).min(cells.len() - 1);
        let (mut th, mut x) = cells[start].clone();
        kernel.apply(model, &mut th, &mut x, a, rng).map_err(|e| e.to_string())?;
        let end = cells.iter().position(|(t, s)| *t == th && *s == x).ok_or("kernel left the enumerated support")?;
        counts[end] += 1;
    }
    Ok(HarnessVerdict::from_tests(vec![("cells".into(), pearson(&counts, &probs), cells.len() - 1)]))
}

/// Two-state hidden Markov model whose static parameter picks one of two
/// stay probabilities. Observations are Gaussian around a state mean.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub stay: [f64; 2],
    pub prior: [f64; 2],
    pub means: [f64; 2],
    pub obs_var: f64,
    pub y: Vec<f64>,
}

impl ToyModel {
    pub fn new(y: Vec<f64>) -> Self {
        Self { stay: [0.85, 0.35], prior: [0.6, 0.4], means: [-1.0, 1.0], obs_var: 1.0, y }
    }

    /// Every `(theta, x)` pair.
    pub fn cells(&self) -> Vec<(usize, Vec<usize>)> {
        let t = self.y.len();
        let mut out = Vec::with_capacity(2usize << t);
        for th in 0..2 {
            for code in 0..(1usize << t) {
                out.push((th, (0..t).map(|i| (code >> i) & 1).collect()));
            }
        }
        out
    }

    pub fn series(&self, theta: usize) -> ToySeries<'_> {
        ToySeries { model: self, stay: self.stay[theta] }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ToySeries<'a> {
    model: &'a ToyModel,
    stay: f64,
}

impl StateSpaceModel for ToySeries<'_> {
    type Particle = usize;

    fn horizon(&self) -> usize {
        self.model.y.len()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_bool(0.5) as usize
    }

    fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, prev: &usize, rng: &mut R) -> usize {
        if rng.random::<f64>() < self.stay { *prev } else { 1 - prev }
    }

    fn initial_logdensity(&self, _x: &usize) -> f64 {
        0.5f64.ln()
    }

    fn transition_logdensity(&self, _t: usize, prev: &usize, x: &usize) -> f64 {
        if prev == x { self.stay.ln() } else { (1.0 - self.stay).ln() }
    }

    fn observation_logdensity(&self, t: usize, x: &usize) -> f64 {
        normal_logpdf(self.model.y[t], self.model.means[*x], self.model.obs_var)
    }
}

impl ModelInterface for ToyModel {
    type Theta = usize;
    type State = Vec<usize>;

    fn log_prior(&self, theta: &usize) -> f64 {
        self.prior.get(*theta).map_or(f64::NEG_INFINITY, |p| p.ln())
    }

    fn log_state_density(&self, theta: &usize, x: &Vec<usize>) -> f64 {
        let s = self.series(*theta);
        let mut ld = s.initial_logdensity(&x[0]);
        for t in 1..x.len() {
            ld += s.transition_logdensity(t, &x[t - 1], &x[t]);
        }
        ld
    }

    fn log_likelihood(&self, theta: &usize, x: &Vec<usize>) -> f64 {
        let s = self.series(*theta);
        x.iter().enumerate().map(|(t, v)| s.observation_logdensity(t, v)).sum()
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Result<usize, ModelError> {
        Ok((rng.random::<f64>() >= self.prior[0]) as usize)
    }

    fn sample_state(&self, theta: &usize, rng: &mut StreamRng) -> Vec<usize> {
        let s = self.series(*theta);
        let mut x = vec![s.sample_initial(rng)];
        for t in 1..self.y.len() {
            let prev = x[t - 1];
            x.push(s.sample_transition(t, &prev, rng));
        }
        x
    }

    fn parameter_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn flatten_theta(&self, theta: &usize) -> Vec<f64> {
        vec![*theta as f64]
    }

    fn state_summary(&self, x: &Vec<usize>) -> Vec<f64> {
        x.iter().map(|&v| v as f64).collect()
    }
}

/// Metropolis flip of the parameter, then conditional SMC with backward
/// simulation on the path. `broken` accepts every flip, which does not
/// preserve the target and must be caught by the harness.
#[derive(Debug, Clone)]
pub struct ToyPgKernel {
    pub particles: usize,
    pub broken: bool,
}

impl MoveKernel<ToyModel> for ToyPgKernel {
    fn counter_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn apply(&self, model: &ToyModel, theta: &mut usize, x: &mut Vec<usize>, a: f64, rng: &mut StreamRng) -> Result<MoveStats, FilterError> {
        let mut stats = MoveStats::new(1);
        let prop = 1 - *theta;
        let log_ratio = model.log_prior(&prop) + model.log_state_density(&prop, x)
            - model.log_prior(theta)
            - model.log_state_density(theta, x);
        let u: f64 = rng.random();
        let accept = self.broken || u.ln() < log_ratio;
        if accept {
            *theta = prop;
        }
        stats.record(0, accept);
        *x = csmc_backward(&model.series(*theta), self.particles, a, x, rng)?.states;
        Ok(stats)
    }
}

/// A model family for which joint draws of `(theta, x)` and, at `a = 1`,
/// data can be simulated exactly, with probability integral transforms of
/// selected coordinates under the prior.
pub trait GewekeModel {
    type Model: ModelInterface;

    fn pit_names(&self) -> Vec<String>;

    /// Draws `theta ~ p(theta)`, `x ~ p(x | theta)`; at `a = 1` also
    /// `y ~ p(y | theta, x)` and returns the model conditioned on it.
    #[allow(clippy::type_complexity)]
    fn draw_joint(
        &self,
        a: f64,
        rng: &mut StreamRng,
    ) -> Result<(Self::Model, <Self::Model as ModelInterface>::Theta, <Self::Model as ModelInterface>::State), String>;

    fn pits(&self, theta: &<Self::Model as ModelInterface>::Theta, x: &<Self::Model as ModelInterface>::State) -> Vec<f64>;
}

/// Applies `sweeps` kernel transitions to each of `iterations` joint draws
/// and tests every transform for uniformity with `bins` equal bins.
pub fn geweke_harness<G, K>(
    family: &G,
    kernel: &K,
    a: f64,
    iterations: usize,
    sweeps: usize,
    bins: usize,
    rng: &mut StreamRng,
) -> Result<HarnessVerdict, String>
where
    G: GewekeModel,
    K: MoveKernel<G::Model>,
{
    if a != 0.0 && a != 1.0 {
        return Err("exact joint draws are only available at a = 0 and a = 1".into());
    }
    if bins < 2 {
        return Err("need at least two bins".into());
    }
    let names = family.pit_names();
    let mut counts = vec![vec![0u64; bins]; names.len()];
    for _ in 0..iterations {
        let (model, mut theta, mut x) = family.draw_joint(a, rng)?;
        for _ in 0..sweeps {
            kernel.apply(&model, &mut theta, &mut x, a, rng).map_err(|e| e.to_string())?;
        }
        let pits = family.pits(&theta, &x);
        for (c, u) in counts.iter_mut().zip(pits) {
            let b = ((u * bins as f64) as usize).min(bins - 1);
            c[b] += 1;
        }
    }
    let probs = vec![1.0 / bins as f64; bins];
    let tests = names.into_iter().zip(&counts).map(|(n, c)| (n, pearson(c, &probs), bins - 1)).collect();
    Ok(HarnessVerdict::from_tests(tests))
}

fn pit_mu(prior: &SvPrior, mu: f64) -> f64 {
    (mu - prior.mu_low) / (prior.mu_high - prior.mu_low)
}

fn pit_phi(prior: &SvPrior, phi: f64) -> f64 {
    beta_reg(prior.a0, prior.b0, (0.5 * (phi + 1.0)).clamp(0.0, 1.0))
}

fn pit_tau2(prior: &SvPrior, tau2: f64) -> f64 {
    gamma_ur(0.5 * prior.v0, 0.5 * prior.s0 / tau2)
}

/// PITs of the first and last points of a stationary AR(1) path.
fn pit_path(x: &[f64], mu: f64, phi: f64, tau2: f64) -> [f64; 2] {
    let first = std_normal_cdf((x[0] - mu) / (tau2 / (1.0 - phi * phi)).sqrt());
    let t = x.len() - 1;
    let last = std_normal_cdf((x[t] - mu - phi * (x[t - 1] - mu)) / tau2.sqrt());
    [first, last]
}

#[derive(Debug, Clone)]
pub struct SvGeweke {
    pub prior: SvPrior,
    pub horizon: usize,
}

impl GewekeModel for SvGeweke {
    type Model = SvModel;

    fn pit_names(&self) -> Vec<String> {
        ["mu", "phi", "tau2", "x_first", "x_last"].iter().map(|s| s.to_string()).collect()
    }

    fn draw_joint(&self, a: f64, rng: &mut StreamRng) -> Result<(SvModel, SvTheta, Vec<f64>), String> {
        let placeholder = SvModel::new(vec![0.0; self.horizon], self.prior).map_err(|e| e.to_string())?;
        let theta = placeholder.sample_prior(rng).map_err(|e| e.to_string())?;
        let x = placeholder.sample_state(&theta, rng);
        if a == 0.0 {
            return Ok((placeholder, theta, x));
        }
        let y = sv_observations(&x, rng);
        let model = SvModel::new(y, self.prior).map_err(|e| e.to_string())?;
        Ok((model, theta, x))
    }

    fn pits(&self, theta: &SvTheta, x: &Vec<f64>) -> Vec<f64> {
        let p = &self.prior;
        let [first, last] = pit_path(x, theta.mu, theta.phi, theta.tau2);
        vec![pit_mu(p, theta.mu), pit_phi(p, theta.phi), pit_tau2(p, theta.tau2), first, last]
    }
}

#[derive(Debug, Clone)]
pub struct FactorGeweke {
    pub prior: SvPrior,
    pub series: usize,
    pub factors: usize,
    pub horizon: usize,
}

impl GewekeModel for FactorGeweke {
    type Model = FactorSvModel;

    fn pit_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for s in 0..self.series {
            for p in ["mu", "phi", "tau2", "h_first", "h_last"] {
                names.push(format!("{p}_{s}"));
            }
        }
        for k in 0..self.factors {
            for p in ["phi_f", "tau2_f", "lambda_first", "lambda_last", "f_first", "f_last"] {
                names.push(format!("{p}_{k}"));
            }
        }
        for s in 0..self.series {
            for k in 0..free_loadings(s, self.factors) {
                names.push(format!("beta_{s}_{k}"));
            }
        }
        names
    }

    fn draw_joint(&self, a: f64, rng: &mut StreamRng) -> Result<(FactorSvModel, FactorTheta, FactorState), String> {
        let y0 = vec![vec![0.0; self.horizon]; self.series];
        let placeholder = FactorSvModel::new(y0, self.factors, self.prior).map_err(|e| e.to_string())?;
        let theta = placeholder.sample_prior(rng).map_err(|e| e.to_string())?;
        let x = placeholder.sample_state(&theta, rng);
        if a == 0.0 {
            return Ok((placeholder, theta, x));
        }
        let y = factor_observations(&theta, &x, rng);
        let mut model = FactorSvModel::new(y, self.factors, self.prior).map_err(|e| e.to_string())?;
        model.beta_prior_var = placeholder.beta_prior_var;
        Ok((model, theta, x))
    }

    fn pits(&self, theta: &FactorTheta, x: &FactorState) -> Vec<f64> {
        let p = &self.prior;
        let mut out = Vec::new();
        for (th, h) in theta.idio.iter().zip(&x.h) {
            let [first, last] = pit_path(h, th.mu, th.phi, th.tau2);
            out.extend([pit_mu(p, th.mu), pit_phi(p, th.phi), pit_tau2(p, th.tau2), first, last]);
        }
        for (k, th) in theta.factor.iter().enumerate() {
            let l = &x.lambda[k];
            let f = &x.f[k];
            let [first, last] = pit_path(l, 0.0, th.phi, th.tau2);
            let t = f.len() - 1;
            out.extend([
                pit_phi(p, th.phi),
                pit_tau2(p, th.tau2),
                first,
                last,
                std_normal_cdf(f[0] / (0.5 * l[0]).exp()),
                std_normal_cdf(f[t] / (0.5 * l[t]).exp()),
            ]);
        }
        for s in 0..self.series {
            for k in 0..free_loadings(s, self.factors) {
                out.push(std_normal_cdf(theta.loading(s, k)));
            }
        }
        out
    }
}
