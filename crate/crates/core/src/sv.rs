//! Univariate stochastic volatility model
//!
//! ```text
//! y_t     = exp(x_t / 2) eps_t
//! x_{t+1} = mu + phi (x_t - mu) + tau eta_t,   x_1 ~ N(mu, tau^2 / (1 - phi^2))
//! ```
//!
//! with `mu ~ U(-10, 10)`, `(phi + 1)/2 ~ Beta(a0, b0)` and
//! `tau^2 ~ IG(v0/2, s0/2)`. The AR(1) helpers take the level `mu`
//! explicitly so the zero-mean factor log-volatilities of [`crate::factor`]
//! reuse them.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, ModelError};
use crate::filter::csmc_backward;
use crate::hmc::{adapt_step_size, hmc_step, sv_mass_diagonal, HamiltonianTarget, HmcConfig};
use crate::rng::StreamRng;
use crate::ssm::{ModelInterface, StateSpaceModel};
use crate::stats::{
    beta_logpdf, inv_gamma_logpdf, normal_logpdf, sample_inv_gamma, sample_truncated_normal, std_normal, LN_2PI,
};
use crate::temper::{MoveKernel, MoveStats};

/// Scale of the reflected random-walk fallback for `phi`.
pub const PHI_FALLBACK_SCALE: f64 = 0.01;

/// Prior hyperparameters. The inverse gamma uses the shape/scale convention
/// `p(x) ∝ x^(-alpha-1) exp(-beta/x)` with `alpha = v0/2`, `beta = s0/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvPrior {
    pub mu_low: f64,
    pub mu_high: f64,
    pub a0: f64,
    pub b0: f64,
    pub v0: f64,
    pub s0: f64,
}

impl Default for SvPrior {
    fn default() -> Self {
        Self { mu_low: -10.0, mu_high: 10.0, a0: 100.0, b0: 1.5, v0: 10.0, s0: 0.5 }
    }
}

impl SvPrior {
    pub fn log_mu(&self, mu: f64) -> f64 {
        if mu > self.mu_low && mu < self.mu_high {
            -(self.mu_high - self.mu_low).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Density of `phi` induced by the Beta prior on `(phi + 1)/2`.
    pub fn log_phi(&self, phi: f64) -> f64 {
        beta_logpdf(0.5 * (phi + 1.0), self.a0, self.b0) - std::f64::consts::LN_2
    }

    pub fn log_tau2(&self, tau2: f64) -> f64 {
        inv_gamma_logpdf(tau2, 0.5 * self.v0, 0.5 * self.s0)
    }

    pub fn sample_mu<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.mu_low + (self.mu_high - self.mu_low) * rng.random::<f64>()
    }

    pub fn sample_phi<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, ModelError> {
        let beta = Beta::new(self.a0, self.b0).map_err(|e| ModelError::PriorSampling(e.to_string()))?;
        // keep strictly inside (-1, 1): Beta draws can round to 1
        let u: f64 = beta.sample(rng);
        Ok((2.0 * u - 1.0).clamp(-1.0f64.next_up(), 1.0f64.next_down()))
    }

    pub fn sample_tau2<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, ModelError> {
        if !(self.v0 > 0.0 && self.s0 > 0.0) {
            return Err(ModelError::PriorSampling("v0 and s0 must be positive".into()));
        }
        Ok(sample_inv_gamma(0.5 * self.v0, 0.5 * self.s0, rng))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.mu_low < self.mu_high) {
            return Err(ModelError::Config("mu prior bounds must be increasing".into()));
        }
        if !(self.a0 > 0.0 && self.b0 > 0.0 && self.v0 > 0.0 && self.s0 > 0.0) {
            return Err(ModelError::Config("prior hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvTheta {
    pub mu: f64,
    pub phi: f64,
    pub tau2: f64,
}

impl SvTheta {
    pub fn new(mu: f64, phi: f64, tau2: f64) -> Self {
        Self { mu, phi, tau2 }
    }

    pub fn in_support(&self, prior: &SvPrior) -> bool {
        self.mu > prior.mu_low && self.mu < prior.mu_high && self.phi > -1.0 && self.phi < 1.0 && self.tau2 > 0.0
    }
}

/// `log N(y; 0, exp(x))`.
#[inline]
pub fn sv_obs_logdensity(y: f64, x: f64) -> f64 {
    -0.5 * (LN_2PI + x + y * y * (-x).exp())
}

pub fn sv_log_likelihood(y: &[f64], x: &[f64]) -> f64 {
    y.iter().zip(x).map(|(&y, &x)| sv_obs_logdensity(y, x)).sum()
}

/// `log p(x | mu, phi, tau2)` for a stationary AR(1) path.
pub fn ar1_logdensity(x: &[f64], mu: f64, phi: f64, tau2: f64) -> f64 {
    let mut s = normal_logpdf(x[0], mu, tau2 / (1.0 - phi * phi));
    for t in 1..x.len() {
        s += normal_logpdf(x[t], mu + phi * (x[t - 1] - mu), tau2);
    }
    s
}

/// Simulates a stationary AR(1) path of length `horizon`.
pub fn sample_ar1<R: Rng + ?Sized>(mu: f64, phi: f64, tau2: f64, horizon: usize, rng: &mut R) -> Vec<f64> {
    let sd = tau2.sqrt();
    let mut x = Vec::with_capacity(horizon);
    x.push(mu + (tau2 / (1.0 - phi * phi)).sqrt() * std_normal(rng));
    for t in 1..horizon {
        let prev = x[t - 1];
        x.push(mu + phi * (prev - mu) + sd * std_normal(rng));
    }
    x
}

/// The individual log-density terms of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SvDensities {
    pub log_f1: f64,
    /// `log f_t(x_t | x_{t-1})` for `t = 2..T`.
    pub log_f: Vec<f64>,
    /// `a log g_t(y_t | x_t)`.
    pub log_g: Vec<f64>,
}

pub fn sv_densities(theta: &SvTheta, x: &[f64], y: &[f64], a: f64) -> SvDensities {
    let SvTheta { mu, phi, tau2 } = *theta;
    SvDensities {
        log_f1: normal_logpdf(x[0], mu, tau2 / (1.0 - phi * phi)),
        log_f: (1..x.len()).map(|t| normal_logpdf(x[t], mu + phi * (x[t - 1] - mu), tau2)).collect(),
        log_g: y.iter().zip(x).map(|(&y, &x)| if a == 0.0 { 0.0 } else { a * sv_obs_logdensity(y, x) }).collect(),
    }
}

/// `a log p(y | x) + log p(x | theta) + log p(theta)`.
pub fn sv_log_joint(theta: &SvTheta, x: &[f64], y: &[f64], a: f64, prior: &SvPrior) -> f64 {
    let lp = prior.log_mu(theta.mu) + prior.log_phi(theta.phi) + prior.log_tau2(theta.tau2);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    let d = sv_densities(theta, x, y, a);
    lp + d.log_f1 + d.log_f.iter().sum::<f64>() + d.log_g.iter().sum::<f64>()
}

/// Log-density (constants included) and gradient in `x`
/// of `a sum_t log N(y_t; 0, e^{x_t}) + log p(x | mu, phi, tau2)`.
pub fn ar1_sv_log_density_gradient(
    mu: f64,
    phi: f64,
    tau2: f64,
    x: &[f64],
    y: &[f64],
    a: f64,
    grad: &mut [f64],
) -> f64 {
    let n = x.len();
    let inv_tau2 = 1.0 / tau2;
    let d0 = x[0] - mu;
    let mut ld = -0.5 * (LN_2PI + (tau2 / (1.0 - phi * phi)).ln()) - 0.5 * (1.0 - phi * phi) * d0 * d0 * inv_tau2;
    grad[0] = -(1.0 - phi * phi) * d0 * inv_tau2;
    let trans_const = -0.5 * (LN_2PI + tau2.ln());
    let mut d_prev = d0;
    for t in 1..n {
        let d = x[t] - mu;
        let e = d - phi * d_prev;
        ld += trans_const - 0.5 * e * e * inv_tau2;
        grad[t] = -e * inv_tau2;
        grad[t - 1] += phi * e * inv_tau2;
        d_prev = d;
    }
    if a != 0.0 {
        for t in 0..n {
            let scaled = y[t] * y[t] * (-x[t]).exp();
            ld += a * (-0.5 * (LN_2PI + x[t] + scaled));
            grad[t] += a * (-0.5 + 0.5 * scaled);
        }
    }
    ld
}

/// Gradient of the tempered log-target in `x`.
pub fn sv_gradient(theta: &SvTheta, x: &[f64], y: &[f64], a: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    ar1_sv_log_density_gradient(theta.mu, theta.phi, theta.tau2, x, y, a, &mut g);
    g
}

/// HMC target over a log-volatility path with parameters and tempering fixed.
pub struct Ar1SvTarget<'a> {
    pub mu: f64,
    pub phi: f64,
    pub tau2: f64,
    pub y: &'a [f64],
    pub a: f64,
}

impl HamiltonianTarget for Ar1SvTarget<'_> {
    fn dim(&self) -> usize {
        self.y.len()
    }

    fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        ar1_sv_log_density_gradient(self.mu, self.phi, self.tau2, x, self.y, self.a, grad)
    }
}

/// Mean and variance of the (untruncated) normal full conditional of `mu`.
pub fn mu_conditional(x: &[f64], phi: f64, tau2: f64) -> (f64, f64) {
    let t_len = x.len() as f64;
    let var = tau2 / (1.0 - phi * phi + (t_len - 1.0) * (1.0 - phi) * (1.0 - phi));
    let mut s = x[0] * (1.0 - phi * phi);
    for t in 1..x.len() {
        s += x[t] - phi * x[t] + phi * phi * x[t - 1] - phi * x[t - 1];
    }
    (var * s / tau2, var)
}

/// Exact Gibbs draw of `mu` from its normal conditional truncated to the
/// prior support.
pub fn sample_mu<R: Rng + ?Sized>(x: &[f64], phi: f64, tau2: f64, prior: &SvPrior, rng: &mut R) -> f64 {
    let (mean, var) = mu_conditional(x, phi, tau2);
    sample_truncated_normal(mean, var.sqrt(), prior.mu_low, prior.mu_high, rng)
}

/// Mean and variance of the truncated-normal proposal for `phi`, or `None`
/// when the variance denominator `sum_{t=2}^{T} (x_{t-1} - mu)^2 - (x_1 - mu)^2`
/// is not positive.
pub fn phi_proposal(x: &[f64], mu: f64, tau2: f64) -> Option<(f64, f64)> {
    let n = x.len();
    let mut denom = 0.0;
    let mut cross = 0.0;
    for t in 1..n {
        let prev = x[t - 1] - mu;
        denom += prev * prev;
        cross += (x[t] - mu) * prev;
    }
    let d0 = x[0] - mu;
    denom -= d0 * d0;
    if !(denom > 0.0) || !denom.is_finite() {
        return None;
    }
    let var = tau2 / denom;
    Some((var * cross / tau2, var))
}

/// `log p(phi) + 0.5 log(1 - phi^2)`, the part of the conditional not covered
/// by the normal proposal.
pub fn phi_acceptance_log_factor(phi: f64, prior: &SvPrior) -> f64 {
    if phi <= -1.0 || phi >= 1.0 {
        return f64::NEG_INFINITY;
    }
    prior.log_phi(phi) + 0.5 * (1.0 - phi * phi).ln()
}

/// Log full conditional of `phi` up to a constant.
pub fn phi_log_conditional(x: &[f64], mu: f64, phi: f64, tau2: f64, prior: &SvPrior) -> f64 {
    if phi <= -1.0 || phi >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let d0 = x[0] - mu;
    let mut ss = (1.0 - phi * phi) * d0 * d0;
    for t in 1..x.len() {
        let e = (x[t] - mu) - phi * (x[t - 1] - mu);
        ss += e * e;
    }
    phi_acceptance_log_factor(phi, prior) - 0.5 * ss / tau2
}

fn reflect_unit(mut v: f64) -> f64 {
    while !(v > -1.0 && v < 1.0) {
        if v >= 1.0 {
            v = 2.0 - v;
        } else {
            v = -2.0 - v;
        }
    }
    v
}

/// Metropolis-Hastings update of `phi`. Returns the new value and whether the
/// proposal was accepted.
pub fn sample_phi<R: Rng + ?Sized>(x: &[f64], mu: f64, phi: f64, tau2: f64, prior: &SvPrior, rng: &mut R) -> (f64, bool) {
    let (proposal, log_ratio) = match phi_proposal(x, mu, tau2) {
        Some((mean, var)) => {
            let p = sample_truncated_normal(mean, var.sqrt(), -1.0, 1.0, rng);
            (p, phi_acceptance_log_factor(p, prior) - phi_acceptance_log_factor(phi, prior))
        }
        None => {
            let p = reflect_unit(phi + PHI_FALLBACK_SCALE * std_normal(rng));
            (p, phi_log_conditional(x, mu, p, tau2, prior) - phi_log_conditional(x, mu, phi, tau2, prior))
        }
    };
    let u: f64 = rng.random();
    if u.ln() < log_ratio {
        (proposal, true)
    } else {
        (phi, false)
    }
}

/// Shape and scale of the inverse-gamma conditional of `tau2`.
pub fn tau2_conditional(x: &[f64], mu: f64, phi: f64, prior: &SvPrior) -> (f64, f64) {
    let d0 = x[0] - mu;
    let mut s1 = prior.s0 + (1.0 - phi * phi) * d0 * d0;
    for t in 1..x.len() {
        let e = x[t] - mu - phi * (x[t - 1] - mu);
        s1 += e * e;
    }
    let v1 = prior.v0 + x.len() as f64;
    (0.5 * v1, 0.5 * s1)
}

pub fn sample_tau2<R: Rng + ?Sized>(x: &[f64], mu: f64, phi: f64, prior: &SvPrior, rng: &mut R) -> f64 {
    let (shape, scale) = tau2_conditional(x, mu, phi, prior);
    sample_inv_gamma(shape, scale, rng)
}

/// Systematic-scan update of `(mu, phi, tau2)` given a path, in that order.
/// Returns whether the `phi` proposal was accepted.
pub fn update_sv_params<R: Rng + ?Sized>(x: &[f64], theta: &mut SvTheta, prior: &SvPrior, rng: &mut R) -> bool {
    theta.mu = sample_mu(x, theta.phi, theta.tau2, prior, rng);
    let (phi, accepted) = sample_phi(x, theta.mu, theta.phi, theta.tau2, prior, rng);
    theta.phi = phi;
    theta.tau2 = sample_tau2(x, theta.mu, theta.phi, prior, rng);
    accepted
}

/// Zero-mean variant used for factor log-volatilities: updates `(phi, tau2)`.
pub fn update_zero_mean_params<R: Rng + ?Sized>(x: &[f64], phi: &mut f64, tau2: &mut f64, prior: &SvPrior, rng: &mut R) -> bool {
    let (p, accepted) = sample_phi(x, 0.0, *phi, *tau2, prior, rng);
    *phi = p;
    *tau2 = sample_tau2(x, 0.0, *phi, prior, rng);
    accepted
}

/// Per-time-step view of an AR(1) log-volatility series observed through
/// `N(y_t; 0, exp(x_t))`, for the particle filters.
#[derive(Debug, Clone, Copy)]
pub struct SvSeries<'a> {
    pub mu: f64,
    pub phi: f64,
    pub tau2: f64,
    pub y: &'a [f64],
    sd: f64,
    stationary_sd: f64,
}

impl<'a> SvSeries<'a> {
    pub fn new(mu: f64, phi: f64, tau2: f64, y: &'a [f64]) -> Self {
        Self { mu, phi, tau2, y, sd: tau2.sqrt(), stationary_sd: (tau2 / (1.0 - phi * phi)).sqrt() }
    }

    pub fn from_theta(theta: &SvTheta, y: &'a [f64]) -> Self {
        Self::new(theta.mu, theta.phi, theta.tau2, y)
    }
}

impl StateSpaceModel for SvSeries<'_> {
    type Particle = f64;

    fn horizon(&self) -> usize {
        self.y.len()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.mu + self.stationary_sd * std_normal(rng)
    }

    fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, prev: &f64, rng: &mut R) -> f64 {
        self.mu + self.phi * (prev - self.mu) + self.sd * std_normal(rng)
    }

    fn initial_logdensity(&self, x: &f64) -> f64 {
        normal_logpdf(*x, self.mu, self.stationary_sd * self.stationary_sd)
    }

    fn transition_logdensity(&self, _t: usize, prev: &f64, x: &f64) -> f64 {
        normal_logpdf(*x, self.mu + self.phi * (prev - self.mu), self.tau2)
    }

    #[inline]
    fn observation_logdensity(&self, t: usize, x: &f64) -> f64 {
        sv_obs_logdensity(self.y[t], *x)
    }
}

#[derive(Debug, Clone)]
pub struct SvModel {
    pub y: Vec<f64>,
    pub prior: SvPrior,
}

impl SvModel {
    pub fn new(y: Vec<f64>, prior: SvPrior) -> Result<Self, ModelError> {
        if y.len() < 2 {
            return Err(ModelError::TooShort { required: 2, actual: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Config("observations must be finite".into()));
        }
        prior.validate()?;
        Ok(Self { y, prior })
    }

    pub fn horizon(&self) -> usize {
        self.y.len()
    }
}

impl ModelInterface for SvModel {
    type Theta = SvTheta;
    type State = Vec<f64>;

    fn log_prior(&self, theta: &SvTheta) -> f64 {
        self.prior.log_mu(theta.mu) + self.prior.log_phi(theta.phi) + self.prior.log_tau2(theta.tau2)
    }

    fn log_state_density(&self, theta: &SvTheta, x: &Vec<f64>) -> f64 {
        ar1_logdensity(x, theta.mu, theta.phi, theta.tau2)
    }

    fn log_likelihood(&self, _theta: &SvTheta, x: &Vec<f64>) -> f64 {
        sv_log_likelihood(&self.y, x)
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Result<SvTheta, ModelError> {
        let mu = self.prior.sample_mu(rng);
        let phi = self.prior.sample_phi(rng)?;
        let tau2 = self.prior.sample_tau2(rng)?;
        Ok(SvTheta { mu, phi, tau2 })
    }

    fn sample_state(&self, theta: &SvTheta, rng: &mut StreamRng) -> Vec<f64> {
        sample_ar1(theta.mu, theta.phi, theta.tau2, self.y.len(), rng)
    }

    fn parameter_names(&self) -> Vec<String> {
        vec!["mu".into(), "phi".into(), "tau2".into()]
    }

    fn flatten_theta(&self, theta: &SvTheta) -> Vec<f64> {
        vec![theta.mu, theta.phi, theta.tau2]
    }

    fn state_summary(&self, x: &Vec<f64>) -> Vec<f64> {
        x.clone()
    }
}

/// HMC on the path followed by Gibbs updates of `(mu, phi, tau2)`.
#[derive(Debug, Clone)]
pub struct SvHmcKernel {
    pub config: HmcConfig,
    pub step_size: f64,
}

impl SvHmcKernel {
    pub fn new(config: HmcConfig) -> Self {
        Self { step_size: config.step_size, config }
    }
}

/// One HMC transition of a log-volatility path with the diagonal mass of
/// [`sv_mass_diagonal`].
pub fn hmc_path_update<R: Rng + ?Sized>(
    x: &mut [f64],
    mu: f64,
    phi: f64,
    tau2: f64,
    y: &[f64],
    a: f64,
    eps: f64,
    steps: usize,
    rng: &mut R,
) -> crate::hmc::HmcOutcome {
    let target = Ar1SvTarget { mu, phi, tau2, y, a };
    let mass = sv_mass_diagonal(phi, tau2, a, x.len());
    hmc_step(&target, x, &mass, eps, steps, rng)
}

impl MoveKernel<SvModel> for SvHmcKernel {
    fn counter_names(&self) -> Vec<String> {
        vec!["hmc_x".into(), "phi".into()]
    }

    fn apply(&self, model: &SvModel, theta: &mut SvTheta, x: &mut Vec<f64>, a: f64, rng: &mut StreamRng) -> Result<MoveStats, FilterError> {
        let mut stats = MoveStats::new(2);
        let out = hmc_path_update(x, theta.mu, theta.phi, theta.tau2, &model.y, a, self.step_size, self.config.leapfrog_steps, rng);
        stats.record(0, out.accepted);
        stats.divergent += out.divergent as u64;
        let acc = update_sv_params(x, theta, &model.prior, rng);
        stats.record(1, acc);
        Ok(stats)
    }

    fn end_stage(&mut self, stage: usize, stats: &MoveStats) {
        if let Some(rate) = stats.rate(0) {
            self.step_size = adapt_step_size(rate, self.step_size, self.config.target_rate, stage, self.config.gain);
        }
    }

    fn tuning(&self) -> Vec<(String, f64)> {
        vec![("step_size".into(), self.step_size)]
    }
}

/// Parameter updates given the retained path, then conditional SMC with
/// backward simulation for a new path.
#[derive(Debug, Clone)]
pub struct SvPgKernel {
    pub particles: usize,
}

impl MoveKernel<SvModel> for SvPgKernel {
    fn counter_names(&self) -> Vec<String> {
        vec!["phi".into()]
    }

    fn apply(&self, model: &SvModel, theta: &mut SvTheta, x: &mut Vec<f64>, a: f64, rng: &mut StreamRng) -> Result<MoveStats, FilterError> {
        let mut stats = MoveStats::new(1);
        let acc = update_sv_params(x, theta, &model.prior, rng);
        stats.record(0, acc);
        let series = SvSeries::from_theta(theta, &model.y);
        let traj = csmc_backward(&series, self.particles, a, x, rng)?;
        *x = traj.states;
        Ok(stats)
    }
}
