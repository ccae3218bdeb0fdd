//! K-factor stochastic volatility model
//!
//! ```text
//! y_t = beta f_t + V_t^{1/2} eps_t,        V_t = diag(exp(h_{1t}), ..., exp(h_{St}))
//! f_t ~ N(0, D_t),                          D_t = diag(exp(lambda_{1t}), ..., exp(lambda_{Kt}))
//! h_{s,t+1} = mu_s + phi_s (h_{st} - mu_s) + tau_s eta_{st}
//! lambda_{k,t+1} = phi_k lambda_{kt} + tau_k eta_{kt}
//! ```
//!
//! `beta` is `S x K` with `beta_{sk} = 0` for `k > s` and an unrestricted
//! diagonal; free loadings have independent `N(0, 1)` priors. The other
//! priors are those of the univariate model, with the factor log-volatility
//! level fixed at zero.
//!
//! Given `(y, f, beta)` the tempered target separates into `S` univariate SV
//! problems on the residuals `y_s - beta_s f` (tempered) and `K` on the
//! factors `f_k` (untempered, since only `p(y | f, h, lambda)` carries the
//! exponent).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, ModelError};
use crate::filter::csmc_backward;
use crate::hmc::{adapt_step_size, HmcConfig};
use crate::rng::StreamRng;
use crate::ssm::{ModelInterface, StateSpaceModel};
use crate::stats::{normal_logpdf, std_normal, GaussianInfo, LN_2PI};
use crate::sv::{
    ar1_logdensity, ar1_sv_log_density_gradient, hmc_path_update, sample_ar1, sv_obs_logdensity, update_sv_params,
    update_zero_mean_params, SvPrior, SvSeries, SvTheta,
};
use crate::temper::{MoveKernel, MoveStats};

/// Largest supported number of factors.
pub const MAX_FACTORS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorVolTheta {
    pub phi: f64,
    pub tau2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTheta {
    pub idio: Vec<SvTheta>,
    pub factor: Vec<FactorVolTheta>,
    /// Row-major `S x K` loadings.
    pub beta: Vec<f64>,
}

impl FactorTheta {
    pub fn series(&self) -> usize {
        self.idio.len()
    }

    pub fn factors(&self) -> usize {
        self.factor.len()
    }

    pub fn loading(&self, s: usize, k: usize) -> f64 {
        self.beta[s * self.factors() + k]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let k = self.factors();
        &self.beta[s * k..(s + 1) * k]
    }

    /// True when every loading above the diagonal is exactly zero.
    pub fn is_lower_triangular(&self) -> bool {
        (0..self.series()).all(|s| (s + 1..self.factors()).all(|k| self.loading(s, k) == 0.0))
    }
}

/// Number of free loadings in row `s` (0-based).
pub fn free_loadings(s: usize, k: usize) -> usize {
    (s + 1).min(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorState {
    /// `S` idiosyncratic log-volatility paths.
    pub h: Vec<Vec<f64>>,
    /// `K` factor log-volatility paths.
    pub lambda: Vec<Vec<f64>>,
    /// `K` factor paths, `f[k][t]`.
    pub f: Vec<Vec<f64>>,
}

/// `y_s - beta_s f` for every `t`.
pub fn residual(y_s: &[f64], beta_row: &[f64], f: &[Vec<f64>]) -> Vec<f64> {
    let mut r = y_s.to_vec();
    for (b, fk) in beta_row.iter().zip(f) {
        if *b != 0.0 {
            for (rt, ft) in r.iter_mut().zip(fk) {
                *rt -= b * ft;
            }
        }
    }
    r
}

#[derive(Debug, Clone)]
pub struct FactorSvModel {
    /// `S` observed series of common length `T`.
    pub y: Vec<Vec<f64>>,
    pub k: usize,
    pub prior: SvPrior,
    /// Prior variance of each free loading.
    pub beta_prior_var: f64,
}

impl FactorSvModel {
    pub fn new(y: Vec<Vec<f64>>, k: usize, prior: SvPrior) -> Result<Self, ModelError> {
        let s = y.len();
        if s == 0 {
            return Err(ModelError::Config("at least one series is required".into()));
        }
        let t = y[0].len();
        if y.iter().any(|v| v.len() != t) {
            return Err(ModelError::Config("all series must have the same length".into()));
        }
        if t < 2 {
            return Err(ModelError::TooShort { required: 2, actual: t });
        }
        if k > s || k > MAX_FACTORS {
            return Err(ModelError::Config(format!("factor count {k} must not exceed min(S = {s}, {MAX_FACTORS})")));
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ModelError::Config("observations must be finite".into()));
        }
        prior.validate()?;
        Ok(Self { y, k, prior, beta_prior_var: 1.0 })
    }

    pub fn series(&self) -> usize {
        self.y.len()
    }

    pub fn horizon(&self) -> usize {
        self.y[0].len()
    }

    fn log_prior_beta(&self, theta: &FactorTheta) -> f64 {
        let mut lp = 0.0;
        for s in 0..self.series() {
            for k in 0..free_loadings(s, self.k) {
                lp += normal_logpdf(theta.loading(s, k), 0.0, self.beta_prior_var);
            }
        }
        lp
    }

    /// `sum_{t,k} log N(f_kt; 0, exp(lambda_kt))`.
    pub fn factor_logdensity(&self, x: &FactorState) -> f64 {
        x.f.iter().zip(&x.lambda).map(|(fk, lk)| fk.iter().zip(lk).map(|(&f, &l)| sv_obs_logdensity(f, l)).sum::<f64>()).sum()
    }
}

/// `a log p(y | f, h, beta) + log p(f | lambda) + log p(h, lambda | theta) + log p(theta)`.
pub fn factor_tempered_logdensity(model: &FactorSvModel, theta: &FactorTheta, x: &FactorState, a: f64) -> f64 {
    crate::ssm::log_tempered_target(model, theta, x, a)
}

/// Gradient of the tempered target in `h_s`.
pub fn idio_gradient(s: usize, theta: &FactorTheta, x: &FactorState, y: &[Vec<f64>], a: f64) -> Vec<f64> {
    let r = residual(&y[s], theta.row(s), &x.f);
    let p = theta.idio[s];
    let mut g = vec![0.0; r.len()];
    ar1_sv_log_density_gradient(p.mu, p.phi, p.tau2, &x.h[s], &r, a, &mut g);
    g
}

/// Gradient in `lambda_k` of `exponent * log p(f_k | lambda_k) + log p(lambda_k | theta)`.
/// The target of the tempered model uses `exponent = 1`.
pub fn factor_vol_gradient(k: usize, theta: &FactorTheta, x: &FactorState, exponent: f64) -> Vec<f64> {
    let p = theta.factor[k];
    let mut g = vec![0.0; x.lambda[k].len()];
    ar1_sv_log_density_gradient(0.0, p.phi, p.tau2, &x.lambda[k], &x.f[k], exponent, &mut g);
    g
}

/// Normal full conditional of the free loadings of row `s` in information
/// form: precision `a F'V^{-1}F + I/B0`, linear term `a F'V^{-1}y_s`.
pub fn beta_row_conditional(model: &FactorSvModel, s: usize, x: &FactorState, a: f64) -> Option<GaussianInfo> {
    let z = free_loadings(s, model.k);
    if z == 0 {
        return None;
    }
    let horizon = model.horizon();
    let mut prec = DMatrix::<f64>::identity(z, z) / model.beta_prior_var;
    let mut lin = DVector::<f64>::zeros(z);
    if a != 0.0 {
        for t in 0..horizon {
            let inv_v = a * (-x.h[s][t]).exp();
            for i in 0..z {
                let fi = x.f[i][t];
                lin[i] += inv_v * fi * model.y[s][t];
                for j in 0..=i {
                    prec[(i, j)] += inv_v * fi * x.f[j][t];
                }
            }
        }
        for i in 0..z {
            for j in 0..i {
                prec[(j, i)] = prec[(i, j)];
            }
        }
    }
    GaussianInfo::new(prec, lin)
}

/// Gibbs draw of the free loadings of row `s`; consumes no randomness when
/// the row has no free loadings.
pub fn sample_beta_row<R: Rng + ?Sized>(
    model: &FactorSvModel,
    s: usize,
    theta: &mut FactorTheta,
    x: &FactorState,
    a: f64,
    rng: &mut R,
) -> Result<(), FilterError> {
    let Some(cond) = beta_row_conditional(model, s, x, a) else {
        return Ok(());
    };
    let draw = cond.sample(rng);
    if draw.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::Input(format!("non-finite loading draw in row {s}")));
    }
    let k = model.k;
    for (i, v) in draw.iter().enumerate() {
        theta.beta[s * k + i] = *v;
    }
    Ok(())
}

/// Normal full conditional of `f_t`: precision `a B'V_t^{-1}B + D_t^{-1}`,
/// linear term `a B'V_t^{-1} y_t`.
pub fn factor_conditional(model: &FactorSvModel, t: usize, theta: &FactorTheta, x: &FactorState, a: f64) -> Option<GaussianInfo> {
    let k = model.k;
    if k == 0 {
        return None;
    }
    let mut prec = DMatrix::<f64>::zeros(k, k);
    let mut lin = DVector::<f64>::zeros(k);
    for j in 0..k {
        prec[(j, j)] = (-x.lambda[j][t]).exp();
    }
    if a != 0.0 {
        for s in 0..model.series() {
            let inv_v = a * (-x.h[s][t]).exp();
            let row = theta.row(s);
            let ys = model.y[s][t];
            for i in 0..free_loadings(s, k) {
                lin[i] += inv_v * row[i] * ys;
                for j in 0..free_loadings(s, k) {
                    prec[(i, j)] += inv_v * row[i] * row[j];
                }
            }
        }
    }
    GaussianInfo::new(prec, lin)
}

/// Draws every `f_t` from its conditional, in time order.
pub fn sample_factors<R: Rng + ?Sized>(
    model: &FactorSvModel,
    theta: &FactorTheta,
    x: &mut FactorState,
    a: f64,
    rng: &mut R,
) -> Result<(), FilterError> {
    let k = model.k;
    if k == 0 {
        return Ok(());
    }
    for t in 0..model.horizon() {
        if k == 1 {
            // scalar fast path, same draw as the general route
            let inv_d = (-x.lambda[0][t]).exp();
            let (mut prec, mut lin) = (inv_d, 0.0);
            if a != 0.0 {
                for s in 0..model.series() {
                    let inv_v = a * (-x.h[s][t]).exp();
                    let b = theta.row(s)[0];
                    prec += inv_v * b * b;
                    lin += inv_v * b * model.y[s][t];
                }
            }
            let v = lin / prec + std_normal(rng) / prec.sqrt();
            if !v.is_finite() {
                return Err(FilterError::Input(format!("non-finite factor draw at t = {t}")));
            }
            x.f[0][t] = v;
            continue;
        }
        let cond = factor_conditional(model, t, theta, x, a)
            .ok_or_else(|| FilterError::Input(format!("factor precision not positive definite at t = {t}")))?;
        let draw = cond.sample(rng);
        for j in 0..k {
            x.f[j][t] = draw[j];
        }
    }
    Ok(())
}

impl ModelInterface for FactorSvModel {
    type Theta = FactorTheta;
    type State = FactorState;

    fn log_prior(&self, theta: &FactorTheta) -> f64 {
        let p = &self.prior;
        let mut lp = 0.0;
        for th in &theta.idio {
            lp += p.log_mu(th.mu) + p.log_phi(th.phi) + p.log_tau2(th.tau2);
        }
        for th in &theta.factor {
            lp += p.log_phi(th.phi) + p.log_tau2(th.tau2);
        }
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.log_prior_beta(theta)
    }

    fn log_state_density(&self, theta: &FactorTheta, x: &FactorState) -> f64 {
        let mut ld = self.factor_logdensity(x);
        for (th, h) in theta.idio.iter().zip(&x.h) {
            ld += ar1_logdensity(h, th.mu, th.phi, th.tau2);
        }
        for (th, l) in theta.factor.iter().zip(&x.lambda) {
            ld += ar1_logdensity(l, 0.0, th.phi, th.tau2);
        }
        ld
    }

    fn log_likelihood(&self, theta: &FactorTheta, x: &FactorState) -> f64 {
        let mut ll = 0.0;
        for s in 0..self.series() {
            let r = residual(&self.y[s], theta.row(s), &x.f);
            ll += r.iter().zip(&x.h[s]).map(|(&r, &h)| sv_obs_logdensity(r, h)).sum::<f64>();
        }
        ll
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Result<FactorTheta, ModelError> {
        let p = &self.prior;
        let mut idio = Vec::with_capacity(self.series());
        for _ in 0..self.series() {
            let mu = p.sample_mu(rng);
            let phi = p.sample_phi(rng)?;
            let tau2 = p.sample_tau2(rng)?;
            idio.push(SvTheta { mu, phi, tau2 });
        }
        let mut factor = Vec::with_capacity(self.k);
        for _ in 0..self.k {
            let phi = p.sample_phi(rng)?;
            let tau2 = p.sample_tau2(rng)?;
            factor.push(FactorVolTheta { phi, tau2 });
        }
        let mut beta = vec![0.0; self.series() * self.k];
        let sd = self.beta_prior_var.sqrt();
        for s in 0..self.series() {
            for k in 0..free_loadings(s, self.k) {
                beta[s * self.k + k] = sd * std_normal(rng);
            }
        }
        Ok(FactorTheta { idio, factor, beta })
    }

    fn sample_state(&self, theta: &FactorTheta, rng: &mut StreamRng) -> FactorState {
        let horizon = self.horizon();
        let h = theta.idio.iter().map(|th| sample_ar1(th.mu, th.phi, th.tau2, horizon, rng)).collect();
        let lambda: Vec<Vec<f64>> = theta.factor.iter().map(|th| sample_ar1(0.0, th.phi, th.tau2, horizon, rng)).collect();
        let f = lambda.iter().map(|l| l.iter().map(|&v| (0.5 * v).exp() * std_normal(rng)).collect()).collect();
        FactorState { h, lambda, f }
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for s in 1..=self.series() {
            names.push(format!("mu_eps{s}"));
            names.push(format!("phi_eps{s}"));
            names.push(format!("tau2_eps{s}"));
        }
        for k in 1..=self.k {
            names.push(format!("phi_f{k}"));
            names.push(format!("tau2_f{k}"));
        }
        for s in 0..self.series() {
            for k in 0..free_loadings(s, self.k) {
                names.push(format!("beta_{}_{}", s + 1, k + 1));
            }
        }
        names
    }

    /// Loadings are reported with the sign convention `beta_kk >= 0`: the
    /// posterior is invariant under flipping the sign of a loading column
    /// together with its factor path, so only the canonical representative is
    /// identified.
    fn flatten_theta(&self, theta: &FactorTheta) -> Vec<f64> {
        let mut out = Vec::new();
        for th in &theta.idio {
            out.extend([th.mu, th.phi, th.tau2]);
        }
        for th in &theta.factor {
            out.extend([th.phi, th.tau2]);
        }
        let signs: Vec<f64> = (0..self.k).map(|k| if theta.loading(k, k) < 0.0 { -1.0 } else { 1.0 }).collect();
        for s in 0..self.series() {
            for k in 0..free_loadings(s, self.k) {
                out.push(signs[k] * theta.loading(s, k));
            }
        }
        out
    }

    /// First factor log-volatility, or the first idiosyncratic one when
    /// there are no factors.
    fn state_summary(&self, x: &FactorState) -> Vec<f64> {
        x.lambda.first().unwrap_or(&x.h[0]).clone()
    }
}

/// Parameter updates shared by both factor kernels: idiosyncratic
/// `(mu, phi, tau2)` per series, then factor `(phi, tau2)`, then loadings
/// row by row, then factors.
fn update_static<R: Rng + ?Sized>(
    model: &FactorSvModel,
    theta: &mut FactorTheta,
    x: &mut FactorState,
    a: f64,
    stats: &mut MoveStats,
    rng: &mut R,
) -> Result<(), FilterError> {
    for s in 0..model.series() {
        let acc = update_sv_params(&x.h[s], &mut theta.idio[s], &model.prior, rng);
        stats.record(COUNTER_PHI_IDIO, acc);
    }
    for k in 0..model.k {
        let FactorVolTheta { mut phi, mut tau2 } = theta.factor[k];
        let acc = update_zero_mean_params(&x.lambda[k], &mut phi, &mut tau2, &model.prior, rng);
        theta.factor[k] = FactorVolTheta { phi, tau2 };
        stats.record(COUNTER_PHI_FACTOR, acc);
    }
    for s in 0..model.series() {
        sample_beta_row(model, s, theta, x, a, rng)?;
    }
    sample_factors(model, theta, x, a, rng)
}

const COUNTER_PHI_IDIO: usize = 0;
const COUNTER_PHI_FACTOR: usize = 1;
const COUNTER_HMC_H: usize = 2;
const COUNTER_HMC_LAMBDA: usize = 3;

/// Parameter, loading and factor updates followed by HMC on every
/// idiosyncratic and factor log-volatility path. The two path groups adapt
/// separate step sizes.
#[derive(Debug, Clone)]
pub struct FactorHmcKernel {
    pub config: HmcConfig,
    pub step_h: f64,
    pub step_lambda: f64,
}

impl FactorHmcKernel {
    pub fn new(config: HmcConfig) -> Self {
        Self { step_h: config.step_size, step_lambda: config.step_size, config }
    }
}

impl MoveKernel<FactorSvModel> for FactorHmcKernel {
    fn counter_names(&self) -> Vec<String> {
        vec!["phi_idio".into(), "phi_factor".into(), "hmc_h".into(), "hmc_lambda".into()]
    }

    fn apply(
        &self,
        model: &FactorSvModel,
        theta: &mut FactorTheta,
        x: &mut FactorState,
        a: f64,
        rng: &mut StreamRng,
    ) -> Result<MoveStats, FilterError> {
        let mut stats = MoveStats::new(4);
        update_static(model, theta, x, a, &mut stats, rng)?;
        let steps = self.config.leapfrog_steps;
        for s in 0..model.series() {
            let r = residual(&model.y[s], theta.row(s), &x.f);
            let p = theta.idio[s];
            let out = hmc_path_update(&mut x.h[s], p.mu, p.phi, p.tau2, &r, a, self.step_h, steps, rng);
            stats.record(COUNTER_HMC_H, out.accepted);
            stats.divergent += out.divergent as u64;
        }
        for k in 0..model.k {
            let p = theta.factor[k];
            let out = hmc_path_update(&mut x.lambda[k], 0.0, p.phi, p.tau2, &x.f[k], 1.0, self.step_lambda, steps, rng);
            stats.record(COUNTER_HMC_LAMBDA, out.accepted);
            stats.divergent += out.divergent as u64;
        }
        Ok(stats)
    }

    fn end_stage(&mut self, stage: usize, stats: &MoveStats) {
        let c = &self.config;
        if let Some(rate) = stats.rate(COUNTER_HMC_H) {
            self.step_h = adapt_step_size(rate, self.step_h, c.target_rate, stage, c.gain);
        }
        if let Some(rate) = stats.rate(COUNTER_HMC_LAMBDA) {
            self.step_lambda = adapt_step_size(rate, self.step_lambda, c.target_rate, stage, c.gain);
        }
    }

    fn tuning(&self) -> Vec<(String, f64)> {
        vec![("step_size_h".into(), self.step_h), ("step_size_lambda".into(), self.step_lambda)]
    }
}

/// Parameter, loading and factor updates followed by conditional SMC with
/// backward simulation on each of the `S + K` log-volatility paths.
#[derive(Debug, Clone)]
pub struct FactorPgKernel {
    pub particles: usize,
}

impl MoveKernel<FactorSvModel> for FactorPgKernel {
    fn counter_names(&self) -> Vec<String> {
        vec!["phi_idio".into(), "phi_factor".into()]
    }

    fn apply(
        &self,
        model: &FactorSvModel,
        theta: &mut FactorTheta,
        x: &mut FactorState,
        a: f64,
        rng: &mut StreamRng,
    ) -> Result<MoveStats, FilterError> {
        let mut stats = MoveStats::new(2);
        update_static(model, theta, x, a, &mut stats, rng)?;
        for s in 0..model.series() {
            let r = residual(&model.y[s], theta.row(s), &x.f);
            let series = SvSeries::from_theta(&theta.idio[s], &r);
            x.h[s] = csmc_backward(&series, self.particles, a, &x.h[s], rng)?.states;
        }
        for k in 0..model.k {
            let p = theta.factor[k];
            let series = SvSeries::new(0.0, p.phi, p.tau2, &x.f[k]);
            x.lambda[k] = csmc_backward(&series, self.particles, 1.0, &x.lambda[k], rng)?.states;
        }
        Ok(stats)
    }
}

/// The factor model with `f` integrated out, as a state-space model over
/// `(h_t, lambda_t)` with observation density `N(y_t; 0, beta D_t beta' + V_t)`.
/// Used for the likelihood-variance diagnostics.
pub struct FactorMarginalSeries<'a> {
    pub theta: &'a FactorTheta,
    pub y: &'a [Vec<f64>],
    means: Vec<f64>,
    phis: Vec<f64>,
    sds: Vec<f64>,
    stationary_sds: Vec<f64>,
}

impl<'a> FactorMarginalSeries<'a> {
    pub fn new(theta: &'a FactorTheta, y: &'a [Vec<f64>]) -> Self {
        let mut means = Vec::new();
        let mut phis = Vec::new();
        let mut tau2s = Vec::new();
        for th in &theta.idio {
            means.push(th.mu);
            phis.push(th.phi);
            tau2s.push(th.tau2);
        }
        for th in &theta.factor {
            means.push(0.0);
            phis.push(th.phi);
            tau2s.push(th.tau2);
        }
        let sds = tau2s.iter().map(|v: &f64| v.sqrt()).collect();
        let stationary_sds = tau2s.iter().zip(&phis).map(|(v, p)| (v / (1.0 - p * p)).sqrt()).collect();
        Self { theta, y, means, phis, sds, stationary_sds }
    }
}

impl StateSpaceModel for FactorMarginalSeries<'_> {
    type Particle = Vec<f64>;

    fn horizon(&self) -> usize {
        self.y[0].len()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.means.len()).map(|i| self.means[i] + self.stationary_sds[i] * std_normal(rng)).collect()
    }

    fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, prev: &Vec<f64>, rng: &mut R) -> Vec<f64> {
        (0..self.means.len())
            .map(|i| self.means[i] + self.phis[i] * (prev[i] - self.means[i]) + self.sds[i] * std_normal(rng))
            .collect()
    }

    fn initial_logdensity(&self, x: &Vec<f64>) -> f64 {
        (0..x.len()).map(|i| normal_logpdf(x[i], self.means[i], self.stationary_sds[i].powi(2))).sum()
    }

    fn transition_logdensity(&self, _t: usize, prev: &Vec<f64>, x: &Vec<f64>) -> f64 {
        (0..x.len())
            .map(|i| normal_logpdf(x[i], self.means[i] + self.phis[i] * (prev[i] - self.means[i]), self.sds[i].powi(2)))
            .sum()
    }

    fn observation_logdensity(&self, t: usize, x: &Vec<f64>) -> f64 {
        let s_count = self.theta.series();
        let k = self.theta.factors();
        let inv_v: Vec<f64> = (0..s_count).map(|s| (-x[s]).exp()).collect();
        let log_det_v: f64 = x[..s_count].iter().sum();
        let mut quad: f64 = (0..s_count).map(|s| self.y[s][t] * self.y[s][t] * inv_v[s]).sum();
        if k == 0 {
            return -0.5 * (s_count as f64 * LN_2PI + log_det_v + quad);
        }
        // Woodbury: Sigma = V + B D B', C = D^{-1} + B'V^{-1}B
        let mut c = DMatrix::<f64>::zeros(k, k);
        let mut u = DVector::<f64>::zeros(k);
        let mut log_det_d = 0.0;
        for j in 0..k {
            c[(j, j)] = (-x[s_count + j]).exp();
            log_det_d += x[s_count + j];
        }
        for s in 0..s_count {
            let row = self.theta.row(s);
            for i in 0..k {
                u[i] += row[i] * inv_v[s] * self.y[s][t];
                for j in 0..k {
                    c[(i, j)] += row[i] * inv_v[s] * row[j];
                }
            }
        }
        let Some(chol) = c.cholesky() else {
            return f64::NEG_INFINITY;
        };
        let log_det_c: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        quad -= u.dot(&chol.solve(&u));
        -0.5 * (s_count as f64 * LN_2PI + log_det_v + log_det_d + log_det_c + quad)
    }
}
