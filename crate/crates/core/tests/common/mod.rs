//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use aisil::lgssm::LgParams;
use aisil::temper::TemperRecord;

const LN_2PI: f64 = 1.8378770664093453;

pub fn norm_lpdf(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m) * (x - m) / v)
}

pub fn inv_gamma_lpdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - statrs::function::gamma::ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn beta_lpdf(u: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln() - statrs::function::beta::ln_beta(a, b)
}

/// Exact `log p(y_{1:T})` of the linear Gaussian model by the Kalman filter.
pub fn kalman_log_likelihood(p: &LgParams, y: &[f64]) -> f64 {
    let (mut m, mut v) = (0.0, p.init_var);
    let mut ll = 0.0;
    for (t, &yt) in y.iter().enumerate() {
        if t > 0 {
            m *= p.rho;
            v = p.rho * p.rho * v + p.state_var;
        }
        let s = v + p.obs_var;
        ll += -0.5 * (LN_2PI + s.ln() + (yt - m) * (yt - m) / s);
        let k = v / s;
        m += k * (yt - m);
        v *= 1.0 - k;
    }
    ll
}

/// `a sum log N(y_t; 0, e^{x_t}) + log AR1(x; mu, phi, tau2)` written out
/// term by term.
pub fn sv_path_target(mu: f64, phi: f64, tau2: f64, x: &[f64], y: &[f64], a: f64) -> f64 {
    let mut s = norm_lpdf(x[0], mu, tau2 / (1.0 - phi * phi));
    for t in 1..x.len() {
        s += norm_lpdf(x[t], mu + phi * (x[t - 1] - mu), tau2);
    }
    for t in 0..x.len() {
        s += a * norm_lpdf(y[t], 0.0, x[t].exp());
    }
    s
}

pub struct Prior {
    pub mu_low: f64,
    pub mu_high: f64,
    pub a0: f64,
    pub b0: f64,
    pub v0: f64,
    pub s0: f64,
}

pub const PRIOR: Prior = Prior { mu_low: -10.0, mu_high: 10.0, a0: 100.0, b0: 1.5, v0: 10.0, s0: 0.5 };

pub fn prior_sv(mu: f64, phi: f64, tau2: f64) -> f64 {
    let p = &PRIOR;
    let lmu = if mu > p.mu_low && mu < p.mu_high { -(p.mu_high - p.mu_low).ln() } else { f64::NEG_INFINITY };
    lmu + prior_phi_tau2(phi, tau2)
}

pub fn prior_phi_tau2(phi: f64, tau2: f64) -> f64 {
    let p = &PRIOR;
    beta_lpdf((phi + 1.0) / 2.0, p.a0, p.b0) - 2f64.ln() + inv_gamma_lpdf(tau2, p.v0 / 2.0, p.s0 / 2.0)
}

/// Full tempered log-target of the univariate model.
pub fn sv_joint(mu: f64, phi: f64, tau2: f64, x: &[f64], y: &[f64], a: f64) -> f64 {
    prior_sv(mu, phi, tau2) + sv_path_target(mu, phi, tau2, x, y, a)
}

/// Flat description of a factor-model draw for the oracle below.
pub struct FactorDraw<'a> {
    /// `(mu, phi, tau2)` per series.
    pub idio: &'a [(f64, f64, f64)],
    /// `(phi, tau2)` per factor.
    pub factor: &'a [(f64, f64)],
    /// `beta[s][k]`.
    pub beta: &'a [Vec<f64>],
    pub h: &'a [Vec<f64>],
    pub lambda: &'a [Vec<f64>],
    /// `f[k][t]`.
    pub f: &'a [Vec<f64>],
}

/// Full tempered log-target of the factor model with unit-variance normal
/// priors on the free loadings.
pub fn factor_joint(d: &FactorDraw, y: &[Vec<f64>], a: f64) -> f64 {
    let s_count = d.idio.len();
    let k_count = d.factor.len();
    let horizon = y[0].len();
    let mut lp = 0.0;
    for (s, &(mu, phi, tau2)) in d.idio.iter().enumerate() {
        lp += prior_sv(mu, phi, tau2);
        let mut r = vec![0.0; horizon];
        for t in 0..horizon {
            let mean: f64 = (0..k_count).map(|k| d.beta[s][k] * d.f[k][t]).sum();
            r[t] = y[s][t] - mean;
        }
        lp += sv_path_target(mu, phi, tau2, &d.h[s], &r, a);
        for k in 0..k_count.min(s + 1) {
            lp += norm_lpdf(d.beta[s][k], 0.0, 1.0);
        }
    }
    for (k, &(phi, tau2)) in d.factor.iter().enumerate() {
        lp += prior_phi_tau2(phi, tau2);
        lp += sv_path_target(0.0, phi, tau2, &d.lambda[k], &d.f[k], 1.0);
    }
    let _ = s_count;
    lp
}

/// Central differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let down = f(&xp);
        xp[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Problems with a completed ladder: not starting at 0, not strictly
/// increasing, not ending at 1, or a non-terminal stage whose post-reweight
/// ESS misses the target by more than the stage's grid tolerance.
pub fn ladder_problems(record: &TemperRecord) -> Vec<String> {
    let mut out = Vec::new();
    let l = &record.ladder;
    if l.first() != Some(&0.0) {
        out.push("ladder does not start at 0".into());
    }
    if l.last() != Some(&1.0) {
        out.push(format!("ladder ends at {:?}", l.last()));
    }
    if l.windows(2).any(|w| !(w[1] > w[0])) {
        out.push("ladder not strictly increasing".into());
    }
    for s in &record.stages {
        if !s.terminal && (s.ess_before_resample - record.ess_target).abs() > s.ess_tolerance + 1e-9 {
            out.push(format!(
                "stage {}: ESS {} vs target {} (tolerance {})",
                s.index, s.ess_before_resample, record.ess_target, s.ess_tolerance
            ));
        }
    }
    out
}
