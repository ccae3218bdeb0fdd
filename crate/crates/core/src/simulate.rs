//! Forward simulation of synthetic data sets.

use rand::Rng;

use crate::factor::{free_loadings, FactorState, FactorTheta, FactorVolTheta};
use crate::stats::std_normal;
use crate::sv::{sample_ar1, SvTheta};

/// A persistent-volatility parameter set for synthetic factor data with
/// `series` series and `factors` factors: free loadings decrease from 1 down
/// the rows, idiosyncratic levels step up from -1.
pub fn default_factor_theta(series: usize, factors: usize) -> FactorTheta {
    let idio = (0..series).map(|s| SvTheta::new(-1.0 + 0.1 * s as f64, 0.97, 0.03)).collect();
    let factor = vec![FactorVolTheta { phi: 0.98, tau2: 0.02 }; factors];
    let mut beta = vec![0.0; series * factors];
    for s in 0..series {
        for k in 0..free_loadings(s, factors) {
            beta[s * factors + k] = if s == k { 1.0 } else { 0.8 - 0.1 * ((s + k) % 5) as f64 };
        }
    }
    FactorTheta { idio, factor, beta }
}

/// `y_t = exp(x_t / 2) e_t`.
pub fn sv_observations<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> Vec<f64> {
    x.iter().map(|&v| (0.5 * v).exp() * std_normal(rng)).collect()
}

/// Returns `(x, y)`.
pub fn simulate_sv<R: Rng + ?Sized>(theta: &SvTheta, horizon: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let x = sample_ar1(theta.mu, theta.phi, theta.tau2, horizon, rng);
    let y = sv_observations(&x, rng);
    (x, y)
}

/// `y_st = beta_s f_t + exp(h_st / 2) e_st`, one vector per series.
pub fn factor_observations<R: Rng + ?Sized>(theta: &FactorTheta, x: &FactorState, rng: &mut R) -> Vec<Vec<f64>> {
    let horizon = x.h[0].len();
    (0..theta.series())
        .map(|s| {
            let row = theta.row(s);
            (0..horizon)
                .map(|t| {
                    let mean: f64 = row.iter().zip(&x.f).map(|(b, fk)| b * fk[t]).sum();
                    mean + (0.5 * x.h[s][t]).exp() * std_normal(rng)
                })
                .collect()
        })
        .collect()
}

/// Draws the state from its prior given `theta`, then observations.
pub fn simulate_factor<R: Rng + ?Sized>(theta: &FactorTheta, horizon: usize, rng: &mut R) -> (FactorState, Vec<Vec<f64>>) {
    let h = theta.idio.iter().map(|p| sample_ar1(p.mu, p.phi, p.tau2, horizon, rng)).collect();
    let lambda: Vec<Vec<f64>> = theta.factor.iter().map(|p| sample_ar1(0.0, p.phi, p.tau2, horizon, rng)).collect();
    let f = lambda.iter().map(|l| sv_observations(l, rng)).collect();
    let x = FactorState { h, lambda, f };
    let y = factor_observations(theta, &x, rng);
    (x, y)
}
