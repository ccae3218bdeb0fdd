//! Hamiltonian Monte Carlo on a real vector with a diagonal mass matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::stats::std_normal;

/// `|ΔH|` above this is treated as a numerical blow-up and rejected.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;
pub const MIN_STEP_SIZE: f64 = 1e-8;
pub const MAX_STEP_SIZE: f64 = 10.0;

/// A differentiable log-density `L(x)`.
pub trait HamiltonianTarget {
    fn dim(&self) -> usize;
    /// Returns `L(x)` and writes `∇L(x)` into `grad`.
    fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_density_gradient(x, &mut g)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HmcConfig {
    pub leapfrog_steps: usize,
    /// Initial step size; adapted between stages.
    pub step_size: f64,
    pub target_rate: f64,
    /// Gain constant `c0` of the `c0 / p` adaptation schedule.
    pub gain: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self { leapfrog_steps: 100, step_size: 0.1, target_rate: 0.65, gain: 1.0 }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.leapfrog_steps < 1 {
            return Err("leapfrog steps must be at least 1".into());
        }
        if !(self.step_size > 0.0) {
            return Err("step size must be positive".into());
        }
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return Err("target acceptance rate must lie in (0, 1)".into());
        }
        Ok(())
    }
}

/// `L` leapfrog steps from `(x, r)`: half kick, then alternating drifts and
/// full kicks, closing with a half kick. Updates `x`, `r` and `grad` in
/// place (`grad` must hold `∇L(x)` on entry). Returns `L` at the end point,
/// or `None` when a non-finite value appears.
pub fn leapfrog<T: HamiltonianTarget + ?Sized>(
    target: &T,
    x: &mut [f64],
    r: &mut [f64],
    grad: &mut [f64],
    inv_mass: &[f64],
    eps: f64,
    steps: usize,
) -> Option<f64> {
    let d = x.len();
    let mut ld = f64::NAN;
    for i in 0..d {
        r[i] += 0.5 * eps * grad[i];
    }
    for step in 0..steps {
        for i in 0..d {
            x[i] += eps * inv_mass[i] * r[i];
        }
        ld = target.log_density_gradient(x, grad);
        if !ld.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let kick = if step + 1 == steps { 0.5 * eps } else { eps };
        for i in 0..d {
            r[i] += kick * grad[i];
        }
    }
    Some(ld)
}

fn kinetic(r: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * r.iter().zip(inv_mass).map(|(r, m)| r * r * m).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcOutcome {
    pub accepted: bool,
    pub divergent: bool,
    /// `H(x*, r*) - H(x, r)`; NaN when divergent.
    pub delta_h: f64,
}

/// One HMC transition with momentum `r ~ N(0, diag(mass))`.
pub fn hmc_step<T, R>(target: &T, x: &mut [f64], mass: &[f64], eps: f64, steps: usize, rng: &mut R) -> HmcOutcome
where
    T: HamiltonianTarget + ?Sized,
    R: Rng + ?Sized,
{
    let r: Vec<f64> = mass.iter().map(|m| m.sqrt() * std_normal(rng)).collect();
    let u: f64 = rng.random();
    hmc_step_with_momentum(target, x, mass, eps, steps, &r, u)
}

/// [`hmc_step`] with the momentum and acceptance uniform supplied.
pub fn hmc_step_with_momentum<T>(target: &T, x: &mut [f64], mass: &[f64], eps: f64, steps: usize, r0: &[f64], u: f64) -> HmcOutcome
where
    T: HamiltonianTarget + ?Sized,
{
    let d = x.len();
    let inv_mass: Vec<f64> = mass.iter().map(|m| 1.0 / m).collect();
    let mut grad = vec![0.0; d];
    let ld0 = target.log_density_gradient(x, &mut grad);
    let h0 = -ld0 + kinetic(r0, &inv_mass);
    let mut xp = x.to_vec();
    let mut rp = r0.to_vec();
    let rejected = HmcOutcome { accepted: false, divergent: true, delta_h: f64::NAN };
    let Some(ld1) = leapfrog(target, &mut xp, &mut rp, &mut grad, &inv_mass, eps, steps) else {
        return rejected;
    };
    let delta_h = -ld1 + kinetic(&rp, &inv_mass) - h0;
    if !delta_h.is_finite() || delta_h.abs() > DIVERGENCE_THRESHOLD {
        return HmcOutcome { delta_h, ..rejected };
    }
    let accepted = u.ln() < -delta_h;
    if accepted {
        x.copy_from_slice(&xp);
    }
    HmcOutcome { accepted, divergent: false, delta_h }
}

/// Robbins–Monro step on `log ε` with gain `c0 / stage`, clamped to
/// `[1e-8, 10]`.
pub fn adapt_step_size(observed_rate: f64, eps: f64, target_rate: f64, stage: usize, c0: f64) -> f64 {
    let gain = c0 / stage.max(1) as f64;
    let log_eps = eps.ln() + gain * (observed_rate - target_rate);
    log_eps.exp().clamp(MIN_STEP_SIZE, MAX_STEP_SIZE)
}

/// Diagonal of the AR(1) state precision plus the measurement curvature
/// term `0.5 a`: `0.5a + (1 + φ²)/τ²` inside, `0.5a + 1/τ²` at both ends.
pub fn sv_mass_diagonal(phi: f64, tau2: f64, a: f64, horizon: usize) -> Vec<f64> {
    let inner = 0.5 * a + (1.0 + phi * phi) / tau2;
    let edge = 0.5 * a + 1.0 / tau2;
    let mut m = vec![inner; horizon];
    m[0] = edge;
    if horizon > 1 {
        m[horizon - 1] = edge;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct StdNormal(usize);
    impl HamiltonianTarget for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            for (g, v) in grad.iter_mut().zip(x) {
                *g = -v;
            }
            -0.5 * x.iter().map(|v| v * v).sum::<f64>()
        }
    }

    struct Flat(usize);
    impl HamiltonianTarget for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density_gradient(&self, _x: &[f64], grad: &mut [f64]) -> f64 {
            grad.fill(0.0);
            1.5
        }
    }

    #[test]
    fn free_particle_drifts() {
        let t = Flat(3);
        let mut x = vec![1.0, 2.0, 3.0];
        let mut r = vec![0.5, -1.0, 2.0];
        let mut g = vec![0.0; 3];
        let inv_m = vec![1.0, 0.5, 2.0];
        leapfrog(&t, &mut x, &mut r, &mut g, &inv_m, 0.1, 7).unwrap();
        let expected = [1.0 + 0.7 * 0.5, 2.0 - 0.7 * 0.5, 3.0 + 0.7 * 4.0];
        for (a, b) in x.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(r, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let t = StdNormal(4);
        let x0 = vec![0.3, -1.2, 2.0, 0.1];
        let r0 = vec![1.0, 0.2, -0.7, 0.4];
        let inv_m = vec![1.0, 2.0, 0.5, 1.0];
        let mut x = x0.clone();
        let mut r = r0.clone();
        let mut g = vec![0.0; 4];
        t.log_density_gradient(&x, &mut g);
        leapfrog(&t, &mut x, &mut r, &mut g, &inv_m, 0.13, 25).unwrap();
        for v in r.iter_mut() {
            *v = -*v;
        }
        leapfrog(&t, &mut x, &mut r, &mut g, &inv_m, 0.13, 25).unwrap();
        for i in 0..4 {
            assert!((x[i] - x0[i]).abs() < 1e-10);
            assert!((-r[i] - r0[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn second_order_energy_error() {
        let t = StdNormal(1);
        let dh = |eps: f64| {
            let mut x = vec![1.0];
            let out = hmc_step_with_momentum(&t, &mut x, &[1.0], eps, (1.0 / eps).round() as usize, &[0.8], 0.5);
            out.delta_h.abs()
        };
        let ratio = dh(0.1) / dh(0.05);
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn tiny_steps_accept() {
        let t = StdNormal(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![0.5, -0.5];
        let mut acc = 0;
        for _ in 0..1000 {
            acc += hmc_step(&t, &mut x, &[1.0, 1.0], 1e-6, 3, &mut rng).accepted as usize;
        }
        assert!(acc >= 990);
    }

    #[test]
    fn mode_with_zero_momentum_stays() {
        let t = StdNormal(2);
        let mut x = vec![0.0, 0.0];
        let out = hmc_step_with_momentum(&t, &mut x, &[1.0, 1.0], 0.3, 10, &[0.0, 0.0], 0.999);
        assert!(out.accepted);
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn samples_standard_normal() {
        let t = StdNormal(1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = vec![0.0];
        let n = 20_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            hmc_step(&t, &mut x, &[1.0], 0.4, 3, &mut rng);
            s += x[0];
            s2 += x[0] * x[0];
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        // generous: the chain is mildly autocorrelated
        assert!(mean.abs() < 4.0 * (3.0 / n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 4.0 * (6.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn adaptation_direction() {
        assert_eq!(adapt_step_size(0.65, 0.2, 0.65, 3, 1.0), 0.2);
        let mut eps = 0.01;
        for p in 1..20 {
            let next = adapt_step_size(1.0, eps, 0.65, p, 1.0);
            assert!(next > eps);
            eps = next;
        }
        assert_eq!(adapt_step_size(0.0, 1e-8, 0.65, 1, 1.0), 1e-8);
    }

    #[test]
    fn mass_examples() {
        assert_eq!(sv_mass_diagonal(0.0, 1.0, 0.0, 4), vec![1.0; 4]);
        let m = sv_mass_diagonal(0.5, 0.25, 1.0, 5);
        assert!((m[2] - 5.5).abs() < 1e-12);
        assert!((m[2] - m[0] - 0.25 / 0.25).abs() < 1e-12);
        assert_eq!(m[0], m[4]);
    }
}
