//! Fixed-parameter linear Gaussian state-space model
//!
//! ```text
//! x_1 ~ N(0, init_var),  x_t = rho x_{t-1} + N(0, state_var),  y_t = x_t + N(0, obs_var)
//! ```
//!
//! Its likelihood is available in closed form, which makes it the reference
//! model for checking filter unbiasedness and the tempered evidence estimate.
//! The static parameter is the unit type: the prior is a point mass.

use rand::Rng;

use crate::error::{FilterError, ModelError};
use crate::filter::csmc_backward;
use crate::rng::StreamRng;
use crate::ssm::{ModelInterface, StateSpaceModel};
use crate::stats::{normal_logpdf, std_normal};
use crate::temper::{MoveKernel, MoveStats};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgParams {
    pub rho: f64,
    pub state_var: f64,
    pub obs_var: f64,
    pub init_var: f64,
}

impl Default for LgParams {
    fn default() -> Self {
        Self { rho: 0.8, state_var: 0.5, obs_var: 1.0, init_var: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct LinearGaussian {
    pub params: LgParams,
    pub y: Vec<f64>,
}

impl LinearGaussian {
    pub fn new(params: LgParams, y: Vec<f64>) -> Result<Self, ModelError> {
        if y.len() < 2 {
            return Err(ModelError::TooShort { required: 2, actual: y.len() });
        }
        if !(params.state_var > 0.0 && params.obs_var > 0.0 && params.init_var > 0.0) {
            return Err(ModelError::Config("variances must be positive".into()));
        }
        Ok(Self { params, y })
    }

    /// Simulates `(x, y)` of length `horizon`.
    pub fn simulate<R: Rng + ?Sized>(params: LgParams, horizon: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(horizon);
        let mut y = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let xt = if t == 0 {
                params.init_var.sqrt() * std_normal(rng)
            } else {
                params.rho * x[t - 1] + params.state_var.sqrt() * std_normal(rng)
            };
            x.push(xt);
            y.push(xt + params.obs_var.sqrt() * std_normal(rng));
        }
        (x, y)
    }

    pub fn series(&self) -> LgSeries<'_> {
        LgSeries { params: self.params, y: &self.y }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LgSeries<'a> {
    pub params: LgParams,
    pub y: &'a [f64],
}

impl StateSpaceModel for LgSeries<'_> {
    type Particle = f64;

    fn horizon(&self) -> usize {
        self.y.len()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.params.init_var.sqrt() * std_normal(rng)
    }

    fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, prev: &f64, rng: &mut R) -> f64 {
        self.params.rho * prev + self.params.state_var.sqrt() * std_normal(rng)
    }

    fn initial_logdensity(&self, x: &f64) -> f64 {
        normal_logpdf(*x, 0.0, self.params.init_var)
    }

    fn transition_logdensity(&self, _t: usize, prev: &f64, x: &f64) -> f64 {
        normal_logpdf(*x, self.params.rho * prev, self.params.state_var)
    }

    fn observation_logdensity(&self, t: usize, x: &f64) -> f64 {
        normal_logpdf(self.y[t], *x, self.params.obs_var)
    }
}

impl ModelInterface for LinearGaussian {
    type Theta = ();
    type State = Vec<f64>;

    fn log_prior(&self, _theta: &()) -> f64 {
        0.0
    }

    fn log_state_density(&self, _theta: &(), x: &Vec<f64>) -> f64 {
        let s = self.series();
        let mut ld = s.initial_logdensity(&x[0]);
        for t in 1..x.len() {
            ld += s.transition_logdensity(t, &x[t - 1], &x[t]);
        }
        ld
    }

    fn log_likelihood(&self, _theta: &(), x: &Vec<f64>) -> f64 {
        let s = self.series();
        x.iter().enumerate().map(|(t, v)| s.observation_logdensity(t, v)).sum()
    }

    fn sample_prior(&self, _rng: &mut StreamRng) -> Result<(), ModelError> {
        Ok(())
    }

    fn sample_state(&self, _theta: &(), rng: &mut StreamRng) -> Vec<f64> {
        let s = self.series();
        let mut x = Vec::with_capacity(self.y.len());
        x.push(s.sample_initial(rng));
        for t in 1..self.y.len() {
            let prev = x[t - 1];
            x.push(s.sample_transition(t, &prev, rng));
        }
        x
    }

    fn parameter_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn flatten_theta(&self, _theta: &()) -> Vec<f64> {
        Vec::new()
    }

    fn state_summary(&self, x: &Vec<f64>) -> Vec<f64> {
        x.clone()
    }
}

/// Conditional SMC with backward simulation on the state path.
#[derive(Debug, Clone)]
pub struct LgPgKernel {
    pub particles: usize,
}

impl MoveKernel<LinearGaussian> for LgPgKernel {
    fn counter_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn apply(&self, model: &LinearGaussian, _theta: &mut (), x: &mut Vec<f64>, a: f64, rng: &mut StreamRng) -> Result<MoveStats, FilterError> {
        *x = csmc_backward(&model.series(), self.particles, a, x, rng)?.states;
        Ok(MoveStats::new(0))
    }
}
