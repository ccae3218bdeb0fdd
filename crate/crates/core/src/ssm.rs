//! Model abstractions shared by the samplers.
//!
//! [`ModelInterface`] is what the tempering engine sees: a prior over static
//! parameters, a density over a latent-state block and the measurement
//! density of the data. The engine treats both parameter and state types as
//! opaque. [`StateSpaceModel`] is the per-time-step view the particle filters
//! consume, with parameters and observations already bound.

use rand::Rng;

use crate::error::ModelError;
use crate::exec::{map_indexed, Execution};
use crate::rng::{Role, RngStream, StreamRng};

pub trait ModelInterface: Sync {
    type Theta: Clone + Send + Sync + std::fmt::Debug;
    type State: Clone + Send + Sync;

    /// `log p(theta)`, `-inf` outside the support.
    fn log_prior(&self, theta: &Self::Theta) -> f64;
    /// `log p(x | theta)`.
    fn log_state_density(&self, theta: &Self::Theta, x: &Self::State) -> f64;
    /// `log p(y | theta, x)`.
    fn log_likelihood(&self, theta: &Self::Theta, x: &Self::State) -> f64;
    fn sample_prior(&self, rng: &mut StreamRng) -> Result<Self::Theta, ModelError>;
    fn sample_state(&self, theta: &Self::Theta, rng: &mut StreamRng) -> Self::State;

    /// Names of the scalar summaries returned by [`Self::flatten_theta`].
    fn parameter_names(&self) -> Vec<String>;
    fn flatten_theta(&self, theta: &Self::Theta) -> Vec<f64>;
    /// A scalar path summarising the state block, exported as posterior
    /// state means (for example the log-volatility of the first series).
    fn state_summary(&self, x: &Self::State) -> Vec<f64>;
}

/// `a log p(y | theta, x) + log p(x | theta) + log p(theta)`.
///
/// Returns `-inf` for parameters outside the prior support without touching
/// the state or data terms. At `a = 0` the likelihood term is skipped, so the
/// result is exactly the prior part even when the likelihood is `-inf`.
pub fn log_tempered_target<M: ModelInterface>(model: &M, theta: &M::Theta, x: &M::State, a: f64) -> f64 {
    let lp = model.log_prior(theta);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    let prior_part = lp + model.log_state_density(theta, x);
    if a == 0.0 {
        prior_part
    } else {
        prior_part + a * model.log_likelihood(theta, x)
    }
}

/// Per-time-step view of a state-space model with parameters bound.
///
/// Time indices are 0-based. `observation_logdensity` is untempered; the
/// filters apply the exponent.
pub trait StateSpaceModel: Sync {
    type Particle: Clone + Send + Sync;

    fn horizon(&self) -> usize;
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Particle;
    fn sample_transition<R: Rng + ?Sized>(&self, t: usize, prev: &Self::Particle, rng: &mut R) -> Self::Particle;
    fn initial_logdensity(&self, x: &Self::Particle) -> f64;
    /// `log f(x_t | x_{t-1})` for `t >= 1`.
    fn transition_logdensity(&self, t: usize, prev: &Self::Particle, x: &Self::Particle) -> f64;
    fn observation_logdensity(&self, t: usize, x: &Self::Particle) -> f64;
}

#[derive(Debug, Clone)]
pub struct Particle<Th, St> {
    pub theta: Th,
    pub state: St,
    /// Cached `log p(y | theta, x)`.
    pub log_likelihood: f64,
}

/// `M` weighted `(theta, x)` pairs.
#[derive(Debug, Clone)]
pub struct ParticleCloud<Th, St> {
    pub particles: Vec<Particle<Th, St>>,
    pub log_weights: Vec<f64>,
    pub normalized: bool,
}

impl<Th, St> ParticleCloud<Th, St> {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn thetas(&self) -> impl Iterator<Item = &Th> {
        self.particles.iter().map(|p| &p.theta)
    }

    pub fn states(&self) -> impl Iterator<Item = &St> {
        self.particles.iter().map(|p| &p.state)
    }

    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_likelihood).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w = Vec::new();
        crate::stats::exp_weights(&self.log_weights, &mut w);
        w
    }
}

/// Draws `M` particles from `p(theta) p(x | theta)` with equal weights.
pub fn init_cloud<M: ModelInterface>(
    model: &M,
    m: usize,
    streams: &RngStream,
    run: u64,
    execution: Execution,
) -> Result<ParticleCloud<M::Theta, M::State>, ModelError> {
    if m < 2 {
        return Err(ModelError::Config(format!("cloud size must be at least 2, got {m}")));
    }
    let drawn = map_indexed(m, execution, |i| {
        let mut rng = streams.at(run, i as u64, 0, Role::Init);
        let theta = model.sample_prior(&mut rng)?;
        let state = model.sample_state(&theta, &mut rng);
        let log_likelihood = model.log_likelihood(&theta, &state);
        Ok(Particle { theta, state, log_likelihood })
    });
    let particles = drawn.into_iter().collect::<Result<Vec<_>, ModelError>>()?;
    Ok(ParticleCloud {
        particles,
        log_weights: vec![-(m as f64).ln(); m],
        normalized: true,
    })
}
