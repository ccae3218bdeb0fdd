//! Bootstrap particle filter with tempered observation weights, conditional
//! SMC and backward simulation.
//!
//! All indices are 0-based. In conditional SMC the reference trajectory
//! occupies the last slot (`N - 1`) at every time step.

use rand::Rng;

use crate::error::FilterError;
use crate::ssm::StateSpaceModel;
use crate::stats::log_sum_exp;

/// Log-weights further than this below the running maximum are set to zero
/// weight before normalisation.
pub const UNDERFLOW_SPAN: f64 = 700.0;

/// Systematic resampling: stratum point `(u + k) / count` is assigned the
/// first index whose cumulative weight exceeds it.
///
/// `weights` must sum to one; `u` is a single uniform draw in `[0, 1)`.
pub fn systematic_indices(weights: &[f64], u: f64, count: usize, out: &mut Vec<usize>) {
    out.clear();
    if count == 0 {
        return;
    }
    let n = weights.len();
    let last = n - 1;
    let step = 1.0 / count as f64;
    let mut j = 0;
    let mut cum = weights[0];
    for k in 0..count {
        let point = (u + k as f64) * step;
        while point >= cum && j < last {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
}

fn systematic_vec(weights: &[f64], u: f64, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    systematic_indices(weights, u, count, &mut out);
    out
}

/// `count` independent draws from `weights`, returned in ascending order.
/// Sorted uniforms come from normalised exponential spacings, so the cost
/// is linear in `count + weights.len()`.
pub fn multinomial_indices<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R, out: &mut Vec<usize>) {
    out.clear();
    if count == 0 {
        return;
    }
    let mut spacings = Vec::with_capacity(count + 1);
    let mut total = 0.0;
    for _ in 0..=count {
        let u: f64 = rng.random();
        total -= (1.0 - u).ln();
        spacings.push(total);
    }
    let last = weights.len() - 1;
    let mut j = 0;
    let mut cum = weights[0];
    for &e in &spacings[..count] {
        let point = e / total;
        while point >= cum && j < last {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
}

/// Draws a single index from normalised `weights` by inversion.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        cum += w;
        if u < cum {
            return j;
        }
    }
    // u landed in the rounding gap above the final cumulative sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Computes `a * log g_t` for every particle, applying the underflow guard.
/// Returns the log of the mean weight, the increment of the likelihood estimate.
fn weigh<S: StateSpaceModel>(
    model: &S,
    t: usize,
    a: f64,
    particles: &[S::Particle],
    log_w: &mut [f64],
    probs: &mut Vec<f64>,
) -> Result<f64, FilterError> {
    let n = particles.len();
    if a == 0.0 {
        log_w.fill(0.0);
    } else {
        for (w, x) in log_w.iter_mut().zip(particles) {
            let v = a * model.observation_logdensity(t, x);
            *w = if v.is_nan() { f64::NEG_INFINITY } else { v };
        }
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(FilterError::Degenerate { t });
    }
    let floor = max - UNDERFLOW_SPAN;
    for w in log_w.iter_mut() {
        if *w < floor {
            *w = f64::NEG_INFINITY;
        }
    }
    probs.clear();
    probs.extend(log_w.iter().map(|&w| (w - max).exp()));
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(max + total.ln() - (n as f64).ln())
}

/// Complete record of one filter pass, stored time-major (`t * N + j`).
#[derive(Debug, Clone)]
pub struct FilterState<P> {
    pub n: usize,
    pub horizon: usize,
    pub temperature: f64,
    pub particles: Vec<P>,
    /// `ancestors[t * N + j]` is the parent at `t - 1` of particle `j` at `t`;
    /// the row for `t = 0` is unused and holds `j`.
    pub ancestors: Vec<usize>,
    /// Unnormalised tempered log-weights `a log g_t`.
    pub log_weights: Vec<f64>,
    /// Normalised weights.
    pub weights: Vec<f64>,
    pub log_likelihood: f64,
}

impl<P> FilterState<P> {
    pub fn particle(&self, t: usize, j: usize) -> &P {
        &self.particles[t * self.n + j]
    }

    pub fn weights_at(&self, t: usize) -> &[f64] {
        &self.weights[t * self.n..(t + 1) * self.n]
    }

    pub fn log_weights_at(&self, t: usize) -> &[f64] {
        &self.log_weights[t * self.n..(t + 1) * self.n]
    }

    pub fn ancestors_at(&self, t: usize) -> &[usize] {
        &self.ancestors[t * self.n..(t + 1) * self.n]
    }
}

/// An index path and the states it selects.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<P> {
    pub indices: Vec<usize>,
    pub states: Vec<P>,
}

fn run_filter<S, R>(
    model: &S,
    n: usize,
    a: f64,
    reference: Option<&[S::Particle]>,
    rng: &mut R,
) -> Result<FilterState<S::Particle>, FilterError>
where
    S: StateSpaceModel,
    R: Rng + ?Sized,
{
    let horizon = model.horizon();
    if n == 0 {
        return Err(FilterError::Input("particle count must be positive".into()));
    }
    if horizon == 0 {
        return Err(FilterError::Input("empty series".into()));
    }
    if let Some(r) = reference {
        if r.len() != horizon {
            return Err(FilterError::Input(format!(
                "reference length {} does not match horizon {horizon}",
                r.len()
            )));
        }
    }
    let free = if reference.is_some() { n - 1 } else { n };
    let mut particles = Vec::with_capacity(n * horizon);
    let mut ancestors = Vec::with_capacity(n * horizon);
    let mut log_weights = vec![0.0; n * horizon];
    let mut weights = Vec::with_capacity(n * horizon);
    let mut probs = Vec::with_capacity(n);
    let mut idx = Vec::with_capacity(n);

    for _ in 0..free {
        particles.push(model.sample_initial(rng));
    }
    if let Some(r) = reference {
        particles.push(r[0].clone());
    }
    ancestors.extend(0..n);
    let mut log_lik = weigh(model, 0, a, &particles[0..n], &mut log_weights[0..n], &mut probs)?;
    weights.extend_from_slice(&probs);

    for t in 1..horizon {
        if reference.is_some() {
            multinomial_indices(&probs, free, rng, &mut idx);
            idx.push(n - 1);
        } else {
            let u: f64 = rng.random();
            systematic_indices(&probs, u, free, &mut idx);
        }
        let prev_base = (t - 1) * n;
        for &parent in idx.iter().take(free) {
            let x = model.sample_transition(t, &particles[prev_base + parent], rng);
            particles.push(x);
        }
        if let Some(r) = reference {
            particles.push(r[t].clone());
        }
        ancestors.extend_from_slice(&idx);
        let base = t * n;
        log_lik += weigh(model, t, a, &particles[base..base + n], &mut log_weights[base..base + n], &mut probs)?;
        weights.extend_from_slice(&probs);
    }
    Ok(FilterState { n, horizon, temperature: a, particles, ancestors, log_weights, weights, log_likelihood: log_lik })
}

/// Bootstrap filter targeting `p(x | theta) p(y | x, theta)^a`.
///
/// The returned log-likelihood is `sum_t log(mean_j exp(a log g_t(x_t^j)))`,
/// whose exponential is unbiased for `∫ p(y | theta, x)^a p(x | theta) dx`.
pub fn bootstrap_filter<S, R>(model: &S, n: usize, a: f64, rng: &mut R) -> Result<FilterState<S::Particle>, FilterError>
where
    S: StateSpaceModel,
    R: Rng + ?Sized,
{
    if n < 2 {
        return Err(FilterError::Input(format!("bootstrap filter needs N >= 2, got {n}")));
    }
    run_filter(model, n, a, None, rng)
}

/// Likelihood-only bootstrap filter: keeps one generation in memory.
/// Consumes the RNG exactly as [`bootstrap_filter`] does.
pub fn bootstrap_log_likelihood<S, R>(model: &S, n: usize, a: f64, rng: &mut R) -> Result<f64, FilterError>
where
    S: StateSpaceModel,
    R: Rng + ?Sized,
{
    if n < 2 {
        return Err(FilterError::Input(format!("bootstrap filter needs N >= 2, got {n}")));
    }
    let horizon = model.horizon();
    let mut current: Vec<S::Particle> = (0..n).map(|_| model.sample_initial(rng)).collect();
    let mut next = Vec::with_capacity(n);
    let mut log_w = vec![0.0; n];
    let mut probs = Vec::with_capacity(n);
    let mut idx = Vec::with_capacity(n);
    let mut log_lik = weigh(model, 0, a, &current, &mut log_w, &mut probs)?;
    for t in 1..horizon {
        let u: f64 = rng.random();
        systematic_indices(&probs, u, n, &mut idx);
        next.clear();
        for &parent in &idx {
            next.push(model.sample_transition(t, &current[parent], rng));
        }
        std::mem::swap(&mut current, &mut next);
        log_lik += weigh(model, t, a, &current, &mut log_w, &mut probs)?;
    }
    Ok(log_lik)
}

/// Conditional SMC: the reference path is held in slot `N - 1` at every
/// step while the remaining `N - 1` slots are regenerated. Free ancestors
/// are independent multinomial draws over all `N` weights, which is the
/// conditional law of the other ancestors given the reference one. Plain
/// systematic resampling of the free slots does not have that law and
/// biases the kernel when `N > 2`.
pub fn conditional_smc<S, R>(
    model: &S,
    n: usize,
    a: f64,
    reference: &[S::Particle],
    rng: &mut R,
) -> Result<FilterState<S::Particle>, FilterError>
where
    S: StateSpaceModel,
    R: Rng + ?Sized,
{
    run_filter(model, n, a, Some(reference), rng)
}

/// Backward simulation: `J_T ~ W_T`, then for `t = T-1, ..., 1`
/// `P(J_t = j) ∝ w_t^j f(x_{t+1}^{J_{t+1}} | x_t^j)`.
pub fn backward_simulate<S, R>(
    fs: &FilterState<S::Particle>,
    model: &S,
    rng: &mut R,
) -> Result<Trajectory<S::Particle>, FilterError>
where
    S: StateSpaceModel,
    R: Rng + ?Sized,
{
    let n = fs.n;
    let horizon = fs.horizon;
    let mut indices = vec![0; horizon];
    let mut states = Vec::with_capacity(horizon);
    indices[horizon - 1] = sample_index(fs.weights_at(horizon - 1), rng);
    let mut back = vec![0.0; n];
    let mut probs = Vec::with_capacity(n);
    for t in (0..horizon - 1).rev() {
        let next = fs.particle(t + 1, indices[t + 1]);
        let lw = fs.log_weights_at(t);
        for j in 0..n {
            back[j] = if lw[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lw[j] + model.transition_logdensity(t + 1, fs.particle(t, j), next)
            };
        }
        let lse = log_sum_exp(&back);
        if !lse.is_finite() {
            return Err(FilterError::BackwardDegenerate { t });
        }
        probs.clear();
        probs.extend(back.iter().map(|&b| (b - lse).exp()));
        indices[t] = sample_index(&probs, rng);
    }
    for (t, &j) in indices.iter().enumerate() {
        states.push(fs.particle(t, j).clone());
    }
    Ok(Trajectory { indices, states })
}

/// Convenience wrapper: conditional SMC followed by backward simulation.
pub fn csmc_backward<S, R>(model: &S, n: usize, a: f64, reference: &[S::Particle], rng: &mut R) -> Result<Trajectory<S::Particle>, FilterError>
where
    S: StateSpaceModel,
    R: Rng + ?Sized,
{
    if n == 1 {
        return Ok(Trajectory { indices: vec![0; reference.len()], states: reference.to_vec() });
    }
    let fs = conditional_smc(model, n, a, reference, rng)?;
    backward_simulate(&fs, model, rng)
}

/// Builds the index vector for systematic resampling of the whole cloud.
pub fn resample_indices(weights: &[f64], u: f64) -> Vec<usize> {
    systematic_vec(weights, u, weights.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Gaussian random walk observed with unit noise.
    struct Walk {
        y: Vec<f64>,
    }

    impl StateSpaceModel for Walk {
        type Particle = f64;
        fn horizon(&self) -> usize {
            self.y.len()
        }
        fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
            crate::stats::std_normal(rng)
        }
        fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, prev: &f64, rng: &mut R) -> f64 {
            prev + crate::stats::std_normal(rng)
        }
        fn initial_logdensity(&self, x: &f64) -> f64 {
            crate::stats::normal_logpdf(*x, 0.0, 1.0)
        }
        fn transition_logdensity(&self, _t: usize, prev: &f64, x: &f64) -> f64 {
            crate::stats::normal_logpdf(*x, *prev, 1.0)
        }
        fn observation_logdensity(&self, t: usize, x: &f64) -> f64 {
            crate::stats::normal_logpdf(self.y[t], *x, 1.0)
        }
    }

    /// Observation density that ignores the state.
    struct Flat {
        c: f64,
        horizon: usize,
    }

    impl StateSpaceModel for Flat {
        type Particle = f64;
        fn horizon(&self) -> usize {
            self.horizon
        }
        fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
            rng.random()
        }
        fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, _prev: &f64, rng: &mut R) -> f64 {
            rng.random()
        }
        fn initial_logdensity(&self, _x: &f64) -> f64 {
            0.0
        }
        fn transition_logdensity(&self, _t: usize, _prev: &f64, _x: &f64) -> f64 {
            0.0
        }
        fn observation_logdensity(&self, _t: usize, _x: &f64) -> f64 {
            self.c.ln()
        }
    }

    #[test]
    fn multinomial_frequencies() {
        let w = [0.1, 0.0, 0.6, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut counts = [0usize; 4];
        let mut out = Vec::new();
        let reps = 20_000;
        for _ in 0..reps {
            multinomial_indices(&w, 3, &mut rng, &mut out);
            assert!(out.windows(2).all(|p| p[0] <= p[1]));
            for &i in &out {
                counts[i] += 1;
            }
        }
        let n = (3 * reps) as f64;
        assert_eq!(counts[1], 0);
        for j in 0..4 {
            let se = (w[j] * (1.0 - w[j]) / n).sqrt();
            assert!((counts[j] as f64 / n - w[j]).abs() <= 4.0 * se + 1e-12, "{j}: {counts:?}");
        }
    }

    #[test]
    fn systematic_examples() {
        let mut out = Vec::new();
        systematic_indices(&[1.0, 0.0], 0.7, 2, &mut out);
        assert_eq!(out, vec![0, 0]);
        systematic_indices(&[0.75, 0.25], 0.4, 4, &mut out);
        assert_eq!(out, vec![0, 0, 0, 1]);
        for &u in &[0.0, 0.3, 0.999_999] {
            systematic_indices(&[0.2; 5], u, 5, &mut out);
            assert_eq!(out, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn zero_temperature_gives_zero_loglik() {
        let m = Walk { y: vec![100.0, -3.0, 5.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fs = bootstrap_filter(&m, 10, 0.0, &mut rng).unwrap();
        assert_eq!(fs.log_likelihood, 0.0);
        assert!(fs.weights.iter().all(|&w| (w - 0.1).abs() < 1e-15));
    }

    #[test]
    fn constant_observation_density() {
        let m = Flat { c: 0.3, horizon: 7 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fs = bootstrap_filter(&m, 5, 1.0, &mut rng).unwrap();
        assert!((fs.log_likelihood - 7.0 * 0.3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn streaming_matches_full_filter() {
        let m = Walk { y: vec![0.3, -0.2, 1.5, 0.7, -1.0] };
        let full = bootstrap_filter(&m, 64, 0.7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let streamed = bootstrap_log_likelihood(&m, 64, 0.7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(full.log_likelihood, streamed);
    }

    #[test]
    fn normalised_weights_sum_to_one() {
        let m = Walk { y: vec![0.3, 8.0, -10.0, 0.7] };
        let fs = bootstrap_filter(&m, 50, 1.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for t in 0..4 {
            let s: f64 = fs.weights_at(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(fs.ancestors_at(t).iter().all(|&a| a < 50));
        }
    }

    #[test]
    fn csmc_keeps_reference() {
        let m = Walk { y: vec![0.3, -0.2, 1.5, 0.7, -1.0] };
        let reference = vec![0.1, 0.2, -0.3, 0.4, 1e-7];
        let fs = conditional_smc(&m, 8, 1.0, &reference, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for (t, r) in reference.iter().enumerate() {
            assert_eq!(fs.particle(t, 7).to_bits(), r.to_bits());
            if t > 0 {
                assert_eq!(fs.ancestors_at(t)[7], 7);
            }
        }
        let single = csmc_backward(&m, 1, 1.0, &reference, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(single.states, reference);
    }

    #[test]
    fn degenerate_filter_reports_time() {
        struct Dead;
        impl StateSpaceModel for Dead {
            type Particle = f64;
            fn horizon(&self) -> usize {
                3
            }
            fn sample_initial<R: Rng + ?Sized>(&self, _rng: &mut R) -> f64 {
                0.0
            }
            fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, _p: &f64, _rng: &mut R) -> f64 {
                0.0
            }
            fn initial_logdensity(&self, _x: &f64) -> f64 {
                0.0
            }
            fn transition_logdensity(&self, _t: usize, _p: &f64, _x: &f64) -> f64 {
                0.0
            }
            fn observation_logdensity(&self, t: usize, _x: &f64) -> f64 {
                if t == 2 { f64::NEG_INFINITY } else { 0.0 }
            }
        }
        let err = bootstrap_filter(&Dead, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(err, FilterError::Degenerate { t: 2 });
    }
}
