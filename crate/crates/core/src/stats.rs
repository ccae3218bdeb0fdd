//! Log-space weight arithmetic and the handful of densities and samplers the
//! models need.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log(sum(exp(xs)))`, `-inf` for an empty slice or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return if max == f64::INFINITY { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalises log-weights in place so that `exp` of them sums to one.
/// Returns the log of the normalising sum, `-inf` if every weight is zero
/// (in which case the slice is left untouched).
pub fn normalize_log_weights(log_w: &mut [f64]) -> f64 {
    let lse = log_sum_exp(log_w);
    if lse.is_finite() {
        for w in log_w.iter_mut() {
            *w -= lse;
        }
    }
    lse
}

/// Exponentiates normalised log-weights into `out`.
pub fn exp_weights(log_w: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.extend(log_w.iter().map(|&w| (w - max).exp()));
    let total: f64 = out.iter().sum();
    for w in out.iter_mut() {
        *w /= total;
    }
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Inverse-gamma log density with shape `alpha` and scale `beta`:
/// `p(x) ∝ x^(-alpha-1) exp(-beta / x)`.
pub fn inv_gamma_logpdf(x: f64, alpha: f64, beta: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    alpha * beta.ln() - ln_gamma(alpha) - (alpha + 1.0) * x.ln() - beta / x
}

/// Draws from the inverse-gamma with shape `alpha` and scale `beta`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(alpha, 1.0 / beta).expect("inverse-gamma parameters must be positive");
    1.0 / g.sample(rng)
}

pub fn beta_logpdf(u: f64, a: f64, b: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Standard normal restricted to `[lo, hi]` with `lo > 0`, by Robert's
/// exponential-proposal rejection sampler.
fn upper_tail_normal<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = lo + exp.sample(rng);
        if z > hi {
            continue;
        }
        let accept = (-0.5 * (z - rate) * (z - rate)).exp();
        if rng.random::<f64>() <= accept {
            return z;
        }
    }
}

/// Standard normal restricted to `[lo, hi]`, `lo <= 0` after the caller's
/// reflection, so `Phi(lo)` carries full relative precision.
fn std_truncated_normal<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo < hi);
    if lo > 0.0 {
        return -std_truncated_normal(-hi, -lo, rng);
    }
    if hi < -30.0 {
        // both ends deep in the lower tail: Phi underflows, use rejection
        return -upper_tail_normal(-hi, -lo, rng);
    }
    let p_lo = std_normal_cdf(lo);
    let p_hi = std_normal_cdf(hi);
    loop {
        let u = p_lo + (p_hi - p_lo) * rng.random::<f64>();
        let z = std_normal_quantile(u);
        if z.is_finite() && z >= lo && z <= hi {
            return z;
        }
        // rounding at the interval edge; clamp when the interval is tiny
        if p_hi - p_lo <= f64::EPSILON * p_hi {
            return 0.5 * (lo + hi);
        }
    }
}

/// Draws from `N(mean, sd^2)` truncated to `(lo, hi)` by inverse-CDF sampling,
/// reflecting into the lower tail so the truncation bounds keep their
/// precision when they sit many standard deviations from the mean.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> f64 {
    let z = std_truncated_normal((lo - mean) / sd, (hi - mean) / sd, rng);
    (mean + sd * z).clamp(lo.next_up(), hi.next_down())
}

/// A Gaussian given in information form: precision `q` and linear term `b`,
/// i.e. density `∝ exp(-x'Qx/2 + b'x)`.
#[derive(Debug, Clone)]
pub struct GaussianInfo {
    pub mean: DVector<f64>,
    pub chol: DMatrix<f64>,
    pub precision: DMatrix<f64>,
}

impl GaussianInfo {
    /// Factorises the precision, adding `1e-10` jitter to the diagonal when
    /// the plain Cholesky fails.
    pub fn new(precision: DMatrix<f64>, linear: DVector<f64>) -> Option<Self> {
        let chol = match precision.clone().cholesky() {
            Some(c) => c,
            None => {
                let n = precision.nrows();
                (precision.clone() + DMatrix::<f64>::identity(n, n) * 1e-10).cholesky()?
            }
        };
        let mean = chol.solve(&linear);
        Some(Self { mean, chol: chol.l(), precision })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.dim();
        let l = &self.chol;
        let linv = l.clone().solve_lower_triangular(&DMatrix::identity(n, n)).expect("triangular");
        linv.transpose() * linv
    }

    /// `mean + L^{-T} z` with `z` standard normal; consumes exactly `dim`
    /// normal draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let z = DVector::from_fn(n, |_, _| std_normal(rng));
        let lt = self.chol.transpose();
        let w = lt.solve_upper_triangular(&z).expect("triangular");
        &self.mean + w
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> f64 {
        let n = self.dim() as f64;
        let d = x - &self.mean;
        let quad = (d.transpose() * &self.precision * &d)[(0, 0)];
        let log_det: f64 = self.chol.diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        -0.5 * (n * LN_2PI - log_det + quad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lse_handles_infinities() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn normalisation_sums_to_one() {
        let mut w = vec![-1000.0, -1001.0, -999.5, f64::NEG_INFINITY];
        normalize_log_weights(&mut w);
        let s: f64 = w.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &x in &[-35.0, -8.0, -1.0, 0.0, 0.5, 3.0] {
            let p = std_normal_cdf(x);
            assert!((std_normal_quantile(p) - x).abs() < 1e-8 * x.abs().max(1.0), "x = {x}");
        }
    }

    #[test]
    fn truncated_normal_respects_bounds_and_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // mean well outside the interval: far tail
        for _ in 0..2000 {
            let v = sample_truncated_normal(1.3, 0.01, -1.0, 1.0, &mut rng);
            assert!(v > -1.0 && v < 1.0);
        }
        for _ in 0..200 {
            let v = sample_truncated_normal(-200.0, 1.0, -1.0, 1.0, &mut rng);
            assert!(v > -1.0 && v < 1.0);
        }
        // interior case: truncated at 0 from below, mean of half-normal
        let n = 100_000;
        let mut s = 0.0;
        for _ in 0..n {
            s += sample_truncated_normal(0.0, 1.0, 0.0, f64::INFINITY, &mut rng);
        }
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        let se = (1.0 - 2.0 / std::f64::consts::PI).sqrt() / (n as f64).sqrt();
        assert!((s / n as f64 - expected).abs() < 4.0 * se);
    }

    #[test]
    fn upper_tail_sampler_mean() {
        // E[Z | Z > a] = phi(a) / (1 - Phi(a))
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = 3.0;
        let n = 50_000;
        let m: f64 = (0..n).map(|_| upper_tail_normal(a, f64::INFINITY, &mut rng)).sum::<f64>() / n as f64;
        let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expected = phi / (1.0 - std_normal_cdf(a));
        assert!((m - expected).abs() < 0.01, "{m} vs {expected}");
    }

    #[test]
    fn inverse_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (alpha, beta) = (6.0, 0.5);
        let n = 100_000;
        let m: f64 = (0..n).map(|_| sample_inv_gamma(alpha, beta, &mut rng)).sum::<f64>() / n as f64;
        let expected = beta / (alpha - 1.0);
        let sd = expected / (alpha - 2.0).sqrt();
        assert!((m - expected).abs() < 4.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn gaussian_info_matches_moments() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let g = GaussianInfo::new(q.clone(), b.clone()).unwrap();
        let mean = q.clone().try_inverse().unwrap() * b;
        assert!((g.mean.clone() - mean).norm() < 1e-12);
        let cov = g.covariance();
        let expected = q.try_inverse().unwrap();
        assert!((cov - expected).norm() < 1e-12);
    }
}
