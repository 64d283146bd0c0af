//! Small numeric helpers shared across modules.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Floor used in place of `ln(0)` where a finite value is required.
pub const LOG_FLOOR: f64 = -1e300;

/// Probability clamp applied before logs of point parameters.
pub const PROB_EPS: f64 = 1e-12;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights into probabilities in place of a new vector.
pub fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_weights);
    log_weights.iter().map(|&w| (w - lse).exp()).collect()
}

/// Gaussian log-density with the given mean and variance.
#[inline]
pub fn normal_ln_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln() + d * d / variance)
}

/// Log density of `N(mean, 1 / (scale * precision))`, stable when the
/// precision is subnormal or the deviation is huge.
pub fn normal_ln_pdf_precision(x: f64, mean: f64, scale: f64, precision: f64) -> f64 {
    let z = (x - mean) * scale.sqrt() * precision.sqrt();
    0.5 * (scale.ln() + precision.ln() - LN_2PI - z * z)
}

#[inline]
pub fn std_normal_ln_pdf(x: f64) -> f64 {
    -0.5 * (LN_2PI + x * x)
}

/// Standard normal quantile.
pub fn probit(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Log-density of a Dirichlet distribution at `x` (entries on the simplex).
pub fn dirichlet_ln_pdf(x: &[f64], alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    let mut out = ln_gamma(total);
    for (&xi, &ai) in x.iter().zip(alpha) {
        out += (ai - 1.0) * clamp_prob(xi).ln() - ln_gamma(ai);
    }
    out
}

/// Log-density of Gamma(shape, rate) at `x`.
pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// KL(Dir(alpha) || Dir(alpha0)).
pub fn dirichlet_kl(alpha: &[f64], alpha0: &[f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let s0: f64 = alpha0.iter().sum();
    let ds = digamma(s);
    let mut kl = ln_gamma(s) - ln_gamma(s0);
    for (&a, &a0) in alpha.iter().zip(alpha0) {
        kl += ln_gamma(a0) - ln_gamma(a) + (a - a0) * (digamma(a) - ds);
    }
    kl
}

/// KL(Gamma(a, b) || Gamma(a0, b0)) in the shape/rate parameterization.
pub fn gamma_kl(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    (a - a0) * digamma(a) - ln_gamma(a) + ln_gamma(a0) + a0 * (b.ln() - b0.ln()) + a * (b0 - b) / b
}

/// Expected logs of a Dirichlet: `psi(alpha_i) - psi(sum alpha)`.
pub fn dirichlet_expected_log(alpha: &[f64]) -> Vec<f64> {
    let ds = digamma(alpha.iter().sum());
    alpha.iter().map(|&a| digamma(a) - ds).collect()
}
