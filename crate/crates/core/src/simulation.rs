//! Synthetic data: a binary chain with standard-normal null and a probit-uniform
//! alternative `Phi^{-1}(U)`, `U ~ Uniform(0, 1/c)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::averaging::PosteriorTrack;
use crate::error::{Error, Result};
use crate::fb::forward_backward;
use crate::math::{self, std_normal_ln_pdf, LOG_FLOOR};
use crate::model::{stationary, Density, Gaussian, LabelSequence, TransitionBinary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub replicates: usize,
    /// Concentration of the alternative: support ends at the `1/c` quantile.
    pub c: f64,
    /// Stationary proportion of the class of interest.
    pub u: f64,
    /// Shifting rate.
    pub l: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { n: 100, replicates: 100, c: 5.0, u: 0.05, l: 0.6, seed: 0 }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if !(self.c >= 1.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("c must be >= 1, got {}", self.c)));
        }
        let lu = self.l * self.u;
        let lv = self.l * (1.0 - self.u);
        if !(lu > 0.0 && lu < 1.0 && lv > 0.0 && lv < 1.0) || self.l > 1.0 {
            return Err(Error::invalid(format!("invalid (l, u) = ({}, {})", self.l, self.u)));
        }
        Ok(())
    }

    pub fn transition(&self) -> Result<TransitionBinary> {
        make_pi(self.l, self.u)
    }

    pub fn alternative(&self) -> ProbitUniform {
        ProbitUniform::new(self.c)
    }

    /// The null density used by the generator.
    pub fn null(&self) -> Gaussian {
        Gaussian::standard()
    }
}

/// `((1 - lu, lu), (l(1-u), 1 - l(1-u)))`.
pub fn make_pi(l: f64, u: f64) -> Result<TransitionBinary> {
    if !(0.0..=1.0).contains(&l) || !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid(format!("need l, u in [0,1], got ({l}, {u})")));
    }
    TransitionBinary::new(1.0 - l * u, l * u, l * (1.0 - u), 1.0 - l * (1.0 - u))
}

/// Law of `Phi^{-1}(U)` with `U ~ Uniform(0, 1/c)`: density `c * phi(x)` below
/// the `1/c` quantile of the standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbitUniform {
    pub c: f64,
    pub upper: f64,
}

impl ProbitUniform {
    pub fn new(c: f64) -> Self {
        let upper = if c <= 1.0 { f64::INFINITY } else { math::probit(1.0 / c) };
        Self { c, upper }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Open interval so the quantile stays finite.
        let u = (rng.random::<f64>() + f64::EPSILON) / (1.0 + 2.0 * f64::EPSILON);
        math::probit(u / self.c)
    }
}

impl Density for ProbitUniform {
    fn ln_pdf(&self, x: f64) -> f64 {
        true_alternative_logpdf(x, self.c)
    }
}

/// `log c + log phi(x)` on the support, `-inf` above it.
pub fn true_alternative_logpdf(x: f64, c: f64) -> f64 {
    let upper = if c <= 1.0 { f64::INFINITY } else { math::probit(1.0 / c) };
    if x <= upper {
        c.ln() + std_normal_ln_pdf(x)
    } else {
        f64::NEG_INFINITY
    }
}

/// Random stream for one replicate.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Draws one replicate `(X, S)`.
pub fn sample_dataset(cfg: &SimulationConfig, replicate: usize) -> Result<(Vec<f64>, LabelSequence)> {
    cfg.validate()?;
    let pi = cfg.transition()?;
    let (_, q1) = stationary(&pi)?;
    let alt = cfg.alternative();
    let mut rng = replicate_rng(cfg.seed, replicate);
    let mut xs = Vec::with_capacity(cfg.n);
    let mut labels = Vec::with_capacity(cfg.n);
    let mut s = usize::from(rng.random::<f64>() < q1);
    for t in 0..cfg.n {
        if t > 0 {
            s = usize::from(rng.random::<f64>() < pi.get(s, 1));
        }
        let x = if s == 0 {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        } else {
            alt.sample(&mut rng)
        };
        xs.push(x);
        labels.push(s);
    }
    Ok((xs, LabelSequence::binary(labels)?))
}

/// Exact `P(S_t = 0 | X)` under a two-state chain with the given densities.
pub(crate) fn two_state_posterior(
    data: &[f64],
    pi: &TransitionBinary,
    null: &dyn Density,
    alt: &dyn Density,
) -> Result<Vec<f64>> {
    let (q0, q1) = stationary(pi)?;
    let floor = |v: f64| if v == f64::NEG_INFINITY { LOG_FLOOR } else { v };
    let table: Vec<Vec<f64>> = data.iter().map(|&x| vec![floor(null.ln_pdf(x)), floor(alt.ln_pdf(x))]).collect();
    let lp = |p: f64| if p > 0.0 { p.ln() } else { LOG_FLOOR };
    let trans = vec![vec![lp(pi.pi00), lp(pi.pi01)], vec![lp(pi.pi10), lp(pi.pi11)]];
    let smoothed = forward_backward(&table, &trans, &[lp(q0), lp(q1)])?;
    Ok(smoothed.resp.iter().map(|r| r[0]).collect())
}

/// `T^(th)`: posterior of the null class under the generating model.
pub fn theoretical_posterior(data: &[f64], cfg: &SimulationConfig) -> Result<PosteriorTrack> {
    cfg.validate()?;
    let values = two_state_posterior(data, &cfg.transition()?, &cfg.null(), &cfg.alternative())?;
    PosteriorTrack::new(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(), "theoretical")
}
