//! Model-averaging weights over a collection of fitted models.
//!
//! Four flavors are provided:
//!
//! - [`vb_weights`]: `alpha_m ∝ P(m) exp(ELBO_m)`, the optimum of the joint
//!   KL objective over `Q(M)` for fixed per-model variational posteriors.
//! - [`pe_weights`]: Bayes' identity evaluated at the posterior mean of the
//!   parameters, with the variational posterior standing in for the exact one.
//! - [`is_weights`]: importance sampling of the evidence with the variational
//!   posterior as proposal.
//! - [`oracle_weights`]: the simplex-constrained regression of a known target
//!   track on the per-model tracks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::averaging::PosteriorTrack;
use crate::error::{Error, Result};
use crate::fb::ForwardPass;
use crate::math::{self, clamp_prob, dirichlet_ln_pdf, gamma_ln_pdf, normal_ln_pdf_precision};
use crate::model::{MixtureAlternative, NullDensity, TransitionBinary};
use crate::simplex::SimplexProblem;
use crate::vbem::{FitResult, PriorSpec, VariationalChain, VariationalPosterior};

const NORMALIZATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WeightKind {
    Vb,
    Pe,
    Is,
    Oracle,
}

impl WeightKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeightKind::Vb => "VB",
            WeightKind::Pe => "PE",
            WeightKind::Is => "IS",
            WeightKind::Oracle => "ORACLE",
        }
    }
}

impl std::fmt::Display for WeightKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Normalized weights over a model collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub kind: WeightKind,
    /// The `m` of each model.
    pub model_ids: Vec<usize>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, kind: WeightKind, model_ids: Vec<usize>) -> Result<Self> {
        if values.len() != model_ids.len() {
            return Err(Error::DimensionMismatch { expected: model_ids.len(), actual: values.len() });
        }
        if values.is_empty() {
            return Err(Error::invalid("empty weight vector"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!("weights must be finite and nonnegative: {values:?}")));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!("weights sum to {total}")));
        }
        Ok(Self { values, kind, model_ids })
    }

    /// Normalizes `log_prior + log_score` with log-sum-exp.
    pub fn from_log_scores(log_scores: &[f64], prior: &[f64], kind: WeightKind, model_ids: Vec<usize>) -> Result<Self> {
        if log_scores.len() != prior.len() {
            return Err(Error::DimensionMismatch { expected: prior.len(), actual: log_scores.len() });
        }
        if let Some(i) = log_scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite { location: format!("log score of model {i}"), value: log_scores[i] });
        }
        check_prior(prior)?;
        let logs: Vec<f64> = log_scores.iter().zip(prior).map(|(s, p)| s + p.ln()).collect();
        let mut values = math::softmax(&logs);
        // Renormalize once more so the sum is exact to rounding.
        let total: f64 = values.iter().sum();
        values.iter_mut().for_each(|v| *v /= total);
        Self::new(values, kind, model_ids)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest weight (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }
}

fn check_prior(prior: &[f64]) -> Result<()> {
    if prior.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::invalid("model prior must be positive"));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::invalid(format!("model prior sums to {total}")));
    }
    Ok(())
}

/// Uniform prior over `count` models.
pub fn uniform_prior(count: usize) -> Vec<f64> {
    vec![1.0 / count as f64; count]
}

fn model_ids(fits: &[FitResult]) -> Vec<usize> {
    fits.iter().map(|f| f.m).collect()
}

/// Variational weights from raw lower bounds.
pub fn vb_weights_from_bounds(bounds: &[f64], prior: &[f64], model_ids: Vec<usize>) -> Result<WeightVector> {
    WeightVector::from_log_scores(bounds, prior, WeightKind::Vb, model_ids)
}

/// `alpha_m ∝ P(m) exp(ELBO_m)`.
pub fn vb_weights(fits: &[FitResult], prior: &[f64]) -> Result<WeightVector> {
    let bounds: Vec<f64> = fits.iter().map(|f| f.log_evidence_bound).collect();
    vb_weights_from_bounds(&bounds, prior, model_ids(fits))
}

/// Concrete parameter values of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    pub pi: TransitionBinary,
    pub props: Vec<f64>,
    pub means: Vec<f64>,
    pub precision: f64,
}

impl ParamPoint {
    pub fn posterior_mean(q: &VariationalPosterior) -> Self {
        Self {
            pi: q.mean_transition(),
            props: q.mean_props(),
            means: q.ng_means.clone(),
            precision: q.mean_precision(),
        }
    }

    pub fn from_mixture(pi: TransitionBinary, alt: &MixtureAlternative) -> Self {
        Self { pi, props: alt.props.clone(), means: alt.means.clone(), precision: alt.precision }
    }

    fn log_trans(&self) -> [[f64; 2]; 2] {
        let l = |p: f64| clamp_prob(p).ln();
        [[l(self.pi.pi00), l(self.pi.pi01)], [l(self.pi.pi10), l(self.pi.pi11)]]
    }

    fn log_initial(&self) -> Result<[f64; 2]> {
        let clamped = TransitionBinary {
            pi00: clamp_prob(self.pi.pi00),
            pi01: clamp_prob(self.pi.pi01),
            pi10: clamp_prob(self.pi.pi10),
            pi11: clamp_prob(self.pi.pi11),
        };
        let (q0, q1) = crate::model::stationary(&clamped)?;
        Ok([clamp_prob(q0).ln(), clamp_prob(q1).ln()])
    }

    fn emission(&self, x: f64, state: usize, null: &NullDensity) -> f64 {
        if state == 0 {
            null.ln_pdf(x)
        } else {
            normal_ln_pdf_precision(x, self.means[state - 1], 1.0, self.precision)
        }
    }

    /// `log P(X | m, theta)` by the forward recursion.
    pub fn log_likelihood(&self, data: &[f64], null: &NullDensity) -> Result<f64> {
        let m = self.means.len();
        let lt = self.log_trans();
        let li = self.log_initial()?;
        let log_props: Vec<f64> = self.props.iter().map(|&p| clamp_prob(p).ln()).collect();
        let log_trans: Vec<Vec<f64>> = (0..=m)
            .map(|k| {
                let r = lt[usize::from(k > 0)];
                std::iter::once(r[0]).chain(log_props.iter().map(|lp| r[1] + lp)).collect()
            })
            .collect();
        let log_init: Vec<f64> = std::iter::once(li[0]).chain(log_props.iter().map(|lp| li[1] + lp)).collect();
        let table: Vec<Vec<f64>> = data.iter().map(|&x| (0..=m).map(|s| self.emission(x, s, null)).collect()).collect();
        Ok(ForwardPass::run(&table, &log_trans, &log_init)?.log_normalizer())
    }

    /// `log P(X | Z, theta) + log P(Z | theta)` for one expanded path.
    pub fn log_complete(&self, data: &[f64], path: &[usize], null: &NullDensity) -> Result<f64> {
        let lt = self.log_trans();
        let li = self.log_initial()?;
        let log_p = |k: usize| clamp_prob(self.props[k - 1]).ln();
        let z0 = path[0];
        let mut acc = if z0 == 0 { li[0] } else { li[1] + log_p(z0) };
        for w in path.windows(2) {
            let from = usize::from(w[0] > 0);
            acc += if w[1] == 0 { lt[from][0] } else { lt[from][1] + log_p(w[1]) };
        }
        for (&x, &z) in data.iter().zip(path) {
            acc += self.emission(x, z, null);
        }
        Ok(acc)
    }
}

/// `log P(theta | m)` under the conjugate prior.
pub fn log_prior_density(theta: &ParamPoint, prior: &PriorSpec) -> f64 {
    let mut out = dirichlet_ln_pdf(&[theta.pi.pi00, theta.pi.pi01], &prior.dir_row0)
        + dirichlet_ln_pdf(&[theta.pi.pi10, theta.pi.pi11], &prior.dir_row1)
        + gamma_ln_pdf(theta.precision, prior.gamma_shape, prior.gamma_rate);
    if theta.props.len() > 1 {
        out += dirichlet_ln_pdf(&theta.props, &prior.dir_props);
    }
    out + theta
        .means
        .iter()
        .map(|&mu| normal_ln_pdf_precision(mu, prior.ng_mean, prior.ng_scale, theta.precision))
        .sum::<f64>()
}

/// `log Q(theta)` under the factorized variational posterior.
pub fn log_posterior_density(theta: &ParamPoint, q: &VariationalPosterior) -> f64 {
    let mut out = dirichlet_ln_pdf(&[theta.pi.pi00, theta.pi.pi01], &q.dir_row0)
        + dirichlet_ln_pdf(&[theta.pi.pi10, theta.pi.pi11], &q.dir_row1)
        + gamma_ln_pdf(theta.precision, q.gamma_shape, q.gamma_rate);
    if theta.props.len() > 1 {
        out += dirichlet_ln_pdf(&theta.props, &q.dir_props);
    }
    out + theta
        .means
        .iter()
        .zip(q.ng_means.iter().zip(&q.ng_scales))
        .map(|(&mu, (&mk, &bk))| normal_ln_pdf_precision(mu, mk, bk, theta.precision))
        .sum::<f64>()
}

/// Plug-in log evidence `log P(X|m,theta*) + log P(theta*|m) - log Q(theta*)`.
pub fn pe_log_evidence(fit: &FitResult, data: &[f64]) -> Result<f64> {
    let theta = ParamPoint::posterior_mean(&fit.posterior);
    assert!(theta.precision > 0.0, "posterior mean precision must be positive");
    let ll = theta.log_likelihood(data, &fit.null)?;
    Ok(ll + log_prior_density(&theta, &fit.prior) - log_posterior_density(&theta, &fit.posterior))
}

pub fn pe_weights(fits: &[FitResult], prior: &[f64], data: &[f64]) -> Result<WeightVector> {
    let scores = fits.iter().map(|f| pe_log_evidence(f, data)).collect::<Result<Vec<_>>>()?;
    WeightVector::from_log_scores(&scores, prior, WeightKind::Pe, model_ids(fits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for IsConfig {
    fn default() -> Self {
        Self { samples: 1000, seed: 0 }
    }
}

/// Importance-sampling estimate of one model's log evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsEstimate {
    pub log_evidence: f64,
    /// Delta-method standard error of `log_evidence`.
    pub log_se: f64,
    /// Effective sample size of the normalized importance weights.
    pub ess: f64,
    pub samples: usize,
}

impl IsEstimate {
    /// Summarizes a set of log importance weights.
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        let b = log_weights.len();
        if b == 0 {
            return Err(Error::invalid("importance sampling needs at least one sample"));
        }
        if let Some(i) = log_weights.iter().position(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::Numeric(format!("importance weight {i} is {}", log_weights[i])));
        }
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Numeric("every importance draw has zero target density".into()));
        }
        let scaled: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
        let mean = scaled.iter().sum::<f64>() / b as f64;
        let var = if b > 1 { scaled.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (b - 1) as f64 } else { 0.0 };
        let sum_sq: f64 = scaled.iter().map(|w| w * w).sum();
        Ok(Self {
            log_evidence: max + mean.ln(),
            log_se: (var / b as f64).sqrt() / mean,
            ess: (mean * b as f64).powi(2) / sum_sq,
            samples: b,
        })
    }
}

fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let draws = alpha
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0)
                .map(|g| g.sample(rng))
                .map_err(|e| Error::invalid(format!("dirichlet parameter {a}: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = draws.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Numeric("dirichlet draw underflowed".into()));
    }
    Ok(draws.iter().map(|g| g / total).collect())
}

/// Gamma draw that stays positive for tiny shapes. For `shape < 1` the
/// draw is `G * U^(1/shape)` with `G ~ Gamma(shape + 1)`, computed in log
/// space and floored at the smallest positive normal number.
fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let boosted = if shape < 1.0 { shape + 1.0 } else { shape };
    let g = Gamma::new(boosted, 1.0).map_err(|e| Error::invalid(format!("gamma posterior: {e}")))?.sample(rng);
    let mut log_draw = g.ln() - rate.ln();
    if shape < 1.0 {
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        log_draw += u.ln() / shape;
    }
    Ok(log_draw.exp().max(f64::MIN_POSITIVE))
}

/// Draws `theta ~ Q(Theta)`.
pub fn sample_posterior<R: Rng + ?Sized>(q: &VariationalPosterior, rng: &mut R) -> Result<ParamPoint> {
    let r0 = sample_dirichlet(&q.dir_row0, rng)?;
    let r1 = sample_dirichlet(&q.dir_row1, rng)?;
    let props = if q.m() > 1 { sample_dirichlet(&q.dir_props, rng)? } else { vec![1.0] };
    let precision = sample_gamma(q.gamma_shape, q.gamma_rate, rng)?;
    let means = q
        .ng_means
        .iter()
        .zip(&q.ng_scales)
        .map(|(&mk, &bk)| {
            Normal::new(mk, 1.0 / bk.sqrt() / precision.sqrt())
                .map(|d| d.sample(rng))
                .map_err(|e| Error::Numeric(format!("mean draw: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ParamPoint {
        pi: TransitionBinary { pi00: r0[0], pi01: r0[1], pi10: r1[0], pi11: r1[1] },
        props,
        means,
        precision,
    })
}

/// Importance-sampling log evidence of one model with `Q(Z) Q(Theta)` as proposal.
pub fn is_log_evidence(fit: &FitResult, data: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> Result<IsEstimate> {
    if samples == 0 {
        return Err(Error::invalid("importance sampling needs B >= 1"));
    }
    let chain = VariationalChain::new(&fit.posterior, data, &fit.null)?;
    let mut log_weights = Vec::with_capacity(samples);
    for _ in 0..samples {
        let theta = sample_posterior(&fit.posterior, rng)?;
        let path = chain.forward.sample_path(rng);
        let target = theta.log_complete(data, &path, &fit.null)? + log_prior_density(&theta, &fit.prior);
        let proposal = chain.path_log_prob(&path) + log_posterior_density(&theta, &fit.posterior);
        log_weights.push(target - proposal);
    }
    IsEstimate::from_log_weights(&log_weights).map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("model m={}: {msg}", fit.m)),
        other => other,
    })
}

/// Per-model random stream derived from the configured seed.
pub fn model_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn is_weights(
    fits: &[FitResult],
    prior: &[f64],
    data: &[f64],
    cfg: &IsConfig,
) -> Result<(WeightVector, Vec<IsEstimate>)> {
    if cfg.samples == 0 {
        return Err(Error::invalid("importance sampling needs B >= 1"));
    }
    let estimates = fits
        .iter()
        .enumerate()
        .map(|(i, f)| is_log_evidence(f, data, cfg.samples, &mut model_rng(cfg.seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = estimates.iter().map(|e| e.log_evidence).collect();
    let w = WeightVector::from_log_scores(&scores, prior, WeightKind::Is, model_ids(fits))?;
    Ok((w, estimates))
}

/// Simplex-constrained least-squares fit of `target` by `tracks`.
pub fn oracle_weights(
    target: &PosteriorTrack,
    tracks: &[PosteriorTrack],
    model_ids: Vec<usize>,
) -> Result<WeightVector> {
    let columns: Vec<&[f64]> = tracks.iter().map(|t| t.values.as_slice()).collect();
    let w = SimplexProblem::new(&columns, &target.values)?.solve()?;
    WeightVector::new(w, WeightKind::Oracle, model_ids)
}

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn entropy(w: &WeightVector) -> f64 {
    -w.values.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// `0.5 * sum |w1 - w2|`.
pub fn total_variation(a: &WeightVector, b: &WeightVector) -> Result<f64> {
    if a.model_ids != b.model_ids {
        return Err(Error::invalid(format!(
            "weight vectors over different collections: {:?} vs {:?}",
            a.model_ids, b.model_ids
        )));
    }
    Ok(0.5 * a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::PosteriorTrack;
    use crate::model::Gaussian;
    use crate::vbem::{fit, VbemConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn wv(values: Vec<f64>) -> WeightVector {
        let ids = (1..=values.len()).collect();
        WeightVector::new(values, WeightKind::Vb, ids).unwrap()
    }

    #[test]
    fn construction_checks_normalization() {
        assert!(WeightVector::new(vec![0.5, 0.6], WeightKind::Vb, vec![1, 2]).is_err());
        assert!(WeightVector::new(vec![-0.1, 1.1], WeightKind::Vb, vec![1, 2]).is_err());
        assert!(WeightVector::new(vec![1.0], WeightKind::Vb, vec![1, 2]).is_err());
    }

    #[test]
    fn vb_weight_examples() {
        let w = vb_weights_from_bounds(&[-10.0, -10.0, -10.0], &uniform_prior(3), vec![1, 2, 3]).unwrap();
        for v in &w.values {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let w = vb_weights_from_bounds(&[-50.0 + 9f64.ln(), -50.0], &uniform_prior(2), vec![1, 2]).unwrap();
        assert_relative_eq!(w.values[0], 0.9, epsilon = 1e-14);
        assert_relative_eq!(w.values[1], 0.1, epsilon = 1e-14);
        assert!(vb_weights_from_bounds(&[f64::NAN, 0.0], &uniform_prior(2), vec![1, 2]).is_err());
    }

    #[test]
    fn vb_weights_shift_invariant() {
        let bounds = [-120.3, -118.9, -119.4];
        let a = vb_weights_from_bounds(&bounds, &uniform_prior(3), vec![1, 2, 3]).unwrap();
        let shifted: Vec<f64> = bounds.iter().map(|b| b + 1e4).collect();
        let b = vb_weights_from_bounds(&shifted, &uniform_prior(3), vec![1, 2, 3]).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&wv(vec![1.0, 0.0, 0.0])), 0.0);
        assert_relative_eq!(entropy(&wv(vec![0.25; 4])), 4f64.ln(), epsilon = 1e-14);
        let h = entropy(&wv(vec![0.7, 0.15, 0.15]));
        assert_relative_eq!(h, -(0.7f64 * 0.7f64.ln() + 2.0 * 0.15 * 0.15f64.ln()), epsilon = 1e-14);
        assert_relative_eq!(h, 0.8188, epsilon = 5e-4);
    }

    #[test]
    fn total_variation_examples() {
        let a = wv(vec![0.9, 0.1]);
        assert_eq!(total_variation(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(total_variation(&wv(vec![1.0, 0.0]), &wv(vec![0.0, 1.0])).unwrap(), 1.0);
        assert_relative_eq!(total_variation(&a, &wv(vec![0.5, 0.5])).unwrap(), 0.4, epsilon = 1e-15);
        let other = WeightVector::new(vec![0.5, 0.5], WeightKind::Is, vec![2, 3]).unwrap();
        assert!(total_variation(&a, &other).is_err());
    }

    fn arb_weights(k: usize) -> impl Strategy<Value = WeightVector> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter_map("zero", move |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| {
                let mut values: Vec<f64> = v.iter().map(|x| x / s).collect();
                let total: f64 = values.iter().sum();
                values.iter_mut().for_each(|x| *x /= total);
                WeightVector::new(values, WeightKind::Vb, (1..=k).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn total_variation_is_a_metric(a in arb_weights(4), b in arb_weights(4), c in arb_weights(4)) {
            let ab = total_variation(&a, &b).unwrap();
            prop_assert!((ab - total_variation(&b, &a).unwrap()).abs() < 1e-15);
            prop_assert!(total_variation(&a, &a).unwrap() == 0.0);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            let ac = total_variation(&a, &c).unwrap();
            let cb = total_variation(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }

    fn small_fits() -> (Vec<f64>, Vec<FitResult>) {
        let mut rng = model_rng(4, 0);
        let data: Vec<f64> = (0..60)
            .map(|t| if (t / 10) % 2 == 0 { rng.random::<f64>() - 0.5 } else { 4.0 + rng.random::<f64>() })
            .collect();
        let null = Gaussian::standard();
        let fits = (1..=2)
            .map(|m| fit(&data, m, &null, &PriorSpec::default_for(m), &VbemConfig::default()).unwrap())
            .collect();
        (data, fits)
    }

    #[test]
    fn pe_weights_single_and_identical_models() {
        let (data, fits) = small_fits();
        let w = pe_weights(&fits[..1], &[1.0], &data).unwrap();
        assert_eq!(w.values, vec![1.0]);
        let twice = vec![fits[1].clone(), fits[1].clone()];
        let w = pe_weights(&twice, &uniform_prior(2), &data).unwrap();
        assert_relative_eq!(w.values[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pe_evidence_is_finite_and_near_bound() {
        let (data, fits) = small_fits();
        for f in &fits {
            let pe = pe_log_evidence(f, &data).unwrap();
            assert!(pe.is_finite());
            assert!((pe - f.log_evidence_bound).abs() < 10.0, "pe {pe} vs bound {}", f.log_evidence_bound);
        }
    }

    #[test]
    fn constant_importance_ratio_has_zero_variance() {
        let est = IsEstimate::from_log_weights(&[-12.5; 50]).unwrap();
        assert_relative_eq!(est.log_evidence, -12.5, epsilon = 1e-12);
        assert_eq!(est.log_se, 0.0);
        assert_relative_eq!(est.ess, 50.0, epsilon = 1e-9);
        assert!(IsEstimate::from_log_weights(&[]).is_err());
        assert!(IsEstimate::from_log_weights(&[f64::NEG_INFINITY; 3]).is_err());
        assert!(IsEstimate::from_log_weights(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn is_estimates_with_different_seeds_agree() {
        let (data, fits) = small_fits();
        let a = is_log_evidence(&fits[0], &data, 4000, &mut model_rng(1, 0)).unwrap();
        let b = is_log_evidence(&fits[0], &data, 4000, &mut model_rng(2, 0)).unwrap();
        let combined = (a.log_se.powi(2) + b.log_se.powi(2)).sqrt();
        assert!((a.log_evidence - b.log_evidence).abs() < 3.0 * combined + 1e-9);
        // The evidence is bounded below by the variational bound, up to noise.
        assert!(a.log_evidence > fits[0].log_evidence_bound - 3.0 * a.log_se);
    }

    #[test]
    fn is_weights_rejects_zero_samples() {
        let (data, fits) = small_fits();
        assert!(is_weights(&fits, &uniform_prior(2), &data, &IsConfig { samples: 0, seed: 0 }).is_err());
        let (w, est) = is_weights(&fits, &uniform_prior(2), &data, &IsConfig { samples: 200, seed: 3 }).unwrap();
        assert_eq!(w.kind, WeightKind::Is);
        assert_eq!(est.len(), 2);
    }

    fn track(values: Vec<f64>) -> PosteriorTrack {
        PosteriorTrack::new(values, "test").unwrap()
    }

    #[test]
    fn oracle_recovers_exact_representations() {
        let t1 = track(vec![0.1, 0.4, 0.9, 0.3]);
        let t2 = track(vec![0.8, 0.2, 0.5, 0.6]);
        let t3 = track(vec![0.5, 0.5, 0.1, 0.9]);
        let w = oracle_weights(&t2, &[t1.clone(), t2.clone(), t3.clone()], vec![1, 2, 3]).unwrap();
        assert_relative_eq!(w.values[1], 1.0, epsilon = 1e-10);
        let mix: Vec<f64> = t1.values.iter().zip(&t2.values).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        let w = oracle_weights(&track(mix), &[t1, t2], vec![1, 2]).unwrap();
        assert_relative_eq!(w.values[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(w.values[1], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn oracle_dominates_vertices_and_random_points() {
        let mut rng = model_rng(5, 0);
        let tracks: Vec<PosteriorTrack> = (0..5).map(|_| track((0..50).map(|_| rng.random()).collect())).collect();
        let target = track((0..50).map(|_| rng.random()).collect());
        let w = oracle_weights(&target, &tracks, (1..=5).collect()).unwrap();
        let columns: Vec<&[f64]> = tracks.iter().map(|t| t.values.as_slice()).collect();
        let problem = SimplexProblem::new(&columns, &target.values).unwrap();
        let best = problem.objective(&w.values);
        assert!(problem.kkt_residual(&w.values) < 1e-8);
        for j in 0..5 {
            let mut e = vec![0.0; 5];
            e[j] = 1.0;
            assert!(best <= problem.objective(&e) + 1e-12);
        }
        for _ in 0..1000 {
            let e: Vec<f64> = (0..5).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
            let s: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / s).collect();
            assert!(best <= problem.objective(&p) + 1e-12);
        }
    }
}
