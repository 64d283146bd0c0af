//! Binary hidden Markov model with a known null emission and a Gaussian
//! mixture alternative, plus its expansion to an (m+1)-state chain.
//!
//! The binary chain `S_t` has transition matrix [`TransitionBinary`]. When the
//! alternative density is a mixture of `m` components, splitting state 1 into
//! its components gives a chain `Z_t` on `{0, ..., m}` whose transition matrix
//! factorizes as `pi_ij * p_j`; see [`expand`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, normal_ln_pdf};
use crate::weights::WeightVector;

const STOCHASTIC_TOL: f64 = 1e-12;

/// A univariate density evaluated in log space.
pub(crate) trait Density {
    fn ln_pdf(&self, x: f64) -> f64;
}

/// Two-state transition matrix `((pi00, pi01), (pi10, pi11))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionBinary {
    pub pi00: f64,
    pub pi01: f64,
    pub pi10: f64,
    pub pi11: f64,
}

impl TransitionBinary {
    pub fn new(pi00: f64, pi01: f64, pi10: f64, pi11: f64) -> Result<Self> {
        let t = Self { pi00, pi01, pi10, pi11 };
        t.validate()?;
        Ok(t)
    }

    /// Builds the matrix from the two switching probabilities.
    pub fn from_switch(p01: f64, p10: f64) -> Result<Self> {
        Self::new(1.0 - p01, p01, p10, 1.0 - p10)
    }

    pub fn validate(&self) -> Result<()> {
        let entries = [self.pi00, self.pi01, self.pi10, self.pi11];
        if entries.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::invalid(format!("transition entries must lie in [0,1]: {entries:?}")));
        }
        for (i, s) in [self.pi00 + self.pi01, self.pi10 + self.pi11].iter().enumerate() {
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invalid(format!("transition row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> [f64; 2] {
        match i {
            0 => [self.pi00, self.pi01],
            _ => [self.pi10, self.pi11],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i)[j]
    }

    pub fn stationary(&self) -> Result<(f64, f64)> {
        stationary(self)
    }
}

/// Stationary law `(q0, q1)` of a two-state chain.
pub fn stationary(pi: &TransitionBinary) -> Result<(f64, f64)> {
    let denom = pi.pi01 + pi.pi10;
    if denom <= 0.0 {
        return Err(Error::DegenerateChain("pi01 = pi10 = 0: stationary law is not unique".into()));
    }
    let q1 = pi.pi01 / denom;
    Ok((1.0 - q1, q1))
}

/// Gaussian density given by mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

/// The known null emission `phi`.
pub type NullDensity = Gaussian;

impl Gaussian {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() || !sd.is_finite() || sd <= 0.0 {
            return Err(Error::invalid(format!("gaussian needs finite mean and sd > 0, got ({mean}, {sd})")));
        }
        Ok(Self { mean, sd })
    }

    pub fn standard() -> Self {
        Self { mean: 0.0, sd: 1.0 }
    }

    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        normal_ln_pdf(x, self.mean, self.variance())
    }
}

impl Density for Gaussian {
    fn ln_pdf(&self, x: f64) -> f64 {
        Gaussian::ln_pdf(self, x)
    }
}

/// Homoscedastic Gaussian mixture used as the alternative density `f_m`.
///
/// Components are kept sorted by mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureAlternative {
    pub means: Vec<f64>,
    pub precision: f64,
    pub props: Vec<f64>,
}

impl MixtureAlternative {
    pub fn new(means: Vec<f64>, precision: f64, props: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != props.len() {
            return Err(Error::DimensionMismatch { expected: means.len(), actual: props.len() });
        }
        if !(precision.is_finite() && precision > 0.0) {
            return Err(Error::invalid(format!("precision must be positive, got {precision}")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        if props.iter().any(|p| p.is_nan() || *p < 0.0) {
            return Err(Error::invalid("mixture proportions must be nonnegative"));
        }
        let total: f64 = props.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid(format!("mixture proportions sum to {total}")));
        }
        let mut order: Vec<usize> = (0..means.len()).collect();
        order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
        Ok(Self {
            means: order.iter().map(|&i| means[i]).collect(),
            precision,
            props: order.iter().map(|&i| props[i]).collect(),
        })
    }

    pub fn m(&self) -> usize {
        self.means.len()
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let var = self.variance();
        let terms: Vec<f64> =
            self.means.iter().zip(&self.props).map(|(&mu, &p)| p.ln() + normal_ln_pdf(x, mu, var)).collect();
        math::log_sum_exp(&terms)
    }
}

impl Density for MixtureAlternative {
    fn ln_pdf(&self, x: f64) -> f64 {
        MixtureAlternative::ln_pdf(self, x)
    }
}

/// The (m+1)-state chain `Z` obtained by splitting the alternative state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedHMM {
    pub m: usize,
    pub omega: Vec<Vec<f64>>,
    pub emissions: Vec<Gaussian>,
}

/// Expands a binary chain with mixture alternative into the (m+1)-state chain.
pub fn expand(pi: &TransitionBinary, alt: &MixtureAlternative, null: &NullDensity) -> Result<ExpandedHMM> {
    pi.validate()?;
    let alt = MixtureAlternative::new(alt.means.clone(), alt.precision, alt.props.clone())?;
    let null = Gaussian::new(null.mean, null.sd)?;
    let m = alt.m();
    let row = |stay: f64, leave: f64| {
        let mut r = Vec::with_capacity(m + 1);
        r.push(stay);
        r.extend(alt.props.iter().map(|&p| leave * p));
        r
    };
    let mut omega = Vec::with_capacity(m + 1);
    omega.push(row(pi.pi00, pi.pi01));
    for _ in 0..m {
        omega.push(row(pi.pi10, pi.pi11));
    }
    let sd = alt.variance().sqrt();
    let mut emissions = Vec::with_capacity(m + 1);
    emissions.push(null);
    emissions.extend(alt.means.iter().map(|&mean| Gaussian { mean, sd }));
    Ok(ExpandedHMM { m, omega, emissions })
}

impl ExpandedHMM {
    pub fn n_states(&self) -> usize {
        self.m + 1
    }

    /// Exact Gaussian log-density of `x` under `state`.
    pub fn log_emission(&self, x: f64, state: usize) -> Result<f64> {
        let g =
            self.emissions.get(state).ok_or_else(|| Error::invalid(format!("state {state} outside 0..={}", self.m)))?;
        Ok(g.ln_pdf(x))
    }

    /// Recovers the binary transition matrix and mixture proportions from `omega`.
    pub fn recover(&self) -> Result<(TransitionBinary, Vec<f64>)> {
        let pi00 = self.omega[0][0];
        let pi10 = self.omega[1][0];
        let pi01: f64 = self.omega[0][1..].iter().sum();
        let pi11: f64 = self.omega[1][1..].iter().sum();
        let props = if pi11 > 0.0 {
            self.omega[1][1..].iter().map(|v| v / pi11).collect()
        } else if pi01 > 0.0 {
            self.omega[0][1..].iter().map(|v| v / pi01).collect()
        } else {
            return Err(Error::DegenerateChain("alternative state is never entered".into()));
        };
        Ok((TransitionBinary::new(pi00, pi01, pi10, pi11)?, props))
    }

    /// Clamped log transitions.
    pub fn log_omega(&self) -> Vec<Vec<f64>> {
        self.omega.iter().map(|r| r.iter().map(|&p| math::clamp_prob(p).ln()).collect()).collect()
    }

    /// Initial law: stationary law of the binary chain, split by the proportions.
    pub fn log_initial(&self) -> Result<Vec<f64>> {
        let (pi, props) = self.recover()?;
        let (q0, q1) = stationary(&pi)?;
        let mut out = Vec::with_capacity(self.m + 1);
        out.push(math::clamp_prob(q0).ln());
        out.extend(props.iter().map(|&p| math::clamp_prob(q1 * p).ln()));
        Ok(out)
    }
}

/// Hidden label path over an alphabet `{0, ..., alphabet - 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub values: Vec<usize>,
    pub alphabet: usize,
}

impl LabelSequence {
    pub fn new(values: Vec<usize>, alphabet: usize) -> Result<Self> {
        if let Some((t, v)) = values.iter().enumerate().find(|(_, &v)| v >= alphabet) {
            return Err(Error::invalid(format!("label {v} at position {t} outside alphabet of size {alphabet}")));
        }
        Ok(Self { values, alphabet })
    }

    pub fn binary(values: Vec<usize>) -> Result<Self> {
        Self::new(values, 2)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Collapses an expanded path `Z` to the binary path `S`.
    pub fn to_binary(&self) -> LabelSequence {
        LabelSequence { values: self.values.iter().map(|&z| usize::from(z > 0)).collect(), alphabet: 2 }
    }
}

/// One Gaussian component of an averaged alternative density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
    /// The `m` of the model this component came from.
    pub model: usize,
}

/// Flattens a weighted collection of mixtures into one mixture with
/// `sum_m m` components and weights `alpha_m * p_k`.
pub fn averaged_density_components(
    fits: &[MixtureAlternative],
    weights: &WeightVector,
) -> Result<Vec<WeightedComponent>> {
    if fits.len() != weights.values.len() {
        return Err(Error::DimensionMismatch { expected: weights.values.len(), actual: fits.len() });
    }
    let mut out = Vec::with_capacity(fits.iter().map(|f| f.m()).sum());
    for ((alt, &alpha), &model) in fits.iter().zip(&weights.values).zip(&weights.model_ids) {
        let variance = alt.variance();
        for (&mean, &p) in alt.means.iter().zip(&alt.props) {
            out.push(WeightedComponent { weight: alpha * p, mean, variance, model });
        }
    }
    Ok(out)
}

/// Log-density of a flattened averaged mixture.
pub fn averaged_density_ln_pdf(components: &[WeightedComponent], x: f64) -> f64 {
    let terms: Vec<f64> = components
        .iter()
        .filter(|c| c.weight > 0.0)
        .map(|c| c.weight.ln() + normal_ln_pdf(x, c.mean, c.variance))
        .collect();
    math::log_sum_exp(&terms)
}
