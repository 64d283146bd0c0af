//! Variational Bayes EM for the (m+1)-state model.
//!
//! The variational family is `Q(Z) Q(Theta)` with `Q(Theta)` the conjugate
//! family: independent Dirichlet laws on the two rows of the binary transition
//! matrix and on the mixture proportions, and a Normal-Gamma law on the
//! component means and their shared precision. The null emission is fixed and
//! carries no parameters.
//!
//! The initial law of the chain is the stationary law of the binary transition
//! matrix, which is not conjugate. The E-step evaluates it at the posterior
//! mean transition matrix and the closed-form M-step ignores its dependence on
//! the parameters. Because of that term a plain closed-form update may lower
//! the objective, so each update is taken along the natural-parameter segment
//! from the current posterior and halved until the objective does not decrease.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fb::{ForwardPass, Smoothed};
use crate::math::{self, digamma, LN_2PI};
use crate::model::{stationary, MixtureAlternative, NullDensity, TransitionBinary};

/// Conjugate prior for one model of the collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Dirichlet on `(pi00, pi01)`.
    pub dir_row0: [f64; 2],
    /// Dirichlet on `(pi10, pi11)`.
    pub dir_row1: [f64; 2],
    /// Dirichlet on the mixture proportions.
    pub dir_props: Vec<f64>,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// `mu_k | lambda ~ Normal(ng_mean, 1 / (ng_scale * lambda))`.
    pub ng_mean: f64,
    pub ng_scale: f64,
}

impl PriorSpec {
    /// Vague defaults: uniform Dirichlet laws, `Gamma(0.01, 0.01)` precision,
    /// and `Normal(0, 1 / (0.01 lambda))` means.
    pub fn default_for(m: usize) -> Self {
        Self {
            dir_row0: [1.0, 1.0],
            dir_row1: [1.0, 1.0],
            dir_props: vec![1.0; m],
            gamma_shape: 0.01,
            gamma_rate: 0.01,
            ng_mean: 0.0,
            ng_scale: 0.01,
        }
    }

    pub fn m(&self) -> usize {
        self.dir_props.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self
            .dir_row0
            .iter()
            .chain(&self.dir_row1)
            .chain(&self.dir_props)
            .chain([&self.gamma_shape, &self.gamma_rate, &self.ng_scale])
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive || !self.ng_mean.is_finite() {
            return Err(Error::invalid("prior hyperparameters must be finite and positive"));
        }
        if self.dir_props.is_empty() {
            return Err(Error::invalid("prior needs at least one mixture component"));
        }
        Ok(())
    }
}

/// Conjugate variational posterior `Q(Theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    pub dir_row0: [f64; 2],
    pub dir_row1: [f64; 2],
    pub dir_props: Vec<f64>,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub ng_means: Vec<f64>,
    pub ng_scales: Vec<f64>,
}

impl VariationalPosterior {
    /// The posterior equal to the prior.
    pub fn from_prior(prior: &PriorSpec) -> Self {
        let m = prior.m();
        Self {
            dir_row0: prior.dir_row0,
            dir_row1: prior.dir_row1,
            dir_props: prior.dir_props.clone(),
            gamma_shape: prior.gamma_shape,
            gamma_rate: prior.gamma_rate,
            ng_means: vec![prior.ng_mean; m],
            ng_scales: vec![prior.ng_scale; m],
        }
    }

    pub fn m(&self) -> usize {
        self.dir_props.len()
    }

    pub fn mean_transition(&self) -> TransitionBinary {
        let r0 = self.dir_row0[1] / (self.dir_row0[0] + self.dir_row0[1]);
        let r1 = self.dir_row1[0] / (self.dir_row1[0] + self.dir_row1[1]);
        TransitionBinary { pi00: 1.0 - r0, pi01: r0, pi10: r1, pi11: 1.0 - r1 }
    }

    pub fn mean_props(&self) -> Vec<f64> {
        let total: f64 = self.dir_props.iter().sum();
        self.dir_props.iter().map(|a| a / total).collect()
    }

    pub fn mean_precision(&self) -> f64 {
        self.gamma_shape / self.gamma_rate
    }

    /// Mixture at the posterior means of its parameters.
    pub fn point_alternative(&self) -> Result<MixtureAlternative> {
        let mut props = self.mean_props();
        let head: f64 = props[..props.len() - 1].iter().sum();
        *props.last_mut().expect("m >= 1") = 1.0 - head;
        MixtureAlternative::new(self.ng_means.clone(), self.mean_precision(), props)
    }

    /// `KL(Q(Theta) || P(Theta))` in closed form.
    pub fn kl_from_prior(&self, prior: &PriorSpec) -> f64 {
        let mut kl = math::dirichlet_kl(&self.dir_row0, &prior.dir_row0)
            + math::dirichlet_kl(&self.dir_row1, &prior.dir_row1)
            + math::dirichlet_kl(&self.dir_props, &prior.dir_props)
            + math::gamma_kl(self.gamma_shape, self.gamma_rate, prior.gamma_shape, prior.gamma_rate);
        let e_lambda = self.mean_precision();
        for (&mk, &bk) in self.ng_means.iter().zip(&self.ng_scales) {
            let ratio = prior.ng_scale / bk;
            let d = mk - prior.ng_mean;
            kl += 0.5 * (ratio - 1.0 - ratio.ln() + prior.ng_scale * e_lambda * d * d);
        }
        kl
    }

    /// Point on the segment from `self` (`step = 0`) to `target` (`step = 1`)
    /// in natural-parameter coordinates.
    pub fn interpolate(&self, target: &Self, step: f64) -> Self {
        let lerp = |a: f64, b: f64| a + step * (b - a);
        let lerp_vec = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(&x, &y)| lerp(x, y)).collect::<Vec<_>>();
        let weighted = |q: &Self| -> (Vec<f64>, f64) {
            let bm: Vec<f64> = q.ng_means.iter().zip(&q.ng_scales).map(|(m, b)| m * b).collect();
            let shift: f64 = q.ng_means.iter().zip(&bm).map(|(m, w)| 0.5 * m * w).sum();
            (bm, q.gamma_rate + shift)
        };
        let (bm0, rate0) = weighted(self);
        let (bm1, rate1) = weighted(target);
        let ng_scales = lerp_vec(&self.ng_scales, &target.ng_scales);
        let bm = lerp_vec(&bm0, &bm1);
        let ng_means: Vec<f64> = bm.iter().zip(&ng_scales).map(|(w, b)| w / b).collect();
        let shift: f64 = ng_means.iter().zip(&bm).map(|(m, w)| 0.5 * m * w).sum();
        Self {
            dir_row0: [lerp(self.dir_row0[0], target.dir_row0[0]), lerp(self.dir_row0[1], target.dir_row0[1])],
            dir_row1: [lerp(self.dir_row1[0], target.dir_row1[0]), lerp(self.dir_row1[1], target.dir_row1[1])],
            dir_props: lerp_vec(&self.dir_props, &target.dir_props),
            gamma_shape: lerp(self.gamma_shape, target.gamma_shape),
            gamma_rate: lerp(rate0, rate1) - shift,
            ng_means,
            ng_scales,
        }
    }

    fn permute_components(&mut self, order: &[usize]) {
        self.dir_props = order.iter().map(|&i| self.dir_props[i]).collect();
        self.ng_means = order.iter().map(|&i| self.ng_means[i]).collect();
        self.ng_scales = order.iter().map(|&i| self.ng_scales[i]).collect();
    }
}

/// Expected log parameters under `Q(Theta)`, laid out on the expanded chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedLogParams {
    /// `E[log pi_ij]`.
    pub log_pi: [[f64; 2]; 2],
    /// `E[log p_k]`.
    pub log_props: Vec<f64>,
    /// Expanded `(m+1) x (m+1)` log transition weights.
    pub log_trans: Vec<Vec<f64>>,
    /// Initial log weights: stationary law of the posterior-mean binary chain
    /// combined with `E[log p_k]`.
    pub log_init: Vec<f64>,
    pub e_lambda: f64,
    pub e_log_lambda: f64,
    pub means: Vec<f64>,
    pub inv_scales: Vec<f64>,
}

pub fn expected_log_params(q: &VariationalPosterior) -> Result<ExpectedLogParams> {
    let r0 = math::dirichlet_expected_log(&q.dir_row0);
    let r1 = math::dirichlet_expected_log(&q.dir_row1);
    let log_props = math::dirichlet_expected_log(&q.dir_props);
    let m = q.m();
    let mut log_trans = Vec::with_capacity(m + 1);
    for r in std::iter::once(&r0).chain(std::iter::repeat_n(&r1, m)) {
        let mut row = Vec::with_capacity(m + 1);
        row.push(r[0]);
        row.extend(log_props.iter().map(|lp| r[1] + lp));
        log_trans.push(row);
    }
    let (q0, q1) = stationary(&q.mean_transition())?;
    let mut log_init = Vec::with_capacity(m + 1);
    log_init.push(math::clamp_prob(q0).ln());
    log_init.extend(log_props.iter().map(|lp| math::clamp_prob(q1).ln() + lp));
    Ok(ExpectedLogParams {
        log_pi: [[r0[0], r0[1]], [r1[0], r1[1]]],
        log_props,
        log_trans,
        log_init,
        e_lambda: q.mean_precision(),
        e_log_lambda: digamma(q.gamma_shape) - q.gamma_rate.ln(),
        means: q.ng_means.clone(),
        inv_scales: q.ng_scales.iter().map(|b| 1.0 / b).collect(),
    })
}

impl ExpectedLogParams {
    /// `E[log N(x; mu_k, 1/lambda)]` for alternative component `k` (0-based).
    pub fn expected_log_density(&self, x: f64, k: usize) -> f64 {
        let d = x - self.means[k];
        0.5 * (self.e_log_lambda - LN_2PI - self.e_lambda * d * d - self.inv_scales[k])
    }

    /// Per-observation log weights, column 0 being the null.
    pub fn log_table(&self, data: &[f64], null: &NullDensity) -> Vec<Vec<f64>> {
        let m = self.means.len();
        data.iter()
            .map(|&x| {
                let mut row = Vec::with_capacity(m + 1);
                row.push(null.ln_pdf(x));
                row.extend((0..m).map(|k| self.expected_log_density(x, k)));
                row
            })
            .collect()
    }
}

/// Expected sufficient statistics of the expanded chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    /// `E[N_00]`.
    pub n00: f64,
    /// `sum_{j>=1} E[N_0j]`.
    pub n0plus: f64,
    /// `sum_{k>=1} E[N_k0]`.
    pub nplus0: f64,
    /// `sum_{k,j>=1} E[N_kj]`.
    pub nplusplus: f64,
    /// `sum_{k>=0} E[N_kj] + Q(Z_1 = j)` for `j = 1..m`.
    pub col: Vec<f64>,
    /// `resp[t][k] = Q(Z_t = k)`.
    pub resp: Vec<Vec<f64>>,
    /// Full expected transition counts `E[N_kj]`.
    pub pair: Vec<Vec<f64>>,
}

impl ExpectedCounts {
    pub fn from_smoothed(s: &Smoothed) -> Self {
        let k = s.pair.len();
        let n00 = s.pair[0][0];
        let n0plus = s.pair[0][1..].iter().sum();
        let nplus0 = s.pair[1..].iter().map(|r| r[0]).sum();
        let nplusplus = s.pair[1..].iter().map(|r| r[1..].iter().sum::<f64>()).sum();
        let col = (1..k).map(|j| s.pair.iter().map(|r| r[j]).sum::<f64>() + s.resp[0][j]).collect();
        Self { n00, n0plus, nplus0, nplusplus, col, resp: s.resp.clone(), pair: s.pair.clone() }
    }

    /// Counts of a single known path on `{0..=m}`.
    pub fn from_path(path: &[usize], m: usize) -> Result<Self> {
        if let Some(&bad) = path.iter().find(|&&z| z > m) {
            return Err(Error::invalid(format!("state {bad} outside 0..={m}")));
        }
        let k = m + 1;
        let resp: Vec<Vec<f64>> = path
            .iter()
            .map(|&z| {
                let mut row = vec![0.0; k];
                row[z] = 1.0;
                row
            })
            .collect();
        let mut pair = vec![vec![0.0; k]; k];
        for w in path.windows(2) {
            pair[w[0]][w[1]] += 1.0;
        }
        Ok(Self::from_smoothed(&Smoothed { resp, pair, log_normalizer: 0.0 }))
    }

    pub fn n(&self) -> usize {
        self.resp.len()
    }

    pub fn m(&self) -> usize {
        self.col.len()
    }

    /// Expected occupancy of each alternative component.
    pub fn occupancy(&self) -> Vec<f64> {
        (1..=self.m()).map(|k| self.resp.iter().map(|r| r[k]).sum()).collect()
    }
}

/// Conjugate update of `Q(Theta)` from expected counts.
pub fn vb_m_step(prior: &PriorSpec, counts: &ExpectedCounts, data: &[f64]) -> Result<VariationalPosterior> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    if data.len() != counts.n() {
        return Err(Error::DimensionMismatch { expected: counts.n(), actual: data.len() });
    }
    let m = prior.m();
    if counts.m() != m {
        return Err(Error::DimensionMismatch { expected: m, actual: counts.m() });
    }
    let mut weight = vec![0.0; m];
    let mut sum_x = vec![0.0; m];
    let mut sum_x2 = vec![0.0; m];
    for (row, &x) in counts.resp.iter().zip(data) {
        for k in 0..m {
            let r = row[k + 1];
            weight[k] += r;
            sum_x[k] += r * x;
            sum_x2[k] += r * x * x;
        }
    }
    let b0 = prior.ng_scale;
    let m0 = prior.ng_mean;
    let mut ng_scales = Vec::with_capacity(m);
    let mut ng_means = Vec::with_capacity(m);
    let mut rate = prior.gamma_rate;
    for k in 0..m {
        let bk = b0 + weight[k];
        let mk = (b0 * m0 + sum_x[k]) / bk;
        // Within-component scatter plus shrinkage toward the prior mean,
        // written so it stays nonnegative under rounding.
        let xbar = if weight[k] > 0.0 { sum_x[k] / weight[k] } else { m0 };
        let scatter = (sum_x2[k] - weight[k] * xbar * xbar).max(0.0);
        let shrink = b0 * weight[k] / bk * (xbar - m0).powi(2);
        rate += 0.5 * (scatter + shrink);
        ng_scales.push(bk);
        ng_means.push(mk);
    }
    let q = VariationalPosterior {
        dir_row0: [prior.dir_row0[0] + counts.n00, prior.dir_row0[1] + counts.n0plus],
        dir_row1: [prior.dir_row1[0] + counts.nplus0, prior.dir_row1[1] + counts.nplusplus],
        dir_props: prior.dir_props.iter().zip(&counts.col).map(|(a, c)| a + c).collect(),
        gamma_shape: prior.gamma_shape + 0.5 * weight.iter().sum::<f64>(),
        gamma_rate: rate,
        ng_means,
        ng_scales,
    };
    debug_assert!(q.dir_props.iter().zip(&prior.dir_props).all(|(a, b)| a >= b));
    debug_assert!(q.gamma_shape >= prior.gamma_shape && q.gamma_rate >= prior.gamma_rate);
    Ok(q)
}

/// Lower bound `log_normalizer - KL(Q(Theta) || P(Theta))`, where the log
/// normalizer comes from the E-step under `q`.
pub fn elbo(prior: &PriorSpec, q: &VariationalPosterior, log_normalizer: f64) -> f64 {
    log_normalizer - q.kl_from_prior(prior)
}

/// The variational chain `Q(Z)` induced by a posterior.
#[derive(Debug, Clone)]
pub struct VariationalChain {
    pub params: ExpectedLogParams,
    pub log_table: Vec<Vec<f64>>,
    pub forward: ForwardPass,
}

impl VariationalChain {
    pub fn new(q: &VariationalPosterior, data: &[f64], null: &NullDensity) -> Result<Self> {
        let params = expected_log_params(q)?;
        let log_table = params.log_table(data, null);
        let forward = ForwardPass::run(&log_table, &params.log_trans, &params.log_init)?;
        Ok(Self { params, log_table, forward })
    }

    /// `log Q(Z = path)`.
    pub fn path_log_prob(&self, path: &[usize]) -> f64 {
        crate::fb::path_log_weight(path, &self.log_table, &self.params.log_trans, &self.params.log_init)
            - self.forward.log_normalizer()
    }
}

/// Run settings for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbemConfig {
    /// Relative change of the bound below which iterations stop.
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for VbemConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500, restarts: 5, seed: 0 }
    }
}

/// Output of a fit for one model of the collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub m: usize,
    pub null: NullDensity,
    pub prior: PriorSpec,
    pub posterior: VariationalPosterior,
    pub counts: ExpectedCounts,
    pub elbo_trace: Vec<f64>,
    pub log_evidence_bound: f64,
    pub point_alt: MixtureAlternative,
    pub point_pi: TransitionBinary,
    /// `Q(S_t = 1) = sum_{k>=1} Q(Z_t = k)`.
    pub s_marginals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the restart that produced this fit.
    pub restart: usize,
}

const ACCEPT_SLACK: f64 = 1e-10;
const MIN_STEP: f64 = 1.0 / 1024.0;

struct State {
    q: VariationalPosterior,
    smoothed: Smoothed,
    bound: f64,
}

fn evaluate(prior: &PriorSpec, q: VariationalPosterior, data: &[f64], null: &NullDensity) -> Result<State> {
    let chain = VariationalChain::new(&q, data, null)?;
    let smoothed = chain.forward.smooth();
    let bound = elbo(prior, &q, smoothed.log_normalizer);
    if !bound.is_finite() {
        return Err(Error::Numeric(format!("non-finite bound {bound}")));
    }
    Ok(State { q, smoothed, bound })
}

fn check_inputs(data: &[f64], m: usize, prior: &PriorSpec) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 observations, got {}", data.len())));
    }
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    if let Some(t) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { location: format!("data[{t}]"), value: data[t] });
    }
    prior.validate()?;
    if prior.m() != m {
        return Err(Error::DimensionMismatch { expected: m, actual: prior.m() });
    }
    Ok(())
}

/// Runs VBEM from a given initial responsibility matrix (rows over `0..=m`).
pub fn fit_from_responsibilities(
    data: &[f64],
    m: usize,
    null: &NullDensity,
    prior: &PriorSpec,
    cfg: &VbemConfig,
    init_resp: &[Vec<f64>],
) -> Result<FitResult> {
    check_inputs(data, m, prior)?;
    if init_resp.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), actual: init_resp.len() });
    }
    let k = m + 1;
    let mut pair = vec![vec![0.0; k]; k];
    for w in init_resp.windows(2) {
        for i in 0..k {
            for j in 0..k {
                pair[i][j] += w[0][i] * w[1][j];
            }
        }
    }
    let counts = ExpectedCounts::from_smoothed(&Smoothed { resp: init_resp.to_vec(), pair, log_normalizer: 0.0 });
    let q0 = vb_m_step(prior, &counts, data)?;
    let mut state = evaluate(prior, q0, data, null)?;
    let mut trace = vec![state.bound];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let counts = ExpectedCounts::from_smoothed(&state.smoothed);
        let target = vb_m_step(prior, &counts, data)?;
        let mut step = 1.0;
        let mut next = None;
        while step >= MIN_STEP {
            let candidate = if step == 1.0 { target.clone() } else { state.q.interpolate(&target, step) };
            let trial = evaluate(prior, candidate, data, null)?;
            if trial.bound >= state.bound - ACCEPT_SLACK {
                next = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = next else {
            // No ascent along the update direction: stationary up to the
            // neglected initial-law gradient.
            converged = true;
            break;
        };
        let previous = state.bound;
        state = next;
        trace.push(state.bound);
        if (state.bound - previous).abs() <= cfg.tol * previous.abs() {
            converged = true;
            break;
        }
    }
    finish(m, null, prior, state, trace, iterations, converged, 0)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    m: usize,
    null: &NullDensity,
    prior: &PriorSpec,
    state: State,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    restart: usize,
) -> Result<FitResult> {
    let State { mut q, smoothed, bound } = state;
    let mut prior = prior.clone();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| q.ng_means[a].total_cmp(&q.ng_means[b]));
    q.permute_components(&order);
    prior.dir_props = order.iter().map(|&i| prior.dir_props[i]).collect();
    // State index of the expanded chain after sorting.
    let states: Vec<usize> = std::iter::once(0).chain(order.iter().map(|&i| i + 1)).collect();
    let resp: Vec<Vec<f64>> = smoothed.resp.iter().map(|r| states.iter().map(|&s| r[s]).collect()).collect();
    let pair: Vec<Vec<f64>> = states.iter().map(|&i| states.iter().map(|&j| smoothed.pair[i][j]).collect()).collect();
    let counts = ExpectedCounts::from_smoothed(&Smoothed { resp, pair, log_normalizer: smoothed.log_normalizer });
    let s_marginals = counts.resp.iter().map(|r| r[1..].iter().sum()).collect();
    Ok(FitResult {
        m,
        null: *null,
        point_alt: q.point_alternative()?,
        point_pi: q.mean_transition(),
        prior,
        posterior: q,
        counts,
        elbo_trace: trace,
        log_evidence_bound: bound,
        s_marginals,
        iterations,
        converged,
        restart,
    })
}

/// Hard initial labels: the observations least likely under the null are
/// assigned to the alternative and split into `m` bins by value.
fn initial_labels(data: &[f64], m: usize, null: &NullDensity, restart: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let ln_null: Vec<f64> = data.iter().map(|&x| null.ln_pdf(x)).collect();
    order.sort_by(|&a, &b| ln_null[a].total_cmp(&ln_null[b]));
    let fraction = if restart == 0 {
        let tail = data.iter().filter(|&&x| ((x - null.mean) / null.sd).abs() > 1.96).count() as f64 / n as f64;
        (2.0 * (tail - 0.05) / 0.95).clamp(0.05, 0.5)
    } else {
        rng.random_range(0.05..0.6)
    };
    let n_alt = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut alt: Vec<usize> = order[..n_alt].to_vec();
    alt.sort_by(|&a, &b| data[a].total_cmp(&data[b]));
    let mut cuts: Vec<f64> = if restart == 0 {
        (1..m).map(|k| k as f64 / m as f64).collect()
    } else {
        (1..m).map(|_| rng.random::<f64>()).collect()
    };
    cuts.sort_by(f64::total_cmp);
    let mut labels = vec![0; n];
    for (rank, &t) in alt.iter().enumerate() {
        let pos = (rank as f64 + 0.5) / n_alt as f64;
        labels[t] = 1 + cuts.iter().filter(|&&c| c < pos).count();
    }
    labels
}

/// Fits one model of the collection: best of `cfg.restarts` VBEM runs.
pub fn fit(data: &[f64], m: usize, null: &NullDensity, prior: &PriorSpec, cfg: &VbemConfig) -> Result<FitResult> {
    check_inputs(data, m, prior)?;
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for restart in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        let labels = initial_labels(data, m, null, restart, &mut rng);
        let resp: Vec<Vec<f64>> = labels
            .iter()
            .map(|&z| {
                let mut r = vec![0.0; m + 1];
                r[z] = 1.0;
                r
            })
            .collect();
        match fit_from_responsibilities(data, m, null, prior, cfg, &resp) {
            Ok(mut f) => {
                f.restart = restart;
                if best.as_ref().is_none_or(|b| f.log_evidence_bound > b.log_evidence_bound) {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Numeric("no restart succeeded".into())))
}

/// Fits every `m` in `ms` with the given prior factory.
pub fn fit_collection(
    data: &[f64],
    ms: &[usize],
    null: &NullDensity,
    prior_for: impl Fn(usize) -> PriorSpec,
    cfg: &VbemConfig,
) -> Result<Vec<FitResult>> {
    ms.iter().map(|&m| fit(data, m, null, &prior_for(m), cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fb::forward_backward;
    use crate::model::{expand, Gaussian};
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn two_cluster_data(seed: u64, n: usize) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi = TransitionBinary::new(0.9, 0.1, 0.3, 0.7).unwrap();
        let mut s = usize::from(rng.random::<f64>() < 0.25);
        let mut xs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let mean = if s == 0 { 0.0 } else { 5.0 };
            xs.push(Normal::new(mean, 0.3).unwrap().sample(&mut rng));
            labels.push(s);
            s = usize::from(rng.random::<f64>() < pi.get(s, 1));
        }
        (xs, labels)
    }

    #[test]
    fn symmetric_dirichlet_expected_logs() {
        let mut q = VariationalPosterior::from_prior(&PriorSpec::default_for(2));
        let elp = expected_log_params(&q).unwrap();
        let expect = digamma(1.0) - digamma(2.0);
        assert_relative_eq!(elp.log_pi[0][0], expect, epsilon = 1e-12);
        assert_relative_eq!(elp.log_pi[0][1], expect, epsilon = 1e-12);
        q.dir_row1 = [3.7, 3.7];
        let elp = expected_log_params(&q).unwrap();
        assert_relative_eq!(elp.log_pi[1][0], elp.log_pi[1][1], epsilon = 1e-15);
    }

    #[test]
    fn expected_density_approaches_plug_in() {
        let mut q = VariationalPosterior::from_prior(&PriorSpec::default_for(1));
        q.gamma_shape = 40.0;
        q.gamma_rate = 10.0;
        q.ng_means = vec![1.3];
        let x = 2.1;
        let gap = 0.5 * ((digamma(40.0) - 10f64.ln()) - (40.0f64 / 10.0).ln());
        let plug_in = math::normal_ln_pdf(x, 1.3, 10.0 / 40.0);
        let mut last = f64::INFINITY;
        for scale in [1e1, 1e3, 1e5, 1e8] {
            q.ng_scales = vec![scale];
            let elp = expected_log_params(&q).unwrap();
            let diff = (elp.expected_log_density(x, 0) - (plug_in + gap)).abs();
            assert!(diff < last);
            last = diff;
        }
        assert!(last < 1e-7);
    }

    fn counts_for(path: &[usize], m: usize) -> ExpectedCounts {
        ExpectedCounts::from_path(path, m).unwrap()
    }

    #[test]
    fn m_step_zero_counts_returns_prior() {
        let prior = PriorSpec::default_for(2);
        let counts = ExpectedCounts {
            n00: 0.0,
            n0plus: 0.0,
            nplus0: 0.0,
            nplusplus: 0.0,
            col: vec![0.0, 0.0],
            resp: vec![vec![0.0, 0.0, 0.0]],
            pair: vec![vec![0.0; 3]; 3],
        };
        let q = vb_m_step(&prior, &counts, &[1.0]).unwrap();
        assert_eq!(q, VariationalPosterior::from_prior(&prior));
    }

    #[test]
    fn m_step_null_only_leaves_alternative_untouched() {
        let prior = PriorSpec::default_for(2);
        let data = [0.1, -0.4, 0.3, 0.0];
        let q = vb_m_step(&prior, &counts_for(&[0, 0, 0, 0], 2), &data).unwrap();
        let base = VariationalPosterior::from_prior(&prior);
        assert_eq!(q.dir_props, base.dir_props);
        assert_eq!(q.gamma_shape, base.gamma_shape);
        assert_eq!(q.gamma_rate, base.gamma_rate);
        assert_eq!(q.ng_means, base.ng_means);
        assert_eq!(q.dir_row0, [1.0 + 3.0, 1.0]);
    }

    #[test]
    fn m_step_hand_computed_three_points() {
        // Path 0 -> 1 -> 1 with m = 1 on data (0.2, 4.0, 6.0).
        let prior = PriorSpec {
            dir_row0: [1.0, 1.0],
            dir_row1: [1.0, 1.0],
            dir_props: vec![1.0],
            gamma_shape: 2.0,
            gamma_rate: 1.0,
            ng_mean: 0.0,
            ng_scale: 1.0,
        };
        let data = [0.2, 4.0, 6.0];
        let counts = counts_for(&[0, 1, 1], 1);
        assert_eq!((counts.n00, counts.n0plus, counts.nplus0, counts.nplusplus), (0.0, 1.0, 0.0, 1.0));
        assert_eq!(counts.col, vec![2.0]);
        let q = vb_m_step(&prior, &counts, &data).unwrap();
        assert_eq!(q.dir_row0, [1.0, 2.0]);
        assert_eq!(q.dir_row1, [1.0, 2.0]);
        assert_eq!(q.dir_props, vec![3.0]);
        // beta = 1 + 2 = 3; mean = (0 + 10) / 3; shape = 2 + 1;
        // rate = 1 + 0.5 * (scatter 2 + 1 * 2 / 3 * 25).
        assert_relative_eq!(q.ng_scales[0], 3.0);
        assert_relative_eq!(q.ng_means[0], 10.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(q.gamma_shape, 3.0);
        assert_relative_eq!(q.gamma_rate, 1.0 + 0.5 * (2.0 + 50.0 / 3.0), epsilon = 1e-13);
    }

    #[test]
    fn m_step_rejects_bad_input() {
        let prior = PriorSpec::default_for(1);
        let counts = counts_for(&[0, 1], 1);
        assert!(vb_m_step(&prior, &counts, &[]).is_err());
        assert!(vb_m_step(&prior, &counts, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn interpolation_endpoints() {
        let prior = PriorSpec::default_for(2);
        let a = vb_m_step(&prior, &counts_for(&[0, 1, 2, 2, 0], 2), &[0.0, 3.0, 5.0, 5.5, 0.2]).unwrap();
        let b = vb_m_step(&prior, &counts_for(&[0, 0, 1, 2, 1], 2), &[0.0, 3.0, 5.0, 5.5, 0.2]).unwrap();
        let at0 = a.interpolate(&b, 0.0);
        let at1 = a.interpolate(&b, 1.0);
        for (x, y) in [(at0, &a), (at1, &b)] {
            assert_relative_eq!(x.gamma_rate, y.gamma_rate, epsilon = 1e-10);
            for k in 0..2 {
                assert_relative_eq!(x.ng_means[k], y.ng_means[k], epsilon = 1e-12);
            }
        }
        let mid = a.interpolate(&b, 0.5);
        assert!(mid.gamma_rate > 0.0);
    }

    #[test]
    fn kl_vanishes_at_prior() {
        let prior = PriorSpec::default_for(3);
        assert_relative_eq!(VariationalPosterior::from_prior(&prior).kl_from_prior(&prior), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn e_step_matches_expanded_model_at_sharp_posterior() {
        // A very concentrated posterior makes the E-step a plug-in forward-backward.
        let big = 1e9;
        let q = VariationalPosterior {
            dir_row0: [0.8 * big, 0.2 * big],
            dir_row1: [0.3 * big, 0.7 * big],
            dir_props: vec![0.4 * big, 0.6 * big],
            gamma_shape: 4.0 * big,
            gamma_rate: big,
            ng_means: vec![2.0, 4.0],
            ng_scales: vec![big, big],
        };
        let null = Gaussian::standard();
        let data = [0.1, 2.2, 3.9, 4.1, -0.5];
        let chain = VariationalChain::new(&q, &data, &null).unwrap();
        let pi = TransitionBinary::new(0.8, 0.2, 0.3, 0.7).unwrap();
        let alt = MixtureAlternative::new(vec![2.0, 4.0], 4.0, vec![0.4, 0.6]).unwrap();
        let hmm = expand(&pi, &alt, &null).unwrap();
        let table: Vec<Vec<f64>> =
            data.iter().map(|&x| (0..3).map(|s| hmm.log_emission(x, s).unwrap()).collect()).collect();
        let exact = forward_backward(&table, &hmm.log_omega(), &hmm.log_initial().unwrap()).unwrap();
        assert_relative_eq!(chain.forward.log_normalizer(), exact.log_normalizer, epsilon = 1e-6);
    }

    #[test]
    fn fit_separates_well_separated_clusters() {
        let (data, labels) = two_cluster_data(3, 300);
        let fit = fit(&data, 1, &Gaussian::new(0.0, 0.3).unwrap(), &PriorSpec::default_for(1), &VbemConfig::default())
            .unwrap();
        let errors = fit.s_marginals.iter().zip(&labels).filter(|(&s, &l)| usize::from(s > 0.5) != l).count();
        assert!((errors as f64) / (data.len() as f64) < 0.05, "errors = {errors}");
        assert!(fit.converged);
        for w in fit.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        assert_relative_eq!(fit.point_alt.means[0], 5.0, epsilon = 0.1);
    }

    #[test]
    fn null_only_chain_has_no_alternative_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..200).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let fit = fit(&data, 1, &Gaussian::standard(), &PriorSpec::default_for(1), &VbemConfig::default()).unwrap();
        let mean_alt: f64 = fit.s_marginals.iter().sum::<f64>() / data.len() as f64;
        assert!(mean_alt < 0.05, "mean alternative mass {mean_alt}");
    }

    #[test]
    fn fit_invariants_hold() {
        let (data, _) = two_cluster_data(9, 120);
        let fit = fit(&data, 3, &Gaussian::new(0.0, 0.3).unwrap(), &PriorSpec::default_for(3), &VbemConfig::default())
            .unwrap();
        for (t, row) in fit.counts.resp.iter().enumerate() {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
            assert_relative_eq!(fit.s_marginals[t], row[1..].iter().sum::<f64>(), epsilon = 1e-12);
        }
        let c = &fit.counts;
        assert_relative_eq!(c.n00 + c.n0plus + c.nplus0 + c.nplusplus, (data.len() - 1) as f64, epsilon = 1e-8);
        let total: f64 = c.resp.iter().flatten().sum();
        assert_relative_eq!(total, data.len() as f64, epsilon = 1e-8);
        assert!(fit.point_alt.means.windows(2).all(|w| w[0] <= w[1]));
        assert!(fit.posterior.dir_props.iter().all(|&a| a >= 1.0));
        assert_eq!(*fit.elbo_trace.last().unwrap(), fit.log_evidence_bound);
    }

    #[test]
    fn extra_pass_after_convergence_is_a_fixed_point() {
        let (data, _) = two_cluster_data(21, 150);
        let null = Gaussian::new(0.0, 0.3).unwrap();
        let prior = PriorSpec::default_for(2);
        let cfg = VbemConfig { tol: 1e-14, max_iter: 5000, ..VbemConfig::default() };
        let fit = fit(&data, 2, &null, &prior, &cfg).unwrap();
        let q = vb_m_step(&fit.prior, &fit.counts, &data).unwrap();
        let chain = VariationalChain::new(&q, &data, &null).unwrap();
        let again = elbo(&fit.prior, &q, chain.forward.log_normalizer());
        assert!((again - fit.log_evidence_bound).abs() < 1e-8, "delta {}", again - fit.log_evidence_bound);
    }

    #[test]
    fn bound_increases_back_from_perturbed_posterior() {
        let (data, _) = two_cluster_data(4, 100);
        let null = Gaussian::new(0.0, 0.3).unwrap();
        let prior = PriorSpec::default_for(1);
        let fit = fit(&data, 1, &null, &prior, &VbemConfig { tol: 1e-12, ..VbemConfig::default() }).unwrap();
        let mut q = fit.posterior.clone();
        q.ng_means[0] += 0.5;
        q.gamma_rate *= 2.0;
        let perturbed = evaluate(&prior, q, &data, &null).unwrap();
        assert!(perturbed.bound < fit.log_evidence_bound);
        let counts = ExpectedCounts::from_smoothed(&perturbed.smoothed);
        let next = evaluate(&prior, vb_m_step(&prior, &counts, &data).unwrap(), &data, &null).unwrap();
        assert!(next.bound > perturbed.bound);
    }

    #[test]
    fn permuted_initialization_gives_same_fit() {
        let (data, _) = two_cluster_data(13, 100);
        let null = Gaussian::new(0.0, 0.3).unwrap();
        let prior = PriorSpec::default_for(3);
        let cfg = VbemConfig { tol: 1e-10, max_iter: 2000, ..VbemConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let resp: Vec<Vec<f64>> = data
            .iter()
            .map(|&x| {
                let mut r: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 0.1).collect();
                if x < 2.5 {
                    r[0] += 3.0;
                }
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        let permuted: Vec<Vec<f64>> = resp.iter().map(|r| vec![r[0], r[3], r[1], r[2]]).collect();
        let a = fit_from_responsibilities(&data, 3, &null, &prior, &cfg, &resp).unwrap();
        let b = fit_from_responsibilities(&data, 3, &null, &prior, &cfg, &permuted).unwrap();
        assert_relative_eq!(a.log_evidence_bound, b.log_evidence_bound, epsilon = 1e-6);
        for (x, y) in a.s_marginals.iter().zip(&b.s_marginals) {
            assert_relative_eq!(x, y, epsilon = 1e-6);
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        let prior = PriorSpec::default_for(1);
        let cfg = VbemConfig::default();
        let null = Gaussian::standard();
        assert!(fit(&[1.0], 1, &null, &prior, &cfg).is_err());
        assert!(fit(&[1.0, f64::NAN], 1, &null, &prior, &cfg).is_err());
        assert!(fit(&[1.0, 2.0], 0, &null, &PriorSpec::default_for(1), &cfg).is_err());
        assert!(fit(&[1.0, 2.0], 2, &null, &prior, &cfg).is_err());
    }

    #[test]
    fn fit_is_deterministic_given_seed() {
        let (data, _) = two_cluster_data(8, 80);
        let null = Gaussian::new(0.0, 0.3).unwrap();
        let cfg = VbemConfig { seed: 99, ..VbemConfig::default() };
        let a = fit(&data, 2, &null, &PriorSpec::default_for(2), &cfg).unwrap();
        let b = fit(&data, 2, &null, &PriorSpec::default_for(2), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
