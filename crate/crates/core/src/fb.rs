//! Forward-backward smoothing for a finite-state chain with arbitrary
//! per-step log weights.
//!
//! Messages are kept in probability space with per-step normalization; the
//! emission rows and the transition matrix are shifted by their maxima before
//! exponentiation so the recursion never sees overflow. All scale factors are
//! accumulated into the log normalizer.

use rand::Rng;

use crate::error::{Error, Result};

/// Forward pass output, reusable for smoothing and for path sampling.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    n_states: usize,
    /// Normalized forward messages, one row per time step.
    alpha: Vec<Vec<f64>>,
    /// Row-shifted emission weights `exp(log_table[t][k] - shift_t)`.
    emis: Vec<Vec<f64>>,
    /// Shifted transitions `exp(log_trans - shift)`.
    trans: Vec<Vec<f64>>,
    /// Per-step normalizers of the forward recursion.
    scale: Vec<f64>,
    log_normalizer: f64,
}

/// Smoothed marginals, summed pairwise expectations, and the log normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    /// `resp[t][k] = P(Z_t = k)`.
    pub resp: Vec<Vec<f64>>,
    /// `pair[i][j] = sum_{t >= 1} P(Z_{t-1} = i, Z_t = j)`.
    pub pair: Vec<Vec<f64>>,
    pub log_normalizer: f64,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite { location: format!("{what}[{i}]"), value: values[i] }),
        None => Ok(()),
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl ForwardPass {
    pub fn run(log_table: &[Vec<f64>], log_trans: &[Vec<f64>], log_init: &[f64]) -> Result<Self> {
        let k = log_init.len();
        if k == 0 {
            return Err(Error::invalid("chain needs at least one state"));
        }
        if log_table.is_empty() {
            return Err(Error::InsufficientData("empty series".into()));
        }
        if log_trans.len() != k {
            return Err(Error::DimensionMismatch { expected: k, actual: log_trans.len() });
        }
        check_finite(log_init, "log_init")?;
        for (i, row) in log_trans.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch { expected: k, actual: row.len() });
            }
            check_finite(row, &format!("log_trans[{i}]"))?;
        }
        for (t, row) in log_table.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch { expected: k, actual: row.len() });
            }
            check_finite(row, &format!("log_table[{t}]"))?;
        }

        let trans_shift = log_trans.iter().map(|r| max_of(r)).fold(f64::NEG_INFINITY, f64::max);
        let trans: Vec<Vec<f64>> =
            log_trans.iter().map(|r| r.iter().map(|&v| (v - trans_shift).exp()).collect()).collect();
        let mut emis = Vec::with_capacity(log_table.len());
        let mut log_normalizer = 0.0;
        for row in log_table {
            let shift = max_of(row);
            log_normalizer += shift;
            emis.push(row.iter().map(|&v| (v - shift).exp()).collect::<Vec<f64>>());
        }

        let n = log_table.len();
        let mut alpha = Vec::with_capacity(n);
        let mut scale = Vec::with_capacity(n);
        let init_shift = max_of(log_init);
        log_normalizer += init_shift;
        let mut first: Vec<f64> = log_init.iter().zip(&emis[0]).map(|(&li, &e)| (li - init_shift).exp() * e).collect();
        let s = normalize(&mut first, 0)?;
        scale.push(s);
        log_normalizer += s.ln();
        alpha.push(first);
        for t in 1..n {
            let prev = &alpha[t - 1];
            let mut next = vec![0.0; k];
            for (i, &a) in prev.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (nj, &tr) in next.iter_mut().zip(&trans[i]) {
                    *nj += a * tr;
                }
            }
            for (nj, &e) in next.iter_mut().zip(&emis[t]) {
                *nj *= e;
            }
            let s = normalize(&mut next, t)?;
            scale.push(s);
            log_normalizer += s.ln() + trans_shift;
            alpha.push(next);
        }
        Ok(Self { n_states: k, alpha, emis, trans, scale, log_normalizer })
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Filtered marginals `P(Z_t | x_1..x_t)`.
    pub fn filtered(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn smooth(&self) -> Smoothed {
        let n = self.alpha.len();
        let k = self.n_states;
        let mut beta = vec![1.0; k];
        let mut resp = vec![vec![0.0; k]; n];
        let mut pair = vec![vec![0.0; k]; k];
        resp[n - 1] = self.alpha[n - 1].clone();
        for t in (1..n).rev() {
            // w[j] = e_t[j] beta_t[j] / c_t
            let w: Vec<f64> = self.emis[t].iter().zip(&beta).map(|(&e, &b)| e * b / self.scale[t]).collect();
            let mut prev_beta = vec![0.0; k];
            for i in 0..k {
                let a = self.alpha[t - 1][i];
                let mut acc = 0.0;
                for j in 0..k {
                    let v = self.trans[i][j] * w[j];
                    acc += v;
                    pair[i][j] += a * v;
                }
                prev_beta[i] = acc;
            }
            beta = prev_beta;
            let mut r: Vec<f64> = self.alpha[t - 1].iter().zip(&beta).map(|(&a, &b)| a * b).collect();
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
            resp[t - 1] = r;
        }
        Smoothed { resp, pair, log_normalizer: self.log_normalizer }
    }

    /// Draws one path from the smoothing distribution by backward sampling.
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let n = self.alpha.len();
        let mut path = vec![0; n];
        path[n - 1] = draw(&self.alpha[n - 1], rng);
        let mut weights = vec![0.0; self.n_states];
        for t in (0..n - 1).rev() {
            let next = path[t + 1];
            for (i, w) in weights.iter_mut().enumerate() {
                *w = self.alpha[t][i] * self.trans[i][next];
            }
            path[t] = draw(&weights, rng);
        }
        path
    }
}

fn normalize(v: &mut [f64], t: usize) -> Result<f64> {
    let s: f64 = v.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Numeric(format!("forward message vanished at step {t}")));
    }
    v.iter_mut().for_each(|x| *x /= s);
    Ok(s)
}

fn draw<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Smoothed marginals, pairwise expected transition counts and the log
/// normalizer `log sum_z exp(log_init[z_1] + sum_t log_table[t][z_t] + sum_t log_trans[z_{t-1}][z_t])`.
pub fn forward_backward(log_table: &[Vec<f64>], log_trans: &[Vec<f64>], log_init: &[f64]) -> Result<Smoothed> {
    Ok(ForwardPass::run(log_table, log_trans, log_init)?.smooth())
}

/// Unnormalized log weight of a single path.
pub fn path_log_weight(path: &[usize], log_table: &[Vec<f64>], log_trans: &[Vec<f64>], log_init: &[f64]) -> f64 {
    let mut acc = log_init[path[0]] + log_table[0][path[0]];
    for t in 1..path.len() {
        acc += log_trans[path[t - 1]][path[t]] + log_table[t][path[t]];
    }
    acc
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive enumeration over all `k^n` paths.
    pub(crate) fn enumerate(log_table: &[Vec<f64>], log_trans: &[Vec<f64>], log_init: &[f64]) -> Smoothed {
        let n = log_table.len();
        let k = log_init.len();
        let total = k.pow(n as u32);
        let mut logs = Vec::with_capacity(total);
        let mut paths = Vec::with_capacity(total);
        for code in 0..total {
            let mut c = code;
            let path: Vec<usize> = (0..n)
                .map(|_| {
                    let s = c % k;
                    c /= k;
                    s
                })
                .collect();
            logs.push(path_log_weight(&path, log_table, log_trans, log_init));
            paths.push(path);
        }
        let lz = crate::math::log_sum_exp(&logs);
        let mut resp = vec![vec![0.0; k]; n];
        let mut pair = vec![vec![0.0; k]; k];
        for (path, lw) in paths.iter().zip(&logs) {
            let w = (lw - lz).exp();
            for t in 0..n {
                resp[t][path[t]] += w;
                if t > 0 {
                    pair[path[t - 1]][path[t]] += w;
                }
            }
        }
        Smoothed { resp, pair, log_normalizer: lz }
    }

    pub(crate) fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        k: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let mut g = || rng.random_range(-6.0..2.0);
        let table = (0..n).map(|_| (0..k).map(|_| g()).collect()).collect();
        let trans = (0..k).map(|_| (0..k).map(|_| g()).collect()).collect();
        let init = (0..k).map(|_| g()).collect();
        (table, trans, init)
    }

    #[test]
    fn single_step_is_normalized_initial_times_emission() {
        let table = vec![vec![-1.0, 0.5, -2.0]];
        let trans = vec![vec![0.0; 3]; 3];
        let init = vec![-0.3, -1.2, -0.1];
        let out = forward_backward(&table, &trans, &init).unwrap();
        let logs: Vec<f64> = init.iter().zip(&table[0]).map(|(a, b)| a + b).collect();
        let expect = crate::math::softmax(&logs);
        for k in 0..3 {
            assert_relative_eq!(out.resp[0][k], expect[k], epsilon = 1e-14);
        }
        assert!(out.pair.iter().flatten().all(|&v| v == 0.0));
        assert_relative_eq!(out.log_normalizer, crate::math::log_sum_exp(&logs), epsilon = 1e-12);
    }

    #[test]
    fn uniform_inputs_give_uniform_marginals() {
        let k = 3;
        let u = (1.0 / k as f64).ln();
        let table = vec![vec![0.0; k]; 5];
        let trans = vec![vec![u; k]; k];
        let init = vec![u; k];
        let out = forward_backward(&table, &trans, &init).unwrap();
        for row in &out.resp {
            for &v in row {
                assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-14);
            }
        }
        assert_relative_eq!(out.log_normalizer, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(1..=6);
            let k = rng.random_range(1..=3);
            let (table, trans, init) = random_instance(&mut rng, n, k);
            let fast = forward_backward(&table, &trans, &init).unwrap();
            let slow = enumerate(&table, &trans, &init);
            assert_relative_eq!(fast.log_normalizer, slow.log_normalizer, epsilon = 1e-10);
            for t in 0..n {
                for s in 0..k {
                    assert_relative_eq!(fast.resp[t][s], slow.resp[t][s], epsilon = 1e-10);
                }
            }
            for i in 0..k {
                for j in 0..k {
                    assert_relative_eq!(fast.pair[i][j], slow.pair[i][j], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn long_series_does_not_underflow() {
        let n = 5000;
        let table: Vec<Vec<f64>> = (0..n).map(|t| vec![-800.0 - (t % 3) as f64, -801.0]).collect();
        let trans = vec![vec![0.9f64.ln(), 0.1f64.ln()], vec![0.2f64.ln(), 0.8f64.ln()]];
        let init = vec![0.5f64.ln(); 2];
        let out = forward_backward(&table, &trans, &init).unwrap();
        assert!(out.log_normalizer.is_finite());
        assert!(out.log_normalizer < -800.0 * n as f64);
        let row_total: f64 = out.resp.iter().map(|r| r.iter().sum::<f64>()).sum();
        assert_relative_eq!(row_total, n as f64, epsilon = 1e-8);
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let good = vec![vec![0.0, 0.0]];
        let trans = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!(forward_backward(&[vec![f64::NAN, 0.0]], &trans, &[0.0, 0.0]).is_err());
        assert!(forward_backward(&good, &trans, &[f64::NEG_INFINITY, 0.0]).is_err());
        assert!(forward_backward(&good, &[vec![0.0]], &[0.0, 0.0]).is_err());
        assert!(forward_backward(&[], &trans, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn backward_sampling_reproduces_smoothed_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (table, trans, init) = random_instance(&mut rng, 4, 3);
        let fwd = ForwardPass::run(&table, &trans, &init).unwrap();
        let exact = enumerate(&table, &trans, &init);
        let draws = 200_000;
        let mut counts = vec![vec![0.0; 3]; 4];
        for _ in 0..draws {
            let path = fwd.sample_path(&mut rng);
            for (t, &s) in path.iter().enumerate() {
                counts[t][s] += 1.0 / draws as f64;
            }
        }
        for t in 0..4 {
            for s in 0..3 {
                let p = exact.resp[t][s];
                let se = (p * (1.0 - p) / draws as f64).sqrt();
                assert!((counts[t][s] - p).abs() < 5.0 * se + 1e-12, "t={t} s={s}");
            }
        }
    }
}
