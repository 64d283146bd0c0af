//! Least squares over the probability simplex:
//! `min ||y - A w||^2` subject to `w >= 0`, `sum w = 1`.
//!
//! For small numbers of columns every support set is tried: on a support the
//! problem is an equality-constrained quadratic solved through its KKT system,
//! and the optimum is the best feasible candidate. Larger problems fall back to
//! accelerated projected gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const EXACT_LIMIT: usize = 12;
const FEAS_TOL: f64 = 1e-12;

/// Gram form of the problem: `||y||^2 - 2 b'w + w'Gw`.
#[derive(Debug, Clone)]
pub struct SimplexProblem {
    pub gram: DMatrix<f64>,
    pub cross: DVector<f64>,
    pub target_sq: f64,
}

impl SimplexProblem {
    /// `columns[j]` is the j-th regressor; all must match `target` in length.
    pub fn new(columns: &[&[f64]], target: &[f64]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("no regressors"));
        }
        for c in columns {
            if c.len() != target.len() {
                return Err(Error::DimensionMismatch { expected: target.len(), actual: c.len() });
            }
        }
        let k = columns.len();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let gram = DMatrix::from_fn(k, k, |i, j| dot(columns[i], columns[j]));
        if gram.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("all-zero design"));
        }
        let cross = DVector::from_fn(k, |i, _| dot(columns[i], target));
        Ok(Self { gram, cross, target_sq: dot(target, target) })
    }

    pub fn dim(&self) -> usize {
        self.cross.len()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        (self.target_sq - 2.0 * self.cross.dot(&w) + w.dot(&(&self.gram * &w))).max(0.0)
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        2.0 * (&self.gram * w - &self.cross)
    }

    /// Largest violation of the KKT conditions at `w`, relative to the scale
    /// of the gradient.
    pub fn kkt_residual(&self, w: &[f64]) -> f64 {
        let wv = DVector::from_column_slice(w);
        let g = self.gradient(&wv);
        let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 1e-10).collect();
        let nu = -support.iter().map(|&i| g[i]).sum::<f64>() / support.len().max(1) as f64;
        let scale = 1.0 + g.amax();
        let mut worst = (w.iter().sum::<f64>() - 1.0).abs();
        for i in 0..w.len() {
            worst = worst.max((-w[i]).max(0.0));
            let mult = g[i] + nu;
            if support.contains(&i) {
                worst = worst.max(mult.abs() / scale);
            } else {
                worst = worst.max((-mult).max(0.0) / scale);
            }
        }
        worst
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        if self.dim() <= EXACT_LIMIT {
            self.solve_by_supports()
        } else {
            Ok(self.solve_projected())
        }
    }

    fn solve_on_support(&self, support: &[usize]) -> Option<Vec<f64>> {
        let s = support.len();
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = 2.0 * self.gram[(i, j)];
            }
            kkt[(a, s)] = 1.0;
            kkt[(s, a)] = 1.0;
            rhs[a] = 2.0 * self.cross[i];
        }
        rhs[s] = 1.0;
        let sol = kkt.svd(true, true).solve(&rhs, 1e-12).ok()?;
        let mut w = vec![0.0; self.dim()];
        for (a, &i) in support.iter().enumerate() {
            if sol[a] < -FEAS_TOL || !sol[a].is_finite() {
                return None;
            }
            w[i] = sol[a].max(0.0);
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return None;
        }
        w.iter_mut().for_each(|v| *v /= total);
        Some(w)
    }

    fn solve_by_supports(&self) -> Result<Vec<f64>> {
        let k = self.dim();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1u32 << k) {
            let support: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
            if let Some(w) = self.solve_on_support(&support) {
                let obj = self.objective(&w);
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, w));
                }
            }
        }
        best.map(|(_, w)| w).ok_or_else(|| Error::Numeric("no feasible support found".into()))
    }

    fn solve_projected(&self) -> Vec<f64> {
        let k = self.dim();
        let lipschitz = 2.0 * self.gram.norm().max(1e-300);
        let mut w = DVector::from_element(k, 1.0 / k as f64);
        let mut y = w.clone();
        let mut t = 1.0f64;
        for _ in 0..20_000 {
            let g = self.gradient(&y);
            let next = project_simplex(&(&y - g / lipschitz));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + (&next - &w) * ((t - 1.0) / t_next);
            let moved = (&next - &w).amax();
            w = next;
            t = t_next;
            if moved < 1e-15 {
                break;
            }
        }
        w.iter().copied().collect()
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let candidate = (cum - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Convenience wrapper over [`SimplexProblem`].
pub fn simplex_least_squares(columns: &[&[f64]], target: &[f64]) -> Result<Vec<f64>> {
    SimplexProblem::new(columns, target)?.solve()
}
