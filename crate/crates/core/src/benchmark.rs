//! Replicated simulation study: simulate, fit the collection, weight, average,
//! and score every estimator against the exact posterior of the generator.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{averaged_posterior, classify, model_track, PosteriorTrack, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::metrics::{mean_sd, misclassification, mse_single, Band, BenchmarkReport, MethodSummary};
use crate::simulation::{sample_dataset, theoretical_posterior, SimulationConfig};
use crate::vbem::{fit_collection, PriorSpec, VbemConfig};
use crate::weights::{
    is_weights, oracle_weights, pe_weights, total_variation, uniform_prior, vb_weights, IsConfig, WeightKind,
    WeightVector,
};

/// Methods in report order.
pub const METHODS: [&str; 6] = ["vb", "pe", "is", "selected", "two-state", "oracle"];

/// Which weights pick the single "selected" model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Is,
    Vb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub sim: SimulationConfig,
    pub models: Vec<usize>,
    pub vbem: VbemConfig,
    pub is_samples: usize,
    pub band: Band,
    pub threshold: f64,
    pub selection: Selection,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            sim: SimulationConfig::default(),
            models: (1..=7).collect(),
            vbem: VbemConfig::default(),
            is_samples: 500,
            band: Band::default(),
            threshold: DEFAULT_THRESHOLD,
            selection: Selection::Is,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.models.is_empty() || self.models.contains(&0) {
            return Err(Error::invalid("model collection must be nonempty with m >= 1"));
        }
        if !self.models.contains(&1) {
            return Err(Error::invalid("the collection must contain m = 1 for the two-state baseline"));
        }
        if self.is_samples == 0 {
            return Err(Error::invalid("importance sampling needs at least one draw"));
        }
        Ok(())
    }
}

/// Everything computed for one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub vb: WeightVector,
    pub pe: WeightVector,
    pub is: WeightVector,
    pub oracle: WeightVector,
    /// Model picked by the selection rule.
    pub selected_m: usize,
    /// Banded MSE per entry of [`METHODS`]; `None` when no point is in the band.
    pub mse: Vec<Option<f64>>,
    pub misclassification: Vec<f64>,
}

impl ReplicateResult {
    pub fn mse_of(&self, method: &str) -> Option<f64> {
        METHODS.iter().position(|m| *m == method).and_then(|i| self.mse[i])
    }

    pub fn weights_of(&self, kind: WeightKind) -> &WeightVector {
        match kind {
            WeightKind::Vb => &self.vb,
            WeightKind::Pe => &self.pe,
            WeightKind::Is => &self.is,
            WeightKind::Oracle => &self.oracle,
        }
    }
}

/// Per-replicate seeds for the fitting and sampling stages.
fn stage_seeds(seed: u64, replicate: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(replicate as u64);
    (rng.next_u64(), rng.next_u64())
}

fn restrict(values: &[f64], mask: &[bool]) -> Vec<f64> {
    values.iter().zip(mask).filter(|(_, &k)| k).map(|(&v, _)| v).collect()
}

/// Oracle weights fitted on the timepoints the band retains, so the oracle
/// minimizes exactly the scored criterion. Falls back to all points when the
/// band is empty.
pub fn banded_oracle(
    truth: &PosteriorTrack,
    tracks: &[PosteriorTrack],
    band: &Band,
    ids: Vec<usize>,
) -> Result<WeightVector> {
    let mut mask = band.mask(truth);
    if !mask.iter().any(|&k| k) {
        mask.iter_mut().for_each(|k| *k = true);
    }
    let target = PosteriorTrack { values: restrict(&truth.values, &mask), source: truth.source.clone() };
    let cols: Vec<PosteriorTrack> = tracks
        .iter()
        .map(|t| PosteriorTrack { values: restrict(&t.values, &mask), source: t.source.clone() })
        .collect();
    match oracle_weights(&target, &cols, ids.clone()) {
        Ok(w) => Ok(w),
        // Every retained track value is zero: any weighting is optimal.
        Err(Error::InvalidParameter(_)) => WeightVector::new(uniform_prior(ids.len()), WeightKind::Oracle, ids),
        Err(e) => Err(e),
    }
}

pub fn run_replicate(cfg: &BenchmarkConfig, replicate: usize) -> Result<ReplicateResult> {
    let (x, s) = sample_dataset(&cfg.sim, replicate)?;
    let truth = theoretical_posterior(&x, &cfg.sim)?;
    let (fit_seed, is_seed) = stage_seeds(cfg.sim.seed, replicate);
    let vbem = VbemConfig { seed: fit_seed, ..cfg.vbem.clone() };
    let null = cfg.sim.null();
    let fits = fit_collection(&x, &cfg.models, &null, PriorSpec::default_for, &vbem)?;
    let prior = uniform_prior(fits.len());
    let ids: Vec<usize> = fits.iter().map(|f| f.m).collect();

    let vb = vb_weights(&fits, &prior)?;
    let pe = pe_weights(&fits, &prior, &x)?;
    let (is, _) = is_weights(&fits, &prior, &x, &IsConfig { samples: cfg.is_samples, seed: is_seed })?;
    let tracks: Vec<PosteriorTrack> = fits.iter().map(model_track).collect();
    let oracle = banded_oracle(&truth, &tracks, &cfg.band, ids.clone())?;

    let selected = match cfg.selection {
        Selection::Is => is.argmax(),
        Selection::Vb => vb.argmax(),
    };
    let two_state = ids.iter().position(|&m| m == 1).expect("validated");
    let estimates = [
        averaged_posterior(&fits, &vb)?,
        averaged_posterior(&fits, &pe)?,
        averaged_posterior(&fits, &is)?,
        tracks[selected].clone(),
        tracks[two_state].clone(),
        averaged_posterior(&fits, &oracle)?,
    ];
    let mut mse = Vec::with_capacity(METHODS.len());
    let mut miss = Vec::with_capacity(METHODS.len());
    for est in &estimates {
        mse.push(mse_single(est, &truth, &cfg.band)?);
        miss.push(misclassification(&classify(est, cfg.threshold)?, &s)?);
    }
    Ok(ReplicateResult { replicate, vb, pe, is, oracle, selected_m: ids[selected], mse, misclassification: miss })
}

/// Outcome of a full configuration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub report: BenchmarkReport,
    pub replicates: Vec<ReplicateResult>,
    /// `(replicate, message)` for every replicate that errored.
    pub failures: Vec<(usize, String)>,
}

/// Runs all replicates in parallel on the current rayon pool. A failing
/// replicate is recorded and skipped.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkRun> {
    cfg.validate()?;
    let outcomes: Vec<(usize, Result<ReplicateResult>)> =
        (0..cfg.sim.replicates).into_par_iter().map(|r| (r, run_replicate(cfg, r))).collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes {
        match outcome {
            Ok(res) => replicates.push(res),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if replicates.is_empty() {
        return Err(Error::Numeric(format!("all {} replicates failed", cfg.sim.replicates)));
    }
    let report = summarize(cfg, &replicates, failures.len())?;
    Ok(BenchmarkRun { report, replicates, failures })
}

pub fn summarize(cfg: &BenchmarkConfig, results: &[ReplicateResult], failed: usize) -> Result<BenchmarkReport> {
    let mut methods = Vec::with_capacity(METHODS.len());
    for (i, &name) in METHODS.iter().enumerate() {
        let mse: Vec<f64> = results.iter().filter_map(|r| r.mse[i]).collect();
        let miss: Vec<f64> = results.iter().map(|r| r.misclassification[i]).collect();
        let (mse_mean, mse_sd) = mean_sd(&mse);
        let (mis_mean, mis_sd) = mean_sd(&miss);
        let kind = match name {
            "vb" => Some(WeightKind::Vb),
            "pe" => Some(WeightKind::Pe),
            "is" => Some(WeightKind::Is),
            "oracle" => Some(WeightKind::Oracle),
            _ => None,
        };
        let (entropy_mean, tv_to_is_mean) = match kind {
            Some(k) => {
                let ent: Vec<f64> = results.iter().map(|r| r.weights_of(k).entropy()).collect();
                let tv =
                    results.iter().map(|r| total_variation(r.weights_of(k), &r.is)).collect::<Result<Vec<f64>>>()?;
                (Some(mean_sd(&ent).0), Some(mean_sd(&tv).0))
            }
            None => (None, None),
        };
        methods.push(MethodSummary {
            method: name.to_string(),
            mse_mean,
            mse_sd,
            mse_dropped: results.len() - mse.len(),
            misclassification_mean: mis_mean,
            misclassification_sd: mis_sd,
            entropy_mean,
            tv_to_is_mean,
        });
    }
    Ok(BenchmarkReport {
        c: cfg.sim.c,
        u: cfg.sim.u,
        l: cfg.sim.l,
        n: cfg.sim.n,
        replicates: results.len() + failed,
        failed_replicates: failed,
        band: cfg.band,
        methods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchmarkConfig {
        BenchmarkConfig {
            sim: SimulationConfig { n: 60, replicates: 2, c: 5.0, u: 0.3, l: 0.6, seed: 11 },
            models: vec![1, 2, 3],
            vbem: VbemConfig { restarts: 2, max_iter: 200, ..Default::default() },
            is_samples: 50,
            ..Default::default()
        }
    }

    #[test]
    fn smoke_run_produces_report() {
        let run = run_benchmark(&small()).unwrap();
        assert_eq!(run.report.replicates, 2);
        assert_eq!(run.report.methods.len(), METHODS.len());
        for r in &run.replicates {
            for w in [&r.vb, &r.pe, &r.is, &r.oracle] {
                assert!((w.values.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            let best = r.mse_of("oracle");
            for m in METHODS {
                if let (Some(o), Some(v)) = (best, r.mse_of(m)) {
                    assert!(o <= v + 1e-9, "{m}: oracle {o} > {v}");
                }
            }
        }
    }

    #[test]
    fn replicates_are_deterministic() {
        let cfg = small();
        assert_eq!(run_replicate(&cfg, 1).unwrap(), run_replicate(&cfg, 1).unwrap());
    }

    #[test]
    fn invalid_collection_is_rejected() {
        let cfg = BenchmarkConfig { models: vec![2, 3], ..small() };
        assert!(run_benchmark(&cfg).is_err());
    }
}
