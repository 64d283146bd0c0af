//! Scoring of posterior tracks and labels against the generating truth.

use serde::{Deserialize, Serialize};

use crate::averaging::PosteriorTrack;
use crate::error::{Error, Result};
use crate::model::LabelSequence;

/// Which probability the exclusion band is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BandSide {
    /// `P(S_t = 1 | X) = 1 - T_t`.
    #[default]
    Interest,
    /// `T_t` itself.
    Null,
}

/// Closed interval of true probabilities whose timepoints are scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub side: BandSide,
}

impl Default for Band {
    fn default() -> Self {
        Self { low: 0.2, high: 0.8, side: BandSide::Interest }
    }
}

impl Band {
    pub fn new(low: f64, high: f64, side: BandSide) -> Result<Self> {
        if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low > high {
            return Err(Error::invalid(format!("invalid band [{low}, {high}]")));
        }
        Ok(Self { low, high, side })
    }

    /// The whole unit interval, i.e. no exclusion.
    pub fn full() -> Self {
        Self { low: 0.0, high: 1.0, side: BandSide::Interest }
    }

    /// Whether a timepoint with true null probability `t` is retained.
    pub fn keeps(&self, t: f64) -> bool {
        let p = match self.side {
            BandSide::Interest => 1.0 - t,
            BandSide::Null => t,
        };
        p >= self.low && p <= self.high
    }

    pub fn mask(&self, truth: &PosteriorTrack) -> Vec<bool> {
        truth.values.iter().map(|&t| self.keeps(t)).collect()
    }
}

/// Mean squared error over retained points, or `None` if nothing is retained.
pub fn mse_single(estimate: &PosteriorTrack, truth: &PosteriorTrack, band: &Band) -> Result<Option<f64>> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), actual: estimate.len() });
    }
    let mut acc = 0.0;
    let mut kept = 0usize;
    for (&e, &t) in estimate.values.iter().zip(&truth.values) {
        if band.keeps(t) {
            acc += (e - t) * (e - t);
            kept += 1;
        }
    }
    Ok((kept > 0).then(|| acc / kept as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub mean: f64,
    pub sd: f64,
    pub retained: usize,
    /// Replicates without any point inside the band.
    pub dropped: usize,
}

/// Per-replicate banded MSE aggregated across replicates.
pub fn mse_banded(estimates: &[PosteriorTrack], truths: &[PosteriorTrack], band: &Band) -> Result<MseSummary> {
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: truths.len(), actual: estimates.len() });
    }
    let mut values = Vec::with_capacity(estimates.len());
    for (e, t) in estimates.iter().zip(truths) {
        if let Some(v) = mse_single(e, t, band)? {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("no replicate has points inside the band".into()));
    }
    let (mean, sd) = mean_sd(&values);
    Ok(MseSummary { mean, sd, retained: values.len(), dropped: estimates.len() - values.len() })
}

/// Fraction of disagreeing labels.
pub fn misclassification(pred: &LabelSequence, truth: &LabelSequence) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), actual: pred.len() });
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData("empty label sequences".into()));
    }
    if pred.alphabet != 2 || truth.alphabet != 2 {
        return Err(Error::invalid("misclassification needs binary labels"));
    }
    let wrong = pred.values.iter().zip(&truth.values).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates for one estimation method across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub mse_dropped: usize,
    pub misclassification_mean: f64,
    pub misclassification_sd: f64,
    /// Only for weighting methods.
    pub entropy_mean: Option<f64>,
    /// Only for weighting methods.
    pub tv_to_is_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub c: f64,
    pub u: f64,
    pub l: f64,
    pub n: usize,
    pub replicates: usize,
    pub failed_replicates: usize,
    pub band: Band,
    pub methods: Vec<MethodSummary>,
}

/// One row of the long-format CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatRow {
    pub method: String,
    pub c: f64,
    pub u: f64,
    pub l: f64,
    pub metric: String,
    pub value: f64,
}

impl BenchmarkReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn flat_rows(&self) -> Vec<FlatRow> {
        let mut rows = Vec::new();
        for m in &self.methods {
            let mut push = |metric: &str, value: f64| {
                rows.push(FlatRow {
                    method: m.method.clone(),
                    c: self.c,
                    u: self.u,
                    l: self.l,
                    metric: metric.into(),
                    value,
                })
            };
            push("mse_mean", m.mse_mean);
            push("mse_sd", m.mse_sd);
            push("misclassification_mean", m.misclassification_mean);
            push("misclassification_sd", m.misclassification_sd);
            if let Some(e) = m.entropy_mean {
                push("entropy_mean", e);
            }
            if let Some(tv) = m.tv_to_is_mean {
                push("tv_to_is_mean", tv);
            }
        }
        rows
    }
}
