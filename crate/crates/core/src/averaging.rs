//! Averaged posterior probabilities of the null class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LabelSequence;
use crate::vbem::FitResult;
use crate::weights::WeightVector;

/// Per-timepoint probabilities `T_t = P(S_t = 0 | X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrack {
    pub values: Vec<f64>,
    /// Model id, `"averaged"`, `"theoretical"`, ...
    pub source: String,
}

impl PosteriorTrack {
    pub fn new(values: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        if let Some(t) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("track value {} at t={t} outside [0,1]", values[t])));
        }
        Ok(Self { values, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `1 - T_t`, the probability of the class of interest.
    pub fn complement(&self) -> Vec<f64> {
        self.values.iter().map(|v| 1.0 - v).collect()
    }
}

/// `T_t = 1 - Q(S_t = 1)` for a single model.
pub fn model_track(fit: &FitResult) -> PosteriorTrack {
    PosteriorTrack {
        values: fit.s_marginals.iter().map(|s| (1.0 - s).clamp(0.0, 1.0)).collect(),
        source: format!("m={}", fit.m),
    }
}

/// `T~_t = 1 - sum_m alpha_m Q_m(S_t = 1)`.
pub fn averaged_posterior(fits: &[FitResult], w: &WeightVector) -> Result<PosteriorTrack> {
    if fits.len() != w.len() {
        return Err(Error::DimensionMismatch { expected: w.len(), actual: fits.len() });
    }
    let tracks: Vec<&[f64]> = fits.iter().map(|f| f.s_marginals.as_slice()).collect();
    let abnormal = mix(&tracks, &w.values)?;
    PosteriorTrack::new(abnormal.iter().map(|s| (1.0 - s).clamp(0.0, 1.0)).collect(), "averaged")
}

/// Convex combination of tracks given directly as `T` values.
pub fn averaged_tracks(tracks: &[PosteriorTrack], w: &WeightVector) -> Result<PosteriorTrack> {
    if tracks.len() != w.len() {
        return Err(Error::DimensionMismatch { expected: w.len(), actual: tracks.len() });
    }
    let refs: Vec<&[f64]> = tracks.iter().map(|t| t.values.as_slice()).collect();
    let values = mix(&refs, &w.values)?;
    PosteriorTrack::new(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(), "averaged")
}

fn mix(tracks: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let n = tracks.first().map_or(0, |t| t.len());
    if let Some(bad) = tracks.iter().find(|t| t.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, actual: bad.len() });
    }
    let mut out = vec![0.0; n];
    for (track, &a) in tracks.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(track.iter()) {
            *o += a * v;
        }
    }
    // Rounding can push a convex combination an ulp outside its inputs.
    for (t, o) in out.iter_mut().enumerate() {
        let lo = tracks.iter().map(|tr| tr[t]).fold(f64::INFINITY, f64::min);
        let hi = tracks.iter().map(|tr| tr[t]).fold(f64::NEG_INFINITY, f64::max);
        *o = o.clamp(lo, hi);
    }
    Ok(out)
}

/// Default decision threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Label 0 where `T_t >= threshold`, else 1.
pub fn classify(track: &PosteriorTrack, threshold: f64) -> Result<LabelSequence> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0,1)")));
    }
    LabelSequence::binary(track.values.iter().map(|&v| usize::from(v < threshold)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{WeightKind, WeightVector};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tr(v: Vec<f64>) -> PosteriorTrack {
        PosteriorTrack::new(v, "t").unwrap()
    }

    fn w(values: Vec<f64>) -> WeightVector {
        let ids = (1..=values.len()).collect();
        WeightVector::new(values, WeightKind::Vb, ids).unwrap()
    }

    #[test]
    fn unit_mass_selects_track() {
        let a = tr(vec![0.2, 0.9]);
        let b = tr(vec![0.7, 0.1]);
        let out = averaged_tracks(&[a, b.clone()], &w(vec![0.0, 1.0])).unwrap();
        assert_eq!(out.values, b.values);
    }

    #[test]
    fn equal_halves_average() {
        let out = averaged_tracks(&[tr(vec![0.2]), tr(vec![0.8])], &w(vec![0.5, 0.5])).unwrap();
        assert_relative_eq!(out.values[0], 0.5, epsilon = 1e-15);
        let same = averaged_tracks(&[tr(vec![0.3, 0.6]), tr(vec![0.3, 0.6])], &w(vec![0.2, 0.8])).unwrap();
        assert_relative_eq!(same.values[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(same.values[1], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(averaged_tracks(&[tr(vec![0.2]), tr(vec![0.8, 0.1])], &w(vec![0.5, 0.5])).is_err());
        assert!(averaged_tracks(&[tr(vec![0.2])], &w(vec![0.5, 0.5])).is_err());
        assert!(PosteriorTrack::new(vec![1.2], "x").is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&tr(vec![0.9, 0.1]), 0.5).unwrap().values, vec![0, 1]);
        assert_eq!(classify(&tr(vec![0.5, 0.5]), 0.5).unwrap().values, vec![0, 0]);
        assert_eq!(classify(&tr(vec![0.99, 0.7]), 0.999).unwrap().values, vec![1, 1]);
        assert_eq!(classify(&tr(vec![0.9995, 0.7]), 0.999).unwrap().values, vec![0, 1]);
        assert!(classify(&tr(vec![0.5]), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn averaged_track_is_bounded_by_components(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 8), 1..6),
            raw in prop::collection::vec(0.0f64..1.0, 6),
        ) {
            let k = rows.len();
            let s: f64 = raw[..k].iter().sum::<f64>() + 1e-9;
            let mut values: Vec<f64> = raw[..k].iter().map(|v| (v + 1e-9 / k as f64) / s).collect();
            let total: f64 = values.iter().sum();
            values.iter_mut().for_each(|v| *v /= total);
            let tracks: Vec<PosteriorTrack> = rows.into_iter().map(tr).collect();
            let out = averaged_tracks(&tracks, &w(values.clone())).unwrap();
            for t in 0..8 {
                let lo = tracks.iter().map(|x| x.values[t]).fold(f64::INFINITY, f64::min);
                let hi = tracks.iter().map(|x| x.values[t]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.values[t] >= lo && out.values[t] <= hi);
            }
            // Permuting weights together with tracks leaves the labels unchanged.
            let mut perm_tracks = tracks.clone();
            perm_tracks.reverse();
            let mut perm_values = values;
            perm_values.reverse();
            let again = averaged_tracks(&perm_tracks, &w(perm_values)).unwrap();
            for (a, b) in out.values.iter().zip(&again.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
