//! Variational Bayesian model averaging for binary unsupervised classification
//! of a series under hidden Markov dependence.
//!
//! Each model of the collection is an HMM with a known null density and an
//! `m`-component Gaussian mixture alternative with a shared precision. Models
//! are fitted by variational Bayes EM ([`vbem`]), weighted ([`weights`]), and
//! combined into an averaged posterior probability of the null class
//! ([`averaging`]).

pub mod averaging;
pub mod benchmark;
pub mod error;
pub mod fb;
pub mod io;
pub mod math;
pub mod metrics;
pub mod model;
pub mod simplex;
pub mod simulation;
pub mod vbem;
pub mod weights;

pub use averaging::{averaged_posterior, classify, model_track, PosteriorTrack};
pub use error::{Error, Result};
pub use model::{Gaussian, LabelSequence, MixtureAlternative, NullDensity, TransitionBinary};
pub use vbem::{fit, fit_collection, FitResult, PriorSpec, VbemConfig};
pub use weights::{WeightKind, WeightVector};
