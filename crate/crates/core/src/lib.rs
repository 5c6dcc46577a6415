//! Joint multilevel regression and poststratification for two-modality surveys.
//!
//! The crate fits a spatio-temporal logistic model to pooled mobile-phone and
//! face-to-face survey records with a from-scratch NUTS sampler, then produces
//! district × month prevalence estimates by poststratification, standardised to
//! the face-to-face measurement scale.

pub mod error;
pub mod estimators;
pub mod indicators;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod simulate;
pub mod weights;

pub use error::{Error, Result};
