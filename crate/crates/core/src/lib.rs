//! Tabular missing-value imputation with joint between-feature and
//! between-sample attention, trained with CutMix corruption and
//! contrastive learning, plus missingness simulators, classical
//! baselines, and a cross-validation benchmark harness.

pub mod augmentation;
pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluation;
mod linalg;
pub mod missingness;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
