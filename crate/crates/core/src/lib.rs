//! Text data augmentation for sentiment classification in the low-resource
//! regime: token perturbations, cached backtranslation, a hashed linear
//! baseline, test-time-augmentation ensembles and sentence-level analysis.

pub mod analyze;
pub mod augment;
pub mod classify;
pub mod corpus;
pub mod demo;
pub mod ensemble;
mod error;
pub mod experiment;
pub mod seed;
pub mod translate;

pub use error::{Error, Result};
