//! Nakagami parametric imaging and breast-mass classification.
//!
//! The pipeline runs envelope detection, sliding-window Nakagami estimation
//! into seven parametric maps, 72-feature extraction over nine anatomical
//! regions, recursive feature elimination with cross-validation, and a linear
//! SVM whose decision threshold is tuned on pooled out-of-fold scores. A
//! synthetic speckle phantom supplies cohorts with known ground truth.

pub mod envelope;
pub mod error;
pub mod fractal;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod model;
pub mod morpho;
pub mod nakagami;
pub mod phantom;
pub mod regional;
pub mod svm;
pub mod classifier;
pub mod selection;
pub mod pipeline;

pub use error::{Error, Result};
