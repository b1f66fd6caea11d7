//! Audio-visual emotion classification at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`autodiff`]), the
//! windowed self/cross-modal attention fusion network built on it
//! ([`attention`], [`lisf`], [`glcf`], [`model`]), feature extraction and
//! synthetic data ([`features`]), the polarity-penalized loss and training
//! loop ([`loss`], [`train`], [`experiment`]), and annotation-consistency metrics
//! ([`annotation`]).

pub mod annotation;
pub mod attention;
pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod features;
pub mod glcf;
pub mod gradcheck;
pub mod lisf;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod taxonomy;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, OpKind, Tape, Var};
pub use error::{Error, ErrorClass, Result};
pub use params::{ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};
