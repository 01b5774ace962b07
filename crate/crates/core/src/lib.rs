//! Compositional generative head over convolutional feature maps.
//!
//! Feature vectors are explained by a bank of von Mises-Fisher kernels, each
//! class by spatial mixtures over those kernels, and anything else by a small
//! bank of occluder models. The same likelihoods drive occlusion-robust
//! classification, scanning-window detection with corner voting, and
//! occluder localization, and are trained end to end with hand-written
//! gradients.

pub mod baseline;
pub mod clustering;
pub mod context;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod inference;
pub mod init;
pub mod instances;
pub mod io;
pub mod mixture;
pub mod model;
pub mod occlusion;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod vmf;

pub use error::{Error, Result};
