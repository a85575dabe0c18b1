//! Semantic-prior face deblurring.
//!
//! Synthetic motion-blur degradation, a face parsing network, a two-scale
//! generator conditioned on semantic probability maps, the training losses,
//! a kernel-size curriculum and the evaluation harness.

pub mod blur;
pub mod checkpoint;
pub mod data;
pub mod deblur_net;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod features;
pub mod geom;
pub mod image;
pub mod losses;
pub mod nn;
pub mod parse_net;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use facedeblur_tensor as tensor;
