//! Differential attention engine.
//!
//! Builds and verifies exemplar-driven attention for answer
//! classification at desk scale: exact k-NN retrieval of supporting and
//! opposing exemplars, an attention network with hand-derived gradients,
//! triplet/quintuplet metric learning over attention maps, projection-
//! based differential context, RMSProp training, and rank-correlation /
//! answer-accuracy evaluation against planted synthetic ground truth.

pub mod attention;
pub mod data;
pub mod dcn;
pub mod error;
pub mod exemplar;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
