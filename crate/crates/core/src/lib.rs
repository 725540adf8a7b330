//! Degree-fair graph neural networks.
//!
//! Generalized degrees, degree-conditioned debiasing of neighborhood
//! aggregation, the four-term fairness objective, a full training loop, and
//! ΔDSP / ΔDEO auditing over bottom/top degree groups.

// `!(x >= 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model_io;
pub mod objective;
pub mod operators;
pub mod par;
pub mod params;
pub mod sparse;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, GroupAssignment, NodeSplit};
pub use tensor::Tensor;
