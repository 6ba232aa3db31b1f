//! Hardware-aware architecture search for graph neural networks on edge devices.
//!
//! The crate models a position-based GNN design space, estimates per-device
//! latency and peak memory of candidate architectures, learns a graph-based
//! performance predictor, and runs a two-stage evolutionary search under
//! hardware constraints.
//!
//! Numeric kernels are generic over the scalar type via [`scalar::Scalar`]
//! (`f32` or `f64`); byte accounting and design-space cardinality use exact
//! integer arithmetic.

// Validation deliberately uses negated comparisons (`!(x > 0.0)`) so NaN
// inputs fail closed.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arch_graph;
pub mod design_space;
pub mod device_cost;
pub mod mem_model;
pub mod predictor;
pub mod scalar;
pub mod search;
pub mod seeds;

mod error;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type used by the CLI and the concrete aliases below.
pub type Real = f64;

/// Architecture graph instantiated at the default scalar.
pub type RealArchGraph = arch_graph::ArchGraph<Real>;

/// Predictor weights instantiated at the default scalar.
pub type RealModelWeights = predictor::ModelWeights<Real>;

/// Version of the architecture-graph feature encoding. Trained predictors are
/// only valid for the encoding they were trained with.
pub const ENCODING_VERSION: u32 = 1;

/// Crate version embedded into every written artifact.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
