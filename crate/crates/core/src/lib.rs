//! Unfolded sparse-recovery networks (LISTA, ADMM-CSNet) and a matched
//! feed-forward baseline, with the tangent-kernel, curvature and training
//! diagnostics used to study their optimisation behaviour.

pub mod activation;
pub mod curvature;
pub mod error;
pub mod experiments;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod networks;
pub mod problem;
pub mod scalar;
pub mod seed;
pub mod training;

pub use activation::SmoothThreshold;
pub use error::{Error, Result};
pub use networks::{param_count, Arch, InitialState, Network, Trace};
pub use problem::{Dataset, LinearInverseProblem, SolverConfig};
pub use scalar::Scalar;

pub type Network64 = Network<f64>;
pub type Network32 = Network<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Problem64 = LinearInverseProblem<f64>;
