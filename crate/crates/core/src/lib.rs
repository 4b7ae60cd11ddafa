//! Deterministic equivalents for random-features ridge regression.
//!
//! * [`model`]: datasets, activations, configuration and matrix I/O.
//! * [`kernels`]: Monte Carlo second-moment kernels of feature columns.
//! * [`equiv`]: the scalar fixed point, `M(0)` and the predicted test error.
//! * [`rdel`]: a generic regularized Dyson equation solver.
//! * [`sim`]: simulation of the actual model and diagnostics against theory.

pub mod equiv;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod par;
pub mod report;
pub mod rdel;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use kernels::KernelSet;
pub use linalg::c64;
pub use model::{Activation, Dataset, Layout, RFConfig};
pub use par::Execution;
