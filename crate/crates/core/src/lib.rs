//! Finite-width networks in the neural tangent kernel parameterization, their
//! kernels and spectra, gradient-descent dynamics against the kernel-regime
//! reference, and covering-number tools for the linearized model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod dual;
pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod linalg;
pub mod net;
pub mod ntk;
pub mod rng;
pub mod spectral;

pub use activation::Activation;
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use net::{InputScaling, LayerSpec, Network, NetworkSpec, ParamVector};
pub use rng::Rng;
