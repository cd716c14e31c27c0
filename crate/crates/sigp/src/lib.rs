//! Sufficient-dimension-reduction integral Gaussian processes (SIGP).
//!
//! A low-rank GP whose sample paths live in the RKHS of the kernel. The basis is
//! estimated by kernel sliced inverse regression and the variance components are
//! fitted by EM. An exact GP is included as a baseline.

pub mod baseline_gp;
pub mod bench;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod linalg;
pub mod model_io;
pub mod pipeline;
pub mod sdr;
pub mod sigp;

pub use error::{Error, Result};
