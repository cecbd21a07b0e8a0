//! Recovering the velocity field of a one-dimensional autonomous ODE from
//! sampled trajectories, via the Schröder and Julia functional equations.

pub mod benchmarks;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod interp;
pub mod julia;
pub mod lsq;
pub mod numeric;
pub mod pipeline;
pub mod propagation;
pub mod rational;
pub mod schroeder;
pub mod trajectory;

pub use error::{Error, ErrorKind, Result};
