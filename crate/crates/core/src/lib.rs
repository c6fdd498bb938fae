//! Feature-adjacent multi-fidelity physics-informed networks.

pub mod autodiff;
pub mod error;
pub mod float;
pub mod harness;
pub mod network;
pub mod problems;
pub mod refsolvers;
pub mod training;

pub use error::{Error, Result};
pub use float::{Precision, Real};
