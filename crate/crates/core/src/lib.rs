//! Dual-mode model predictive control for discrete-time systems whose
//! nonlinearity is a ReLU network.

pub mod bench;
pub mod closed_loop;
pub mod config;
pub mod encoding;
pub mod error;
pub mod neldermead;
pub mod mpc;
pub mod network;
pub mod miqp;
pub mod plant;
pub mod polytope;
pub mod qp;
pub mod target;
pub mod trainer;
pub mod regulator;
mod serde_vec;

pub use error::{Error, Result};
