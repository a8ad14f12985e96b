//! Simulation of stochastic segregation cross-diffusion systems
//!
//! ```text
//! du_i = div(δ ∇u_i + u_i ∇p_i(u)) dt + Σ_j σ_ij(u) dW_j,   p_i(u) = Σ_j a_ij u_j
//! ```
//!
//! on the unit interval with no-flux boundaries, discretized by a
//! semi-implicit Euler–Maruyama scheme with centred finite differences.
//! Besides the solver the crate carries the Rao-entropy structure of the
//! model (detailed-balance weights, entropy and relative entropy) and Monte
//! Carlo harnesses for strong-convergence and long-time studies.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod model;
pub mod noise;
pub mod report;
pub mod scheme;

pub use error::{Error, Result};
