//! Decentralized control of large populations of weakly coupled
//! linear-quadratic agents with state- and control-dependent noise.
//!
//! The pipeline solves the per-agent Riccati equation, the mean-field
//! consistency system and its decoupling Riccati equation, and produces a
//! feedback law `u_i = Θ₁ x_i + Θ₂` that each agent evaluates on its own
//! state. A brute-force stacked solver for small populations, a Monte Carlo
//! simulator and convexity checks support verification.

pub mod analysis;
pub mod cc_solver;
pub mod cli;
pub mod convexity;
pub mod error;
pub mod linalg_ode;
pub mod model;
pub mod riccati;
pub mod simulator;

pub use error::{Error, Result};
