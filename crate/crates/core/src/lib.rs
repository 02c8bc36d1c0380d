//! Natural pre-images of convolutional networks.
//!
//! Activation maximization and feature inversion are solved with one
//! regularized gradient iteration, `u ← K_e ∗ (u − τ·K_f ∗ ∇D)`, whose kernels
//! may be Gaussian or Sobolev filters. A small differentiable CNN supplies
//! `Φ(u)` and `∇_u D` so every scheme can be exercised end to end.

pub mod cnn;
pub mod config;
pub mod demons;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod kernels;
pub mod objectives;
pub mod regularizers;

pub use error::{Error, Result};
pub use grid::{BoundaryRule, Image};
pub use kernels::Kernel;
