//! Diffusion path optimization in a factorized path subspace.
//!
//! A frozen denoiser is paired with a schedule `x_t = f_A(t)·x_0 + f_B(t)·ε`
//! whose weights are stored as per-step factors. The [`ldsb`] module runs
//! alternating forward/reverse fitting rounds that adjust those factors,
//! with small B-spline KANs ([`kan`]) predicting each factor from time.

pub mod data;
pub mod cli;
pub mod denoiser;
pub mod error;
pub mod kan;
pub mod ldsb;
pub mod metrics;
pub mod numerics;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
