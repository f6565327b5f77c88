//! Adversarial stochastic convex optimization instances on which full-batch
//! gradient descent overfits, together with exact certificates for every
//! step of the construction.
//!
//! Module map:
//! - [`code`]: binary code sets with bounded pairwise overlap, sampling, and
//!   exact population expectations of the thresholded max-correlation loss.
//! - [`instance`]: instance parameters, block structure, the block Nemirovski
//!   function and the three-case sample-dependent subgradient oracle.
//! - [`gd`]: projected (sub)gradient descent, closed-form trajectories,
//!   trajectory certificates and the one-dimensional optimization bound.
//! - [`interpolation`]: max-of-affine convex extensions of triplet sets.
//! - [`encoder`]: the auxiliary encoding coordinate and its exact polynomials.
//! - [`reduction`]: the standard-oracle function built from triplet sets and
//!   its adversarial replay.
//! - [`experiment`]: end-to-end gap trials, invariant suite and reports.

pub mod code;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod gd;
pub mod instance;
pub mod interpolation;
pub mod reduction;

pub use error::{Error, Result};
