//! Temporal-proximity regularization for diffusion training on video frames.
//!
//! The crate is a small, fully deterministic laboratory:
//!
//! * [`diffusion`] holds the noise schedule, forward corruption (independent
//!   and shared-noise window variants) and the deterministic DDIM sampler.
//! * [`synthgen`] renders synthetic clips with exact ground-truth motion and
//!   defines the binary dataset format.
//! * [`denoiser`] is an MLP epsilon-predictor with its own reverse-mode engine,
//!   per-sample gradients and Jacobians.
//! * [`proximity`] turns adjacent frames into Laplacian edge weights.
//! * [`objective`] assembles the composite loss for every training variant.
//! * [`analysis`] evaluates Dirichlet energies, algebraic connectivity and the
//!   gradient-variance bounds they imply.
//! * [`metrics`] provides a Fréchet feature distance and a diversity score.
//! * [`harness`] is the operational surface: config, training, sampling,
//!   evaluation and run comparison.

pub mod analysis;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod proximity;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
