//! Transport-based aggregation of perturbed gradient attributions.
//!
//! Gradient attributions of a forecaster change under small input noise
//! mostly by *moving*: mass that belonged to one structure is deposited a few
//! cells away. Averaging such maps pointwise smears them. This crate treats
//! each perturbed attribution as a probability measure on the grid and
//! aggregates them with an entropic Wasserstein barycenter computed by
//! convolutional Sinkhorn iterations.
//!
//! The crate is `no_std` + `alloc` and contains only numerics:
//!
//! - [`fields`]: grid types, measures, ROI aggregation, raster byte codec.
//! - [`autodiff`]: a small reverse-mode tape with conv, ReLU, max-pool and
//!   attention primitives, plus the closed-form attention backward and the
//!   noise-propagation formulas.
//! - [`toymodel`]: a fixed random conv + attention forecaster and a synthetic
//!   advected-blob generator.
//! - [`transport`]: Sinkhorn plans, an exact LP oracle, the convolutional
//!   barycenter and the mass-flux diagnostic.
//! - [`attribution`]: BaseGrad, IntegratedGrad, SmoothGrad, VarGrad and the
//!   two barycentric variants.
//! - [`metrics`]: Gini sparsity, ROAD faithfulness, local Lipschitz estimates.
//! - [`diagnostics`]: centroid/peak displacement sweeps and dipole maps.
//! - [`meanfield`]: interacting particles on the sphere (attention dynamics).
//!
//! File IO, CSV/JSON output and the command-line front end live in the
//! companion `wgrad` crate.

#![no_std]

extern crate alloc;

pub mod attribution;
pub mod autodiff;
pub mod diagnostics;
mod error;
pub mod fields;
pub(crate) mod math;
pub mod meanfield;
pub mod metrics;
pub mod rng;
pub mod toymodel;
pub mod transport;

pub use error::{Error, Result};
