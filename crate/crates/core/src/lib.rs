//! Doubly non-central beta (DNCB) factorization of bounded-support matrices.
//!
//! The crate is organised in layers:
//!
//! * [`special`]: log-space modified Bessel functions, the Bessel quotient,
//!   Kummer's function and the DNCB density.
//! * [`bessel`]: the Bessel discrete distribution and its samplers.
//! * [`model`]: the DNCB-MF / DNCB-TD generative models and the augmented
//!   Gibbs sampler.
//! * [`eval`]: held-out predictive density, prior predictive checks and
//!   co-clustering stability.
//! * [`io`]: matrix files, preprocessing, chain checkpoints and run config.

// `!(x > 0.0)` is the NaN-rejecting form used in argument checks
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bessel;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod rng;
pub mod special;

pub use bessel::{BesselParams, SamplerMethod};
pub use error::{DncbError, Result};
pub use model::{
    AugmentedState, BoundedMatrix, Chain, DncbParams, Factors, Hyperparams, InitStrategy,
    MfFactors, Model, ModelKind, TdFactors,
};
