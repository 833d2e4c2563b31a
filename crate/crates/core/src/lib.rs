//! Multiparameter stochastic reconstruction on rectangular increments.
//!
//! Germs indexed by base points in `[0,T]^d` are paired with wavelets and
//! summed into partial reconstructions; the same machinery integrates
//! white noise against adapted fields (Walsh integrals), multiplies fields
//! with deterministic distributions (Young products) and drives a Picard
//! solver for a mixed hyperbolic SPDE.

pub mod calculus;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod holder;
pub mod increments;
pub mod noise;
pub mod reconstruction;
pub mod rng;
pub mod sewing;
pub mod spde;
pub mod stats;
pub mod wavelets;

pub use error::{Error, Result};
