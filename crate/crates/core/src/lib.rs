//! Track-before-detect multiobject tracking with an association-based
//! Poisson multi-Bernoulli (PMB) filter.
//!
//! Objects are tracked directly on cell intensities (no detector). Each
//! object located in a cell may or may not be the one whose return the cell
//! reflects; the probability of contributing follows from a Swerling 1
//! fluctuation model. Data association between Bernoulli components and
//! cells is solved with loopy belief propagation.
//!
//! Module map:
//! - [`state`]: particle containers, Bernoulli/Poisson components, resampling
//! - [`measurement`]: cell grid, frames, Rayleigh likelihoods, contribution probabilities
//! - [`predict`]: PMB prediction (survival, motion, birth)
//! - [`bp`]: association weights, belief propagation, exact enumeration oracle
//! - [`update`]: two-stage measurement update, recycling, estimate extraction
//! - [`filter`]: the per-frame pipeline tying the above together
//! - [`scenario`]: ground-truth generation and frame rendering
//! - [`gospa`]: GOSPA metric with optimal assignment

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bp;
pub mod error;
pub mod filter;
pub mod gospa;
pub mod measurement;
pub mod predict;
pub mod rng;
pub mod scenario;
pub mod state;
pub mod update;

pub use error::{Error, Result};
