//! Generative backmapping of coarse-grained molecular conformations.
//!
//! The crate implements a coarse-graining variational auto-encoder: an
//! invariant encoder and prior over per-bead latent variables, an
//! equivariant multi-channel decoder whose output reprojects exactly onto
//! the input beads, the training objective, two deterministic baselines,
//! a differentiable mapping learner, and the metric suite used to compare
//! them — all on top of a small tape-based autodiff engine.
//!
//! Start with the guide in `book/` (rendered with mdBook, embedded here as
//! doc-tested chapters under [`guide`]), or jump straight to:
//!
//! * [`geometry`] — the projection operator `M` and lift operator `M⁺`
//! * [`autodiff`] — tensors, tapes, and gradients
//! * [`model`] — encoder, prior, and equivariant decoder
//! * [`training`] — losses, Adam, schedulers, sampling
//! * [`evaluation`] — reconstruction/diversity/validity metrics

pub mod autodiff;
pub mod autograin;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod gradcheck;
pub mod geometry;
pub mod graphs;
pub mod model;
pub mod nn;
pub mod svg;
pub mod training;
pub mod xyz;
pub mod error;

pub use error::{Error, Result};
