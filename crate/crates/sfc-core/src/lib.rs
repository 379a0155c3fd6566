//! Bayesian clustering of spatially indexed functional data.
//!
//! The library couples three pieces:
//!
//! * a generalized Voronoi tessellation over a lattice, giving a prior on
//!   connected partitions whose boundaries need not follow plain
//!   nearest-center cells ([`partition`]);
//! * a per-cluster functional regression in the wavelet domain with
//!   spike-and-slab coefficient selection, conditional autoregressive
//!   spatial random effects, and closed-form collapsed likelihoods
//!   ([`wavelet`], [`likelihood`]);
//! * a reversible-jump MCMC sampler over partitions and model parameters,
//!   with deterministic seeding and optional data-parallel execution
//!   ([`sampler`], [`parallel`]).
//!
//! Entry points: [`model::ModelContext`] bundles the data and geometry,
//! [`sampler::run_chain`] draws from the posterior, [`simulate`] generates
//! synthetic datasets, and [`diagnostics`] summarizes posterior samples.

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod lattice;
pub mod likelihood;
pub mod model;
pub mod oracle;
pub mod parallel;
pub mod partition;
pub mod sampler;
pub mod selftest;
pub mod simulate;
pub mod stats;
pub mod wavelet;

pub use error::{Result, SfcError};
