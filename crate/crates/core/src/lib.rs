//! Deterministic MapReduce (DMRC) model with constructive simulations of NC circuits.
//!
//! - [`circuit`]: Boolean circuit data model, generators and sequential oracles.
//! - [`pbp`]: width-5 permutation branching programs and the Barrington compiler.
//! - [`mrc`]: round-by-round MapReduce engine with word-level budget accounting.
//! - [`crcw`]: Sum-CRCW PRAM with constant-time prefix-sum and integer-sort kernels.
//! - [`crcw_to_mrc`]: simulation of Sum-CRCW machines on the MapReduce engine.
//! - [`pbp_mrc`]: constant-round evaluation of branching programs.
//! - [`circuit_mrc`]: level-sorted subcircuit evaluation in `ceil(depth / s)` phases.

pub mod circuit;
pub mod circuit_mrc;
pub mod crcw;
pub mod crcw_to_mrc;
pub mod error;
pub mod mrc;
pub mod pbp;
pub mod pbp_mrc;

pub use error::{Error, Result};
