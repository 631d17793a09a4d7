//! Reed-Muller subcodes with recursive projection-aggregation decoding.
//!
//! The crate builds subcodes of RM(m, r) from extra rows of the polar
//! transform, decodes them by recursive projection onto one-dimensional
//! subspaces, prunes the projection tree by several rules and learns
//! per-subspace aggregation weights.

pub mod construct;
pub mod decode;
pub mod error;
pub mod gf2;
pub mod llr;
pub mod project;
pub mod prune;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
