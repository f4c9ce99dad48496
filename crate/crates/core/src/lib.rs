//! Session-based next-item recommendation.
//!
//! Candidates come from co-visitation counters, are padded with embedding
//! neighbours, and are re-ranked by a gradient-boosted binary classifier over
//! a fixed, locale-free feature schema.

pub mod candgen;
pub mod corpus;
pub mod covis;
pub mod embed;
pub mod error;
pub mod eval;
pub mod featgen;
pub mod gbdt;
pub mod pipeline;

pub use error::{Error, Result};
