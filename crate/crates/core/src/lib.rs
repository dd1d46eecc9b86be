//! Language-neuron identification toolkit for SiLU-gated language models.
//!
//! The pipeline: generate a parallel corpus ([`corpus`]), train a toy model
//! ([`toylm`]), collect activation probabilities into a snapshot
//! ([`snapshot`]), classify neurons ([`identify`]), validate them with
//! deactivation ablation ([`ablation`]) and summarize ([`analysis`]).

pub mod ablation;
pub mod analysis;
pub mod corpus;
pub mod error;
pub mod heatmap;
pub mod identify;
pub mod rng;
pub mod snapshot;
pub mod toylm;

pub use error::{Error, Result};
