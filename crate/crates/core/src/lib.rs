//! Negative-feedback-aware recommendation.
//!
//! The crate combines a Transformer-Hawkes sequential encoder that also
//! predicts the polarity (positive / negative) of a user's next interaction
//! with a two-phase hypergraph convolution whose second phase only passes
//! messages along non-conflicting feedback correlations. A joint decoder
//! scores every item for every user.
//!
//! Module map:
//!
//! - [`tensor`]: dense `f64` matrices with tape-based reverse-mode
//!   differentiation and a finite-difference gradient checker.
//! - [`data`]: interaction ingestion, polarity labelling, filtering, the
//!   chronological split, item adjacency and multi-order feedback
//!   correlation matrices, and the on-disk dataset bundle.
//! - [`seq_encoder`]: causal self-attention encoder and the per-polarity
//!   conditional intensity.
//! - [`graph_encoder`]: interactive hypergraph convolution and
//!   feedback-aware aggregation.
//! - [`model`]: decoder, losses, Monte Carlo integration, training and
//!   checkpoints.
//! - [`eval`]: ranking metrics, evaluation, ablations and representation
//!   export.
//! - [`config`] and [`cli`]: the run configuration file and the `nfarec`
//!   command-line surface.
//! - [`synthetic`]: seeded generators for the planted datasets used by the
//!   examples and tests.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph_encoder;
pub mod model;
pub mod seq_encoder;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
