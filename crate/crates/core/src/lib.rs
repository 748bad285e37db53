//! Weakness-routed training for multi-pathway classifiers.
//!
//! A multi-pathway network emits `N` logit vectors for the same input. Instead
//! of averaging them, training composes a single logit vector from the
//! per-class components of the *weakest* pathways so that backpropagation is
//! routed only through those components. Two inference protocols recover a
//! prediction from a trained network: strong inference (per-class strongest
//! component under a pseudo target) and mean inference (average of the
//! log-softmaxed pathways).
//!
//! Crate layout:
//!
//! - [`tensor`]: dense `f64` tensors and a define-by-run reverse-mode tape.
//! - [`weakroute`]: weakness scoring, composition and both inference protocols.
//! - [`models`]: the four desk-scale multi-pathway topologies and checkpoints.
//! - [`data`]: IDX ingestion, synthetic datasets, normalization, batching.
//! - [`training`]: optimizers, the training loop and evaluation.
//! - [`stats`]: contingency tables, McNemar's test and run comparison.
//! - [`par`]: data-parallel helpers with a sequential fallback.

// Negated float comparisons deliberately reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod models;
pub mod par;
pub mod stats;
pub mod tensor;
pub mod training;
pub mod weakroute;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};
