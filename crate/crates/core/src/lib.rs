//! Temporal-relational cross-attention prototypes for few-shot classification
//! of frame sequences.
//!
//! A query sequence is represented by every ordered tuple of its frames. For
//! each tuple cardinality a cross-attention module matches query tuples
//! against all support tuples of a class, builds a query-specific prototype
//! and measures the distance to it. Class distances are summed over
//! cardinalities and the nearest class wins.
//!
//! Modules, bottom-up:
//!
//! * [`tensor`]: dense tensors, a reverse-mode tape and the parameter store.
//! * [`tuples`]: tuple enumeration, subsampling and positional encoding.
//! * [`model`]: embedding head, cross-attention distances, checkpoints.
//! * [`episodes`]: datasets, synthetic generation, feature files, sampling.
//! * [`train_eval`]: episodic training, evaluation, ablations, analytics.
//! * [`cli`]: configuration files, manifests and command dispatch.

pub mod cli;
pub mod episodes;
pub mod error;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train_eval;
pub mod tuples;

pub use error::{Error, Result};
