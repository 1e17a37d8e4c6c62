//! Corpus-level fine-grained entity typing.
//!
//! Given a knowledge base of entities with fine-grained types and a corpus in
//! which mentions of those entities are linked, this crate learns to predict
//! the types of held-out entities from the corpus alone. Three scorers are
//! provided:
//!
//! * a **global model** that classifies an entity from a single embedding
//!   learned over the whole corpus ([`models::score_gm`]),
//! * a **context model** that scores every mention context separately and
//!   averages the per-context scores ([`models::score_context`],
//!   [`models::aggregate_cm`]),
//! * a **joint model** that sums the two ([`models::score_jm`]).
//!
//! Training data for the context model comes from distant supervision: each
//! context of an entity is labelled with all of that entity's types.
//! [`eval`] implements the ranking (P@1, breakeven point) and thresholded
//! classification measures, and [`syngen`] produces synthetic corpora with
//! known ground truth so the whole pipeline can be checked end to end.

pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod kb;
pub mod models;
pub mod neural;
pub mod pipeline;
pub mod syngen;
mod util;

pub use error::{Error, Result};
