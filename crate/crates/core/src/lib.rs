//! Federated recommendation over a server-held knowledge graph.
//!
//! The server keeps the knowledge graph and every entity/relation embedding.
//! Each simulated client owns one user's interactions and user embedding,
//! requests an obfuscated set of items, trains a relation-aware GNN on the
//! returned subgraph and uploads clipped, Laplace-noised gradients. The server
//! aggregates the uploads weighted by request size and takes a plain gradient
//! descent step.
//!
//! Module map:
//!
//! - [`kg`]: triple store, fixed-size neighbor sampling, receptive fields
//! - [`params`]: global parameter state, sparse gradients, checkpoints
//! - [`model`]: attention, propagation, readout, loss and the manual backward pass
//! - [`privacy`]: randomized-response request generation and gradient LDP
//! - [`client`] / [`server`]: one federated round and the training loop
//! - [`data`]: dataset files, splitting, evaluation negatives, synthetic data
//! - [`metrics`]: AUC, F1, Recall@K
//! - [`config`] / [`runner`]: experiment configuration and orchestration

pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kg;
pub mod metrics;
pub mod model;
pub mod params;
pub mod privacy;
pub mod rng;
pub mod runner;
pub mod server;
pub mod wire;

pub use error::{Error, Result};

/// Index of an entity in the knowledge graph. Items occupy the id prefix.
pub type EntityId = u32;
/// Index of a relation type in the knowledge graph.
pub type RelationId = u32;
