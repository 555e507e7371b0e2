//! Graph contrastive learning toolkit.
//!
//! The crate is organized around the pieces of a contrastive pretraining
//! pipeline for graph classification:
//!
//! - [`graph`]: the undirected attributed [`Graph`] model, datasets, the
//!   TUDataset text format and synthetic corpora.
//! - [`augment`]: node dropping, edge perturbation, attribute masking and
//!   random-walk subgraphs, with strength and degree-biased patterns.
//! - [`numerics`]: a small define-by-run reverse-mode tensor engine, Adam and
//!   a finite-difference gradient checker.
//! - [`encoder`]: GCN/GIN encoders with READOUT, projection head and
//!   classifier head.
//! - [`contrastive`]: the NT-Xent objective and the pretraining loop.
//! - [`pipelines`]: pretrain-and-finetune, linear probing, augmentation grids
//!   and strength/pattern sweeps.
//! - [`config`] and [`cli`]: run configuration files and command dispatch.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the crate root fix the double-precision instantiation used by the
//! pipelines and the command line.

pub mod augment;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod encoder;
mod error;
pub mod graph;
pub mod numerics;
pub mod pipelines;
pub mod rng;
mod scalar;

pub use error::{Error, Result};
pub use graph::{Category, Graph, GraphDataset};
pub use scalar::Scalar;

/// Double-precision dense tensor.
pub type Tensor = numerics::Tensor<f64>;
/// Single-precision dense tensor.
pub type Tensor32 = numerics::Tensor<f32>;
/// Double-precision gradient tape.
pub type Tape = numerics::Tape<f64>;
/// Double-precision model parameters (encoder, projection and classifier heads).
pub type ModelParams = encoder::ModelParams<f64>;
/// Single-precision model parameters.
pub type ModelParams32 = encoder::ModelParams<f32>;
/// Double-precision node/graph batch.
pub type GraphBatch = encoder::GraphBatch<f64>;
