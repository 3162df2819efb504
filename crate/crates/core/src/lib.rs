//! Workbench for training graph-neural-network surrogates of linear-elasticity
//! finite element analysis on parametric I-beams.
//!
//! The pipeline: a fixed-topology tetrahedral mesher ([`geometry`]), a
//! constant-strain-tet elasticity solver ([`fea`]), Latin-hypercube dataset
//! generation with a binary on-disk format ([`dataset`]), a tensor-granularity
//! reverse-mode tape with second-order forward jets ([`tape`], [`jet`]), four
//! GNN processor architectures ([`gnn`]), a Navier-Cauchy physics loss
//! ([`physics`]), the two-stage curriculum trainer ([`trainer`]) and the
//! metric suite ([`evaluator`]).

pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod fea;
pub mod geometry;
pub mod gnn;
pub mod jet;
pub mod nn;
pub mod parallel;
pub mod physics;
pub mod tape;
pub mod trainer;
pub mod verify;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
