//! Centrality-aware fairness for unsupervised node embeddings.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] - CSR graph model, degree centrality and median popularity groups.
//! * [`distance`] - exact all-pairs BFS and landmark hop-distance oracles.
//! * [`splits`] - inductive node/edge splits for the two downstream tasks.
//! * [`encoder`] - GraphSAGE-mean encoder with exact reverse-mode gradients.
//! * [`loss`] - positive/negative sampling, contrastive and fairness losses, trainer.
//! * [`downstream`] - logistic-regression classifiers on frozen embeddings.
//! * [`metrics`] - imparity, II, CA, CV, T and the degree/accuracy slope.
//! * [`experiment`] - config-driven `preprocess` / `run` / `report` pipeline.

pub mod distance;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod splits;
pub mod synth;

pub use error::{Error, Result};
