//! Retrieval-augmented recurrent models.
//!
//! A flat nearest-neighbour index over training inputs supplies the target of
//! the closest training example. That target is encoded to a fixed-length
//! vector and injected into an LSTM either as its initial memory state or
//! through a two-way attention layer that chooses between the attended input
//! and the retrieved target. Two models use this: a caption decoder over
//! image region features and a binary sentiment classifier.
//!
//! Everything numeric runs on the small reverse-mode tape in [`autodiff`].

pub mod attention;
pub mod autodiff;
pub mod bleu;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod formats;
pub mod fsutil;
pub mod gradcheck;
pub mod knn;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod synth;
pub mod target;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use knn::{ExampleStore, Metric, RetrievalHit, TargetPayload};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
