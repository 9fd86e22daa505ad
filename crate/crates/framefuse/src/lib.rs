//! Frame-feature aggregation for video-text retrieval.
//!
//! The crate implements every similarity-calculator design studied in
//! this project over precomputed text/frame embeddings: plain mean
//! pooling, sigmoid-gated excitation, softmax-gated aggregation, their
//! hybrids in squeeze and expansion paradigms, sequential (LSTM /
//! Transformer) temporal encoders with gated heads, and a tight
//! cross-modal scorer. Everything differentiable runs on a small
//! reverse-mode tape with a finite-difference gradient checker, and a
//! training loop (Adam + cosine schedule, symmetric contrastive loss)
//! plus retrieval metrics (R@K, MdR, MnR, RSum) close the loop.

pub mod calculator;
pub mod data;
pub mod error;
pub mod exec;
pub mod gates;
pub mod gradcheck;
pub mod params;
pub mod retrieval;
pub mod tape;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Matrix, Vector};
