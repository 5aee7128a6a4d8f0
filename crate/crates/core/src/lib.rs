//! Singular value ensembles.
//!
//! A pretrained weight matrix `W = U diag(σ) Vᵀ` is split once; `U` and `Vᵀ`
//! stay frozen and each ensemble member learns only its own copy of `σ`
//! (plus its own classification head). This crate provides the numerical
//! substrate (tensors, reverse-mode tape, Jacobi SVD), the SVE layer and
//! models, training, calibration and OOD metrics, synthetic and on-disk
//! datasets, and the experiment runner behind the `sve` binary.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod svd;
pub mod sve;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
