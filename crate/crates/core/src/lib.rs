//! Augmentation-policy search for semi-supervised image classification.
//!
//! A policy is a weighted set of two-operation sub-policies. During search the
//! weights, application probabilities and magnitudes are tuned by alternating
//! FixMatch model updates with bi-level augmentation updates: a copy of the
//! model takes one on-tape FixMatch step under a sampled sub-policy, the copy
//! is scored on held-out labels, and that score is differentiated back to the
//! policy parameters (RELAX for the discrete choices, finite differences for
//! magnitudes). After search the weights are sharpened with a temperature and
//! the policy drives the strong view of ordinary FixMatch training.
//!
//! The runnable programs under `examples/` walk through each piece.

pub mod augment;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod fixmatch;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
