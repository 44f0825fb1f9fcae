//! Training visual place recognition descriptors by regressing descriptor
//! distance onto graded field-of-view overlap.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: camera frustums, FoV-overlap similarity ψ, positive rule
//! - [`dataset`]: poses, synthetic worlds, ψ-labelled pairs, file formats
//! - [`sampler`]: ψ-stratified batches without mining
//! - [`encoder`]: MLP encoder with L2-normalized output, backprop, SGD
//! - [`losses`]: MSE regression, contrastive and graded contrastive losses
//! - [`trainer`]: the siamese training loop and snapshot curves
//! - [`retrieval`]: exhaustive nearest-neighbour search and PCA whitening
//! - [`metrics`]: R@k, MRR@5, KL divergence, covariance diagnostic

pub mod dataset;
pub mod encoder;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod retrieval;
pub mod sampler;
pub mod trainer;
