//! Scene parsing by integrating a parametric local belief with a
//! non-parametric global scene prior.
//!
//! The pipeline is split into stages that mirror the command-line tool:
//!
//! * [`data`]: rasters, label maps, split manifests, synthetic scenes.
//! * [`sampler`]: per-epoch patch sampling (global, class, hybrid, truncated class).
//! * [`convnet`]: a small convolutional classifier and its truncated feature extractor.
//! * [`ensemble`]: one network per sampling strategy, fused into the local belief.
//! * [`transfer`]: pyramid-pooled scene descriptors, exemplar retrieval and
//!   kernel-weighted label transfer (the global belief).
//! * [`metric`]: large-margin Mahalanobis metric learning for the transfer step.
//! * [`integration`]: energy, pixel-wise inference and evaluation.
//! * [`config`] and [`cli`]: experiment configuration and orchestration.

pub mod binio;
pub mod cli;
pub mod config;
pub mod convnet;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod integration;
pub mod metric;
pub mod sampler;
pub mod transfer;

pub use error::{Error, Result};
