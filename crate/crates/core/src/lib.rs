//! Proxy-based metric learning for multi-label data.
//!
//! The library trains a small MLP encoder together with a bank of per-class
//! proxy vectors on the unit sphere. Samples are pulled toward the proxies of
//! their positive classes and pushed from the rest under a class-weighted
//! Gaussian-kernel loss; an optional synthetic "negative" class anchors
//! samples that carry no finding at all. The resulting embeddings support
//! distance-based multi-label classification and content-based retrieval
//! with graded ranking metrics.
//!
//! Module map:
//! - [`numerics`]: normalization, distances, kernels, log-domain reductions
//! - [`labels`]: tri-state labels, negative-class augmentation, class weights
//! - [`proxies`]: the proxy bank and its normalized view
//! - [`losses`]: the multi-label proxy loss and both baseline losses
//! - [`encoder`]: MLP forward/backward with explicit gradients
//! - [`trainer`]: Adam, epoch loop, deterministic shuffling
//! - [`synth`]: deterministic synthetic multimorbidity datasets
//! - [`inference`]: classification scores, thresholds, k-NN retrieval
//! - [`eval`]: nDCG / ACG / precision / ROC AUC and the evaluation report
//! - [`model`]: model file persistence

pub mod encoder;
pub mod error;
pub mod eval;
pub mod inference;
pub mod labels;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod proxies;
pub mod synth;
pub mod trainer;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
