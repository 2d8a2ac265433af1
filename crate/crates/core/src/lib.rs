//! Benchmark toolkit for texture patch classification.
//!
//! Compares features tapped from the layers of a forward-only CNN against
//! hand-crafted encodings (bag-of-visual-words, VLAD, Fisher vectors) of
//! densely sampled SIFT descriptors, classifying everything with linear SVMs
//! under stratified 10-fold cross-validation with inner 3-fold selection of
//! the SVM cost parameter.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`dataset`]: labeled RGB patches, synthetic texture generation,
//!   bilinear resizing and mean-RGB preprocessing.
//! - [`sift`]: dense keypoint grids and upright SIFT descriptors.
//! - [`codebook`]: k-means codebooks and diagonal-covariance GMMs.
//! - [`encode`]: BoVW / VLAD / Fisher vector encoders.
//! - [`net`]: the layer-graph CNN forward engine with a feature tap on
//!   every named layer.
//! - [`svm`]: linear SVM via dual coordinate descent, one-vs-rest
//!   multiclass, and cross-validated C selection.
//! - [`harness`]: stratified k-fold experiment engine and CSV/SVG reports.
//!
//! Every data-dependent quantity is fitted on training folds only, and all
//! randomness flows through the seeded generator in [`rng`], so a full
//! experiment is reproducible from its configuration and seeds alone.

pub mod codebook;
pub mod dataset;
pub mod encode;
pub mod error;
pub mod formats;
pub mod harness;
pub mod net;
pub mod oracle;
pub mod rng;
pub mod sift;
pub mod svm;

pub use error::{Error, Result};
pub use net::Tensor;
