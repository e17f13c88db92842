//! Occlusion-robust person re-identification trained by adversarial
//! feature-map perturbation.
//!
//! The model is a convolutional feature extractor plus an identity
//! classifier (pooling, per-channel normalization, bias-free linear layer).
//! During training, each mini-batch's feature maps are perturbed three ways
//! — a region erased, a region copied onto another, a region replaced with
//! uniform noise — and extractor and classifier play an alternating min-max
//! game over the identity loss on those perturbed maps: the classifier is
//! driven to separate clean from perturbed representations, the extractor to
//! make perturbed representations classify as well as clean ones. Retrieval
//! uses the pooled, normalized feature only.
//!
//! Crate layout follows the pipeline: [`region`] samples perturbation
//! rectangles, [`perturb`] applies them, [`model`] holds extractor and
//! classifier, [`loss`] the smoothed cross-entropy and the two phase
//! objectives, [`trainer`] the alternating update loop, [`eval`] CMC/mAP
//! retrieval scoring, [`attack`] test-time robustness probes and heatmap
//! export, [`data`] dataset indexing, augmentation and the synthetic
//! generator, [`config`] run configuration.

pub mod attack;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod nn;
pub mod perturb;
pub mod region;
pub mod rng;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
