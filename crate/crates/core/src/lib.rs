//! Few-shot open-set recognition on pre-extracted feature embeddings.
//!
//! The crate samples open-set episodes from a labeled feature store, runs
//! transductive InfoMax inference with an implicit outlier prototype (and the
//! closed-set and explicit-dummy variants used for comparison), runs the
//! inductive nearest-centroid and k-NN baselines, and scores everything with
//! accuracy, AUROC, AUPR and precision at 90% recall. Dataset-level
//! diagnostics (mean imposture factor, variance ratio) and a synthetic
//! Gaussian-mixture generator round it out.

pub mod baselines;
pub mod diagnostics;
pub mod episode;
pub mod error;
pub mod feature_store;
pub mod metrics;
pub mod ostim;
pub mod prediction;
pub mod runner;
pub mod synth;
pub mod transforms;

pub use episode::{sample_episode, sample_episode_from, Episode, EpisodeSpec, QueryTruth};
pub use error::{Error, Result};
pub use feature_store::{load_feature_store, save_feature_store, FeatureSet, Split};
pub use ostim::{OstimConfig, PrototypeSet, Variant};
pub use prediction::PredictionSheet;
pub use transforms::{CenteringKind, CenteringPolicy};
