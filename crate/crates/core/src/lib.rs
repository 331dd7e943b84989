//! Structuring of time-stamped clinical notes into stage-wise condition
//! vectors, patient subgroup discovery, and per-subgroup sepsis
//! progression networks.
//!
//! The pipeline runs, in order:
//!
//! 1. [`corpus`]: load notes, vitals and demographics; extract dispositions.
//! 2. [`textproc`]: lexicon matching, NegEx polarity, concept normalization.
//! 3. [`timeline`]: day alignment, missing-day imputation, stage segmentation.
//! 4. [`vectors`]: ternary stage vectors and autoencoder compression.
//! 5. [`subgroups`]: k-means with silhouette selection, random forest and TreeSHAP.
//! 6. [`severity`]: per-stage sepsis state ladder.
//! 7. [`pathways`]: transition outcomes, estimated networks and their exports.
//! 8. [`predict`]: subgroup and next-state classifiers for new patients.
//!
//! [`synth`] generates cohorts with planted ground truth for every stage.

pub mod corpus;
pub mod error;
pub mod nn;
pub mod pathways;
pub mod pipeline;
pub mod predict;
pub mod resources;
pub mod rng;
pub mod severity;
pub mod subgroups;
pub mod synth;
pub mod textproc;
pub mod timeline;
pub mod vectors;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
