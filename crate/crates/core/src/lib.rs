//! Evaluation engine for generated character-animation videos.
//!
//! Metric kernels work on intermediate artifacts (masks, point tracks, optical
//! flow, embeddings, quality series) stored as ABTF tensor files. Judge-scored
//! dimensions go through [`gateway`] and [`qa`]. [`bench`] runs whole suites
//! and [`openset`] drives the diagnose/refine/regenerate loop.

pub mod appeal;
pub mod artifacts;
pub mod bench;
pub mod camera;
pub mod error;
pub mod gateway;
pub mod motion;
pub mod openset;
pub mod qa;
pub mod shape;
pub mod stats;
pub mod tensor;

pub use error::MetricError;
