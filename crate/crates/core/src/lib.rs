//! Crowd annotation pipeline for image classification benchmarks.
//!
//! The pipeline has two annotation stages. The *contains* stage shows
//! annotators grids of images for a single query label and turns their
//! selections into per-(image, label) selection frequencies. The *classify*
//! stage shows each ambiguous image with a short list of candidate labels;
//! annotators pick one label per distinct object plus a main object, and
//! the responses are aggregated into an object count, a partition of
//! labels into objects, and a main label.
//!
//! On top of the annotations the crate computes human-aligned evaluation
//! metrics ([`metrics`]) and dataset analyses ([`analysis`]). A seeded
//! synthetic annotator ([`simulate`]) drives the whole loop in tests.
//!
//! The modules follow the data flow:
//!
//! ```text
//! ingest -> contains -> candidates -> classify -> metrics / analysis
//! ```

pub mod analysis;
pub mod candidates;
pub mod classify;
pub mod config;
pub mod contains;
mod error;
pub mod import;
pub mod ingest;
pub mod io;
pub mod layout;
pub mod metrics;
pub mod pipeline;
pub mod qc;
pub mod simulate;
mod seed;
mod types;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use types::{ClassId, ImageId, SuperclassId};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/selection-frequency.md")]
    mod selection_frequency {}
    #[doc = include_str!("../../../book/src/candidates.md")]
    mod candidates {}
    #[doc = include_str!("../../../book/src/partition.md")]
    mod partition {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
