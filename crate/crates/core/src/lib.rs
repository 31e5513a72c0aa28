//! Attribution robustness for text classifiers.
//!
//! The crate measures how stable word-level attribution maps are under
//! word-substitution attacks and trains classifiers whose attributions resist
//! them.
//!
//! - [`model`]: vocabulary, samples and a small differentiable reference
//!   classifier with a checkpoint format.
//! - [`attribution`]: Saliency, DeepLIFT (Rescale), Integrated Gradients and
//!   attention maps, aggregated per word and summed over label sets.
//! - [`candidates`]: substitution candidate extractors (synonym tables,
//!   masked language model adapters) and the masked top-5 accuracy used to
//!   pick one.
//! - [`dare`]: the greedy attribution attack with its prediction constraint
//!   and an exhaustive oracle for small instances.
//! - [`metrics`]: attribution and sentence distances, the robustness
//!   constant `r(s)` and dataset-level reports.
//! - [`robust`]: adversarial training and FAR training.
//! - [`experiment`]: configuration, orchestration, report bundles and
//!   rendering.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod attribution;
pub mod autodiff;
pub mod candidates;
pub mod dare;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod robust;
pub mod seeds;
pub mod selftest;
pub mod stopwords;

pub use error::{Error, Result};
