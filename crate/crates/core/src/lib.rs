//! Detection of visual artifacts in frames of generated video: frame corpora,
//! a synthetic artifact injector, multi-label classifiers with four
//! independent heads, per-label evaluation and Grad-CAM explanations.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcam;
pub mod labels;
pub mod models;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use labels::{ArtifactLabel, LabelVector, NUM_LABELS, TAXONOMY_VERSION};
