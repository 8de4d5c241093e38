//! SAR to EO translation: median-filter denoising of SAR chips, a
//! coarse-to-fine generator trained against multi-scale patch
//! discriminators with feature matching, and an evaluation stack.

pub mod chip;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod denoise;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod gradsuite;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
pub mod trainer;

pub use chip::ImageChip;
pub use error::{Error, ErrorKind, Result};
