//! Two-stream RGB-D semantic segmentation with cross-modality residual fusion
//! and attention-gated detail propagation, sized for CPU experiments.

pub mod backend;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod hha;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod train;

pub use error::{Error, Result};
