//! Building detection, residential/non-residential classification and water
//! consumption estimation from multiband rasters.
//!
//! The pipeline runs in three stages:
//!
//! 1. building pixels are detected with a per-pixel classifier over frame
//!    (and optionally HOG) features,
//! 2. building pixels are split into residential and non-residential,
//! 3. the two probability maps are integrated into expected floor areas and a
//!    daily water-consumption estimate.
//!
//! Every learner, feature extractor and metric is implemented in this crate.

pub mod cli;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod features;
pub mod learners;
pub mod manifest;
pub mod raster_io;
pub mod rasterize;
pub mod rng;
pub mod scenegen;

pub use error::{Error, Result};
