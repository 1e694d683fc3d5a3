//! Interactive segmentation of electron-microscopy volumes: pixel
//! classification by active learning, watershed over-segmentation, boundary
//! classification and agglomeration.

pub mod active;
pub mod active_pixel;
pub mod agglomerate;
pub mod boundary;
pub mod error;
pub mod features;
pub mod forest;
pub mod grid;
pub mod io;
pub mod labelprop;
pub mod metrics;
pub mod oversegment;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{ClassLabel, Dims, ProbabilityField, RasterVolume, SegmentationMap, CLASS_COUNT, MEMBRANE};
