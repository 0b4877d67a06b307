//! Evaluation harness for uncertainty estimates of unpaired image-to-image
//! translation models.
//!
//! The crate is organised around the stages of a noise-sweep calibration run:
//!
//! * [`image`] and [`io`]: the canonical [`Image`] type, raster/raw-tensor I/O
//!   and elementary amplitude transforms.
//! * [`preprocess`]: Otsu segmentation, patch parsing and histogram
//!   equalisation of whole mammograms.
//! * [`fid`] and [`cwssim`]: the style-alignment and content-preservation
//!   metrics.
//! * [`uq`]: pixel-wise standard deviation maps, PSD and mPSD over sample
//!   stacks, with translation registration for ensembles.
//! * [`protocol`] and [`report`]: the noise sweep, correlation analysis and
//!   report rendering.

pub mod correlation;
pub mod cwssim;
mod error;
pub mod fft;
pub mod fid;
pub mod image;
pub mod io;
pub mod manifest;
pub mod preprocess;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod uq;

pub use crate::error::{Error, Result, Warning};
pub use crate::image::{Image, ImageMeta, Laterality, Photometric, RangeHint};
