//! Non-neural machinery for grid-level lane and road-marking perception.
//!
//! The crate covers everything around a multi-task lane network that can be
//! checked without the network itself:
//!
//! - [`types`]: class taxonomy, lattice geometry, confidence maps, grid masks, annotations.
//! - [`annotation`]: polygon to grid-mask encoding and horizontal flip augmentation.
//! - [`vpp`]: quadrant vanishing-point masks and the absence/quadrant decoder.
//! - [`lanes`]: peak sampling, inverse perspective mapping, bin-stack clustering, quadratic fits.
//! - [`markings`]: cell sampling with grid regression and 8-connected merging.
//! - [`metrics`]: lane F1, blob-based marking recall, vanishing-point recall curves.
//! - [`losses`]: weighted multi-task loss and reciprocal weight balancing.
//! - [`netspec`]: receptive-field and stride arithmetic for the backbone.
//! - [`synth`]: synthetic flat-road scenes with exact ground truth.
//! - [`tensor`], [`config`], [`pipeline`]: file formats and the composed post-processing stage.
//!
//! Coordinates: origin top-left, x to the right, y downward. Pixel `i` covers
//! `[i, i + 1)`; lattice cell `(col, row)` covers `[col·g, (col+1)·g) × [row·g, (row+1)·g)`
//! for grid size `g`. All lattices are stored row-major.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod config;
pub mod error;
pub mod lanes;
pub mod losses;
pub mod markings;
pub mod metrics;
pub mod netspec;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod types;
pub mod vpp;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use types::{
    BinaryMask, Cell, ClassLabel, ConfidenceMap, FrameAnnotation, GridMask, ImageSize, LabelKind, LabelSet,
    MarkedObject, Point, VpAnnotation, VpDifficulty,
};
