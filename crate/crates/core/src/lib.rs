//! Point-cloud super-resolution for volumetric video streaming.
//!
//! The pipeline upsamples a sparse frame by dilated midpoint interpolation
//! over a two-layer octree, colorizes the new points from their parents and
//! refines their positions through a precomputed lookup table. A continuous
//! density-ratio ABR controller and a chunked streaming protocol sit on top.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abr;
pub mod cloud;
pub mod error;
pub mod interpolate;
pub mod lut;
pub mod metrics;
pub mod pipeline;
pub mod ply;
pub mod sampling;
pub mod spatial;
pub mod streaming;
pub mod synth;

pub use cloud::{Aabb, Color, Point, PointCloud, Position, Vec3};
pub use error::{Error, Result};
pub use pipeline::{SrConfig, SrOutput, SrPipeline, StageTimings};
