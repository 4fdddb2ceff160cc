//! Lookup-table refinement.
//!
//! A receptive field of `n` points (the interpolated point first, then its
//! nearest neighbors) is centered on its centroid and scaled by its radius.
//! Each axis is quantized into `b` bins independently, so one axis of the
//! field forms an `n`-digit base-`b` index into that axis's table. The
//! looked-up offset is scaled back by the radius and added to the point.

mod encode;
mod io;
mod refine;
mod table;

pub use encode::{
    dequantize, encode_neighborhood, encode_points, flat_index, quantize, EncodedNeighborhood,
};
pub use io::{decode_lut, encode_lut, load_lut, save_lut, LUT_MAGIC, LUT_VERSION};
pub use refine::{lookup_refine, refine_frame, refine_rf};
pub use table::{
    build_lut, entries_per_axis, laplacian_refiner, lut_size_bytes, FnRefiner, LaplacianRefiner,
    LutTable, Refiner, ZeroRefiner,
};

/// Default receptive-field size.
pub const DEFAULT_RF_SIZE: u32 = 4;
/// Default bins per axis.
pub const DEFAULT_BINS: u32 = 128;
