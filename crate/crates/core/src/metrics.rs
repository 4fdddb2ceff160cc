//! Geometry quality metrics.
//!
//! Chamfer distance here is the symmetric squared variant: the mean squared
//! nearest-neighbor distance from `a` into `b` plus the same from `b` into
//! `a`. Geometry PSNR uses the reference bounding-box diagonal as peak and the
//! mean of the two directional terms as MSE.

use serde::{Deserialize, Serialize};

use crate::cloud::{to_f64, PointCloud};
use crate::error::{Error, Result};
use crate::spatial::{KBest, TwoLayerOctree};

/// Quality of a reconstructed cloud against a reference.
///
/// `geometry_psnr_db` is point-to-point geometry PSNR with the reference
/// bounding-box diagonal as peak; it is `None` (serialized as `null`) when the
/// clouds coincide exactly, in which case `exact_match` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub chamfer: f64,
    pub geometry_psnr_db: Option<f64>,
    pub exact_match: bool,
    pub point_count_in: usize,
    pub point_count_out: usize,
}

/// Mean squared distance from each point of `from` to its nearest point in `to`.
pub fn directed_mean_sq(from: &PointCloud, to: &PointCloud) -> Result<f64> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = TwoLayerOctree::build(to)?;
    let mut best = KBest::new(1);
    let mut sum = 0.0;
    for p in from.positions() {
        best.reset(1);
        tree.knn_into(&to_f64(p), None, &mut best);
        sum += best.items[0].0;
    }
    Ok(sum / from.len() as f64)
}

pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(directed_mean_sq(a, b)? + directed_mean_sq(b, a)?)
}

/// Geometry PSNR in dB; `f64::INFINITY` when the clouds coincide.
pub fn geometry_psnr(reference: &PointCloud, test: &PointCloud) -> Result<f64> {
    let bbox = reference.bbox().ok_or(Error::EmptyCloud)?;
    if test.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let peak = bbox.diagonal();
    if peak == 0.0 {
        return Err(Error::DegenerateBbox);
    }
    let mse = 0.5 * (directed_mean_sq(reference, test)? + directed_mean_sq(test, reference)?);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn quality_report(reference: &PointCloud, test: &PointCloud) -> Result<QualityReport> {
    let chamfer = chamfer_distance(reference, test)?;
    let psnr = geometry_psnr(reference, test)?;
    Ok(QualityReport {
        chamfer,
        geometry_psnr_db: psnr.is_finite().then_some(psnr),
        exact_match: psnr.is_infinite(),
        point_count_in: reference.len(),
        point_count_out: test.len(),
    })
}
