use serde::{Deserialize, Serialize};

use crate::cloud::{to_f64, PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::spatial::NeighborList;

/// Bin of a normalized coordinate in `[-1, 1]`: `floor((n + 1) / 2 * (b - 1))`,
/// clamped to `[0, b - 1]`.
#[inline]
pub fn quantize(n: f64, bins: u32) -> u32 {
    let top = (bins - 1) as f64;
    let q = (n + 1.0) * 0.5 * top;
    if q <= 0.0 {
        0
    } else if q >= top {
        bins - 1
    } else {
        // Truncation is floor for positive values and avoids a libm call.
        q as u32
    }
}

/// Representative normalized coordinate of a bin: the midpoint of its
/// preimage, clamped to `[-1, 1]`.
#[inline]
pub fn dequantize(q: u32, bins: u32) -> f64 {
    (2.0 * (q as f64 + 0.5) / (bins - 1) as f64 - 1.0).clamp(-1.0, 1.0)
}

/// Mixed-radix index of a per-slot bin vector; slot 0 is most significant.
pub fn flat_index(q: &[u32], bins: u32) -> Result<u64> {
    let mut idx: u64 = 0;
    for &v in q {
        if v >= bins {
            return Err(Error::Lut(format!("bin {v} out of range for b={bins}")));
        }
        idx = idx
            .checked_mul(bins as u64)
            .and_then(|i| i.checked_add(v as u64))
            .ok_or_else(|| Error::Lut("flat index overflows u64".into()))?;
    }
    Ok(idx)
}

/// A receptive field (interpolated point followed by its nearest neighbors)
/// expressed relative to its centroid, scaled by its radius and binned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedNeighborhood {
    /// The interpolated point.
    pub center: Vec3,
    /// Normalization origin: the centroid of the receptive field.
    pub origin: Vec3,
    /// Largest distance from a receptive-field point to the origin.
    pub radius: f64,
    /// Normalized coordinates per slot; slot 0 is the interpolated point.
    pub normalized: Vec<Vec3>,
    /// Bins per slot and axis.
    pub quantized: Vec<[u32; 3]>,
}

impl EncodedNeighborhood {
    /// Bins of one axis across all slots, in slot order.
    pub fn axis_bins(&self, axis: usize) -> Vec<u32> {
        self.quantized.iter().map(|q| q[axis]).collect()
    }
}

/// Centroid and radius of a receptive field.
#[inline]
pub(crate) fn frame_of(points: &[Vec3]) -> (Vec3, f64) {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    for v in &mut c {
        *v /= n;
    }
    let mut r2: f64 = 0.0;
    for p in points {
        let dx = p[0] - c[0];
        let dy = p[1] - c[1];
        let dz = p[2] - c[2];
        r2 = r2.max(dx * dx + dy * dy + dz * dz);
    }
    (c, r2.sqrt())
}

/// Encodes receptive-field points (slot 0 first) into bins.
pub fn encode_points(points: &[Vec3], bins: u32) -> Result<EncodedNeighborhood> {
    if points.is_empty() {
        return Err(Error::InsufficientNeighbors {
            needed: 1,
            available: 0,
        });
    }
    if bins < 2 {
        return Err(Error::Lut(format!("bin count {bins} must be at least 2")));
    }
    let (origin, radius) = frame_of(points);
    let mut normalized = Vec::with_capacity(points.len());
    let mut quantized = Vec::with_capacity(points.len());
    for p in points {
        let nrm = if radius > 0.0 {
            [
                ((p[0] - origin[0]) / radius).clamp(-1.0, 1.0),
                ((p[1] - origin[1]) / radius).clamp(-1.0, 1.0),
                ((p[2] - origin[2]) / radius).clamp(-1.0, 1.0),
            ]
        } else {
            [0.0; 3]
        };
        quantized.push([quantize(nrm[0], bins), quantize(nrm[1], bins), quantize(nrm[2], bins)]);
        normalized.push(nrm);
    }
    Ok(EncodedNeighborhood {
        center: points[0],
        origin,
        radius,
        normalized,
        quantized,
    })
}

/// Encodes the interpolated point plus its first `rf_size - 1` neighbors.
pub fn encode_neighborhood(
    interp_point: Vec3,
    neighbors: &NeighborList,
    cloud: &PointCloud,
    rf_size: usize,
    bins: u32,
) -> Result<EncodedNeighborhood> {
    let points = gather_rf(interp_point, &neighbors.indices, cloud, rf_size)?;
    encode_points(&points, bins)
}

pub(crate) fn gather_rf(
    interp_point: Vec3,
    neighbor_indices: &[u32],
    cloud: &PointCloud,
    rf_size: usize,
) -> Result<Vec<Vec3>> {
    if rf_size == 0 {
        return Err(Error::Lut("receptive field size must be at least 1".into()));
    }
    if neighbor_indices.len() < rf_size - 1 {
        return Err(Error::InsufficientNeighbors {
            needed: rf_size - 1,
            available: neighbor_indices.len(),
        });
    }
    let positions = cloud.positions();
    let mut points = Vec::with_capacity(rf_size);
    points.push(interp_point);
    for &i in &neighbor_indices[..rf_size - 1] {
        let p = positions
            .get(i as usize)
            .ok_or_else(|| Error::invalid(format!("neighbor index {i} out of range")))?;
        points.push(to_f64(p));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coincident_points_use_middle_bin() {
        let e = encode_points(&[[1.0, 2.0, 3.0]; 4], 128).unwrap();
        assert_eq!(e.radius, 0.0);
        assert!(e.quantized.iter().all(|q| *q == [63, 63, 63]));
    }

    #[test]
    fn two_points_hit_extreme_bins() {
        let e = encode_points(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 128).unwrap();
        assert_eq!(e.normalized[0][0], -1.0);
        assert_eq!(e.normalized[1][0], 1.0);
        assert_eq!(e.quantized[0][0], 0);
        assert_eq!(e.quantized[1][0], 127);
    }

    #[test]
    fn quantize_endpoints_and_monotone() {
        for b in [2, 8, 16, 128] {
            assert_eq!(quantize(-1.0, b), 0);
            assert_eq!(quantize(1.0, b), b - 1);
            let mut last = 0;
            for i in 0..=1000 {
                let q = quantize(-1.0 + 2.0 * i as f64 / 1000.0, b);
                assert!(q >= last);
                last = q;
            }
        }
    }

    #[test]
    fn flat_index_cases() {
        assert_eq!(flat_index(&[0, 0, 0, 0], 128).unwrap(), 0);
        assert_eq!(flat_index(&[127; 4], 128).unwrap(), 268_435_455);
        assert!(flat_index(&[128], 128).is_err());
    }

    #[test]
    fn flat_index_is_bijective_on_small_grid() {
        let b = 4;
        let mut seen = [false; 64];
        for a in 0..b {
            for c in 0..b {
                for e in 0..b {
                    let i = flat_index(&[a, c, e], b).unwrap() as usize;
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
