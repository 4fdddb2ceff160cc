use crate::cloud::{to_f64, PointCloud, Position, Vec3};
use crate::error::{Error, Result};
use crate::interpolate::InterpolationOutput;
use crate::spatial::NeighborList;

use super::encode::{frame_of, gather_rf, quantize};
use super::table::LutTable;

/// Refines one interpolated point: encode its receptive field, look up one
/// normalized offset per axis, scale it back by the field radius and add it.
/// A zero-radius field is returned unchanged.
pub fn lookup_refine(
    table: &LutTable,
    cloud: &PointCloud,
    interp_point: Vec3,
    neighbors: &NeighborList,
) -> Result<Vec3> {
    let points = gather_rf(interp_point, &neighbors.indices, cloud, table.rf_size() as usize)?;
    Ok(refine_rf(table, &points))
}

/// Refinement of an already gathered receptive field (slot 0 first).
#[inline]
pub fn refine_rf(table: &LutTable, points: &[Vec3]) -> Vec3 {
    let (origin, radius) = frame_of(points);
    let center = points[0];
    if radius == 0.0 {
        return center;
    }
    let bins = table.bins();
    let mut out = center;
    for (axis, value) in out.iter_mut().enumerate() {
        let mut idx: u64 = 0;
        for p in points {
            let nrm = ((p[axis] - origin[axis]) / radius).clamp(-1.0, 1.0);
            idx = idx * bins as u64 + quantize(nrm, bins) as u64;
        }
        *value += table.get(axis, idx) * radius;
    }
    out
}

/// Applies the table to every new point of an interpolation output, reusing
/// the neighbor lists produced during interpolation. Original points and all
/// colors are left untouched.
pub fn refine_frame(table: &LutTable, output: &InterpolationOutput) -> Result<PointCloud> {
    let n = table.rf_size() as usize;
    let src = output.source_count;
    let positions = output.cloud.positions();
    let originals = &positions[..src];
    let mut refined: Vec<Position> = Vec::with_capacity(positions.len());
    refined.extend_from_slice(originals);
    let mut rf: Vec<Vec3> = Vec::with_capacity(n);
    for (i, m) in output.new_points().iter().enumerate() {
        let nb = output.neighbors.indices(i);
        if nb.len() < n - 1 {
            return Err(Error::InsufficientNeighbors {
                needed: n - 1,
                available: nb.len(),
            });
        }
        rf.clear();
        rf.push(to_f64(m));
        rf.extend(nb[..n - 1].iter().map(|&j| to_f64(&originals[j as usize])));
        let r = refine_rf(table, &rf);
        refined.push([r[0] as f32, r[1] as f32, r[2] as f32]);
    }
    PointCloud::new(refined, output.cloud.colors().map(<[_]>::to_vec))
}
