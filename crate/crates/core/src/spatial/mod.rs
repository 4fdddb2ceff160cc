//! Two-layer octree and k-nearest-neighbor machinery: exact queries, dilated
//! neighborhoods and neighbor-relationship reuse for interpolated points.

mod neighbors;
mod octree;

pub use neighbors::{brute_force_knn, merge_and_prune, point_distance, NeighborList, Query};
pub use octree::{TwoLayerOctree, FIRST_LAYER_CELLS, LEAF_COUNT};

pub(crate) use neighbors::{merge_and_prune_into, KBest};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub fn build_octree(cloud: &PointCloud) -> Result<TwoLayerOctree> {
    TwoLayerOctree::build(cloud)
}

/// Exact k nearest neighbors through the octree.
pub fn knn_query(
    tree: &TwoLayerOctree,
    cloud: &PointCloud,
    query: Query,
    k: usize,
) -> Result<NeighborList> {
    tree.knn(cloud, query, k)
}

/// The `d * k` nearest neighbors of point `index`, excluding the point itself.
pub fn dilated_neighborhood(
    tree: &TwoLayerOctree,
    cloud: &PointCloud,
    index: usize,
    k: usize,
    d: usize,
) -> Result<NeighborList> {
    if k == 0 || d == 0 {
        return Err(Error::invalid("k and d must be at least 1"));
    }
    let wide = k
        .checked_mul(d)
        .ok_or_else(|| Error::invalid("d * k overflows"))?;
    tree.knn(cloud, Query::Index(index), wide)
}
