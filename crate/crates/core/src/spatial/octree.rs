use crate::cloud::{Aabb, PointCloud, Position, Vec3};
use crate::error::{Error, Result};

use super::neighbors::{check_k, KBest, NeighborList, Query};

pub const FIRST_LAYER_CELLS: usize = 8;
pub const LEAF_COUNT: usize = 64;

/// Relative padding applied to flat bounding-box axes.
const FLAT_AXIS_PAD: f64 = 1e-9;

/// Fixed-depth spatial partition: the root box is split into 8 octants, each
/// of which is split into 8 again, giving 64 leaves.
///
/// Leaves store indices into the source cloud. Within a leaf, points are
/// sorted along the leaf's widest axis and their coordinates copied into that
/// order, so a scan touches contiguous memory and only walks the slab
/// `|x - q| <= current radius` around the query. Queries prune whole leaves
/// using the tight bounds of their points. Both prunings are exact.
#[derive(Debug, Clone)]
pub struct TwoLayerOctree {
    root: Aabb,
    /// `leaf_start[l]..leaf_start[l + 1]` is leaf `l`'s range in `order`.
    leaf_start: [u32; LEAF_COUNT + 1],
    /// Point indices grouped by leaf, sorted by the leaf's sweep axis.
    order: Vec<u32>,
    /// Coordinates in `order` order.
    coords: Vec<Vec3>,
    /// Sweep-axis coordinate in `order` order.
    keys: Vec<f64>,
    /// Tight bounds of the points in each leaf (meaningless for empty leaves).
    tight: [Aabb; LEAF_COUNT],
    sweep_axis: [u8; LEAF_COUNT],
    point_count: usize,
}

impl TwoLayerOctree {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        let bbox = cloud.bbox().ok_or(Error::EmptyCloud)?;
        let root = pad_flat_axes(bbox);
        let positions = cloud.positions();
        let n = positions.len();

        let leaf_of: Vec<u8> = positions.iter().map(|p| leaf_index(&root, p) as u8).collect();
        let mut counts = [0u32; LEAF_COUNT];
        for &l in &leaf_of {
            counts[l as usize] += 1;
        }
        let mut leaf_start = [0u32; LEAF_COUNT + 1];
        for l in 0..LEAF_COUNT {
            leaf_start[l + 1] = leaf_start[l] + counts[l];
        }
        let mut cursor = leaf_start;
        let mut order = vec![0u32; n];
        for (i, &l) in leaf_of.iter().enumerate() {
            let slot = &mut cursor[l as usize];
            order[*slot as usize] = i as u32;
            *slot += 1;
        }
        let mut tight = [Aabb {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }; LEAF_COUNT];
        let mut sweep_axis = [0u8; LEAF_COUNT];
        for l in 0..LEAF_COUNT {
            let range = leaf_start[l] as usize..leaf_start[l + 1] as usize;
            let bounds = &mut tight[l];
            for &i in &order[range.clone()] {
                let p = positions[i as usize];
                for a in 0..3 {
                    bounds.min[a] = bounds.min[a].min(p[a] as f64);
                    bounds.max[a] = bounds.max[a].max(p[a] as f64);
                }
            }
            let ext = bounds.extent();
            let axis = if ext[0] >= ext[1] && ext[0] >= ext[2] {
                0
            } else if ext[1] >= ext[2] {
                1
            } else {
                2
            };
            sweep_axis[l] = axis as u8;
            order[range].sort_unstable_by(|&a, &b| {
                positions[a as usize][axis]
                    .total_cmp(&positions[b as usize][axis])
                    .then(a.cmp(&b))
            });
        }
        let coords: Vec<Vec3> = order
            .iter()
            .map(|&i| {
                let p = positions[i as usize];
                [p[0] as f64, p[1] as f64, p[2] as f64]
            })
            .collect();
        let keys = (0..n)
            .map(|slot| {
                let l = leaf_of[order[slot] as usize] as usize;
                coords[slot][sweep_axis[l] as usize]
            })
            .collect();
        Ok(Self {
            root,
            leaf_start,
            order,
            coords,
            keys,
            tight,
            sweep_axis,
            point_count: n,
        })
    }

    pub fn root(&self) -> Aabb {
        self.root
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    /// Point indices stored in leaf `leaf` (0..64).
    pub fn leaf_points(&self, leaf: usize) -> &[u32] {
        &self.order[self.leaf_start[leaf] as usize..self.leaf_start[leaf + 1] as usize]
    }

    /// All point indices in leaf order; consecutive entries are spatially close.
    pub fn leaf_order(&self) -> &[u32] {
        &self.order
    }

    pub fn leaf_occupancy(&self) -> [usize; LEAF_COUNT] {
        std::array::from_fn(|l| (self.leaf_start[l + 1] - self.leaf_start[l]) as usize)
    }

    /// Cell box of `leaf`; the 64 cell boxes tile the root box.
    pub fn leaf_bounds(&self, leaf: usize) -> Aabb {
        let octant = leaf / FIRST_LAYER_CELLS;
        let sub = leaf % FIRST_LAYER_CELLS;
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            let (lo, hi) = (self.root.min[a], self.root.max[a]);
            let mid = 0.5 * (lo + hi);
            let (lo, hi) = if octant >> a & 1 == 1 { (mid, hi) } else { (lo, mid) };
            let sub_mid = 0.5 * (lo + hi);
            let (lo, hi) = if sub >> a & 1 == 1 { (sub_mid, hi) } else { (lo, sub_mid) };
            min[a] = lo;
            max[a] = hi;
        }
        Aabb { min, max }
    }

    /// Exact k nearest neighbors of `query`, nearest first, ties by index.
    pub fn knn(&self, cloud: &PointCloud, query: Query, k: usize) -> Result<NeighborList> {
        if cloud.len() != self.point_count {
            return Err(Error::invalid("octree was built for a different cloud"));
        }
        check_k(k, self.point_count, &query)?;
        let (q, exclude) = query.resolve(cloud.positions());
        let mut best = KBest::new(k);
        self.knn_into(&q, exclude, &mut best);
        Ok(NeighborList::from_best(query, &best))
    }

    /// Core search. The caller guarantees `best.k` is in range.
    pub(crate) fn knn_into(&self, q: &Vec3, exclude: Option<usize>, best: &mut KBest) {
        let home = leaf_index_f64(&self.root, q);
        let exclude = exclude.map_or(u32::MAX, |e| e as u32);
        self.scan_leaf(home, q, exclude, best);
        // Only leaves that can still beat the current radius are ordered.
        let bound = best.bound();
        let mut pending = [(0.0f64, 0u8); LEAF_COUNT];
        let mut n_pending = 0;
        for l in 0..LEAF_COUNT {
            if l == home || self.leaf_start[l] == self.leaf_start[l + 1] {
                continue;
            }
            let lb = self.tight[l].dist_sq_to(q);
            if lb <= bound {
                pending[n_pending] = (lb, l as u8);
                n_pending += 1;
            }
        }
        let pending = &mut pending[..n_pending];
        pending.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(lb, l) in pending.iter() {
            if lb > best.bound() {
                break;
            }
            self.scan_leaf(l as usize, q, exclude, best);
        }
    }

    #[inline]
    fn scan_leaf(&self, leaf: usize, q: &Vec3, exclude: u32, best: &mut KBest) {
        let lo = self.leaf_start[leaf] as usize;
        let hi = self.leaf_start[leaf + 1] as usize;
        let axis = self.sweep_axis[leaf] as usize;
        let qa = q[axis];
        let keys = &self.keys[lo..hi];
        let split = lo + keys.partition_point(|&k| k < qa);
        let mut bound = best.bound();
        // Walk outward from the query's position on the sweep axis, always
        // taking the side with the smaller axis gap; once both gaps exceed the
        // radius no remaining point of the leaf can qualify.
        let (mut right, mut left) = (split, split);
        loop {
            let gr = if right < hi { self.keys[right] - qa } else { f64::INFINITY };
            let gl = if left > lo { qa - self.keys[left - 1] } else { f64::INFINITY };
            if right == hi && left == lo {
                break;
            }
            if gr <= gl {
                if gr * gr > bound {
                    break;
                }
                self.visit(right, q, exclude, best, &mut bound);
                right += 1;
            } else {
                if gl * gl > bound {
                    break;
                }
                left -= 1;
                self.visit(left, q, exclude, best, &mut bound);
            }
        }
    }

    #[inline(always)]
    fn visit(&self, slot: usize, q: &Vec3, exclude: u32, best: &mut KBest, bound: &mut f64) {
        let c = &self.coords[slot];
        let dx = q[0] - c[0];
        let dy = q[1] - c[1];
        let dz = q[2] - c[2];
        let d = dx * dx + dy * dy + dz * dz;
        if d <= *bound {
            let i = self.order[slot];
            if i != exclude {
                best.offer(d, i);
                *bound = best.bound();
            }
        }
    }
}

fn pad_flat_axes(bbox: Aabb) -> Aabb {
    let ext = bbox.extent();
    let max_extent = ext[0].max(ext[1]).max(ext[2]);
    let pad = if max_extent > 0.0 {
        FLAT_AXIS_PAD * max_extent
    } else {
        FLAT_AXIS_PAD
    };
    let mut out = bbox;
    for a in 0..3 {
        if ext[a] < pad {
            out.min[a] -= pad;
            out.max[a] += pad;
        }
    }
    out
}

#[inline]
fn axis_cell(lo: f64, hi: f64, v: f64) -> (usize, usize) {
    let mid = 0.5 * (lo + hi);
    let (first, lo, hi) = if v >= mid { (1, mid, hi) } else { (0, lo, mid) };
    let sub_mid = 0.5 * (lo + hi);
    (first, usize::from(v >= sub_mid))
}

#[inline]
fn leaf_index_f64(root: &Aabb, p: &Vec3) -> usize {
    let mut octant = 0;
    let mut sub = 0;
    for a in 0..3 {
        let (f, s) = axis_cell(root.min[a], root.max[a], p[a]);
        octant |= f << a;
        sub |= s << a;
    }
    octant * FIRST_LAYER_CELLS + sub
}

#[inline]
fn leaf_index(root: &Aabb, p: &Position) -> usize {
    leaf_index_f64(root, &[p[0] as f64, p[1] as f64, p[2] as f64])
}
