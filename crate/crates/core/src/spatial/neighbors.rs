use serde::{Deserialize, Serialize};

use crate::cloud::{dist_sq, dist_sq_to, to_f64, PointCloud, Position, Vec3};
use crate::error::{Error, Result};

/// Where a neighbor query is centered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Query {
    /// A point of the cloud; the point itself is excluded from the result.
    Index(usize),
    /// An arbitrary position; no point is excluded.
    Position(Vec3),
}

impl Query {
    pub(crate) fn resolve(&self, positions: &[Position]) -> (Vec3, Option<usize>) {
        match *self {
            Query::Index(i) => (to_f64(&positions[i]), Some(i)),
            Query::Position(p) => (p, None),
        }
    }
}

/// Ordered neighbors of a center, nearest first.
///
/// Ties in distance are ordered by ascending point index. `requested` is the
/// number of neighbors asked for; a list shorter than that is flagged by
/// [`NeighborList::is_short`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub center: Query,
    pub indices: Vec<u32>,
    pub distances: Vec<f64>,
    pub requested: usize,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_short(&self) -> bool {
        self.indices.len() < self.requested
    }

    pub(crate) fn from_best(center: Query, best: &KBest) -> Self {
        Self {
            center,
            indices: best.items.iter().map(|&(_, i)| i).collect(),
            distances: best.items.iter().map(|&(d, _)| d.sqrt()).collect(),
            requested: best.k,
        }
    }
}

/// Bounded sorted buffer of the best `k` (squared distance, index) pairs.
#[derive(Debug, Clone)]
pub(crate) struct KBest {
    pub k: usize,
    pub items: Vec<(f64, u32)>,
}

impl KBest {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    pub fn reset(&mut self, k: usize) {
        self.k = k;
        self.items.clear();
    }

    /// Current pruning radius (squared); infinite until full.
    #[inline]
    pub fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    #[inline]
    pub fn less(a: (f64, u32), b: (f64, u32)) -> bool {
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    #[inline]
    pub fn offer(&mut self, d: f64, i: u32) {
        let cand = (d, i);
        let mut pos = self.items.len();
        if pos == self.k {
            if !Self::less(cand, self.items[pos - 1]) {
                return;
            }
            pos -= 1;
        } else {
            self.items.push(cand);
        }
        // Shift larger entries up by one; cheaper than `Vec::insert` for small k.
        while pos > 0 && Self::less(cand, self.items[pos - 1]) {
            self.items[pos] = self.items[pos - 1];
            pos -= 1;
        }
        self.items[pos] = cand;
    }

    /// Like [`offer`](Self::offer) but ignores an index already present.
    #[inline]
    pub fn offer_unique(&mut self, d: f64, i: u32) {
        if self.items.iter().any(|&(_, j)| j == i) {
            return;
        }
        self.offer(d, i);
    }
}

pub(crate) fn check_k(k: usize, n: usize, query: &Query) -> Result<()> {
    let available = match query {
        Query::Index(i) => {
            if *i >= n {
                return Err(Error::invalid(format!("query index {i} out of range (n={n})")));
            }
            n - 1
        }
        Query::Position(_) => n,
    };
    if k == 0 || k > available {
        return Err(Error::KOutOfRange {
            requested: k,
            available,
        });
    }
    Ok(())
}

/// Exhaustive k-nearest-neighbor scan; the reference the octree is checked
/// against. Same ordering and tie-break contract as the octree query.
pub fn brute_force_knn(cloud: &PointCloud, query: Query, k: usize) -> Result<NeighborList> {
    let positions = cloud.positions();
    check_k(k, positions.len(), &query)?;
    let (q, exclude) = query.resolve(positions);
    let mut best = KBest::new(k);
    for (i, p) in positions.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let d = dist_sq_to(&q, p);
        if d <= best.bound() {
            best.offer(d, i as u32);
        }
    }
    Ok(NeighborList::from_best(query, &best))
}

/// Approximates the kNN of `p_prime` (normally the midpoint of `p` and `q`)
/// from already-known neighbor lists, without any tree query.
///
/// Candidates are the union of both lists plus `p` and `q`. Distances are
/// recomputed to `p_prime` and the `k` smallest are kept (ties by index). When
/// fewer than `k` distinct candidates exist the shorter list is returned and
/// [`NeighborList::is_short`] reports it.
pub fn merge_and_prune(
    nl_p: &NeighborList,
    nl_q: &NeighborList,
    p: usize,
    q: usize,
    p_prime: Vec3,
    cloud: &PointCloud,
    k: usize,
) -> Result<NeighborList> {
    if k == 0 {
        return Err(Error::KOutOfRange {
            requested: 0,
            available: 0,
        });
    }
    let positions = cloud.positions();
    let n = positions.len();
    for &i in nl_p.indices.iter().chain(&nl_q.indices).chain(&[p as u32, q as u32]) {
        if i as usize >= n {
            return Err(Error::invalid(format!("neighbor index {i} out of range (n={n})")));
        }
    }
    let mut best = KBest::new(k);
    merge_and_prune_into(&nl_p.indices, &nl_q.indices, p, q, &p_prime, positions, &mut best);
    Ok(NeighborList::from_best(Query::Position(p_prime), &best))
}

#[inline]
pub(crate) fn merge_and_prune_into(
    a: &[u32],
    b: &[u32],
    p: usize,
    q: usize,
    center: &Vec3,
    positions: &[Position],
    best: &mut KBest,
) {
    for &i in [p as u32, q as u32].iter().chain(a).chain(b) {
        let d = dist_sq_to(center, &positions[i as usize]);
        if d <= best.bound() {
            best.offer_unique(d, i);
        }
    }
}

/// Distance between two cloud points (not squared).
pub fn point_distance(cloud: &PointCloud, a: usize, b: usize) -> f64 {
    dist_sq(&cloud.positions()[a], &cloud.positions()[b]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> PointCloud {
        PointCloud::from_positions((0..n).map(|i| [i as f32, 0.0, 0.0]).collect()).unwrap()
    }

    #[test]
    fn collinear_query() {
        let cloud = line(4);
        let nl = brute_force_knn(&cloud, Query::Index(0), 2).unwrap();
        assert_eq!(nl.indices, vec![1, 2]);
        assert_eq!(nl.distances, vec![1.0, 2.0]);
    }

    #[test]
    fn ties_break_by_index() {
        let cloud = PointCloud::from_positions(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ])
        .unwrap();
        let nl = brute_force_knn(&cloud, Query::Index(0), 3).unwrap();
        assert_eq!(nl.indices, vec![1, 2, 3]);
    }

    #[test]
    fn k_range_errors() {
        let cloud = line(3);
        assert!(brute_force_knn(&cloud, Query::Index(0), 3).is_err());
        assert!(brute_force_knn(&cloud, Query::Position([0.0; 3]), 3).is_ok());
        assert!(brute_force_knn(&cloud, Query::Position([0.0; 3]), 0).is_err());
        assert!(brute_force_knn(&cloud, Query::Index(7), 1).is_err());
    }

    #[test]
    fn merge_on_dense_line_returns_parents() {
        let cloud = line(10);
        let nl4 = brute_force_knn(&cloud, Query::Index(4), 2).unwrap();
        let nl5 = brute_force_knn(&cloud, Query::Index(5), 2).unwrap();
        let m = merge_and_prune(&nl4, &nl5, 4, 5, [4.5, 0.0, 0.0], &cloud, 2).unwrap();
        assert_eq!(m.indices, vec![4, 5]);
        assert!(!m.is_short());
    }

    #[test]
    fn merge_of_identical_lists_stays_in_union() {
        let cloud = line(10);
        let nl = brute_force_knn(&cloud, Query::Index(3), 3).unwrap();
        let m = merge_and_prune(&nl, &nl, 3, 4, [3.5, 0.0, 0.0], &cloud, 4).unwrap();
        for i in &m.indices {
            assert!(nl.indices.contains(i) || *i == 3 || *i == 4);
        }
        assert!(m.distances.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn merge_flags_short_result() {
        let cloud = line(3);
        let nl0 = brute_force_knn(&cloud, Query::Index(0), 1).unwrap();
        let nl1 = brute_force_knn(&cloud, Query::Index(1), 1).unwrap();
        let m = merge_and_prune(&nl0, &nl1, 0, 1, [0.5, 0.0, 0.0], &cloud, 5).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.is_short());
    }
}
