//! Dilated midpoint interpolation and colorization.
//!
//! Every source point gets a share of the new points. For each of its shares
//! it picks a distinct partner uniformly from its `d * k` nearest neighbors and
//! emits the midpoint. An unordered parent pair is used at most once per
//! frame; a source whose candidates run out passes its remaining share on to
//! the next sources, and a final sweep hands out whatever is still missing.
//! Neighbor lists of the new points come from merging the parents' lists, so
//! the interpolation stage performs no tree query per new point.

use log::warn;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{dist_sq, midpoint, to_f64, PointCloud, Position};
use crate::error::{Error, Result};
use crate::spatial::{
    brute_force_knn, merge_and_prune_into, KBest, NeighborList, Query, TwoLayerOctree,
};

const PLAN_STREAM: u64 = 0x706c_616e;

/// How many new points each source point generates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpsamplePlan {
    pub ratio: f64,
    pub new_point_count: usize,
    pub counts: Vec<u32>,
    pub seed: u64,
}

/// Spreads `round(ratio * n) - n` new points over `n` sources as evenly as
/// possible. Which sources get the extra point is a seeded choice.
pub fn plan_upsample(
    n_points: usize,
    ratio: f64,
    k: usize,
    d: usize,
    seed: u64,
) -> Result<UpsamplePlan> {
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::invalid(format!("upsampling ratio {ratio} must be >= 1")));
    }
    let capacity = k * d;
    if ratio - 1.0 > capacity as f64 {
        return Err(Error::Capacity(format!(
            "ratio {ratio} needs more than d*k = {capacity} partners per point"
        )));
    }
    let target = (ratio * n_points as f64).round() as usize;
    let new_point_count = target.saturating_sub(n_points);
    let mut counts = vec![0u32; n_points];
    if new_point_count > 0 {
        let base = new_point_count / n_points;
        let extra = new_point_count % n_points;
        counts.fill(base as u32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(PLAN_STREAM);
        for i in index::sample(&mut rng, n_points, extra) {
            counts[i] += 1;
        }
        if base + usize::from(extra > 0) > capacity {
            return Err(Error::Capacity(format!(
                "ratio {ratio} needs more than d*k = {capacity} partners per point"
            )));
        }
    }
    Ok(UpsamplePlan {
        ratio,
        new_point_count,
        counts,
        seed,
    })
}

/// Neighbor search used while interpolating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NeighborStrategy {
    /// Octree queries for sources, merged parent lists for new points.
    #[default]
    OctreeReuse,
    /// Exhaustive scans for both; the unoptimized baseline.
    BruteForce,
}

/// Fixed-stride neighbor lists of the new points. Only indices are stored;
/// distances are recomputed when a full [`NeighborList`] is requested.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborSet {
    k: usize,
    indices: Vec<u32>,
    lens: Vec<u32>,
}

impl NeighborSet {
    fn with_capacity(k: usize, n: usize) -> Self {
        Self {
            k,
            indices: Vec::with_capacity(n * k),
            lens: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, best: &KBest) {
        self.indices.extend(best.items.iter().map(|&(_, i)| i));
        for _ in best.items.len()..self.k {
            self.indices.push(u32::MAX);
        }
        self.lens.push(best.items.len() as u32);
    }

    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbor indices of new point `i`, nearest first.
    pub fn indices(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..i * self.k + self.lens[i] as usize]
    }

    /// Full list of new point `i` located at `center`; `sources` are the
    /// points the indices refer to.
    pub fn list(&self, i: usize, center: Position, sources: &[Position]) -> NeighborList {
        let indices = self.indices(i).to_vec();
        let distances = indices
            .iter()
            .map(|&j| dist_sq(&center, &sources[j as usize]).sqrt())
            .collect();
        NeighborList {
            center: Query::Position(to_f64(&center)),
            indices,
            distances,
            requested: self.k,
        }
    }
}

/// Result of interpolation: originals first, then new points.
#[derive(Debug, Clone)]
pub struct InterpolationOutput {
    pub cloud: PointCloud,
    pub source_count: usize,
    /// `(source, partner)` per new point.
    pub parents: Vec<(u32, u32)>,
    pub neighbors: NeighborSet,
    /// New points the plan asked for but no unused pair could provide.
    pub shortfall: usize,
}

impl InterpolationOutput {
    pub fn new_points(&self) -> &[Position] {
        &self.cloud.positions()[self.source_count..]
    }

    pub fn new_point_count(&self) -> usize {
        self.parents.len()
    }

    /// Merged neighbor list of new point `i` (0-based among new points).
    pub fn neighbor_list(&self, i: usize) -> NeighborList {
        let positions = self.cloud.positions();
        self.neighbors
            .list(i, self.new_points()[i], &positions[..self.source_count])
    }
}

/// The `d * k` nearest neighbors of every point, flattened.
#[derive(Debug, Clone)]
pub struct DilatedNeighbors {
    pub k: usize,
    pub d: usize,
    lists: Vec<u32>,
    /// Order in which sources are processed; spatially coherent when an
    /// octree was built.
    order: Vec<u32>,
}

impl DilatedNeighbors {
    pub fn compute(cloud: &PointCloud, k: usize, d: usize, strategy: NeighborStrategy) -> Result<Self> {
        let n = cloud.len();
        if k == 0 || d == 0 {
            return Err(Error::invalid("k and d must be at least 1"));
        }
        let wide = k * d;
        if n == 0 || wide > n - 1 {
            return Err(Error::KOutOfRange {
                requested: wide,
                available: n.saturating_sub(1),
            });
        }
        let mut lists = Vec::with_capacity(n * wide);
        let order: Vec<u32>;
        match strategy {
            NeighborStrategy::OctreeReuse => {
                let tree = TwoLayerOctree::build(cloud)?;
                let mut best = KBest::new(wide);
                let positions = cloud.positions();
                lists.resize(n * wide, 0);
                // Leaf order keeps consecutive queries in the same region.
                for &i in tree.leaf_order() {
                    let i = i as usize;
                    best.reset(wide);
                    tree.knn_into(&to_f64(&positions[i]), Some(i), &mut best);
                    for (slot, &(_, j)) in lists[i * wide..(i + 1) * wide].iter_mut().zip(&best.items) {
                        *slot = j;
                    }
                }
                order = tree.leaf_order().to_vec();
            }
            NeighborStrategy::BruteForce => {
                for i in 0..n {
                    let nl = brute_force_knn(cloud, Query::Index(i), wide)?;
                    lists.extend_from_slice(&nl.indices);
                }
                // Same processing order as the octree path so both strategies
                // produce identical output; only the partition is used here.
                order = TwoLayerOctree::build(cloud)?.leaf_order().to_vec();
            }
        }
        Ok(Self { k, d, lists, order })
    }

    pub fn width(&self) -> usize {
        self.k * self.d
    }

    /// All `d * k` neighbors of point `i`.
    pub fn dilated(&self, i: usize) -> &[u32] {
        let w = self.width();
        &self.lists[i * w..(i + 1) * w]
    }

    /// The plain `k` nearest neighbors of point `i` (prefix of the dilated list).
    pub fn nearest(&self, i: usize) -> &[u32] {
        &self.dilated(i)[..self.k]
    }
}

/// Partners already chosen by each source, fixed stride `w`. A source never
/// chooses more than its `w` candidates, so the stride always suffices.
struct ChosenPairs {
    w: usize,
    partners: Vec<u32>,
    lens: Vec<u32>,
}

impl ChosenPairs {
    fn new(n: usize, w: usize) -> Self {
        Self {
            w,
            partners: vec![0; n * w],
            lens: vec![0; n],
        }
    }

    #[inline]
    fn of(&self, i: u32) -> &[u32] {
        let at = i as usize * self.w;
        &self.partners[at..at + self.lens[i as usize] as usize]
    }

    /// Whether the unordered pair `{i, j}` is taken.
    #[inline]
    fn taken(&self, i: u32, j: u32) -> bool {
        self.of(i).contains(&j) || self.of(j).contains(&i)
    }

    #[inline]
    fn insert(&mut self, i: u32, j: u32) {
        let len = self.lens[i as usize] as usize;
        self.partners[i as usize * self.w + len] = j;
        self.lens[i as usize] += 1;
    }
}

/// Chooses unordered parent pairs following the plan.
fn select_pairs(plan: &UpsamplePlan, neighbors: &DilatedNeighbors) -> (Vec<(u32, u32)>, usize) {
    let n = plan.counts.len();
    let wide = neighbors.width();
    let mut chosen = ChosenPairs::new(n, wide);
    let mut pairs = Vec::with_capacity(plan.new_point_count);
    let mut order: Vec<usize> = (0..wide).collect();
    let mut carry = 0usize;
    for &i in &neighbors.order {
        let i = i as usize;
        let want = (plan.counts[i] as usize + carry).min(wide);
        carry = plan.counts[i] as usize + carry - want;
        if want == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(i as u64);
        for (slot, o) in order.iter_mut().enumerate() {
            *o = slot;
        }
        let cands = neighbors.dilated(i);
        let src = i as u32;
        let mut accepted = 0;
        // Partial Fisher-Yates: position `t` receives a uniform pick among the rest.
        for t in 0..wide {
            if accepted == want {
                break;
            }
            let swap = rng.gen_range(t..wide);
            order.swap(t, swap);
            let j = cands[order[t]];
            if !chosen.taken(src, j) {
                chosen.insert(src, j);
                pairs.push((src, j));
                accepted += 1;
            }
        }
        carry += want - accepted;
    }
    // Final sweep for any share that could not be placed in order.
    while carry > 0 {
        let before = carry;
        for &src in &neighbors.order {
            if carry == 0 {
                break;
            }
            let i = src as usize;
            if let Some(&j) = neighbors.dilated(i).iter().find(|&&j| !chosen.taken(src, j)) {
                chosen.insert(src, j);
                pairs.push((src, j));
                carry -= 1;
            }
        }
        if carry == before {
            break;
        }
    }
    (pairs, carry)
}

/// Interpolates using precomputed dilated neighborhoods.
pub fn interpolate_with(
    cloud: &PointCloud,
    plan: &UpsamplePlan,
    neighbors: &DilatedNeighbors,
    strategy: NeighborStrategy,
) -> Result<InterpolationOutput> {
    let n = cloud.len();
    if plan.counts.len() != n {
        return Err(Error::invalid(format!(
            "plan covers {} points but the cloud has {n}",
            plan.counts.len()
        )));
    }
    let k = neighbors.k;
    let (pairs, shortfall) = select_pairs(plan, neighbors);
    if shortfall > 0 {
        warn!(
            "interpolation short by {shortfall} of {} new points: no unused parent pairs left",
            plan.new_point_count
        );
    }
    let positions = cloud.positions();
    let mut out_positions = Vec::with_capacity(n + pairs.len());
    out_positions.extend_from_slice(positions);
    let mut set = NeighborSet::with_capacity(k, pairs.len());
    let mut best = KBest::new(k);
    for &(p, q) in &pairs {
        let m = midpoint(&positions[p as usize], &positions[q as usize]);
        out_positions.push(m);
        let center = to_f64(&m);
        match strategy {
            NeighborStrategy::OctreeReuse => {
                best.reset(k);
                merge_and_prune_into(
                    neighbors.nearest(p as usize),
                    neighbors.nearest(q as usize),
                    p as usize,
                    q as usize,
                    &center,
                    positions,
                    &mut best,
                );
            }
            NeighborStrategy::BruteForce => {
                let nl = brute_force_knn(cloud, Query::Position(center), k.min(n))?;
                best.reset(k);
                for (&i, &dd) in nl.indices.iter().zip(&nl.distances) {
                    best.items.push((dd * dd, i));
                }
            }
        }
        set.push(&best);
    }
    Ok(InterpolationOutput {
        cloud: PointCloud::from_positions(out_positions)?,
        source_count: n,
        parents: pairs,
        neighbors: set,
        shortfall,
    })
}

/// Upsamples `cloud` following `plan`, drawing partners from dilated
/// `d * k` neighborhoods.
pub fn dilated_midpoint_interpolate(
    cloud: &PointCloud,
    plan: &UpsamplePlan,
    k: usize,
    d: usize,
    strategy: NeighborStrategy,
) -> Result<InterpolationOutput> {
    if plan.new_point_count == 0 {
        return Ok(InterpolationOutput {
            cloud: PointCloud::new(cloud.positions().to_vec(), None)?,
            source_count: cloud.len(),
            parents: Vec::new(),
            neighbors: NeighborSet::with_capacity(k, 0),
            shortfall: 0,
        });
    }
    let neighbors = DilatedNeighbors::compute(cloud, k, d, strategy)?;
    interpolate_with(cloud, plan, &neighbors, strategy)
}

/// Gives every point of `output` a color: originals keep theirs, each new
/// point takes the color of the nearer parent (the source parent on a tie).
/// Returns `false` and leaves the output untouched if `original` has no colors.
pub fn colorize(output: &mut InterpolationOutput, original: &PointCloud) -> Result<bool> {
    let Some(src_colors) = original.colors() else {
        warn!("colorize: original cloud has no colors, skipping");
        return Ok(false);
    };
    if original.len() != output.source_count {
        return Err(Error::invalid("original cloud does not match interpolation sources"));
    }
    let positions = original.positions();
    let mut colors = Vec::with_capacity(output.cloud.len());
    colors.extend_from_slice(src_colors);
    for (m, &(p, q)) in output.new_points().iter().zip(&output.parents) {
        let dp = dist_sq(m, &positions[p as usize]);
        let dq = dist_sq(m, &positions[q as usize]);
        colors.push(if dq < dp { src_colors[q as usize] } else { src_colors[p as usize] });
    }
    let (pos, _) = std::mem::take(&mut output.cloud).into_parts();
    output.cloud = PointCloud::new(pos, Some(colors))?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn plan_identity_and_even_split() {
        let p = plan_upsample(100, 1.0, 4, 2, 0).unwrap();
        assert_eq!(p.new_point_count, 0);
        let p = plan_upsample(100, 2.0, 4, 2, 0).unwrap();
        assert_eq!(p.new_point_count, 100);
        assert!(p.counts.iter().all(|&c| c == 1));
        let p = plan_upsample(100, 2.5, 4, 2, 0).unwrap();
        assert_eq!(p.new_point_count, 150);
        assert_eq!(p.counts.iter().filter(|&&c| c == 2).count(), 50);
        assert_eq!(p.counts.iter().filter(|&&c| c == 1).count(), 50);
    }

    #[test]
    fn plan_errors() {
        assert!(plan_upsample(10, 0.5, 4, 2, 0).is_err());
        assert!(matches!(plan_upsample(10, 9.5, 4, 2, 0), Err(Error::Capacity(_))));
        assert!(plan_upsample(10, 9.0, 4, 2, 0).is_ok());
    }

    #[test]
    fn two_points_one_midpoint() {
        let cloud = PointCloud::from_positions(vec![[0.0, 0.0, 0.0], [2.0, 4.0, 6.0]]).unwrap();
        let plan = plan_upsample(2, 1.5, 1, 1, 3).unwrap();
        let out =
            dilated_midpoint_interpolate(&cloud, &plan, 1, 1, NeighborStrategy::OctreeReuse).unwrap();
        assert_eq!(out.new_points(), &[[1.0, 2.0, 3.0]]);
        assert_eq!(out.shortfall, 0);
    }

    #[test]
    fn colorize_tie_goes_to_source() {
        let cloud = PointCloud::new(
            vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            Some(vec![[255, 0, 0], [0, 0, 255]]),
        )
        .unwrap();
        let plan = UpsamplePlan {
            ratio: 1.5,
            new_point_count: 1,
            counts: vec![0, 1],
            seed: 0,
        };
        let mut out =
            dilated_midpoint_interpolate(&cloud, &plan, 1, 1, NeighborStrategy::OctreeReuse).unwrap();
        assert_eq!(out.parents, vec![(1, 0)]);
        assert!(colorize(&mut out, &cloud).unwrap());
        // Midpoint (1,0,0) is equidistant; the source parent (blue) wins.
        assert_eq!(out.cloud.colors().unwrap()[2], [0, 0, 255]);
    }

    #[test]
    fn colorize_uncolored_is_noop() {
        let cloud = synth::uniform_cube(20, 1.0, 1);
        let plan = plan_upsample(20, 2.0, 2, 1, 0).unwrap();
        let mut out =
            dilated_midpoint_interpolate(&cloud, &plan, 2, 1, NeighborStrategy::OctreeReuse).unwrap();
        assert!(!colorize(&mut out, &cloud).unwrap());
        assert!(!out.cloud.has_colors());
    }

    #[test]
    fn pairs_are_unique() {
        let cloud = synth::uniform_cube(300, 1.0, 5);
        let plan = plan_upsample(300, 4.0, 4, 2, 11).unwrap();
        let out =
            dilated_midpoint_interpolate(&cloud, &plan, 4, 2, NeighborStrategy::OctreeReuse).unwrap();
        let keys: std::collections::HashSet<(u32, u32)> =
            out.parents.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        assert_eq!(keys.len(), out.parents.len());
        assert_eq!(out.cloud.len(), 1200);
    }

    #[test]
    fn strategies_agree_on_geometry() {
        let cloud = synth::uniform_cube(400, 1.0, 2);
        let plan = plan_upsample(400, 2.0, 4, 2, 8).unwrap();
        let a = dilated_midpoint_interpolate(&cloud, &plan, 4, 2, NeighborStrategy::OctreeReuse).unwrap();
        let b = dilated_midpoint_interpolate(&cloud, &plan, 4, 2, NeighborStrategy::BruteForce).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.parents, b.parents);
    }
}
