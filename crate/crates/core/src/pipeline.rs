//! The client-side super-resolution chain for one frame: neighbor search,
//! dilated interpolation, colorization and optional table refinement.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::interpolate::{
    colorize, interpolate_with, plan_upsample, DilatedNeighbors, NeighborStrategy,
};
use crate::lut::{refine_frame, LutTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrConfig {
    pub k: usize,
    pub d: usize,
    /// Raise `d` for large ratios so that `d * k >= 2 * (ratio - 1)`.
    /// Without headroom the unordered-pair rule runs out of partners.
    pub auto_widen: bool,
    pub strategy: NeighborStrategy,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            k: 4,
            d: 2,
            auto_widen: true,
            strategy: NeighborStrategy::OctreeReuse,
        }
    }
}

impl SrConfig {
    /// Dilation used for `ratio` on a cloud of `n` points.
    pub fn effective_d(&self, ratio: f64, n: usize) -> usize {
        if !self.auto_widen || self.k == 0 {
            return self.d;
        }
        let need = (2.0 * (ratio - 1.0) / self.k as f64).ceil().max(1.0) as usize;
        let cap = (n.saturating_sub(1) / self.k).max(1);
        self.d.max(need.min(cap))
    }
}

/// Wall time per stage, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub knn_s: f64,
    pub interpolate_s: f64,
    pub colorize_s: f64,
    pub refine_s: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.knn_s + self.interpolate_s + self.colorize_s + self.refine_s
    }

    pub fn add(&mut self, other: &StageTimings) {
        self.knn_s += other.knn_s;
        self.interpolate_s += other.interpolate_s;
        self.colorize_s += other.colorize_s;
        self.refine_s += other.refine_s;
    }
}

#[derive(Debug, Clone)]
pub struct SrOutput {
    pub cloud: PointCloud,
    pub timings: StageTimings,
    pub shortfall: usize,
    pub effective_d: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SrPipeline {
    pub config: SrConfig,
    pub lut: Option<Arc<LutTable>>,
}

impl SrPipeline {
    pub fn new(config: SrConfig, lut: Option<Arc<LutTable>>) -> Self {
        Self { config, lut }
    }

    /// Upsamples `cloud` by `ratio` (>= 1).
    pub fn upsample(&self, cloud: &PointCloud, ratio: f64, seed: u64) -> Result<SrOutput> {
        let n = cloud.len();
        if n == 0 {
            return Err(Error::EmptyCloud);
        }
        let k = self.config.k;
        let d = self.config.effective_d(ratio, n);
        let plan = plan_upsample(n, ratio, k, d, seed)?;
        let mut timings = StageTimings::default();
        if plan.new_point_count == 0 {
            return Ok(SrOutput {
                cloud: cloud.clone(),
                timings,
                shortfall: 0,
                effective_d: d,
            });
        }

        let t = Instant::now();
        let neighbors = DilatedNeighbors::compute(cloud, k, d, self.config.strategy)?;
        timings.knn_s = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut out = interpolate_with(cloud, &plan, &neighbors, self.config.strategy)?;
        timings.interpolate_s = t.elapsed().as_secs_f64();

        if cloud.has_colors() {
            let t = Instant::now();
            colorize(&mut out, cloud)?;
            timings.colorize_s = t.elapsed().as_secs_f64();
        }

        let shortfall = out.shortfall;
        let result = match &self.lut {
            Some(table) => {
                let t = Instant::now();
                let refined = refine_frame(table, &out)?;
                timings.refine_s = t.elapsed().as_secs_f64();
                refined
            }
            None => out.cloud,
        };
        Ok(SrOutput {
            cloud: result,
            timings,
            shortfall,
            effective_d: d,
        })
    }

    /// Upsamples `cloud` to exactly `target` points (when capacity allows).
    pub fn upsample_to(&self, cloud: &PointCloud, target: usize, seed: u64) -> Result<SrOutput> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if target < cloud.len() {
            return Err(Error::invalid(format!(
                "target {target} is below the input size {}",
                cloud.len()
            )));
        }
        self.upsample(cloud, target as f64 / cloud.len() as f64, seed)
    }
}
