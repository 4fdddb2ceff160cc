//! Desk-scale measurement suites: neighbor search, interpolation, table
//! refinement and the whole per-frame restoration chain.

use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use pcsr_core::interpolate::{interpolate_with, plan_upsample, DilatedNeighbors, NeighborStrategy};
use pcsr_core::lut::{build_lut, laplacian_refiner, refine_frame};
use pcsr_core::sampling::random_downsample;
use pcsr_core::spatial::{brute_force_knn, Query, TwoLayerOctree};
use pcsr_core::{synth, Error, Result, SrConfig, SrPipeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Knn,
    Interpolation,
    Lut,
    E2e,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "knn" => Suite::Knn,
            "interpolation" => Suite::Interpolation,
            "lut" => Suite::Lut,
            "e2e" => Suite::E2e,
            _ => return Err(Error::invalid(format!("unknown suite `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub points: usize,
    pub ratio: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            points: 50_000,
            ratio: 2.0,
            repeats: 3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub label: String,
    pub ratio: f64,
    pub points: usize,
    /// Fastest run.
    pub best_s: f64,
    pub mean_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub suite: Suite,
    pub points: usize,
    pub seed: u64,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

/// Runs `f` `repeats` times and returns (best, mean) wall time.
pub fn time_runs(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<(f64, f64)> {
    let mut best = f64::INFINITY;
    let mut total = 0.0;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        let e = t.elapsed().as_secs_f64();
        best = best.min(e);
        total += e;
    }
    Ok((best, total / repeats.max(1) as f64))
}

fn row(label: &str, ratio: f64, points: usize, (best_s, mean_s): (f64, f64)) -> BenchRow {
    BenchRow {
        label: label.into(),
        ratio,
        points,
        best_s,
        mean_s,
    }
}

pub fn run(suite: Suite, opts: &BenchOptions) -> Result<BenchReport> {
    if opts.points < 16 {
        return Err(Error::invalid("benchmarks need at least 16 points"));
    }
    let cloud = synth::video_frame(opts.points, 0, opts.seed);
    let n = cloud.len();
    let reps = opts.repeats;
    let mut rows = Vec::new();
    match suite {
        Suite::Knn => {
            let k = 4;
            rows.push(row("octree_build", 1.0, n, time_runs(reps, || {
                TwoLayerOctree::build(&cloud).map(drop)
            })?));
            let tree = TwoLayerOctree::build(&cloud)?;
            rows.push(row("octree_knn_all", 1.0, n, time_runs(reps, || {
                for i in 0..n {
                    tree.knn(&cloud, Query::Index(i), k)?;
                }
                Ok(())
            })?));
            // The exhaustive scan is timed on a strided subset and scaled up.
            let sample = n.min(500);
            let stride = n / sample;
            let (b, m) = time_runs(reps, || {
                for s in 0..sample {
                    brute_force_knn(&cloud, Query::Index(s * stride), k)?;
                }
                Ok(())
            })?;
            let scale = n as f64 / sample as f64;
            rows.push(row("brute_knn_all_extrapolated", 1.0, n, (b * scale, m * scale)));
        }
        Suite::Interpolation => {
            for (label, strategy) in [
                ("octree_reuse", NeighborStrategy::OctreeReuse),
                ("brute_force", NeighborStrategy::BruteForce),
            ] {
                let plan = plan_upsample(n, opts.ratio, 4, 2, opts.seed)?;
                rows.push(row(label, opts.ratio, n, time_runs(reps, || {
                    let nb = DilatedNeighbors::compute(&cloud, 4, 2, strategy)?;
                    interpolate_with(&cloud, &plan, &nb, strategy).map(drop)
                })?));
            }
        }
        Suite::Lut => {
            let table = build_lut(&laplacian_refiner(0.5)?, 4, 16)?;
            let d = SrConfig::default().effective_d(opts.ratio, n);
            let plan = plan_upsample(n, opts.ratio, 4, d, opts.seed)?;
            let nb = DilatedNeighbors::compute(&cloud, 4, d, NeighborStrategy::OctreeReuse)?;
            let out = interpolate_with(&cloud, &plan, &nb, NeighborStrategy::OctreeReuse)?;
            rows.push(row("refine_frame_n4_b16", opts.ratio, n, time_runs(reps, || {
                refine_frame(&table, &out).map(drop)
            })?));
        }
        Suite::E2e => {
            let table = std::sync::Arc::new(build_lut(&laplacian_refiner(0.5)?, 4, 16)?);
            let pipeline = SrPipeline::new(SrConfig::default(), Some(table));
            for ratio in [2.0, 4.0, 8.0] {
                let low = random_downsample(&cloud, 1.0 / ratio, opts.seed)?;
                rows.push(row("restore_frame", ratio, low.len(), time_runs(reps, || {
                    pipeline.upsample_to(&low, n, opts.seed).map(drop)
                })?));
            }
        }
    }
    Ok(BenchReport {
        suite,
        points: n,
        seed: opts.seed,
        repeats: reps,
        rows,
    })
}
