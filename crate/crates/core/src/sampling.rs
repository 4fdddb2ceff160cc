//! Downsampling: seeded exact-count random selection and farthest point sampling.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{dist_sq, PointCloud};
use crate::error::{Error, Result};

/// Number of points kept when sampling `n` points at `ratio`.
pub fn downsample_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

/// Keeps exactly `round(ratio * N)` points chosen uniformly without
/// replacement. The selection depends only on `seed`; kept points retain
/// their relative input order.
pub fn random_downsample(cloud: &PointCloud, ratio: f64, seed: u64) -> Result<PointCloud> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("ratio {ratio} not in (0, 1]")));
    }
    let n = cloud.len();
    let m = downsample_count(n, ratio);
    if m == n {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    Ok(cloud.select(&picked))
}

/// Greedy farthest point sampling starting from point 0. Returns points in
/// selection order. Ties pick the lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, target_count: usize) -> Result<PointCloud> {
    let n = cloud.len();
    if target_count == 0 || target_count > n {
        return Err(Error::invalid(format!(
            "target count {target_count} not in [1, {n}]"
        )));
    }
    let positions = cloud.positions();
    let mut selected = Vec::with_capacity(target_count);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = 0usize;
    for _ in 0..target_count {
        selected.push(current);
        min_dist[current] = f64::NEG_INFINITY;
        let anchor = positions[current];
        let mut next = None;
        let mut far = f64::NEG_INFINITY;
        for (i, p) in positions.iter().enumerate() {
            let md = &mut min_dist[i];
            if *md == f64::NEG_INFINITY {
                continue;
            }
            let d = dist_sq(&anchor, p);
            if d < *md {
                *md = d;
            }
            if *md > far {
                far = *md;
                next = Some(i);
            }
        }
        match next {
            Some(i) => current = i,
            None => break,
        }
    }
    Ok(cloud.select(&selected))
}
