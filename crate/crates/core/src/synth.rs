//! Seeded synthetic point clouds used by tests, benchmarks and the demo video.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{Color, PointCloud, Position};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Points drawn uniformly inside the cube `[0, side]^3`.
pub fn uniform_cube(n: usize, side: f32, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    let pts = (0..n)
        .map(|_| [rng.gen::<f32>() * side, rng.gen::<f32>() * side, rng.gen::<f32>() * side])
        .collect();
    PointCloud::from_positions(pts).expect("finite")
}

/// Points drawn uniformly on a sphere surface.
pub fn sphere_surface(n: usize, radius: f32, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    let pts = (0..n)
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            let r = radius as f64;
            [(r * s * phi.cos()) as f32, (r * s * phi.sin()) as f32, (r * z) as f32]
        })
        .collect();
    PointCloud::from_positions(pts).expect("finite")
}

/// Points drawn uniformly (by area) on a torus surface around the z axis.
pub fn torus_surface(n: usize, major: f32, minor: f32, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    let (big, small) = (major as f64, minor as f64);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let u: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        // Rejection on the area element (R + r cos v).
        let w: f64 = rng.gen_range(0.0..(big + small));
        if w > big + small * v.cos() {
            continue;
        }
        let ring = big + small * v.cos();
        pts.push([
            (ring * u.cos()) as f32,
            (ring * u.sin()) as f32,
            (small * v.sin()) as f32,
        ]);
    }
    PointCloud::from_positions(pts).expect("finite")
}

/// Two uniform blobs with a `dense_fraction` / rest split of the points.
/// The dense blob is a unit cube at the origin, the sparse one a unit cube
/// offset by 3 along x.
pub fn two_clusters(n: usize, dense_fraction: f64, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    let dense = (n as f64 * dense_fraction).round() as usize;
    let pts = (0..n)
        .map(|i| {
            let off = if i < dense { 0.0 } else { 3.0 };
            [off + rng.gen::<f32>(), rng.gen::<f32>(), rng.gen::<f32>()]
        })
        .collect();
    PointCloud::from_positions(pts).expect("finite")
}

/// Colors each point from its normalized position within the cloud's box.
pub fn with_position_colors(cloud: &PointCloud) -> PointCloud {
    let Some(bbox) = cloud.bbox() else {
        return PointCloud::empty(true);
    };
    let ext = bbox.extent();
    let colors: Vec<Color> = cloud
        .positions()
        .iter()
        .map(|p| {
            let c = |a: usize| {
                if ext[a] > 0.0 {
                    (((p[a] as f64 - bbox.min[a]) / ext[a]) * 255.0).round() as u8
                } else {
                    128
                }
            };
            [c(0), c(1), c(2)]
        })
        .collect();
    PointCloud::new(cloud.positions().to_vec(), Some(colors)).expect("valid")
}

/// A deforming colored blob used as a synthetic volumetric video frame.
pub fn video_frame(n: usize, frame_index: usize, seed: u64) -> PointCloud {
    let t = frame_index as f64 * 0.05;
    let mut rng = rng(seed ^ (frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let pts: Vec<Position> = (0..n)
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            let r = 1.0 + 0.15 * (3.0 * phi + t).sin() * s;
            [
                (r * s * phi.cos()) as f32,
                (r * s * phi.sin()) as f32,
                (1.6 * r * z) as f32,
            ]
        })
        .collect();
    with_position_colors(&PointCloud::from_positions(pts).expect("finite"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        assert_eq!(sphere_surface(100, 1.0, 3), sphere_surface(100, 1.0, 3));
        assert_ne!(sphere_surface(100, 1.0, 3), sphere_surface(100, 1.0, 4));
        assert_eq!(torus_surface(50, 1.0, 0.3, 1).len(), 50);
        assert_eq!(video_frame(64, 2, 7), video_frame(64, 2, 7));
        assert!(video_frame(64, 2, 7).has_colors());
    }

    #[test]
    fn sphere_points_on_surface() {
        let c = sphere_surface(500, 2.0, 1);
        for p in c.positions() {
            let r = (p.iter().map(|v| (*v as f64).powi(2)).sum::<f64>()).sqrt();
            assert!((r - 2.0).abs() < 1e-5);
        }
    }
}
