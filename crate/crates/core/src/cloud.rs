//! Point-cloud data model.
//!
//! Positions are stored as `f32` (the on-disk and on-wire precision) and all
//! geometry is evaluated in `f64`. Colors are stored in a parallel array so a
//! cloud is either fully colored or not colored at all.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Position = [f32; 3];
pub type Color = [u8; 3];
pub type Vec3 = [f64; 3];

#[inline]
pub fn to_f64(p: &Position) -> Vec3 {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm_sq(a: &Vec3) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

/// Squared Euclidean distance between two stored positions.
///
/// Every neighbor search in the crate goes through this function so that the
/// octree and the brute-force oracle order candidates identically.
#[inline]
pub fn dist_sq(a: &Position, b: &Position) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    let dz = a[2] as f64 - b[2] as f64;
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn dist_sq_to(q: &Vec3, b: &Position) -> f64 {
    let dx = q[0] - b[0] as f64;
    let dy = q[1] - b[1] as f64;
    let dz = q[2] - b[2] as f64;
    dx * dx + dy * dy + dz * dz
}

/// Midpoint of two stored positions, computed exactly in `f64` and rounded
/// once to `f32`.
#[inline]
pub fn midpoint(a: &Position, b: &Position) -> Position {
    let m = |i: usize| ((a[i] as f64 + b[i] as f64) * 0.5) as f32;
    [m(0), m(1), m(2)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub position: Position,
    pub color: Option<Color>,
}

impl Point {
    pub fn new(position: Position) -> Self {
        Self {
            position,
            color: None,
        }
    }

    pub fn colored(position: Position, color: Color) -> Self {
        Self {
            position,
            color: Some(color),
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_positions(positions: &[Position]) -> Option<Self> {
        let first = positions.first()?;
        let mut min = to_f64(first);
        let mut max = min;
        for p in &positions[1..] {
            for axis in 0..3 {
                let v = p[axis] as f64;
                if v < min[axis] {
                    min[axis] = v;
                }
                if v > max[axis] {
                    max[axis] = v;
                }
            }
        }
        Some(Self { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        sub(&self.max, &self.min)
    }

    pub fn diagonal(&self) -> f64 {
        norm_sq(&self.extent()).sqrt()
    }

    pub fn center(&self) -> Vec3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn contains(&self, p: &Position) -> bool {
        (0..3).all(|i| {
            let v = p[i] as f64;
            v >= self.min[i] && v <= self.max[i]
        })
    }

    /// Squared distance from `q` to the box (zero inside).
    #[inline]
    pub fn dist_sq_to(&self, q: &Vec3) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if q[i] < self.min[i] {
                self.min[i] - q[i]
            } else if q[i] > self.max[i] {
                q[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

/// One volumetric frame: ordered positions plus optional per-point colors.
///
/// Immutable after construction; the bounding box is cached.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Position>,
    colors: Option<Vec<Color>>,
    bbox: Option<Aabb>,
}

impl Default for PointCloud {
    fn default() -> Self {
        Self::empty(false)
    }
}

impl PointCloud {
    pub fn empty(colored: bool) -> Self {
        Self {
            positions: Vec::new(),
            colors: colored.then(Vec::new),
            bbox: None,
        }
    }

    /// Builds an uncolored cloud. Fails on non-finite coordinates.
    pub fn from_positions(positions: Vec<Position>) -> Result<Self> {
        Self::new(positions, None)
    }

    pub fn new(positions: Vec<Position>, colors: Option<Vec<Color>>) -> Result<Self> {
        if let Some(c) = &colors {
            if c.len() != positions.len() {
                return Err(Error::invalid(format!(
                    "color count {} does not match point count {}",
                    c.len(),
                    positions.len()
                )));
            }
        }
        if let Some(i) = positions
            .iter()
            .position(|p| !p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        let bbox = Aabb::from_positions(&positions);
        Ok(Self {
            positions,
            colors,
            bbox,
        })
    }

    /// Builds a cloud from points; either every point carries a color or none does.
    pub fn from_points(points: &[Point]) -> Result<Self> {
        let colored = points.first().is_some_and(|p| p.color.is_some());
        if points.iter().any(|p| p.color.is_some() != colored) {
            return Err(Error::invalid("mixed colored and uncolored points"));
        }
        let positions = points.iter().map(|p| p.position).collect();
        let colors = colored.then(|| points.iter().map(|p| p.color.unwrap()).collect());
        Self::new(positions, colors)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[Color]> {
        self.colors.as_deref()
    }

    pub fn has_colors(&self) -> bool {
        self.colors.is_some()
    }

    pub fn bbox(&self) -> Option<Aabb> {
        self.bbox
    }

    pub fn point(&self, i: usize) -> Point {
        Point {
            position: self.positions[i],
            color: self.colors.as_ref().map(|c| c[i]),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Sub-cloud with the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let positions: Vec<Position> = indices.iter().map(|&i| self.positions[i]).collect();
        let colors = self
            .colors
            .as_ref()
            .map(|c| indices.iter().map(|&i| c[i]).collect());
        let bbox = Aabb::from_positions(&positions);
        Self {
            positions,
            colors,
            bbox,
        }
    }

    /// Applies `f` to every position. Colors are kept.
    pub fn map_positions(&self, f: impl Fn(&Position) -> Position) -> Result<Self> {
        Self::new(self.positions.iter().map(f).collect(), self.colors.clone())
    }

    pub fn into_parts(self) -> (Vec<Position>, Option<Vec<Color>>) {
        (self.positions, self.colors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_contains_all_points() {
        let cloud =
            PointCloud::from_positions(vec![[0.0, 1.0, 2.0], [-1.0, 5.0, 0.5], [3.0, -2.0, 1.0]])
                .unwrap();
        let bbox = cloud.bbox().unwrap();
        assert_eq!(bbox.min, [-1.0, -2.0, 0.5]);
        assert_eq!(bbox.max, [3.0, 5.0, 2.0]);
        assert!(cloud.positions().iter().all(|p| bbox.contains(p)));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(PointCloud::from_positions(vec![[0.0, f32::NAN, 0.0]]).is_err());
        assert!(PointCloud::from_positions(vec![[f32::INFINITY, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn rejects_mixed_colors() {
        let pts = [
            Point::colored([0.0; 3], [1, 2, 3]),
            Point::new([1.0, 0.0, 0.0]),
        ];
        assert!(PointCloud::from_points(&pts).is_err());
    }

    #[test]
    fn midpoint_is_exact_for_representable_values() {
        assert_eq!(midpoint(&[0.0, 2.0, -4.0], &[1.0, 4.0, 4.0]), [0.5, 3.0, 0.0]);
    }
}
