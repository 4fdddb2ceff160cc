use half::f16;

use crate::error::{Error, Result};

use super::encode::dequantize;

/// Bytes needed for an axis-separable table: `b^n` entries per axis, three
/// axes, two bytes per binary16 offset.
pub fn lut_size_bytes(rf_size: u32, bins: u64) -> Result<u128> {
    if rf_size == 0 || bins < 2 {
        return Err(Error::Lut(format!(
            "invalid configuration n={rf_size}, b={bins} (need n >= 1, b >= 2)"
        )));
    }
    (bins as u128)
        .checked_pow(rf_size)
        .and_then(|e| e.checked_mul(3 * 2))
        .ok_or(Error::LutOverflow { rf_size, bins })
}

/// Entries per axis table, `b^n`, if it fits in memory addressing.
pub fn entries_per_axis(rf_size: u32, bins: u32) -> Result<usize> {
    lut_size_bytes(rf_size, bins as u64)?;
    (bins as usize)
        .checked_pow(rf_size)
        .ok_or(Error::LutOverflow {
            rf_size,
            bins: bins as u64,
        })
}

/// Maps one axis's normalized receptive-field coordinates (slot 0 is the
/// interpolated point) to a normalized offset for slot 0 along that axis.
/// Outputs must be finite and within `[-1, 1]`.
pub trait Refiner: Sync {
    fn offset(&self, coords: &[f64]) -> f64;

    /// Identifier stored in the table's provenance tag.
    fn provenance(&self) -> String;
}

/// Pulls the interpolated point toward the mean of its neighbors:
/// `lambda * (mean(coords[1..]) - coords[0])`, clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplacianRefiner {
    pub lambda: f64,
}

pub fn laplacian_refiner(lambda: f64) -> Result<LaplacianRefiner> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} not in [0, 1]")));
    }
    Ok(LaplacianRefiner { lambda })
}

impl Refiner for LaplacianRefiner {
    #[inline]
    fn offset(&self, coords: &[f64]) -> f64 {
        if coords.len() < 2 {
            return 0.0;
        }
        let rest = &coords[1..];
        let mean = rest.iter().sum::<f64>() / rest.len() as f64;
        (self.lambda * (mean - coords[0])).clamp(-1.0, 1.0)
    }

    fn provenance(&self) -> String {
        format!("laplacian(lambda={:.6})", self.lambda)
    }
}

/// Always returns zero; a table built from it leaves points untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroRefiner;

impl Refiner for ZeroRefiner {
    fn offset(&self, _coords: &[f64]) -> f64 {
        0.0
    }

    fn provenance(&self) -> String {
        "zero".into()
    }
}

/// Adapts a closure to [`Refiner`].
pub struct FnRefiner<F> {
    pub func: F,
    pub name: String,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Refiner for FnRefiner<F> {
    fn offset(&self, coords: &[f64]) -> f64 {
        (self.func)(coords)
    }

    fn provenance(&self) -> String {
        self.name.clone()
    }
}

/// Axis-separable refinement table: for each output axis, `b^n` binary16
/// offsets indexed by the mixed-radix index of that axis's `n` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct LutTable {
    rf_size: u32,
    bins: u32,
    axes: [Vec<f16>; 3],
    provenance: String,
}

impl LutTable {
    /// Wraps existing axis tables (e.g. produced offline by a trained model).
    pub fn from_axes(
        rf_size: u32,
        bins: u32,
        axes: [Vec<f16>; 3],
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let entries = entries_per_axis(rf_size, bins)?;
        for (a, table) in axes.iter().enumerate() {
            if table.len() != entries {
                return Err(Error::Lut(format!(
                    "axis {a} has {} entries, expected {entries}",
                    table.len()
                )));
            }
            if let Some(pos) = table.iter().position(|v| !v.is_finite()) {
                return Err(Error::Lut(format!("axis {a} entry {pos} is not finite")));
            }
        }
        Ok(Self {
            rf_size,
            bins,
            axes,
            provenance: provenance.into(),
        })
    }

    pub fn rf_size(&self) -> u32 {
        self.rf_size
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn entries_per_axis(&self) -> usize {
        self.axes[0].len()
    }

    pub fn axis(&self, axis: usize) -> &[f16] {
        &self.axes[axis]
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.axes.iter().map(Vec::len).sum::<usize>() * 2) as u64
    }

    #[inline]
    pub fn get(&self, axis: usize, index: u64) -> f64 {
        self.axes[axis][index as usize].to_f64()
    }
}

/// Evaluates `refiner` at the representative coordinates of every bin
/// combination and stores the binary16-rounded results. The same values back
/// all three axis tables.
pub fn build_lut(refiner: &dyn Refiner, rf_size: u32, bins: u32) -> Result<LutTable> {
    let entries = entries_per_axis(rf_size, bins)?;
    let n = rf_size as usize;
    let reps: Vec<f64> = (0..bins).map(|q| dequantize(q, bins)).collect();
    let mut q = vec![0u32; n];
    let mut coords: Vec<f64> = vec![reps[0]; n];
    let mut table = Vec::with_capacity(entries);
    for _ in 0..entries {
        let v = refiner.offset(&coords);
        if !v.is_finite() || v.abs() > 1.0 {
            return Err(Error::Lut(format!(
                "refiner returned {v} at bins {q:?}; offsets must be finite and within [-1, 1]"
            )));
        }
        table.push(f16::from_f64(v));
        // Odometer increment; the last slot varies fastest.
        for slot in (0..n).rev() {
            q[slot] += 1;
            if q[slot] < bins {
                coords[slot] = reps[q[slot] as usize];
                break;
            }
            q[slot] = 0;
            coords[slot] = reps[0];
        }
    }
    let provenance = refiner.provenance();
    LutTable::from_axes(rf_size, bins, [table.clone(), table.clone(), table], provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lut::flat_index;

    #[test]
    fn size_examples() {
        assert_eq!(lut_size_bytes(3, 128).unwrap(), 12_582_912);
        assert_eq!(lut_size_bytes(4, 64).unwrap(), 100_663_296);
        assert_eq!(lut_size_bytes(4, 128).unwrap(), 1_610_612_736);
        assert_eq!(lut_size_bytes(4, 16).unwrap(), 393_216);
        assert!(matches!(lut_size_bytes(40, u64::MAX), Err(Error::LutOverflow { .. })));
        assert!(lut_size_bytes(0, 16).is_err());
        assert!(lut_size_bytes(3, 1).is_err());
    }

    #[test]
    fn laplacian_closed_forms() {
        let r = laplacian_refiner(0.5).unwrap();
        assert_eq!(r.offset(&[0.25, 0.25, 0.25, 0.25]), 0.0);
        assert!((r.offset(&[0.1, 0.7]) - 0.5 * 0.6).abs() < 1e-15);
        assert!(laplacian_refiner(1.5).is_err());
        let full = laplacian_refiner(1.0).unwrap();
        assert_eq!(full.offset(&[-1.0, 1.0]), 1.0);
    }

    #[test]
    fn zero_table() {
        let t = build_lut(&ZeroRefiner, 3, 8).unwrap();
        assert!(t.axis(0).iter().all(|v| v.to_f64() == 0.0));
        assert_eq!(t.entries_per_axis(), 512);
    }

    #[test]
    fn entry_matches_direct_evaluation() {
        let r = laplacian_refiner(0.5).unwrap();
        let t = build_lut(&r, 3, 8).unwrap();
        let q = [4u32, 0, 7];
        let idx = flat_index(&q, 8).unwrap();
        let coords: Vec<f64> = q.iter().map(|&v| dequantize(v, 8)).collect();
        let expected = f16::from_f64(r.offset(&coords));
        for axis in 0..3 {
            assert_eq!(t.axis(axis)[idx as usize], expected);
        }
    }

    #[test]
    fn payload_size() {
        let t = build_lut(&laplacian_refiner(0.5).unwrap(), 4, 16).unwrap();
        assert_eq!(t.payload_bytes(), 16u64.pow(4) * 3 * 2);
    }

    #[test]
    fn out_of_range_refiner_rejected() {
        let bad = FnRefiner {
            func: |c: &[f64]| 3.0 * c[0],
            name: "bad".into(),
        };
        assert!(build_lut(&bad, 2, 4).is_err());
    }
}
