use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant bandwidth over time. Each sample holds until the next
/// one; the last holds for the mean sample interval, after which the trace
/// repeats. Timestamps are shifted so the first sample is at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTrace {
    times: Vec<f64>,
    bps: Vec<f64>,
    period: f64,
    /// Bits delivered from the start of a period to the start of segment `i`;
    /// one extra entry holds the whole period.
    prefix: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    timestamp_s: f64,
    bandwidth_mbps: f64,
}

impl NetworkTrace {
    /// Builds a trace from `(timestamp_s, bits_per_second)` samples.
    pub fn new(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Trace("no samples".into()));
        }
        for (i, &(t, b)) in samples.iter().enumerate() {
            if !t.is_finite() || !b.is_finite() || b < 0.0 {
                return Err(Error::Trace(format!("sample {i} ({t}, {b}) is invalid")));
            }
            if i > 0 && t <= samples[i - 1].0 {
                return Err(Error::Trace(format!("timestamps not increasing at sample {i}")));
            }
        }
        if samples.iter().all(|s| s.1 == 0.0) {
            return Err(Error::Trace("bandwidth is zero everywhere".into()));
        }
        let t0 = samples[0].0;
        let times: Vec<f64> = samples.iter().map(|s| s.0 - t0).collect();
        let bps: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let n = times.len();
        let last = times[n - 1];
        let period = if n > 1 { last + last / (n - 1) as f64 } else { 1.0 };
        let mut prefix = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        for i in 0..n {
            prefix.push(acc);
            let end = if i + 1 < n { times[i + 1] } else { period };
            acc += bps[i] * (end - times[i]);
        }
        prefix.push(acc);
        Ok(Self {
            times,
            bps,
            period,
            prefix,
        })
    }

    pub fn constant(mbps: f64) -> Result<Self> {
        Self::new(&[(0.0, mbps * 1e6)])
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.bps.iter().copied())
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    fn segment(&self, local: f64) -> usize {
        self.times.partition_point(|&t| t <= local).saturating_sub(1)
    }

    pub fn bandwidth_at(&self, t: f64) -> f64 {
        self.bps[self.segment(t.rem_euclid(self.period))]
    }

    /// Bits deliverable from time 0 to `t` (`t >= 0`).
    pub fn cumulative_bits(&self, t: f64) -> f64 {
        let p = (t / self.period).floor();
        let local = t - p * self.period;
        let i = self.segment(local);
        p * self.prefix[self.times.len()] + self.prefix[i] + self.bps[i] * (local - self.times[i])
    }

    pub fn bits_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        (self.cumulative_bits(b) - self.cumulative_bits(a)).max(0.0)
    }

    /// Time at which `bits` offered at `start` have been fully delivered.
    /// Zero-bandwidth stretches pause the transfer.
    pub fn transfer_end(&self, start: f64, bits: f64) -> f64 {
        if bits <= 0.0 {
            return start;
        }
        let per_period = self.prefix[self.times.len()];
        let goal = self.cumulative_bits(start) + bits;
        let p = (goal / per_period).floor();
        let mut g = goal - p * per_period;
        let mut base = p * self.period;
        // A goal that lands exactly on a period boundary ends in the previous period.
        if g <= 0.0 {
            g = per_period;
            base -= self.period;
        }
        let i = self.prefix[1..].partition_point(|&c| c < g);
        let end = base + self.times[i] + (g - self.prefix[i]) / self.bps[i];
        end.max(start)
    }

    /// Time-weighted mean and standard deviation over one period, in Mbps.
    pub fn stats_mbps(&self) -> (f64, f64) {
        let n = self.times.len();
        let mut mean = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            let end = if i + 1 < n { self.times[i + 1] } else { self.period };
            let w = (end - self.times[i]) / self.period;
            let m = self.bps[i] / 1e6;
            mean += w * m;
            sq += w * m * m;
        }
        (mean, (sq - mean * mean).max(0.0).sqrt())
    }

    pub fn from_csv_reader(r: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["timestamp_s", "bandwidth_mbps"] {
            return Err(Error::Trace(format!(
                "expected header `timestamp_s,bandwidth_mbps`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            samples.push((row.timestamp_s, row.bandwidth_mbps * 1e6));
        }
        Self::new(&samples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for (t, b) in self.samples() {
            wtr.serialize(Row {
                timestamp_s: t,
                bandwidth_mbps: b / 1e6,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// LTE-like fluctuating bandwidth: an AR(1) process sampled every `step_s`,
/// rescaled so its mean and standard deviation match the request, and floored
/// at a small positive rate.
pub fn lte_like(
    mean_mbps: f64,
    std_mbps: f64,
    duration_s: f64,
    step_s: f64,
    seed: u64,
) -> Result<NetworkTrace> {
    if !(mean_mbps > 0.0) || !(std_mbps >= 0.0) || !(step_s > 0.0) || !(duration_s >= step_s) {
        return Err(Error::Trace("invalid synthetic trace parameters".into()));
    }
    let n = (duration_s / step_s).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi: f64 = 0.85;
    let innov = (1.0 - phi * phi).sqrt();
    let mut z: f64 = StandardNormal.sample(&mut rng);
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            z = phi * z + innov * e;
            z
        })
        .collect();
    let floor = (0.1 * mean_mbps).max(0.5);
    let mut x: Vec<f64> = raw.iter().map(|z| mean_mbps + std_mbps * z).collect();
    for _ in 0..50 {
        for v in &mut x {
            *v = v.max(floor);
        }
        let m = x.iter().sum::<f64>() / n as f64;
        let s = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        if (m - mean_mbps).abs() < 1e-6 * mean_mbps && (s - std_mbps).abs() < 1e-6 * mean_mbps {
            break;
        }
        let scale = if s > 0.0 { std_mbps / s } else { 1.0 };
        for v in &mut x {
            *v = mean_mbps + (*v - m) * scale;
        }
    }
    let samples: Vec<(f64, f64)> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as f64 * step_s, (v.max(floor) * 1e3).round() * 1e3))
        .collect();
    NetworkTrace::new(&samples)
}
