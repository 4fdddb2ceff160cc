//! Continuous density-ratio adaptation.
//!
//! A model-predictive controller picks the fraction `r` of each chunk's
//! points to fetch; the client then upsamples by `1 / r`. Each candidate
//! sequence over the horizon is scored as
//! `sum(alpha * Q(r) - beta * V - gamma * stall)` while the buffer is
//! simulated chunk by chunk, and the first ratio of the best sequence is
//! committed.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the per-chunk QoE terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoeWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Extra factor on the variation term when quality goes down.
    pub drop_penalty_multiplier: f64,
}

impl Default for QoeWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 4.0,
            drop_penalty_multiplier: 2.0,
        }
    }
}

impl QoeWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Abr("QoE weights must be finite and non-negative".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::Abr("at least one QoE weight must be positive".into()));
        }
        if !(self.drop_penalty_multiplier >= 1.0) || !self.drop_penalty_multiplier.is_finite() {
            return Err(Error::Abr("drop penalty multiplier must be >= 1".into()));
        }
        Ok(())
    }
}

/// Maps a fetch ratio to a quality score in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityCurve {
    /// `ln(1 + theta * r) / ln(1 + theta)`.
    Log { theta: f64 },
    /// Piecewise-linear through measured `(ratio, quality)` points, sorted by
    /// ratio; clamped to the end values outside the covered range.
    Table { points: Vec<(f64, f64)> },
}

impl Default for QualityCurve {
    fn default() -> Self {
        QualityCurve::Log { theta: 20.0 }
    }
}

impl QualityCurve {
    pub fn validate(&self) -> Result<()> {
        match self {
            QualityCurve::Log { theta } => {
                if !(*theta > 0.0) || !theta.is_finite() {
                    return Err(Error::Abr(format!("quality curve theta {theta} must be positive")));
                }
            }
            QualityCurve::Table { points } => {
                if points.is_empty() {
                    return Err(Error::Abr("quality table is empty".into()));
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                        return Err(Error::Abr(
                            "quality table must have increasing ratios and non-decreasing quality"
                                .into(),
                        ));
                    }
                }
                let last = points[points.len() - 1];
                if last.0 != 1.0 || last.1 != 1.0 {
                    return Err(Error::Abr("quality table must end at (1, 1)".into()));
                }
                if points.iter().any(|&(r, q)| !(r > 0.0 && r <= 1.0) || !(0.0..=1.0).contains(&q)) {
                    return Err(Error::Abr("quality table entries out of range".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            QualityCurve::Log { theta } => (1.0 + theta * r).ln() / (1.0 + theta).ln(),
            QualityCurve::Table { points } => {
                let first = points[0];
                if r <= first.0 {
                    return first.1;
                }
                for w in points.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    if r <= b.0 {
                        let t = (r - a.0) / (b.0 - a.0);
                        return a.1 + t * (b.1 - a.1);
                    }
                }
                points[points.len() - 1].1
            }
        }
    }
}

/// The three QoE terms of one chunk, already weighted, and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QoeTerms {
    pub quality: f64,
    pub variation: f64,
    pub stall: f64,
    pub total: f64,
}

fn check_ratio(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::Abr(format!("ratio {r} not in (0, 1]")))
    }
}

/// Weighted QoE terms of one chunk.
pub fn qoe_terms(
    r: f64,
    r_prev: f64,
    stall_s: f64,
    weights: &QoeWeights,
    curve: &QualityCurve,
) -> Result<QoeTerms> {
    check_ratio(r)?;
    check_ratio(r_prev)?;
    Ok(qoe_terms_from_quality(curve.eval(r), curve.eval(r_prev), stall_s, weights))
}

#[inline]
fn qoe_terms_from_quality(q: f64, q_prev: f64, stall_s: f64, w: &QoeWeights) -> QoeTerms {
    let mut v = (q - q_prev).abs();
    if q < q_prev {
        v *= w.drop_penalty_multiplier;
    }
    let quality = w.alpha * q;
    let variation = w.beta * v;
    let stall = w.gamma * stall_s;
    QoeTerms {
        quality,
        variation,
        stall,
        total: quality - variation - stall,
    }
}

/// Per-chunk QoE: `alpha * Q(r) - beta * V - gamma * stall`.
pub fn qoe_chunk(
    r: f64,
    r_prev: f64,
    stall_s: f64,
    weights: &QoeWeights,
    curve: &QualityCurve,
) -> Result<f64> {
    Ok(qoe_terms(r, r_prev, stall_s, weights, curve)?.total)
}

/// Harmonic mean of the last `window` samples (bits/s).
pub fn estimate_throughput(history: &[f64], window: usize) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::Abr("empty throughput history".into()));
    }
    if window == 0 {
        return Err(Error::Abr("window must be at least 1".into()));
    }
    let recent = &history[history.len().saturating_sub(window)..];
    let mut inv = 0.0;
    for &s in recent {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Abr(format!("throughput sample {s} must be positive")));
        }
        inv += 1.0 / s;
    }
    Ok(recent.len() as f64 / inv)
}

/// Download and super-resolution time of one chunk.
#[inline]
pub fn chunk_busy_time(
    chunk_bytes: f64,
    throughput_bps: f64,
    sr_latency_s: f64,
    frames_per_chunk: usize,
) -> f64 {
    8.0 * chunk_bytes / throughput_bps + frames_per_chunk as f64 * sr_latency_s
}

/// Predicted stall while fetching and upsampling one chunk:
/// `max(0, download + sr - buffer)`.
pub fn predict_stall(
    chunk_bytes: f64,
    throughput_bps: f64,
    sr_latency_s: f64,
    frames_per_chunk: usize,
    buffer_s: f64,
) -> Result<f64> {
    if !(throughput_bps > 0.0) {
        return Err(Error::Abr("throughput must be positive".into()));
    }
    let busy = chunk_busy_time(chunk_bytes, throughput_bps, sr_latency_s, frames_per_chunk);
    Ok((busy - buffer_s).max(0.0))
}

/// Buffer after one chunk: `max(0, buffer - busy) + chunk_duration`.
#[inline]
pub fn next_buffer(buffer_s: f64, busy_s: f64, chunk_duration_s: f64) -> f64 {
    (buffer_s - busy_s).max(0.0) + chunk_duration_s
}

/// Candidate fetch ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RatioSet {
    /// `{r_min, r_min + step, ..., 1}`.
    Grid { r_min: f64, step: f64 },
    /// An explicit set of ratios.
    Discrete { ratios: Vec<f64> },
}

impl Default for RatioSet {
    fn default() -> Self {
        RatioSet::Grid {
            r_min: 0.1,
            step: 0.01,
        }
    }
}

impl RatioSet {
    /// The discrete ladder `{1/8, 1/4, 1/3, 1/2, 1}`.
    pub fn ladder() -> Self {
        RatioSet::Discrete {
            ratios: vec![1.0 / 8.0, 0.25, 1.0 / 3.0, 0.5, 1.0],
        }
    }

    /// Candidates in ascending order.
    pub fn candidates(&self) -> Result<Vec<f64>> {
        match self {
            RatioSet::Grid { r_min, step } => {
                if !(*step > 0.0 && *step <= 0.5) {
                    return Err(Error::Abr(format!("grid step {step} not in (0, 0.5]")));
                }
                check_ratio(*r_min)?;
                let count = ((1.0 - r_min) / step + 1e-9).floor() as usize;
                let mut out: Vec<f64> = (0..=count)
                    .map(|i| ((r_min + i as f64 * step) * 1e9).round() / 1e9)
                    .filter(|&r| r <= 1.0)
                    .collect();
                if out.last() != Some(&1.0) {
                    out.push(1.0);
                }
                Ok(out)
            }
            RatioSet::Discrete { ratios } => {
                if ratios.is_empty() {
                    return Err(Error::Abr("empty ratio set".into()));
                }
                for &r in ratios {
                    check_ratio(r)?;
                }
                let mut out = ratios.clone();
                out.sort_by(f64::total_cmp);
                out.dedup();
                Ok(out)
            }
        }
    }

    pub fn min(&self) -> Result<f64> {
        Ok(self.candidates()?[0])
    }
}

/// Controller configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbrConfig {
    pub weights: QoeWeights,
    pub curve: QualityCurve,
    pub ratios: RatioSet,
    pub horizon: usize,
    /// Throughput and SR-latency window length (samples).
    pub window: usize,
    /// SR latency per frame assumed before any measurement.
    pub initial_sr_latency_s: f64,
}

impl Default for AbrConfig {
    fn default() -> Self {
        Self {
            weights: QoeWeights::default(),
            curve: QualityCurve::default(),
            ratios: RatioSet::default(),
            horizon: 3,
            window: 5,
            initial_sr_latency_s: 0.02,
        }
    }
}

impl AbrConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.curve.validate()?;
        self.ratios.candidates()?;
        if self.horizon == 0 {
            return Err(Error::Abr("horizon must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Abr("window must be at least 1".into()));
        }
        if !(self.initial_sr_latency_s >= 0.0) {
            return Err(Error::Abr("initial SR latency must be non-negative".into()));
        }
        Ok(())
    }
}

/// What the controller knows between decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbrState {
    pub buffer_level_s: f64,
    pub throughput_history: VecDeque<f64>,
    pub sr_latency_history: VecDeque<f64>,
    pub window: usize,
    pub initial_sr_latency_s: f64,
    pub last_ratio: Option<f64>,
}

impl AbrState {
    pub fn new(config: &AbrConfig) -> Self {
        Self {
            buffer_level_s: 0.0,
            throughput_history: VecDeque::with_capacity(config.window),
            sr_latency_history: VecDeque::with_capacity(config.window),
            window: config.window.max(1),
            initial_sr_latency_s: config.initial_sr_latency_s,
            last_ratio: None,
        }
    }

    /// Harmonic-mean throughput estimate, if any sample exists.
    pub fn throughput_estimate(&self) -> Option<f64> {
        if self.throughput_history.is_empty() {
            return None;
        }
        let samples: Vec<f64> = self.throughput_history.iter().copied().collect();
        estimate_throughput(&samples, self.window).ok()
    }

    /// Windowed mean of measured per-frame SR latency.
    pub fn sr_latency_estimate(&self) -> f64 {
        if self.sr_latency_history.is_empty() {
            return self.initial_sr_latency_s;
        }
        self.sr_latency_history.iter().sum::<f64>() / self.sr_latency_history.len() as f64
    }

    pub fn record_throughput(&mut self, bps: f64) {
        if bps > 0.0 && bps.is_finite() {
            if self.throughput_history.len() == self.window {
                self.throughput_history.pop_front();
            }
            self.throughput_history.push_back(bps);
        }
    }

    pub fn record_sr_latency(&mut self, per_frame_s: f64) {
        if per_frame_s >= 0.0 && per_frame_s.is_finite() {
            if self.sr_latency_history.len() == self.window {
                self.sr_latency_history.pop_front();
            }
            self.sr_latency_history.push_back(per_frame_s);
        }
    }

    /// Slides both windows, advances the buffer by the evolution law and
    /// records the chosen ratio.
    pub fn update_after_chunk(&mut self, outcome: &ChunkOutcome) {
        self.record_throughput(outcome.throughput_bps);
        self.record_sr_latency(outcome.sr_latency_per_frame_s);
        self.buffer_level_s = next_buffer(
            self.buffer_level_s,
            outcome.download_s + outcome.sr_s,
            outcome.chunk_duration_s,
        );
        self.last_ratio = Some(outcome.ratio);
    }
}

/// Measurements of one finished chunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkOutcome {
    pub ratio: f64,
    pub throughput_bps: f64,
    pub sr_latency_per_frame_s: f64,
    pub download_s: f64,
    pub sr_s: f64,
    pub chunk_duration_s: f64,
}

/// Upcoming chunk as seen by the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkForecast {
    pub frames: usize,
    pub duration_s: f64,
    /// Bytes on the wire when fetched at each candidate ratio (same order as
    /// the candidate list).
    pub bytes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub fetch_ratio: f64,
    pub sr_ratio: f64,
    /// Objective value of the chosen sequence; `None` before any
    /// throughput sample exists.
    pub predicted_qoe: Option<f64>,
    /// Predicted stall of the first chunk.
    pub predicted_stall_s: Option<f64>,
}

struct Search<'a> {
    forecasts: &'a [ChunkForecast],
    quality: Vec<f64>,
    throughput: f64,
    sr_latency: f64,
    weights: QoeWeights,
    best_total: f64,
    best_first: usize,
}

impl Search<'_> {
    fn dfs(&mut self, depth: usize, buffer: f64, prev_q: f64, acc: f64, first: usize) {
        let fc = &self.forecasts[depth];
        let last = depth + 1 == self.forecasts.len();
        // Highest ratio first so that exact ties keep the higher sequence.
        for c in (0..self.quality.len()).rev() {
            let busy = chunk_busy_time(fc.bytes[c], self.throughput, self.sr_latency, fc.frames);
            let stall = (busy - buffer).max(0.0);
            let q = self.quality[c];
            let terms = qoe_terms_from_quality(q, prev_q, stall, &self.weights);
            let total = acc + terms.total;
            let first = if depth == 0 { c } else { first };
            if last {
                if total > self.best_total {
                    self.best_total = total;
                    self.best_first = first;
                }
            } else {
                let b = next_buffer(buffer, busy, fc.duration_s);
                self.dfs(depth + 1, b, q, total, first);
            }
        }
    }
}

/// Exhaustive receding-horizon search. Without a throughput sample the
/// lowest ratio is returned.
pub fn mpc_select(
    state: &AbrState,
    forecasts: &[ChunkForecast],
    config: &AbrConfig,
) -> Result<Decision> {
    let candidates = config.ratios.candidates()?;
    if forecasts.is_empty() {
        return Err(Error::Abr("no chunks to decide on".into()));
    }
    for fc in forecasts {
        if fc.bytes.len() != candidates.len() {
            return Err(Error::Abr(format!(
                "forecast has {} byte sizes for {} candidates",
                fc.bytes.len(),
                candidates.len()
            )));
        }
    }
    let horizon = &forecasts[..forecasts.len().min(config.horizon.max(1))];
    let sr_latency = state.sr_latency_estimate();
    let Some(throughput) = state.throughput_estimate() else {
        let r = candidates[0];
        return Ok(Decision {
            fetch_ratio: r,
            sr_ratio: 1.0 / r,
            predicted_qoe: None,
            predicted_stall_s: None,
        });
    };
    let quality: Vec<f64> = candidates.iter().map(|&r| config.curve.eval(r)).collect();
    let prev_q = match state.last_ratio {
        Some(r) => config.curve.eval(r),
        // No previous chunk: no variation is charged for the first choice.
        None => f64::NAN,
    };
    let mut search = Search {
        forecasts: horizon,
        quality,
        throughput,
        sr_latency,
        weights: config.weights,
        best_total: f64::NEG_INFINITY,
        best_first: candidates.len() - 1,
    };
    if prev_q.is_nan() {
        // Evaluate the first level with prev = self, then recurse normally.
        let fc = &horizon[0];
        let last = horizon.len() == 1;
        for c in (0..candidates.len()).rev() {
            let busy = chunk_busy_time(fc.bytes[c], throughput, sr_latency, fc.frames);
            let stall = (busy - state.buffer_level_s).max(0.0);
            let q = search.quality[c];
            let total = qoe_terms_from_quality(q, q, stall, &config.weights).total;
            if last {
                if total > search.best_total {
                    search.best_total = total;
                    search.best_first = c;
                }
            } else {
                let b = next_buffer(state.buffer_level_s, busy, fc.duration_s);
                search.dfs(1, b, q, total, c);
            }
        }
    } else {
        search.dfs(0, state.buffer_level_s, prev_q, 0.0, candidates.len() - 1);
    }
    let c = search.best_first;
    let r = candidates[c];
    let fc = &horizon[0];
    let stall = (chunk_busy_time(fc.bytes[c], throughput, sr_latency, fc.frames)
        - state.buffer_level_s)
        .max(0.0);
    Ok(Decision {
        fetch_ratio: r,
        sr_ratio: 1.0 / r,
        predicted_qoe: Some(search.best_total),
        predicted_stall_s: Some(stall),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fc(full_bytes: f64, candidates: &[f64]) -> ChunkForecast {
        ChunkForecast {
            frames: 30,
            duration_s: 1.0,
            bytes: candidates.iter().map(|r| r * full_bytes).collect(),
        }
    }

    #[test]
    fn harmonic_mean_cases() {
        assert_eq!(estimate_throughput(&[10e6, 10e6, 10e6], 5).unwrap(), 10e6);
        assert!((estimate_throughput(&[10e6, 40e6], 5).unwrap() - 16e6).abs() < 1e-6);
        let spike = [1.0, 1.0, 1.0, 100.0];
        assert!(estimate_throughput(&spike, 5).unwrap() < 103.0 / 4.0);
        assert!(estimate_throughput(&[], 5).is_err());
        assert!(estimate_throughput(&[1.0, 0.0], 5).is_err());
        // Only the last `window` samples count.
        assert_eq!(estimate_throughput(&[1.0, 5.0, 5.0], 2).unwrap(), 5.0);
    }

    #[test]
    fn qoe_arithmetic() {
        let w = QoeWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            drop_penalty_multiplier: 3.0,
        };
        let curve = QualityCurve::Table {
            points: vec![(0.5, 0.8), (1.0, 1.0)],
        };
        let v = qoe_chunk(0.5, 1.0, 0.2, &w, &curve).unwrap();
        assert!((v - (0.8 - 0.2 * 3.0 - 0.2)).abs() < 1e-12);
        let same = qoe_chunk(0.5, 0.5, 0.0, &w, &curve).unwrap();
        assert_eq!(same, 0.8);
        let rise = qoe_terms(1.0, 0.5, 0.0, &w, &curve).unwrap().variation;
        let drop = qoe_terms(0.5, 1.0, 0.0, &w, &curve).unwrap().variation;
        assert!(drop >= rise);
        assert!(qoe_chunk(0.0, 1.0, 0.0, &w, &curve).is_err());
    }

    #[test]
    fn log_curve_shape() {
        let c = QualityCurve::default();
        assert!((c.eval(1.0) - 1.0).abs() < 1e-15);
        let mut last = 0.0;
        for i in 1..=100 {
            let q = c.eval(i as f64 / 100.0);
            assert!(q >= last);
            last = q;
        }
    }

    #[test]
    fn stall_cases() {
        assert_eq!(predict_stall(1e6, 8e6, 0.01, 30, 100.0).unwrap(), 0.0);
        // 0.5 s download + 0.1 s SR with an empty buffer.
        let s = predict_stall(0.5e6, 8e6, 0.1 / 30.0, 30, 0.0).unwrap();
        assert!((s - 0.6).abs() < 1e-12);
        assert_eq!(next_buffer(0.2, 1.0, 1.0), 1.0);
    }

    #[test]
    fn grid_candidates() {
        let c = RatioSet::default().candidates().unwrap();
        assert_eq!(c.len(), 91);
        assert_eq!(c[0], 0.1);
        assert_eq!(*c.last().unwrap(), 1.0);
        assert!(RatioSet::Grid { r_min: 0.1, step: 0.0 }.candidates().is_err());
        assert_eq!(RatioSet::ladder().candidates().unwrap().len(), 5);
    }

    #[test]
    fn abundant_and_starved() {
        let config = AbrConfig::default();
        let cands = config.ratios.candidates().unwrap();
        let forecasts = vec![fc(4.5e6, &cands); 3];
        let mut state = AbrState::new(&config);
        state.buffer_level_s = 2.0;
        state.last_ratio = Some(0.5);
        state.record_throughput(10e9);
        assert_eq!(mpc_select(&state, &forecasts, &config).unwrap().fetch_ratio, 1.0);
        let mut starved = AbrState::new(&config);
        starved.last_ratio = Some(0.5);
        starved.record_throughput(1e3);
        assert_eq!(mpc_select(&starved, &forecasts, &config).unwrap().fetch_ratio, 0.1);
    }

    #[test]
    fn window_eviction_and_buffer_clamp() {
        let config = AbrConfig {
            window: 2,
            ..AbrConfig::default()
        };
        let mut s = AbrState::new(&config);
        for (i, bps) in [1e6, 2e6, 3e6].into_iter().enumerate() {
            s.update_after_chunk(&ChunkOutcome {
                ratio: 0.5,
                throughput_bps: bps,
                sr_latency_per_frame_s: 0.01 * i as f64,
                download_s: 5.0,
                sr_s: 1.0,
                chunk_duration_s: 1.0,
            });
            assert!(s.buffer_level_s >= 0.0);
        }
        assert_eq!(s.throughput_history, VecDeque::from(vec![2e6, 3e6]));
        assert_eq!(s.buffer_level_s, 1.0);
        assert!((s.sr_latency_estimate() - 0.015).abs() < 1e-12);
    }
}
