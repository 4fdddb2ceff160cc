use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::abr::{mpc_select, AbrConfig, AbrState, QoeTerms};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::pipeline::SrPipeline;
use crate::sampling::{downsample_count, random_downsample};

use super::manifest::ChunkManifest;
use super::playback::PlaybackBuffer;
use super::report::{ChunkRecord, ReportConfig, SessionMode, SessionReport};
use super::shaper::{ShaperConfig, TokenBucket};
use super::trace::NetworkTrace;
use super::wire::{quantize_ratio, RESPONSE_OVERHEAD_BYTES};

/// Client session settings shared by live and simulated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub abr: AbrConfig,
    pub shaper: ShaperConfig,
    /// Fetching pauses while this much content is ahead of playback.
    pub max_buffer_s: f64,
    pub count_lut_bytes: bool,
    /// Size of the refinement table, charged when `count_lut_bytes` is set.
    pub lut_bytes: u64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            abr: AbrConfig::default(),
            shaper: ShaperConfig::default(),
            max_buffer_s: 5.0,
            count_lut_bytes: false,
            lut_bytes: 0,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.abr.validate()?;
        if !(self.max_buffer_s > 0.0) || !(self.shaper.rtt_s >= 0.0) {
            return Err(Error::invalid("max buffer must be positive and RTT non-negative"));
        }
        Ok(())
    }

    /// Controller settings with the manifest's quality curve, if it ships one.
    pub fn abr_for(&self, manifest: &ChunkManifest) -> AbrConfig {
        let mut abr = self.abr.clone();
        if let Some(curve) = &manifest.quality_curve {
            abr.curve = curve.clone();
        }
        abr
    }

    /// Chunks allowed ahead of the one playing.
    pub fn lookahead_chunks(&self, chunk_duration_s: f64) -> usize {
        ((self.max_buffer_s / chunk_duration_s + 1e-9).floor() as usize).max(1)
    }

    pub(crate) fn report_config(&self, abr: AbrConfig, shaped: bool) -> ReportConfig {
        ReportConfig {
            abr,
            shaper: shaped.then_some(self.shaper),
            max_buffer_s: self.max_buffer_s,
            count_lut_bytes: self.count_lut_bytes,
            seed: self.seed,
            sr_model: None,
        }
    }
}

/// Client super-resolution time per frame: a fixed cost plus a cost per
/// generated point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrLatencyModel {
    pub per_frame_s: f64,
    pub per_new_point_s: f64,
}

impl Default for SrLatencyModel {
    fn default() -> Self {
        Self {
            per_frame_s: 0.02,
            per_new_point_s: 0.0,
        }
    }
}

impl SrLatencyModel {
    pub fn frame_s(&self, fetched: u64, full: u64) -> f64 {
        self.per_frame_s + self.per_new_point_s * full.saturating_sub(fetched) as f64
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            per_frame_s: self.per_frame_s * factor,
            per_new_point_s: self.per_new_point_s * factor,
        }
    }

    /// Fits the model to wall-clock measurements of `pipeline` restoring
    /// `frame` from each ratio in `ratios` (best of `repeats` runs each).
    pub fn calibrate(
        pipeline: &SrPipeline,
        frame: &PointCloud,
        ratios: &[f64],
        repeats: usize,
        seed: u64,
    ) -> Result<Self> {
        if ratios.len() < 2 {
            return Err(Error::invalid("calibration needs at least two ratios"));
        }
        let full = frame.len();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &r in ratios {
            let low = random_downsample(frame, r, seed)?;
            let mut best = f64::INFINITY;
            for _ in 0..repeats.max(1) {
                let t = Instant::now();
                pipeline.upsample_to(&low, full, seed)?;
                best = best.min(t.elapsed().as_secs_f64());
            }
            xs.push((full - low.len()) as f64);
            ys.push(best);
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
        Ok(Self {
            per_frame_s: (my - slope * mx).max(0.0),
            per_new_point_s: slope,
        })
    }
}

/// Virtual-time session: the same controller, bucket and playback logic as a
/// live client, with transfer times integrated from the trace and SR time
/// taken from `latency`.
pub fn simulate(
    trace: &NetworkTrace,
    manifest: &ChunkManifest,
    config: &SessionConfig,
    latency: &SrLatencyModel,
) -> Result<SessionReport> {
    manifest.validate()?;
    config.validate()?;
    let abr = config.abr_for(manifest);
    let candidates = abr.ratios.candidates()?;
    let mut bucket = TokenBucket::new(Arc::new(trace.clone()), config.shaper.burst_bytes);
    let rtt = config.shaper.rtt_s;
    let dur = manifest.chunk_duration_s;
    let frames = manifest.frames_per_chunk as u64;
    let lookahead = config.lookahead_chunks(dur);

    let manifest_bytes = RESPONSE_OVERHEAD_BYTES + manifest.to_json()?.len() as u64;
    let mut link_free = bucket.deliver(rtt, manifest_bytes);

    let mut state = AbrState::new(&abr);
    let mut playback: PlaybackBuffer<()> = PlaybackBuffer::new(dur);
    let mut sr_free = 0.0f64;
    // (sr_end, per-frame latency) not yet seen by the controller.
    let mut sr_done: Vec<(f64, f64)> = Vec::new();
    let mut fed = 0usize;
    let mut records = Vec::with_capacity(manifest.chunk_count as usize);

    for chunk in 0..manifest.chunk_count {
        let mut request = link_free;
        if chunk as usize >= lookahead {
            request = request.max(playback.events()[chunk as usize - lookahead].play_start_s);
        }
        while fed < sr_done.len() && sr_done[fed].0 <= request {
            state.record_sr_latency(sr_done[fed].1);
            fed += 1;
        }
        let chunk_sr = frames as f64 * state.sr_latency_estimate();
        state.buffer_level_s = playback.controller_level(request, chunk as usize, chunk_sr);
        let forecasts = manifest.forecasts(chunk, abr.horizon, &candidates);
        let decision = mpc_select(&state, &forecasts, &abr)?;
        let r = decision.fetch_ratio;

        let bytes = manifest.chunk_bytes(chunk, r);
        let arrived = bucket.deliver(request + rtt, bytes);
        let download_s = arrived - request;
        let throughput = 8.0 * bytes as f64 / download_s;
        state.record_throughput(throughput);
        link_free = arrived;

        let mut fetched_points = 0;
        let mut sr_s = 0.0;
        let wire_ratio = quantize_ratio(r).1;
        for &full in &manifest.frame_points[chunk as usize] {
            let fetched = downsample_count(full as usize, wire_ratio) as u64;
            fetched_points += fetched;
            sr_s += latency.frame_s(fetched, full as u64);
        }
        let sr_start = arrived.max(sr_free);
        let ready = sr_start + sr_s;
        sr_free = ready;
        sr_done.push((ready, sr_s / frames as f64));
        let ev = playback.push(chunk, ready, ());
        state.last_ratio = Some(r);

        records.push(ChunkRecord {
            index: chunk,
            ratio: r,
            sr_ratio: decision.sr_ratio,
            bytes,
            fetched_points,
            played_points: manifest.full_points(chunk),
            full_points: manifest.full_points(chunk),
            buffer_s: state.buffer_level_s,
            request_s: request,
            download_s,
            throughput_bps: throughput,
            sr_s,
            ready_s: ready,
            deadline_s: ev.deadline_s,
            play_start_s: ev.play_start_s,
            stall_s: ev.stall_s,
            qoe_terms: QoeTerms::default(),
            payload_crc32c: None,
        });
    }
    let mut rc = config.report_config(abr, true);
    rc.sr_model = Some(*latency);
    SessionReport::build(
        SessionMode::Simulated,
        &manifest.video_id,
        dur,
        rc,
        records,
        manifest_bytes,
        config.lut_bytes,
        sr_free,
    )
}
