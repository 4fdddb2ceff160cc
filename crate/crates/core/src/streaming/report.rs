use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::abr::{qoe_terms, AbrConfig, QoeTerms};
use crate::error::Result;

use super::playback::{recompute_stall, PlayEvent};
use super::shaper::ShaperConfig;
use super::simulate::SrLatencyModel;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Simulated,
    Live,
}

/// Settings that shaped a session, echoed into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub abr: AbrConfig,
    pub shaper: Option<ShaperConfig>,
    pub max_buffer_s: f64,
    pub count_lut_bytes: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr_model: Option<SrLatencyModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub index: u32,
    pub ratio: f64,
    pub sr_ratio: f64,
    /// Response bytes on the wire.
    pub bytes: u64,
    pub fetched_points: u64,
    pub played_points: u64,
    pub full_points: u64,
    /// Controller's view of the buffer when it decided.
    pub buffer_s: f64,
    pub request_s: f64,
    pub download_s: f64,
    pub throughput_bps: f64,
    pub sr_s: f64,
    pub ready_s: f64,
    pub deadline_s: Option<f64>,
    pub play_start_s: f64,
    pub stall_s: f64,
    pub qoe_terms: QoeTerms,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_crc32c: Option<u32>,
}

impl ChunkRecord {
    pub fn play_event(&self) -> PlayEvent {
        PlayEvent {
            index: self.index,
            ready_s: self.ready_s,
            deadline_s: self.deadline_s,
            play_start_s: self.play_start_s,
            stall_s: self.stall_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub qoe: f64,
    pub quality: f64,
    pub variation: f64,
    pub stall_penalty: f64,
    pub stall_s: f64,
    pub stall_events: u32,
    pub startup_delay_s: f64,
    pub mean_ratio: f64,
    pub payload_bytes: u64,
    pub manifest_bytes: u64,
    pub lut_bytes: u64,
    /// Everything downloaded: chunk responses, the manifest and, when
    /// counted, the refinement table.
    pub total_bytes: u64,
    pub session_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub schema_version: u32,
    pub mode: SessionMode,
    pub video_id: String,
    pub chunk_duration_s: f64,
    pub config: ReportConfig,
    pub chunks: Vec<ChunkRecord>,
    pub totals: Totals,
}

/// Per-chunk QoE terms from the decision log: the first chunk is charged no
/// variation.
pub fn chunk_qoe(config: &AbrConfig, ratios: &[f64], stalls: &[f64]) -> Result<Vec<QoeTerms>> {
    let curve = &config.curve;
    ratios
        .iter()
        .zip(stalls)
        .enumerate()
        .map(|(i, (&r, &s))| {
            let prev = if i == 0 { r } else { ratios[i - 1] };
            qoe_terms(r, prev, s, &config.weights, curve)
        })
        .collect()
}

impl SessionReport {
    /// Assembles a report; totals are derived from the chunk records.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        mode: SessionMode,
        video_id: &str,
        chunk_duration_s: f64,
        config: ReportConfig,
        mut chunks: Vec<ChunkRecord>,
        manifest_bytes: u64,
        lut_bytes: u64,
        session_s: f64,
    ) -> Result<Self> {
        let ratios: Vec<f64> = chunks.iter().map(|c| c.ratio).collect();
        let stalls: Vec<f64> = chunks.iter().map(|c| c.stall_s).collect();
        let terms = chunk_qoe(&config.abr, &ratios, &stalls)?;
        let mut t = Totals {
            qoe: 0.0,
            quality: 0.0,
            variation: 0.0,
            stall_penalty: 0.0,
            stall_s: 0.0,
            stall_events: 0,
            startup_delay_s: chunks.first().map_or(0.0, |c| c.ready_s),
            mean_ratio: 0.0,
            payload_bytes: 0,
            manifest_bytes,
            lut_bytes: if config.count_lut_bytes { lut_bytes } else { 0 },
            total_bytes: 0,
            session_s,
        };
        for (c, q) in chunks.iter_mut().zip(terms) {
            c.qoe_terms = q;
            t.qoe += q.total;
            t.quality += q.quality;
            t.variation += q.variation;
            t.stall_penalty += q.stall;
            t.stall_s += c.stall_s;
            t.stall_events += (c.stall_s > 0.0) as u32;
            t.mean_ratio += c.ratio;
            t.payload_bytes += c.bytes;
        }
        if !chunks.is_empty() {
            t.mean_ratio /= chunks.len() as f64;
        }
        t.total_bytes = t.payload_bytes + t.manifest_bytes + t.lut_bytes;
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            mode,
            video_id: video_id.to_string(),
            chunk_duration_s,
            config,
            chunks,
            totals: t,
        })
    }

    /// QoE recomputed from ratios and stalls alone.
    pub fn recompute_qoe(&self) -> Result<f64> {
        let ratios: Vec<f64> = self.chunks.iter().map(|c| c.ratio).collect();
        let stalls: Vec<f64> = self.chunks.iter().map(|c| c.stall_s).collect();
        Ok(chunk_qoe(&self.config.abr, &ratios, &stalls)?
            .iter()
            .fold(0.0, |acc, q| acc + q.total))
    }

    /// Total stall recomputed from ready times and deadlines.
    pub fn recompute_stall(&self) -> f64 {
        let events: Vec<PlayEvent> = self.chunks.iter().map(ChunkRecord::play_event).collect();
        recompute_stall(&events)
    }

    /// Fields that do not depend on wall-clock timing: decisions, bytes,
    /// point counts, checksums and the number of stalls.
    pub fn canonical(&self) -> serde_json::Value {
        json!({
            "video_id": self.video_id,
            "chunks": self.chunks.iter().map(|c| json!({
                "index": c.index,
                "ratio": c.ratio,
                "bytes": c.bytes,
                "fetched_points": c.fetched_points,
                "played_points": c.played_points,
                "payload_crc32c": c.payload_crc32c,
            })).collect::<Vec<_>>(),
            "stall_events": self.totals.stall_events,
            "total_bytes": self.totals.total_bytes,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
