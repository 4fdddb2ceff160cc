use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abr::{ChunkForecast, QualityCurve};
use crate::error::{Error, Result};
use crate::sampling::downsample_count;

use super::wire::{quantize_ratio, FRAME_HEADER_BYTES, RESPONSE_OVERHEAD_BYTES};

/// Table the client needs for refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutDescriptor {
    pub rf_size: u32,
    pub bins: u32,
    pub provenance: String,
}

/// Streaming metadata for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkManifest {
    pub video_id: String,
    pub chunk_count: u32,
    pub chunk_duration_s: f64,
    pub frames_per_chunk: u32,
    /// Full point count of every frame, indexed `[chunk][frame]`.
    pub frame_points: Vec<Vec<u32>>,
    /// 12 for positions only, 15 with colors.
    pub bytes_per_point: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_curve: Option<QualityCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lut: Option<LutDescriptor>,
}

impl ChunkManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Manifest(m));
        if self.video_id.is_empty() {
            return bad("empty video id".into());
        }
        if self.chunk_count == 0 || self.frames_per_chunk == 0 {
            return bad("chunk count and frames per chunk must be positive".into());
        }
        if !(self.chunk_duration_s > 0.0) || !self.chunk_duration_s.is_finite() {
            return bad(format!("chunk duration {} must be positive", self.chunk_duration_s));
        }
        if self.frames_per_chunk > u16::MAX as u32 {
            return bad("frames per chunk exceeds the wire limit".into());
        }
        if self.frame_points.len() != self.chunk_count as usize {
            return bad(format!(
                "{} point-count rows for {} chunks",
                self.frame_points.len(),
                self.chunk_count
            ));
        }
        for (c, row) in self.frame_points.iter().enumerate() {
            if row.len() != self.frames_per_chunk as usize {
                return bad(format!("chunk {c} lists {} frames", row.len()));
            }
            if row.contains(&0) {
                return bad(format!("chunk {c} has an empty frame"));
            }
        }
        if self.bytes_per_point != 12 && self.bytes_per_point != 15 {
            return bad(format!("bytes per point {} must be 12 or 15", self.bytes_per_point));
        }
        if let Some(curve) = &self.quality_curve {
            curve.validate().map_err(|e| Error::Manifest(e.to_string()))?;
        }
        Ok(())
    }

    pub fn has_color(&self) -> bool {
        self.bytes_per_point == 15
    }

    pub fn video_duration_s(&self) -> f64 {
        self.chunk_duration_s * self.chunk_count as f64
    }

    pub fn full_points(&self, chunk: u32) -> u64 {
        self.frame_points[chunk as usize].iter().map(|&n| n as u64).sum()
    }

    /// Points the server sends for `chunk` at `ratio`.
    pub fn fetched_points(&self, chunk: u32, ratio: f64) -> u64 {
        let r = quantize_ratio(ratio).1;
        self.frame_points[chunk as usize]
            .iter()
            .map(|&n| downsample_count(n as usize, r) as u64)
            .sum()
    }

    /// Exact size of the chunk response on the wire.
    pub fn chunk_bytes(&self, chunk: u32, ratio: f64) -> u64 {
        let frames = self.frames_per_chunk as u64;
        RESPONSE_OVERHEAD_BYTES
            + frames * FRAME_HEADER_BYTES
            + self.fetched_points(chunk, ratio) * self.bytes_per_point as u64
    }

    /// Controller view of chunks `start..start + horizon` (clipped at the end).
    pub fn forecasts(&self, start: u32, horizon: usize, candidates: &[f64]) -> Vec<ChunkForecast> {
        let end = (start as usize + horizon).min(self.chunk_count as usize);
        (start as usize..end)
            .map(|c| ChunkForecast {
                frames: self.frames_per_chunk as usize,
                duration_s: self.chunk_duration_s,
                bytes: candidates
                    .iter()
                    .map(|&r| self.chunk_bytes(c as u32, r) as f64)
                    .collect(),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// A manifest whose frame sizes wander by about ±`jitter` around `points`.
pub fn synthetic_manifest(
    video_id: &str,
    chunk_count: u32,
    frames_per_chunk: u32,
    chunk_duration_s: f64,
    points: u32,
    jitter: f64,
    seed: u64,
) -> Result<ChunkManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame_points = (0..chunk_count)
        .map(|_| {
            (0..frames_per_chunk)
                .map(|_| {
                    let f = 1.0 + jitter * rng.gen_range(-1.0..=1.0);
                    ((points as f64 * f).round() as u32).max(1)
                })
                .collect()
        })
        .collect();
    let m = ChunkManifest {
        video_id: video_id.to_string(),
        chunk_count,
        chunk_duration_s,
        frames_per_chunk,
        frame_points,
        bytes_per_point: 15,
        quality_curve: None,
        lut: None,
    };
    m.validate()?;
    Ok(m)
}
