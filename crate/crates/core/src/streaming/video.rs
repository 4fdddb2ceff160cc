use std::path::{Path, PathBuf};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::ply::{load_ply, save_ply, PlyFormat};
use crate::synth;

use super::manifest::{synthetic_manifest, ChunkManifest};

pub const MANIFEST_FILE: &str = "manifest.json";

/// A video on disk: `manifest.json` plus one directory of PLY frames per
/// chunk (`chunk_00000/frame_000.ply`, ...).
#[derive(Debug, Clone)]
pub struct VideoStore {
    dir: PathBuf,
    manifest: ChunkManifest,
}

pub fn frame_path(dir: &Path, chunk: u32, frame: u32) -> PathBuf {
    dir.join(format!("chunk_{chunk:05}")).join(format!("frame_{frame:03}.ply"))
}

impl VideoStore {
    /// Opens `dir`, reading the manifest from `manifest` or `dir/manifest.json`.
    pub fn open(dir: impl AsRef<Path>, manifest: Option<&Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = manifest.map_or_else(|| dir.join(MANIFEST_FILE), Path::to_path_buf);
        let manifest = ChunkManifest::load(&path)?;
        Ok(Self { dir, manifest })
    }

    pub fn manifest(&self) -> &ChunkManifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Loads one frame and checks it against the manifest.
    pub fn load_frame(&self, chunk: u32, frame: u32) -> Result<PointCloud> {
        let m = &self.manifest;
        if chunk >= m.chunk_count || frame >= m.frames_per_chunk {
            return Err(Error::invalid(format!("no frame {frame} in chunk {chunk}")));
        }
        let cloud = load_ply(frame_path(&self.dir, chunk, frame))?;
        let expected = m.frame_points[chunk as usize][frame as usize] as usize;
        if cloud.len() != expected || cloud.has_colors() != m.has_color() {
            return Err(Error::Manifest(format!(
                "chunk {chunk} frame {frame}: {} points (colors: {}), manifest says {expected} (colors: {})",
                cloud.len(),
                cloud.has_colors(),
                m.has_color()
            )));
        }
        Ok(cloud)
    }
}

/// Writes a synthetic colored video and returns its manifest.
pub fn write_synthetic_video(
    dir: impl AsRef<Path>,
    video_id: &str,
    chunk_count: u32,
    frames_per_chunk: u32,
    chunk_duration_s: f64,
    points: u32,
    seed: u64,
) -> Result<ChunkManifest> {
    let dir = dir.as_ref();
    let manifest = synthetic_manifest(
        video_id,
        chunk_count,
        frames_per_chunk,
        chunk_duration_s,
        points,
        0.05,
        seed,
    )?;
    for c in 0..chunk_count {
        std::fs::create_dir_all(dir.join(format!("chunk_{c:05}")))?;
        for f in 0..frames_per_chunk {
            let n = manifest.frame_points[c as usize][f as usize] as usize;
            let index = (c * frames_per_chunk + f) as usize;
            let cloud = synth::video_frame(n, index, seed);
            save_ply(&cloud, frame_path(dir, c, f), PlyFormat::BinaryLittleEndian)?;
        }
    }
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
