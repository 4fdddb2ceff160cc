//! Chunked volumetric streaming: manifest, wire protocol, trace-driven
//! shaping, a threaded server, the live client and a virtual-time simulator.

pub mod client;
pub mod manifest;
pub mod playback;
pub mod report;
pub mod server;
pub mod shaper;
pub mod simulate;
pub mod trace;
pub mod video;
pub mod wire;

pub use client::{client_session, fetch_chunk, fetch_manifest, Connection, FetchedChunk};
pub use manifest::{synthetic_manifest, ChunkManifest, LutDescriptor};
pub use playback::{recompute_stall, PlayEvent, PlaybackBuffer};
pub use report::{ChunkRecord, SessionMode, SessionReport, Totals};
pub use server::{Server, ServerConfig, ServerHandle};
pub use shaper::{ShapedStream, ShaperConfig, TokenBucket};
pub use simulate::{simulate, SessionConfig, SrLatencyModel};
pub use trace::{lte_like, NetworkTrace};
pub use video::{write_synthetic_video, VideoStore};
