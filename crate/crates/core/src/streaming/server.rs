use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use lru::LruCache;

use crate::error::{Error, Result};
use crate::sampling::random_downsample;

use super::video::VideoStore;
use super::wire::{
    encode_frame_into, quantize_ratio, response_header, write_response_parts, Request, Response,
    Status,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerConfig {
    /// Encoded chunks kept in memory; 0 disables the cache.
    pub cache_chunks: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { cache_chunks: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedChunk {
    pub frame_count: u16,
    pub payload: Vec<u8>,
    pub crc32c: u32,
}

/// Encoded chunks keyed by (chunk, ratio steps).
type ChunkCache = LruCache<(u32, u32), Arc<EncodedChunk>>;

/// 64-bit FNV-1a.
pub fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Downsampling seed of one served frame.
pub fn frame_seed(video_id: &str, chunk: u32, frame: u32, ratio_steps: u32) -> u64 {
    fnv1a64(&[
        video_id.as_bytes(),
        &chunk.to_le_bytes(),
        &frame.to_le_bytes(),
        &ratio_steps.to_le_bytes(),
    ])
}

/// Serves a [`VideoStore`], downsampling chunks on demand.
pub struct Server {
    store: VideoStore,
    manifest_json: Vec<u8>,
    cache: Option<Mutex<ChunkCache>>,
}

impl Server {
    pub fn new(store: VideoStore, config: ServerConfig) -> Result<Self> {
        let manifest_json = store.manifest().to_json()?.into_bytes();
        let cache = NonZeroUsize::new(config.cache_chunks).map(|n| Mutex::new(LruCache::new(n)));
        Ok(Self {
            store,
            manifest_json,
            cache,
        })
    }

    pub fn store(&self) -> &VideoStore {
        &self.store
    }

    /// Payload for `chunk` at `ratio` (snapped to the 1e-4 grid).
    pub fn encode_chunk(&self, chunk: u32, ratio: f64) -> Result<Arc<EncodedChunk>> {
        let m = self.store.manifest();
        if chunk >= m.chunk_count {
            return Err(Error::invalid(format!("unknown chunk {chunk}")));
        }
        let (steps, r) = quantize_ratio(ratio);
        let key = (chunk, steps);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.lock().unwrap().get(&key) {
                return Ok(Arc::clone(hit));
            }
        }
        let mut payload = Vec::new();
        for f in 0..m.frames_per_chunk {
            let full = self.store.load_frame(chunk, f)?;
            let low = random_downsample(&full, r, frame_seed(&m.video_id, chunk, f, steps))?;
            encode_frame_into(&low, &mut payload);
        }
        let encoded = Arc::new(EncodedChunk {
            frame_count: m.frames_per_chunk as u16,
            crc32c: crc32c::crc32c(&payload),
            payload,
        });
        if let Some(cache) = &self.cache {
            cache.lock().unwrap().put(key, Arc::clone(&encoded));
        }
        Ok(encoded)
    }

    /// Answers requests until the peer closes the stream. A malformed
    /// request gets an error response and ends the session.
    pub fn handle_connection<S: Read + Write>(&self, stream: &mut S) -> Result<()> {
        loop {
            let req = match Request::read_from(stream) {
                Ok(Some(r)) => r,
                Ok(None) => return Ok(()),
                Err(e @ Error::Protocol(_)) => {
                    Response::error(Status::BadRequest, 0, &e.to_string()).write_to(stream)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            match req {
                Request::Manifest => {
                    let payload = &self.manifest_json;
                    let h = response_header(Status::Ok, 0, 0, payload.len() as u64);
                    write_response_parts(stream, &h, payload, crc32c::crc32c(payload))?;
                }
                Request::Chunk { chunk_id, ratio } => {
                    if chunk_id >= self.store.manifest().chunk_count {
                        let msg = format!("unknown chunk {chunk_id}");
                        Response::error(Status::UnknownChunk, chunk_id, &msg).write_to(stream)?;
                        continue;
                    }
                    match self.encode_chunk(chunk_id, ratio as f64) {
                        Ok(c) => {
                            let h = response_header(
                                Status::Ok,
                                chunk_id,
                                c.frame_count,
                                c.payload.len() as u64,
                            );
                            write_response_parts(stream, &h, &c.payload, c.crc32c)?;
                        }
                        Err(e) => {
                            log::error!("chunk {chunk_id}: {e}");
                            Response::error(Status::ServerError, chunk_id, &e.to_string())
                                .write_to(stream)?;
                        }
                    }
                }
            }
        }
    }

    /// Accepts connections on a background thread, one thread per session.
    pub fn spawn(self: Arc<Self>, bind: &str) -> Result<ServerHandle> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || self.accept_loop(listener, &flag));
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    /// Serves on the calling thread until the process ends.
    pub fn serve(self: Arc<Self>, bind: &str) -> Result<()> {
        let listener = TcpListener::bind(bind)?;
        log::info!("serving {} on {}", self.store.manifest().video_id, listener.local_addr()?);
        self.accept_loop(listener, &AtomicBool::new(false));
        Ok(())
    }

    fn accept_loop(self: Arc<Self>, listener: TcpListener, stop: &AtomicBool) {
        for conn in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let mut stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let server = Arc::clone(&self);
            std::thread::spawn(move || {
                let _ = stream.set_nodelay(true);
                let peer = stream.peer_addr().ok();
                if let Err(e) = server.handle_connection(&mut stream) {
                    log::warn!("session {peer:?} ended: {e}");
                }
            });
        }
    }
}

/// Running server; shut down on drop.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        if let Some(t) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect(self.addr);
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
