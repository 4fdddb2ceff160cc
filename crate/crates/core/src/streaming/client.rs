use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::abr::{mpc_select, AbrState, QoeTerms};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::pipeline::SrPipeline;

use super::manifest::ChunkManifest;
use super::playback::PlaybackBuffer;
use super::report::{ChunkRecord, SessionMode, SessionReport};
use super::server::fnv1a64;
use super::shaper::{ShapedStream, ShaperConfig};
use super::simulate::SessionConfig;
use super::trace::NetworkTrace;
use super::wire::{decode_frames, Request, Response};

pub trait Transport: Read + Write + Send {}
impl<T: Read + Write + Send> Transport for T {}

/// A client connection; times are seconds since `epoch`.
pub struct Connection {
    stream: Box<dyn Transport>,
    epoch: Instant,
    bytes_received: u64,
}

impl Connection {
    pub fn new(stream: Box<dyn Transport>, epoch: Instant) -> Self {
        Self {
            stream,
            epoch,
            bytes_received: 0,
        }
    }

    /// Opens a TCP connection, optionally shaped by `trace`.
    pub fn connect(
        addr: &str,
        shaping: Option<(Arc<NetworkTrace>, ShaperConfig)>,
        epoch: Instant,
    ) -> Result<Self> {
        let tcp = TcpStream::connect(addr)?;
        tcp.set_nodelay(true)?;
        let stream: Box<dyn Transport> = match shaping {
            Some((trace, cfg)) => Box::new(ShapedStream::new(tcp, trace, cfg, epoch)),
            None => Box::new(tcp),
        };
        Ok(Self::new(stream, epoch))
    }

    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    /// Bytes of every response read so far.
    pub fn bytes_received(&self) -> u64 {
        self.bytes_received
    }

    fn exchange(&mut self, req: Request) -> Result<Response> {
        req.write_to(&mut self.stream)?;
        let resp = Response::read_from(&mut self.stream)?;
        self.bytes_received += resp.wire_len();
        resp.into_ok()
    }
}

/// Fetches and validates the manifest; also returns the response size.
pub fn fetch_manifest(conn: &mut Connection) -> Result<(ChunkManifest, u64)> {
    let resp = conn.exchange(Request::Manifest)?;
    let text = std::str::from_utf8(&resp.payload)
        .map_err(|e| Error::Protocol(format!("manifest is not UTF-8: {e}")))?;
    Ok((ChunkManifest::from_json(text)?, resp.wire_len()))
}

#[derive(Debug, Clone)]
pub struct FetchedChunk {
    pub chunk_id: u32,
    pub frames: Vec<PointCloud>,
    /// Response size on the wire.
    pub bytes: u64,
    pub crc32c: u32,
    pub request_s: f64,
    pub download_s: f64,
    pub throughput_bps: f64,
}

pub fn fetch_chunk(conn: &mut Connection, chunk_id: u32, ratio: f64) -> Result<FetchedChunk> {
    let request_s = conn.now();
    let resp = conn.exchange(Request::Chunk {
        chunk_id,
        ratio: ratio as f32,
    })?;
    let download_s = (conn.now() - request_s).max(1e-9);
    if resp.chunk_id != chunk_id {
        return Err(Error::Protocol(format!(
            "asked for chunk {chunk_id}, got {}",
            resp.chunk_id
        )));
    }
    let frames = decode_frames(&resp.payload, resp.frame_count)?;
    let bytes = resp.wire_len();
    Ok(FetchedChunk {
        chunk_id,
        frames,
        bytes,
        crc32c: resp.crc32c,
        request_s,
        download_s,
        throughput_bps: 8.0 * bytes as f64 / download_s,
    })
}

/// Upsampling seed of one received frame.
pub fn sr_seed(session_seed: u64, chunk: u32, frame: u32) -> u64 {
    fnv1a64(&[&session_seed.to_le_bytes(), &chunk.to_le_bytes(), &frame.to_le_bytes()])
}

struct Job {
    chunk: u32,
    frames: Vec<PointCloud>,
}

struct SrResult {
    sr_s: f64,
    played_points: u64,
}

#[derive(Default)]
struct Shared {
    playback: Option<PlaybackBuffer<()>>,
    /// `(finish time, per-frame latency)` in chunk order.
    sr_samples: Vec<(f64, f64)>,
    results: Vec<SrResult>,
    error: Option<Error>,
}

/// Receives every chunk's restored frames as soon as they are ready.
pub type FrameSink<'a> = dyn FnMut(u32, &[PointCloud]) + Send + 'a;

/// Streams a whole video from `addr`. Fetching, super-resolution and the
/// playback clock run concurrently: the fetch loop picks ratios and downloads,
/// a worker restores each chunk to the manifest's point counts, and playback
/// timing follows from when chunks become ready.
pub fn client_session(
    addr: &str,
    trace: Option<&NetworkTrace>,
    config: &SessionConfig,
    pipeline: &SrPipeline,
    sink: Option<&mut FrameSink<'_>>,
) -> Result<SessionReport> {
    config.validate()?;
    let epoch = Instant::now();
    let shaping = trace.map(|t| (Arc::new(t.clone()), config.shaper));
    let mut conn = Connection::connect(addr, shaping, epoch)?;
    let (manifest, manifest_bytes) = fetch_manifest(&mut conn)?;
    let abr = config.abr_for(&manifest);
    let candidates = abr.ratios.candidates()?;
    let dur = manifest.chunk_duration_s;
    let lookahead = config.lookahead_chunks(dur);
    let chunk_count = manifest.chunk_count;

    let shared = Arc::new((
        Mutex::new(Shared {
            playback: Some(PlaybackBuffer::new(dur)),
            ..Shared::default()
        }),
        Condvar::new(),
    ));
    let (tx, rx) = mpsc::channel::<Job>();
    let mut fetched: Vec<(FetchedChunk, f64, f64, f64)> = Vec::new();

    let fetch_result: Result<()> = std::thread::scope(|scope| {
        let worker_shared = Arc::clone(&shared);
        let manifest_ref = &manifest;
        let mut sink = sink;
        scope.spawn(move || {
            let (lock, cv) = &*worker_shared;
            for job in rx {
                let t = Instant::now();
                let full = &manifest_ref.frame_points[job.chunk as usize];
                let restored: Result<Vec<PointCloud>> = job
                    .frames
                    .iter()
                    .enumerate()
                    .map(|(f, low)| {
                        let seed = sr_seed(config.seed, job.chunk, f as u32);
                        Ok(pipeline.upsample_to(low, full[f] as usize, seed)?.cloud)
                    })
                    .collect();
                let sr_s = t.elapsed().as_secs_f64();
                let restored = match restored {
                    Ok(r) => r,
                    Err(e) => {
                        lock.lock().unwrap().error = Some(e);
                        cv.notify_all();
                        return;
                    }
                };
                if let Some(sink) = sink.as_mut() {
                    sink(job.chunk, &restored);
                }
                let ready = epoch.elapsed().as_secs_f64();
                let mut g = lock.lock().unwrap();
                g.playback.as_mut().unwrap().push(job.chunk, ready, ());
                g.sr_samples.push((ready, sr_s / job.frames.len().max(1) as f64));
                g.results.push(SrResult {
                    sr_s,
                    played_points: restored.iter().map(|c| c.len() as u64).sum(),
                });
                drop(g);
                cv.notify_all();
            }
        });

        let (lock, cv) = &*shared;
        let mut state = AbrState::new(&abr);
        let mut fed = 0usize;
        for chunk in 0..chunk_count {
            if chunk as usize >= lookahead {
                let gate = chunk as usize - lookahead;
                let mut g = lock.lock().unwrap();
                while g.playback.as_ref().unwrap().ready_count() <= gate && g.error.is_none() {
                    g = cv.wait(g).unwrap();
                }
                if g.error.is_some() {
                    break;
                }
                let start = g.playback.as_ref().unwrap().events()[gate].play_start_s;
                drop(g);
                let wait = start - conn.now();
                if wait > 0.0 {
                    std::thread::sleep(Duration::from_secs_f64(wait));
                }
            }
            let now = conn.now();
            {
                let g = lock.lock().unwrap();
                if g.error.is_some() {
                    break;
                }
                while fed < g.sr_samples.len() && g.sr_samples[fed].0 <= now {
                    state.record_sr_latency(g.sr_samples[fed].1);
                    fed += 1;
                }
                let chunk_sr = manifest.frames_per_chunk as f64 * state.sr_latency_estimate();
                state.buffer_level_s = g
                    .playback
                    .as_ref()
                    .unwrap()
                    .controller_level(now, chunk as usize, chunk_sr);
            }
            let forecasts = manifest.forecasts(chunk, abr.horizon, &candidates);
            let decision = mpc_select(&state, &forecasts, &abr)?;
            let r = decision.fetch_ratio;
            let mut got = fetch_chunk(&mut conn, chunk, r)?;
            state.record_throughput(got.throughput_bps);
            state.last_ratio = Some(r);
            let frames = std::mem::take(&mut got.frames);
            let fetched_points: u64 = frames.iter().map(|c| c.len() as u64).sum();
            fetched.push((got, r, state.buffer_level_s, fetched_points as f64));
            if tx.send(Job { chunk, frames }).is_err() {
                break;
            }
        }
        drop(tx);
        Ok(())
    });
    fetch_result?;

    let (lock, _) = &*shared;
    let mut g = lock.lock().unwrap();
    if let Some(e) = g.error.take() {
        return Err(e);
    }
    let playback = g.playback.take().unwrap();
    let events = playback.events();
    let mut records = Vec::with_capacity(fetched.len());
    for (i, (got, r, buffer, fetched_points)) in fetched.into_iter().enumerate() {
        let ev = events[i];
        let res = &g.results[i];
        records.push(ChunkRecord {
            index: got.chunk_id,
            ratio: r,
            sr_ratio: 1.0 / r,
            bytes: got.bytes,
            fetched_points: fetched_points as u64,
            played_points: res.played_points,
            full_points: manifest.full_points(got.chunk_id),
            buffer_s: buffer,
            request_s: got.request_s,
            download_s: got.download_s,
            throughput_bps: got.throughput_bps,
            sr_s: res.sr_s,
            ready_s: ev.ready_s,
            deadline_s: ev.deadline_s,
            play_start_s: ev.play_start_s,
            stall_s: ev.stall_s,
            qoe_terms: QoeTerms::default(),
            payload_crc32c: Some(got.crc32c),
        });
    }
    let session_s = events.last().map_or(0.0, |e| e.ready_s);
    SessionReport::build(
        SessionMode::Live,
        &manifest.video_id,
        dur,
        config.report_config(abr, trace.is_some()),
        records,
        manifest_bytes,
        config.lut_bytes,
        session_s,
    )
}
