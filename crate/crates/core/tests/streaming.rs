use std::io::{Cursor, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use proptest::prelude::*;

use pcsr_core::streaming::wire::{decode_frames, encode_frames, Request, Response, RESPONSE_OVERHEAD_BYTES};
use pcsr_core::streaming::{
    client_session, fetch_chunk, fetch_manifest, simulate, synthetic_manifest, write_synthetic_video,
    Connection, NetworkTrace, Server, ServerConfig, ServerHandle, SessionConfig, SessionReport,
    ShapedStream, ShaperConfig, SrLatencyModel, TokenBucket, VideoStore,
};
use pcsr_core::{Error, PointCloud, SrPipeline};

fn video(chunks: u32, frames: u32, dur: f64, points: u32, seed: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_video(dir.path(), "test-video", chunks, frames, dur, points, seed).unwrap();
    dir
}

fn start(dir: &tempfile::TempDir, cache_chunks: usize) -> (Arc<Server>, ServerHandle) {
    let store = VideoStore::open(dir.path(), None).unwrap();
    let server = Arc::new(Server::new(store, ServerConfig { cache_chunks }).unwrap());
    let handle = server.clone().spawn("127.0.0.1:0").unwrap();
    (server, handle)
}

fn connect(handle: &ServerHandle) -> Connection {
    Connection::connect(&handle.addr().to_string(), None, Instant::now()).unwrap()
}

fn arb_cloud() -> impl Strategy<Value = PointCloud> {
    (prop::collection::vec(any::<[f32; 3]>().prop_filter("finite", |p| p.iter().all(|v| v.is_finite())), 0..200), any::<bool>())
        .prop_flat_map(|(pos, colored)| {
            let n = pos.len();
            (Just(pos), prop::collection::vec(any::<[u8; 3]>(), n..=n), Just(colored))
        })
        .prop_map(|(pos, colors, colored)| PointCloud::new(pos, colored.then_some(colors)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_blocks_roundtrip_bit_exact(frames in prop::collection::vec(arb_cloud(), 1..5)) {
        let payload = encode_frames(&frames);
        let back = decode_frames(&payload, frames.len() as u16).unwrap();
        prop_assert_eq!(back.len(), frames.len());
        for (a, b) in frames.iter().zip(&back) {
            let bits = |c: &PointCloud| c.positions().iter().flat_map(|p| p.map(f32::to_bits)).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
            prop_assert_eq!(a.colors(), b.colors());
        }
        if !payload.is_empty() {
            prop_assert!(decode_frames(&payload[..payload.len() - 1], frames.len() as u16).is_err());
        }
    }

    #[test]
    fn requests_roundtrip(chunk_id in any::<u32>(), steps in 1u32..=10_000) {
        let req = Request::Chunk { chunk_id, ratio: steps as f32 / 10_000.0 };
        let bytes = req.encode().unwrap();
        prop_assert_eq!(Request::decode(&bytes).unwrap(), req);
    }
}

#[test]
fn full_ratio_returns_the_stored_frames() {
    let dir = video(3, 4, 0.5, 600, 1);
    let (server, _h) = start(&dir, 8);
    let mut conn = connect(&_h);
    let (manifest, _) = fetch_manifest(&mut conn).unwrap();
    assert_eq!(&manifest, server.store().manifest());
    for chunk in 0..3 {
        let got = fetch_chunk(&mut conn, chunk, 1.0).unwrap();
        assert_eq!(got.frames.len(), 4);
        for (f, frame) in got.frames.iter().enumerate() {
            assert_eq!(frame, &server.store().load_frame(chunk, f as u32).unwrap());
        }
        assert_eq!(got.crc32c, crc32c::crc32c(&encode_frames(&got.frames)));
    }
}

#[test]
fn identical_requests_are_byte_identical_with_and_without_cache() {
    let dir = video(2, 3, 0.5, 800, 2);
    let (cached, _a) = start(&dir, 4);
    let (uncached, _b) = start(&dir, 0);
    for ratio in [0.1, 0.37, 0.5, 0.999] {
        let x = cached.encode_chunk(1, ratio).unwrap();
        let y = cached.encode_chunk(1, ratio).unwrap();
        let z = uncached.encode_chunk(1, ratio).unwrap();
        let w = uncached.encode_chunk(1, ratio).unwrap();
        assert_eq!(x.payload, y.payload);
        assert_eq!(x.payload, z.payload);
        assert_eq!(z.payload, w.payload);
    }
}

#[test]
fn half_ratio_halves_every_frame() {
    let dir = video(1, 3, 1.0, 1000, 3);
    let (server, h) = start(&dir, 4);
    let mut conn = connect(&h);
    let got = fetch_chunk(&mut conn, 0, 0.5).unwrap();
    for (f, frame) in got.frames.iter().enumerate() {
        let full = server.store().manifest().frame_points[0][f] as f64;
        assert_eq!(frame.len(), (0.5 * full).round() as usize);
    }
}

#[test]
fn unknown_chunk_is_a_remote_error_and_the_connection_survives() {
    let dir = video(2, 2, 0.5, 300, 4);
    let (_s, h) = start(&dir, 4);
    let mut conn = connect(&h);
    assert!(matches!(fetch_chunk(&mut conn, 99, 0.5), Err(Error::Remote { .. })));
    assert!(fetch_chunk(&mut conn, 1, 0.5).is_ok());
}

/// Reads from a canned byte stream and swallows writes.
struct Canned(Cursor<Vec<u8>>);

impl Read for Canned {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        self.0.read(buf)
    }
}

impl Write for Canned {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn truncated_or_corrupted_streams_surface_no_frames() {
    let frames = vec![pcsr_core::synth::video_frame(50, 0, 1)];
    let mut wire = Vec::new();
    Response::ok(7, 1, encode_frames(&frames)).write_to(&mut wire).unwrap();
    let ok = fetch_chunk(&mut Connection::new(Box::new(Canned(Cursor::new(wire.clone()))), Instant::now()), 7, 1.0);
    assert_eq!(ok.unwrap().frames, frames);
    for cut in [3, 21, wire.len() / 2, wire.len() - 1] {
        let conn = Canned(Cursor::new(wire[..cut].to_vec()));
        let r = fetch_chunk(&mut Connection::new(Box::new(conn), Instant::now()), 7, 1.0);
        assert!(r.is_err(), "cut at {cut}");
    }
    let mut flipped = wire.clone();
    flipped[30] ^= 1;
    let r = fetch_chunk(&mut Connection::new(Box::new(Canned(Cursor::new(flipped))), Instant::now()), 7, 1.0);
    assert!(matches!(r, Err(Error::Checksum { .. })));
}

#[test]
fn concurrent_connections_are_independent() {
    let dir = video(4, 3, 0.5, 700, 5);
    let (server, h) = start(&dir, 2);
    let addr = h.addr().to_string();
    let results: Vec<_> = thread::scope(|s| {
        let jobs: Vec<_> = [(0u32, 0.3f64), (3, 0.8)]
            .into_iter()
            .map(|(chunk, ratio)| {
                let addr = addr.clone();
                s.spawn(move || {
                    let mut conn = Connection::connect(&addr, None, Instant::now()).unwrap();
                    (chunk, ratio, fetch_chunk(&mut conn, chunk, ratio).unwrap())
                })
            })
            .collect();
        jobs.into_iter().map(|j| j.join().unwrap()).collect()
    });
    for (chunk, ratio, got) in results {
        assert_eq!(got.crc32c, server.encode_chunk(chunk, ratio).unwrap().crc32c);
    }
}

#[test]
fn shaped_ten_megabytes_at_fifty_mbps_takes_about_1_6_s() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let total = 10_000_000usize;
    let writer = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let block = vec![0xA5u8; 1 << 16];
        let mut left = total;
        while left > 0 {
            let n = left.min(block.len());
            s.write_all(&block[..n]).unwrap();
            left -= n;
        }
    });
    let tcp = TcpStream::connect(addr).unwrap();
    let trace = Arc::new(NetworkTrace::constant(50.0).unwrap());
    let cfg = ShaperConfig { rtt_s: 0.0, ..ShaperConfig::default() };
    let t = Instant::now();
    let mut shaped = ShapedStream::new(tcp, trace, cfg, t);
    let mut buf = vec![0u8; 1 << 16];
    let mut got = 0;
    while got < total {
        let n = shaped.read(&mut buf).unwrap();
        assert!(n > 0);
        got += n;
    }
    let elapsed = t.elapsed().as_secs_f64();
    writer.join().unwrap();
    assert!((1.6 * 0.95..=1.6 * 1.05).contains(&elapsed), "{elapsed}");
}

#[test]
fn goodput_windows_straddle_a_bandwidth_step() {
    let trace = Arc::new(NetworkTrace::new(&[(0.0, 100e6), (5.0, 20e6)]).unwrap());
    let mut bucket = TokenBucket::new(trace, 1500);
    let mut now = 0.0;
    let mut windows = Vec::new();
    while now < 9.0 {
        let end = bucket.deliver(now, 1_000_000);
        windows.push((now, end, 8e6 / (end - now)));
        now = end;
    }
    for &(a, b, g) in &windows {
        if b <= 5.0 {
            assert!((g - 100e6).abs() < 1e3, "{a}..{b}: {g}");
        } else if a >= 5.0 {
            assert!((g - 20e6).abs() < 1e3, "{a}..{b}: {g}");
        } else {
            assert!(g < 100e6 && g > 20e6);
        }
    }
    assert!(windows.iter().any(|&(a, b, _)| a < 5.0 && b > 5.0));
}

#[test]
fn zero_bandwidth_interval_pauses_then_completes() {
    let trace = Arc::new(NetworkTrace::new(&[(0.0, 50e6), (1.0, 0.0), (2.0, 50e6)]).unwrap());
    let mut bucket = TokenBucket::new(trace, 0);
    // 80 Mbit: 50 in the first second, nothing in the second, 30 more.
    let end = bucket.deliver(0.0, 10_000_000);
    assert!((end - 2.6).abs() < 1e-9, "{end}");
}

fn small_manifest() -> pcsr_core::streaming::ChunkManifest {
    synthetic_manifest("sim", 40, 30, 1.0, 20_000, 0.05, 9).unwrap()
}

#[test]
fn simulation_is_bit_identical_across_runs() {
    let trace = pcsr_core::streaming::lte_like(40.0, 15.0, 120.0, 1.0, 5).unwrap();
    let m = small_manifest();
    let cfg = SessionConfig::default();
    let a = simulate(&trace, &m, &cfg, &SrLatencyModel::default()).unwrap().to_json().unwrap();
    let b = simulate(&trace, &m, &cfg, &SrLatencyModel::default()).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn ample_bandwidth_reaches_full_density_without_stalls() {
    let r = simulate(&NetworkTrace::constant(100.0).unwrap(), &small_manifest(), &SessionConfig::default(), &SrLatencyModel::default()).unwrap();
    assert_eq!(r.totals.stall_s, 0.0);
    assert_eq!(r.totals.stall_events, 0);
    for c in r.chunks.iter().skip(5) {
        assert_eq!(c.ratio, 1.0, "chunk {}", c.index);
    }
}

/// Playback clock rebuilt from the ready times alone.
fn playback_oracle(ready: &[f64], dur: f64) -> Vec<f64> {
    let mut stalls = Vec::with_capacity(ready.len());
    let mut play_end: Option<f64> = None;
    for &t in ready {
        match play_end {
            None => {
                stalls.push(0.0);
                play_end = Some(t + dur);
            }
            Some(deadline) => {
                stalls.push((t - deadline).max(0.0));
                play_end = Some(t.max(deadline) + dur);
            }
        }
    }
    stalls
}

fn check_bookkeeping(r: &SessionReport) {
    let ready: Vec<f64> = r.chunks.iter().map(|c| c.ready_s).collect();
    let oracle = playback_oracle(&ready, r.chunk_duration_s);
    for (c, s) in r.chunks.iter().zip(&oracle) {
        assert!((c.stall_s - s).abs() < 1e-9, "chunk {}: {} vs {}", c.index, c.stall_s, s);
    }
    let total: f64 = oracle.iter().sum();
    assert!((r.totals.stall_s - total).abs() < 1e-9);
    assert_eq!(r.recompute_qoe().unwrap().to_bits(), r.totals.qoe.to_bits());
    assert_eq!(r.totals.payload_bytes, r.chunks.iter().map(|c| c.bytes).sum::<u64>());
    assert_eq!(r.totals.total_bytes, r.totals.payload_bytes + r.totals.manifest_bytes + r.totals.lut_bytes);
}

#[test]
fn a_dead_network_stalls_for_about_the_outage() {
    // 100 Mbps for 20 s, then nothing until the trace repeats at 40 s.
    let trace = NetworkTrace::new(&[(0.0, 100e6), (20.0, 0.0)]).unwrap();
    let cfg = SessionConfig::default();
    let r = simulate(&trace, &small_manifest(), &cfg, &SrLatencyModel::default()).unwrap();
    check_bookkeeping(&r);
    let outage = 20.0;
    // At most the buffer cap plus one chunk in flight and one in SR can be
    // ahead of the playhead when the network dies.
    let lower = outage - cfg.max_buffer_s - 2.0 * r.chunk_duration_s;
    assert!(r.totals.stall_s >= lower && r.totals.stall_s <= outage + 1.0, "{}", r.totals.stall_s);
    assert!(r.totals.stall_events >= 1);
}

#[test]
fn shipped_trace_sessions_keep_their_books() {
    let data = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let m = pcsr_core::streaming::ChunkManifest::load(data.join("manifests/dress_like.json")).unwrap();
    for t in ["lte_32.5mbps.csv", "lte_97.3mbps.csv"] {
        let trace = NetworkTrace::load(data.join("traces").join(t)).unwrap();
        check_bookkeeping(&simulate(&trace, &m, &SessionConfig::default(), &SrLatencyModel::default()).unwrap());
    }
}

#[test]
fn live_session_restores_full_density_and_agrees_with_simulation() {
    let dir = video(16, 5, 0.25, 2000, 6);
    let (server, h) = start(&dir, 8);
    let manifest = server.store().manifest().clone();
    let trace = NetworkTrace::constant(50.0).unwrap();
    let cfg = SessionConfig { seed: 3, ..SessionConfig::default() };
    let counts = Mutex::new(Vec::new());
    let mut sink = |chunk: u32, frames: &[PointCloud]| {
        counts.lock().unwrap().push((chunk, frames.iter().map(PointCloud::len).collect::<Vec<_>>()));
    };
    let live = client_session(&h.addr().to_string(), Some(&trace), &cfg, &SrPipeline::default(), Some(&mut sink)).unwrap();
    check_bookkeeping(&live);

    let counts = counts.into_inner().unwrap();
    assert_eq!(counts.len(), 16);
    for (chunk, frames) in counts {
        for (f, n) in frames.into_iter().enumerate() {
            let full = manifest.frame_points[chunk as usize][f] as usize;
            assert!(n.abs_diff(full) <= 1, "chunk {chunk} frame {f}: {n} vs {full}");
        }
    }
    let wire: u64 = live
        .chunks
        .iter()
        .map(|c| server.encode_chunk(c.index, c.ratio).unwrap().payload.len() as u64 + RESPONSE_OVERHEAD_BYTES)
        .sum();
    assert_eq!(live.totals.payload_bytes, wire);

    let frame = server.store().load_frame(0, 0).unwrap();
    let model = SrLatencyModel::calibrate(&SrPipeline::default(), &frame, &[0.1, 0.5, 1.0], 3, 1).unwrap();
    let sim = simulate(&trace, &manifest, &cfg, &model).unwrap();
    let (a, b) = (live.totals.qoe, sim.totals.qoe);
    assert!((a - b).abs() < 0.05 * b.abs(), "live {a} vs simulated {b}");
}
