//! Byte-level request/response framing and the per-frame payload codec.
//! Everything is little-endian.

use std::io::{self, Read, Write};

use crate::cloud::{Color, PointCloud, Position};
use crate::error::{Error, Result};

pub const REQUEST_MAGIC: [u8; 4] = *b"PCRQ";
pub const RESPONSE_MAGIC: [u8; 4] = *b"PCRS";
pub const VERSION: u16 = 1;
pub const REQUEST_BYTES: usize = 20;
pub const RESPONSE_HEADER_BYTES: usize = 21;
/// Header plus trailing checksum.
pub const RESPONSE_OVERHEAD_BYTES: u64 = RESPONSE_HEADER_BYTES as u64 + 4;
/// Point count (u32) and flags (u8) ahead of each frame.
pub const FRAME_HEADER_BYTES: u64 = 5;
/// Responses larger than this are rejected before allocation.
pub const MAX_PAYLOAD_BYTES: u64 = 1 << 32;

const FLAG_COLOR: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    BadRequest = 1,
    UnknownChunk = 2,
    ServerError = 3,
}

impl Status {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Status::Ok,
            1 => Status::BadRequest,
            2 => Status::UnknownChunk,
            3 => Status::ServerError,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Request {
    Manifest,
    Chunk { chunk_id: u32, ratio: f32 },
}

/// Ratio on the 1e-4 grid the server keys seeds and caches by:
/// `(steps, steps / 1e4)` with steps in `1..=10000`.
pub fn quantize_ratio(ratio: f64) -> (u32, f64) {
    let steps = (ratio * 1e4).round().clamp(1.0, 1e4) as u32;
    (steps, steps as f64 / 1e4)
}

fn check_ratio(ratio: f32) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Protocol(format!("ratio {ratio} not in (0, 1]")))
    }
}

impl Request {
    pub fn encode(&self) -> Result<[u8; REQUEST_BYTES]> {
        let (kind, chunk_id, ratio) = match *self {
            Request::Manifest => (0u8, 0u32, 1.0f32),
            Request::Chunk { chunk_id, ratio } => {
                check_ratio(ratio)?;
                (1, chunk_id, ratio)
            }
        };
        let mut b = [0u8; REQUEST_BYTES];
        b[0..4].copy_from_slice(&REQUEST_MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6] = kind;
        b[7..11].copy_from_slice(&chunk_id.to_le_bytes());
        b[11..15].copy_from_slice(&ratio.to_le_bytes());
        Ok(b)
    }

    pub fn decode(b: &[u8; REQUEST_BYTES]) -> Result<Self> {
        if b[0..4] != REQUEST_MAGIC {
            return Err(Error::Protocol("bad request magic".into()));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(Error::Protocol(format!("unsupported version {version}")));
        }
        let chunk_id = u32::from_le_bytes(b[7..11].try_into().unwrap());
        let ratio = f32::from_le_bytes(b[11..15].try_into().unwrap());
        match b[6] {
            0 => Ok(Request::Manifest),
            1 => {
                check_ratio(ratio)?;
                Ok(Request::Chunk { chunk_id, ratio })
            }
            t => Err(Error::Protocol(format!("unknown request type {t}"))),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.encode()?)?;
        w.flush()?;
        Ok(())
    }

    /// `Ok(None)` on a clean end of stream before the first byte.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Self>> {
        let mut b = [0u8; REQUEST_BYTES];
        let mut got = 0;
        while got < REQUEST_BYTES {
            match r.read(&mut b[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => {
                    return Err(Error::Protocol(format!(
                        "truncated request: {got} of {REQUEST_BYTES} bytes"
                    )))
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        Self::decode(&b).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: Status,
    pub chunk_id: u32,
    pub frame_count: u16,
    pub payload: Vec<u8>,
    pub crc32c: u32,
}

impl Response {
    pub fn ok(chunk_id: u32, frame_count: u16, payload: Vec<u8>) -> Self {
        let crc32c = crc32c::crc32c(&payload);
        Self {
            status: Status::Ok,
            chunk_id,
            frame_count,
            payload,
            crc32c,
        }
    }

    pub fn error(status: Status, chunk_id: u32, message: &str) -> Self {
        let payload = message.as_bytes().to_vec();
        let crc32c = crc32c::crc32c(&payload);
        Self {
            status,
            chunk_id,
            frame_count: 0,
            payload,
            crc32c,
        }
    }

    pub fn wire_len(&self) -> u64 {
        RESPONSE_OVERHEAD_BYTES + self.payload.len() as u64
    }

    pub fn header_bytes(&self) -> [u8; RESPONSE_HEADER_BYTES] {
        response_header(self.status, self.chunk_id, self.frame_count, self.payload.len() as u64)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        write_response_parts(w, &self.header_bytes(), &self.payload, self.crc32c)
    }

    /// Reads a full response and verifies its checksum. Nothing is returned
    /// unless every byte arrived intact.
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut h = [0u8; RESPONSE_HEADER_BYTES];
        read_exact_framed(r, &mut h, "response header")?;
        if h[0..4] != RESPONSE_MAGIC {
            return Err(Error::Protocol("bad response magic".into()));
        }
        let version = u16::from_le_bytes([h[4], h[5]]);
        if version != VERSION {
            return Err(Error::Protocol(format!("unsupported version {version}")));
        }
        let status = Status::from_u8(h[6])
            .ok_or_else(|| Error::Protocol(format!("unknown status {}", h[6])))?;
        let chunk_id = u32::from_le_bytes(h[7..11].try_into().unwrap());
        let frame_count = u16::from_le_bytes([h[11], h[12]]);
        let len = u64::from_le_bytes(h[13..21].try_into().unwrap());
        if len > MAX_PAYLOAD_BYTES {
            return Err(Error::Protocol(format!("payload length {len} exceeds limit")));
        }
        let mut payload = vec![0u8; len as usize];
        read_exact_framed(r, &mut payload, "payload")?;
        let mut c = [0u8; 4];
        read_exact_framed(r, &mut c, "checksum")?;
        let expected = u32::from_le_bytes(c);
        let computed = crc32c::crc32c(&payload);
        if expected != computed {
            return Err(Error::Checksum { expected, computed });
        }
        Ok(Self {
            status,
            chunk_id,
            frame_count,
            payload,
            crc32c: expected,
        })
    }

    /// Turns a non-ok status into [`Error::Remote`].
    pub fn into_ok(self) -> Result<Self> {
        if self.status == Status::Ok {
            Ok(self)
        } else {
            Err(Error::Remote {
                status: self.status as u8,
                message: String::from_utf8_lossy(&self.payload).into_owned(),
            })
        }
    }
}

pub fn response_header(
    status: Status,
    chunk_id: u32,
    frame_count: u16,
    payload_len: u64,
) -> [u8; RESPONSE_HEADER_BYTES] {
    let mut h = [0u8; RESPONSE_HEADER_BYTES];
    h[0..4].copy_from_slice(&RESPONSE_MAGIC);
    h[4..6].copy_from_slice(&VERSION.to_le_bytes());
    h[6] = status as u8;
    h[7..11].copy_from_slice(&chunk_id.to_le_bytes());
    h[11..13].copy_from_slice(&frame_count.to_le_bytes());
    h[13..21].copy_from_slice(&payload_len.to_le_bytes());
    h
}

pub fn write_response_parts(
    w: &mut impl Write,
    header: &[u8; RESPONSE_HEADER_BYTES],
    payload: &[u8],
    crc: u32,
) -> Result<()> {
    w.write_all(header)?;
    w.write_all(payload)?;
    w.write_all(&crc.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_exact_framed(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(Error::Protocol(format!(
                    "truncated {what}: {got} of {} bytes",
                    buf.len()
                )))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Size of one encoded frame.
pub fn frame_block_len(points: usize, colored: bool) -> usize {
    FRAME_HEADER_BYTES as usize + points * if colored { 15 } else { 12 }
}

/// Appends one frame: count, flags, all positions, then all colors.
pub fn encode_frame_into(cloud: &PointCloud, out: &mut Vec<u8>) {
    out.reserve(frame_block_len(cloud.len(), cloud.has_colors()));
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    out.push(if cloud.has_colors() { FLAG_COLOR } else { 0 });
    for p in cloud.positions() {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(colors) = cloud.colors() {
        for c in colors {
            out.extend_from_slice(c);
        }
    }
}

pub fn encode_frames(frames: &[PointCloud]) -> Vec<u8> {
    let mut out = Vec::with_capacity(
        frames
            .iter()
            .map(|f| frame_block_len(f.len(), f.has_colors()))
            .sum(),
    );
    for f in frames {
        encode_frame_into(f, &mut out);
    }
    out
}

/// Decodes exactly `frame_count` frames spanning the whole payload.
pub fn decode_frames(payload: &[u8], frame_count: u16) -> Result<Vec<PointCloud>> {
    let mut frames = Vec::with_capacity(frame_count as usize);
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        let end = at
            .checked_add(n)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| {
                Error::Protocol(format!(
                    "frame data truncated at byte {} (need {n} more)",
                    *at
                ))
            })?;
        let s = &payload[*at..end];
        *at = end;
        Ok(s)
    };
    for f in 0..frame_count {
        let head = take(&mut at, FRAME_HEADER_BYTES as usize)?;
        let n = u32::from_le_bytes(head[0..4].try_into().unwrap()) as usize;
        let flags = head[4];
        if flags & !FLAG_COLOR != 0 {
            return Err(Error::Protocol(format!("frame {f}: unknown flags {flags:#x}")));
        }
        let raw = take(&mut at, n.checked_mul(12).ok_or_else(|| {
            Error::Protocol(format!("frame {f}: point count {n} overflows"))
        })?)?;
        let positions: Vec<Position> = raw
            .chunks_exact(12)
            .map(|c| {
                [
                    f32::from_le_bytes(c[0..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..8].try_into().unwrap()),
                    f32::from_le_bytes(c[8..12].try_into().unwrap()),
                ]
            })
            .collect();
        let colors = if flags & FLAG_COLOR != 0 {
            let raw = take(&mut at, n * 3)?;
            Some(raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]] as Color).collect())
        } else {
            None
        };
        let cloud = PointCloud::new(positions, colors)
            .map_err(|e| Error::Protocol(format!("frame {f}: {e}")))?;
        frames.push(cloud);
    }
    if at != payload.len() {
        return Err(Error::Protocol(format!(
            "{} trailing bytes after {frame_count} frames",
            payload.len() - at
        )));
    }
    Ok(frames)
}
