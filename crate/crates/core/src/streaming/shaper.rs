use std::io::{self, Read, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::trace::NetworkTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShaperConfig {
    /// Added round-trip time per request.
    pub rtt_s: f64,
    /// Token-bucket depth.
    pub burst_bytes: u64,
}

impl Default for ShaperConfig {
    fn default() -> Self {
        Self {
            rtt_s: 0.010,
            burst_bytes: 1500,
        }
    }
}

/// Token bucket refilled by a bandwidth trace. Times are seconds from the
/// session start, on the trace's clock. The bucket starts empty.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    trace: Arc<NetworkTrace>,
    capacity_bits: f64,
    tokens_bits: f64,
    clock: f64,
}

impl TokenBucket {
    pub fn new(trace: Arc<NetworkTrace>, burst_bytes: u64) -> Self {
        Self {
            trace,
            capacity_bits: burst_bytes as f64 * 8.0,
            tokens_bits: 0.0,
            clock: 0.0,
        }
    }

    pub fn trace(&self) -> &NetworkTrace {
        &self.trace
    }

    /// Offers `bytes` at `now` and returns when the last one is delivered.
    /// Transfers queue behind each other.
    pub fn deliver(&mut self, now: f64, bytes: u64) -> f64 {
        let start = now.max(self.clock);
        if start > self.clock {
            let refill = self.trace.bits_between(self.clock, start);
            self.tokens_bits = (self.tokens_bits + refill).min(self.capacity_bits);
        }
        self.clock = start;
        let need = bytes as f64 * 8.0;
        if self.tokens_bits >= need {
            self.tokens_bits -= need;
            return start;
        }
        let rest = need - self.tokens_bits;
        self.tokens_bits = 0.0;
        self.clock = self.trace.transfer_end(start, rest);
        self.clock
    }
}

/// Paces the read side of a byte stream with a [`TokenBucket`]. Every write
/// (a request) delays the following response by the configured RTT.
pub struct ShapedStream<S> {
    inner: S,
    bucket: TokenBucket,
    rtt_s: f64,
    epoch: Instant,
    response_start: Option<f64>,
    max_read: usize,
}

impl<S> ShapedStream<S> {
    pub fn new(inner: S, trace: Arc<NetworkTrace>, config: ShaperConfig, epoch: Instant) -> Self {
        Self {
            inner,
            bucket: TokenBucket::new(trace, config.burst_bytes),
            rtt_s: config.rtt_s,
            epoch,
            response_start: None,
            max_read: 16 * 1024,
        }
    }

    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    fn sleep_until(&self, t: f64) {
        let now = self.now();
        if t > now {
            std::thread::sleep(Duration::from_secs_f64(t - now));
        }
    }

    pub fn get_ref(&self) -> &S {
        &self.inner
    }
}

impl<S: Read> Read for ShapedStream<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let cap = buf.len().min(self.max_read);
        let n = self.inner.read(&mut buf[..cap])?;
        if n == 0 {
            return Ok(0);
        }
        let now = self.now();
        let start = self.response_start.take().map_or(now, |s| s.max(now));
        let done = self.bucket.deliver(start, n as u64);
        self.sleep_until(done);
        Ok(n)
    }
}

impl<S: Write> Write for ShapedStream<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.response_start = Some(self.now() + self.rtt_s);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_serializes_and_refills() {
        let trace = Arc::new(NetworkTrace::constant(8.0).unwrap());
        let mut b = TokenBucket::new(trace, 1000);
        // 1 MB at 8 Mbps from an empty bucket.
        assert!((b.deliver(0.0, 1_000_000) - 1.0).abs() < 1e-9);
        // Queued behind the first transfer.
        assert!((b.deliver(0.5, 1_000_000) - 2.0).abs() < 1e-9);
        // After an idle second the bucket holds its full 1000 bytes.
        assert_eq!(b.deliver(3.0, 1000), 3.0);
        assert!((b.deliver(3.0, 1000) - 3.001).abs() < 1e-9);
    }

    #[test]
    fn shaped_read_takes_modelled_time() {
        let trace = Arc::new(NetworkTrace::constant(40.0).unwrap());
        let data = vec![7u8; 250_000];
        let mut s = ShapedStream::new(
            io::Cursor::new(data),
            trace,
            ShaperConfig {
                rtt_s: 0.01,
                burst_bytes: 0,
            },
            Instant::now(),
        );
        let t = Instant::now();
        s.write_all(b"").ok();
        s.response_start = Some(s.now() + 0.01);
        let mut out = Vec::new();
        s.read_to_end(&mut out).unwrap();
        let el = t.elapsed().as_secs_f64();
        assert_eq!(out.len(), 250_000);
        assert!((0.06..0.2).contains(&el), "{el}");
    }
}
