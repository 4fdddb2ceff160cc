use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// When a chunk became playable and when it actually played.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayEvent {
    pub index: u32,
    pub ready_s: f64,
    /// When the previous chunk finished playing; `None` for the first chunk,
    /// whose wait is startup delay rather than a stall.
    pub deadline_s: Option<f64>,
    pub play_start_s: f64,
    pub stall_s: f64,
}

/// Queue of decoded, upsampled chunks in index order together with the
/// playback clock that drains it. Playback starts as soon as the first chunk
/// is ready and pauses whenever the next chunk is late.
#[derive(Debug, Clone)]
pub struct PlaybackBuffer<T> {
    chunk_duration_s: f64,
    events: Vec<PlayEvent>,
    queue: VecDeque<(u32, T)>,
}

impl<T> PlaybackBuffer<T> {
    pub fn new(chunk_duration_s: f64) -> Self {
        Self {
            chunk_duration_s,
            events: Vec::new(),
            queue: VecDeque::new(),
        }
    }

    pub fn chunk_duration_s(&self) -> f64 {
        self.chunk_duration_s
    }

    pub fn events(&self) -> &[PlayEvent] {
        &self.events
    }

    pub fn ready_count(&self) -> usize {
        self.events.len()
    }

    /// Adds the next chunk, which became ready at `ready_s`.
    pub fn push(&mut self, index: u32, ready_s: f64, item: T) -> PlayEvent {
        assert_eq!(index as usize, self.events.len(), "chunks must arrive in order");
        let deadline = self
            .events
            .last()
            .map(|e| e.play_start_s + self.chunk_duration_s);
        let (play_start, stall) = match deadline {
            None => (ready_s, 0.0),
            Some(d) => (ready_s.max(d), (ready_s - d).max(0.0)),
        };
        let ev = PlayEvent {
            index,
            ready_s,
            deadline_s: deadline,
            play_start_s: play_start,
            stall_s: stall,
        };
        self.events.push(ev);
        self.queue.push_back((index, item));
        ev
    }

    /// Seconds of ready content not yet played at time `t`.
    pub fn level_at(&self, t: f64) -> f64 {
        let d = self.chunk_duration_s;
        self.events
            .iter()
            .rev()
            .take_while(|e| e.play_start_s + d > t)
            .filter(|e| e.ready_s <= t)
            .map(|e| (e.play_start_s + d - t).min(d))
            .sum()
    }

    /// Buffer seen by the rate controller at `t` once `downloaded` chunks
    /// have arrived: ready content, plus a full chunk for each one still being
    /// restored, minus the restoration work queued ahead of the next chunk
    /// (`chunk_sr_s` per unfinished chunk).
    pub fn controller_level(&self, t: f64, downloaded: usize, chunk_sr_s: f64) -> f64 {
        let ready = self.events.iter().filter(|e| e.ready_s <= t).count();
        let pending = downloaded.saturating_sub(ready) as f64;
        (self.level_at(t) + pending * (self.chunk_duration_s - chunk_sr_s)).max(0.0)
    }

    /// Removes and returns chunks whose playback has started by `t`.
    pub fn drain_started(&mut self, t: f64) -> Vec<(u32, T)> {
        let mut out = Vec::new();
        while let Some((i, _)) = self.queue.front() {
            if self.events[*i as usize].play_start_s <= t {
                out.push(self.queue.pop_front().unwrap());
            } else {
                break;
            }
        }
        out
    }

    /// Everything still queued, in order.
    pub fn drain_all(&mut self) -> Vec<(u32, T)> {
        self.queue.drain(..).collect()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn total_stall_s(&self) -> f64 {
        self.events.iter().map(|e| e.stall_s).sum()
    }
}

/// Total stall recomputed from an event log: the sum of
/// `max(0, ready - deadline)` over every chunk after the first.
pub fn recompute_stall(events: &[PlayEvent]) -> f64 {
    events
        .iter()
        .filter_map(|e| e.deadline_s.map(|d| (e.ready_s - d).max(0.0)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stalls_and_levels() {
        let mut b = PlaybackBuffer::new(1.0);
        assert_eq!(b.push(0, 0.5, ()).stall_s, 0.0);
        assert_eq!(b.push(1, 1.0, ()).play_start_s, 1.5);
        // Deadline is 2.5; ready at 3.0 stalls for half a second.
        let e = b.push(2, 3.0, ());
        assert_eq!(e.stall_s, 0.5);
        assert_eq!(e.play_start_s, 3.0);
        assert_eq!(b.total_stall_s(), recompute_stall(b.events()));
        assert_eq!(b.level_at(1.0), 1.5);
        assert_eq!(b.level_at(2.75), 0.0);
        assert_eq!(b.level_at(3.25), 0.75);
        assert_eq!(b.drain_started(1.5).len(), 2);
        assert_eq!(b.queued(), 1);
    }
}
