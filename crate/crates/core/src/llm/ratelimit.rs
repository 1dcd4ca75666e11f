use std::collections::VecDeque;
use std::time::{Duration, Instant};

/// Sliding-window request ceiling: at most `capacity` grants in any
/// half-open window of length `window`.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: usize,
    window: Duration,
    granted: VecDeque<Instant>,
}

impl RateLimiter {
    pub fn per_minute(capacity: u32) -> Self {
        Self::new(capacity, Duration::from_secs(60))
    }

    pub fn new(capacity: u32, window: Duration) -> Self {
        Self { capacity: capacity.max(1) as usize, window, granted: VecDeque::new() }
    }

    /// Grants a request at `now`, or returns how long to wait before asking
    /// again.
    pub fn try_acquire(&mut self, now: Instant) -> Result<(), Duration> {
        while let Some(&oldest) = self.granted.front() {
            if now.saturating_duration_since(oldest) >= self.window {
                self.granted.pop_front();
            } else {
                break;
            }
        }
        if self.granted.len() < self.capacity {
            self.granted.push_back(now);
            Ok(())
        } else {
            let oldest = *self.granted.front().expect("non-empty at capacity");
            Err(oldest + self.window - now)
        }
    }
}
