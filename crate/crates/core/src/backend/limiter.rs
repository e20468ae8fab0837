//! Clocks, a sliding-window rate limiter and retry with backoff.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Clock: Send + Sync {
    /// Time since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Manual clock for tests: `sleep` advances time instantly.
#[derive(Debug, Default)]
pub struct FakeClock {
    now: Mutex<Duration>,
}

impl FakeClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Admits at most `capacity` requests in any window of `window` length.
///
/// A rate of r requests/sec maps to `capacity = max(1, floor(r))` over a
/// window of `max(1s, 1/r)`, so fractional rates below one stay honest.
pub struct RateLimiter {
    capacity: usize,
    window: Duration,
    clock: Arc<dyn Clock>,
    admitted: Mutex<VecDeque<Duration>>,
}

impl std::fmt::Debug for RateLimiter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RateLimiter")
            .field("capacity", &self.capacity)
            .field("window", &self.window)
            .finish()
    }
}

impl RateLimiter {
    pub fn new(requests_per_sec: f64, clock: Arc<dyn Clock>) -> Result<Self> {
        if !(requests_per_sec.is_finite() && requests_per_sec > 0.0) {
            return Err(Error::Config(format!("rate limit must be positive, got {requests_per_sec}")));
        }
        let capacity = (requests_per_sec.floor() as usize).max(1);
        let window = Duration::from_secs_f64((1.0 / requests_per_sec).max(1.0));
        Ok(RateLimiter {
            capacity,
            window,
            clock,
            admitted: Mutex::new(VecDeque::new()),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn window(&self) -> Duration {
        self.window
    }

    /// Blocks until a request may go out, then records it.
    pub fn acquire(&self) -> Duration {
        loop {
            let wait = {
                let mut admitted = self.admitted.lock().unwrap();
                let now = self.clock.now();
                while admitted.front().is_some_and(|&t| now >= t + self.window) {
                    admitted.pop_front();
                }
                if admitted.len() < self.capacity {
                    admitted.push_back(now);
                    return now;
                }
                admitted[0] + self.window - now
            };
            self.clock.sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before retry i (1-based) is `backoff_ms[min(i, len) - 1]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            backoff_ms: vec![500, 1_000, 2_000, 4_000, 8_000],
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let i = (retry.max(1) as usize).min(self.backoff_ms.len());
        Duration::from_millis(if i == 0 { 0 } else { self.backoff_ms[i - 1] })
    }
}

/// Whether an attempt's failure is worth retrying.
#[derive(Debug)]
pub enum Attempt<T> {
    Done(T),
    Retry(String),
    Fatal(Error),
}

pub fn with_retry<T>(policy: &RetryPolicy, clock: &dyn Clock, mut f: impl FnMut(u32) -> Attempt<T>) -> Result<T> {
    let attempts = policy.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        match f(attempt) {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retry(msg) => {
                log::warn!("attempt {attempt}/{attempts} failed: {msg}");
                last = msg;
                if attempt < attempts {
                    clock.sleep(policy.delay(attempt));
                }
            }
        }
    }
    Err(Error::RetriesExhausted { attempts, last })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_in_window(times: &[Duration], window: Duration) -> usize {
        let mut best = 0;
        for (i, &t) in times.iter().enumerate() {
            best = best.max(times[i..].iter().take_while(|&&u| u < t + window).count());
        }
        best
    }

    #[test]
    fn limiter_respects_rate_with_fake_clock() {
        let clock = Arc::new(FakeClock::default());
        let lim = RateLimiter::new(3.0, clock.clone()).unwrap();
        let mut times: Vec<Duration> = (0..20).map(|_| lim.acquire()).collect();
        times.sort();
        assert!(max_in_window(&times, Duration::from_secs(1)) <= 3);
        // 20 requests at 3/s need at least 6 full windows.
        assert!(clock.now() >= Duration::from_secs(6));
    }

    #[test]
    fn fractional_rate_spaces_requests() {
        let clock = Arc::new(FakeClock::default());
        let lim = RateLimiter::new(0.5, clock).unwrap();
        let t: Vec<_> = (0..4).map(|_| lim.acquire()).collect();
        for w in t.windows(2) {
            assert!(w[1] - w[0] >= Duration::from_secs(2));
        }
        assert!(RateLimiter::new(0.0, Arc::new(FakeClock::default())).is_err());
    }

    #[test]
    fn limiter_under_threads() {
        let clock = Arc::new(FakeClock::default());
        let lim = Arc::new(RateLimiter::new(5.0, clock).unwrap());
        let mut times: Vec<Duration> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..4)
                .map(|_| s.spawn(|| (0..10).map(|_| lim.acquire()).collect::<Vec<_>>()))
                .collect();
            hs.into_iter().flat_map(|h| h.join().unwrap()).collect()
        });
        times.sort();
        assert_eq!(times.len(), 40);
        assert!(max_in_window(&times, Duration::from_secs(1)) <= 5);
    }

    #[test]
    fn retry_exhaustion_and_backoff() {
        let clock = FakeClock::default();
        let policy = RetryPolicy { max_attempts: 3, backoff_ms: vec![100, 400] };
        let r: Result<()> = with_retry(&policy, &clock, |_| Attempt::Retry("503".into()));
        assert!(matches!(r, Err(Error::RetriesExhausted { attempts: 3, .. })));
        assert_eq!(clock.now(), Duration::from_millis(500));

        let ok = with_retry(&policy, &clock, |n| if n < 2 { Attempt::Retry("x".into()) } else { Attempt::Done(n) });
        assert_eq!(ok.unwrap(), 2);
        let fatal: Result<()> = with_retry(&policy, &clock, |_| Attempt::Fatal(Error::Backend("401".into())));
        assert!(matches!(fatal, Err(Error::Backend(_))));
    }
}
