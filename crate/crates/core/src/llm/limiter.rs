use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;

use super::Clock;

const WINDOW: Duration = Duration::from_secs(60);

/// Admits at most `per_minute` requests in any 60-second window.
///
/// Keeps the admission times of the last `per_minute` requests; a new request
/// waits until the oldest of them is at least 60 s in the past.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: usize,
    admitted: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32) -> Self {
        assert!(per_minute > 0, "rate limit must be positive");
        RateLimiter {
            per_minute: per_minute as usize,
            admitted: Mutex::new(VecDeque::with_capacity(per_minute as usize)),
        }
    }

    /// Blocks (on `clock`) until a request may be sent, then records it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut admitted = self.admitted.lock().unwrap();
                let now = clock.now();
                while admitted.front().is_some_and(|&t| t + WINDOW <= now) {
                    admitted.pop_front();
                }
                if admitted.len() < self.per_minute {
                    admitted.push_back(now);
                    return;
                }
                (admitted[0] + WINDOW) - now
            };
            clock.sleep(wait);
        }
    }
}

/// Counting semaphore capping simultaneous in-flight requests.
#[derive(Debug)]
pub struct ConcurrencyGate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl ConcurrencyGate {
    pub fn new(limit: usize) -> Self {
        assert!(limit > 0, "concurrency limit must be positive");
        ConcurrencyGate {
            limit,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut in_flight = self.in_flight.lock().unwrap();
        while *in_flight >= self.limit {
            in_flight = self.freed.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        GatePermit { gate: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap()
    }
}

pub struct GatePermit<'a> {
    gate: &'a ConcurrencyGate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.gate.in_flight.lock().unwrap() -= 1;
        self.gate.freed.notify_one();
    }
}

/// Exponential backoff with full jitter: the k-th retry (k >= 1) waits a
/// uniform random time in `[0, min(cap, base * factor^(k-1))]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base: Duration::from_secs(1),
            factor: 2.0,
            cap: Duration::from_secs(60),
        }
    }
}

impl Backoff {
    pub fn ceiling(&self, retry: u32) -> Duration {
        let exp = self.factor.powi(retry.saturating_sub(1).min(63) as i32);
        self.base.mul_f64(exp).min(self.cap)
    }

    pub fn delay<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        self.ceiling(retry).mul_f64(rng.gen::<f64>())
    }
}
