//! Countdown for widget steps.
//!
//! A countdown of N seconds emits ticks N, N-1, ..., 0 one second apart,
//! the last one flagged `expired`. Each tick goes through a gate closure
//! that runs under the session lock, so a tick is only delivered while its
//! step is still current; the task stops at the first refused tick.

use std::time::Duration;

use tokio::task::JoinHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tick {
    pub step_index: usize,
    pub remaining: u32,
    pub expired: bool,
}

/// Running countdown; aborted when dropped.
#[derive(Debug)]
pub struct Countdown {
    pub step_index: usize,
    pub seconds: u32,
    handle: JoinHandle<()>,
}

impl Countdown {
    /// Starts the countdown. `deliver` returns false to stop it.
    pub fn start<F>(step_index: usize, seconds: u32, deliver: F) -> Self
    where
        F: Fn(Tick) -> bool + Send + 'static,
    {
        let handle = tokio::spawn(async move {
            let mut interval = tokio::time::interval(Duration::from_secs(1));
            interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Burst);
            for remaining in (0..=seconds).rev() {
                interval.tick().await;
                if !deliver(Tick { step_index, remaining, expired: remaining == 0 }) {
                    return;
                }
            }
        });
        Countdown { step_index, seconds, handle }
    }

    pub fn is_finished(&self) -> bool {
        self.handle.is_finished()
    }
}

impl Drop for Countdown {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    fn collector() -> (Arc<Mutex<Vec<(Tick, tokio::time::Instant)>>>, impl Fn(Tick) -> bool + Send + 'static) {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        (seen, move |t| {
            sink.lock().unwrap().push((t, tokio::time::Instant::now()));
            true
        })
    }

    #[tokio::test(start_paused = true)]
    async fn thirty_seconds_gives_31_ticks() {
        let (seen, deliver) = collector();
        let start = tokio::time::Instant::now();
        let _c = Countdown::start(6, 30, deliver);
        tokio::time::sleep(Duration::from_secs(40)).await;
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 31);
        for (i, (tick, at)) in seen.iter().enumerate() {
            assert_eq!(tick.remaining, 30 - i as u32);
            assert_eq!(tick.expired, i == 30);
            assert_eq!(*at - start, Duration::from_secs(i as u64));
        }
    }

    #[tokio::test(start_paused = true)]
    async fn zero_seconds_expires_at_once() {
        let (seen, deliver) = collector();
        let _c = Countdown::start(0, 0, deliver);
        tokio::time::sleep(Duration::from_millis(10)).await;
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0].0, Tick { step_index: 0, remaining: 0, expired: true });
    }

    #[tokio::test(start_paused = true)]
    async fn dropping_stops_ticks() {
        let (seen, deliver) = collector();
        let c = Countdown::start(1, 30, deliver);
        tokio::time::sleep(Duration::from_millis(10_500)).await;
        drop(c);
        tokio::time::sleep(Duration::from_secs(60)).await;
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 11);
        assert!(seen.iter().all(|(t, _)| !t.expired));
    }

    #[tokio::test(start_paused = true)]
    async fn refused_tick_ends_countdown() {
        let count = Arc::new(Mutex::new(0));
        let c2 = count.clone();
        let c = Countdown::start(1, 10, move |_| {
            let mut n = c2.lock().unwrap();
            *n += 1;
            *n < 3
        });
        tokio::time::sleep(Duration::from_secs(20)).await;
        assert_eq!(*count.lock().unwrap(), 3);
        assert!(c.is_finished());
    }
}
