//! Time sources. Simulated rigs run on a virtual clock that only moves when a
//! simulated device consumes time, so a 25 h scan replays in seconds.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync + std::fmt::Debug {
    /// Monotonic time since the clock was created.
    fn elapsed(&self) -> Duration;

    /// Blocks (wall clock) or advances (virtual clock) by `d`.
    fn sleep(&self, d: Duration);

    fn now_utc(&self) -> DateTime<Utc>;

    /// Moves a virtual clock to an absolute point in time. Used when a
    /// campaign resumes from its log. Wall clocks ignore it.
    fn resume_at(&self, _at: DateTime<Utc>) {}

    fn is_virtual(&self) -> bool;
}

pub type SharedClock = Arc<dyn Clock>;

/// Virtual time in nanoseconds, shared by every clone.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    nanos: Arc<AtomicU64>,
    epoch: DateTime<Utc>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::with_epoch(default_epoch())
    }

    pub fn with_epoch(epoch: DateTime<Utc>) -> Self {
        VirtualClock {
            nanos: Arc::new(AtomicU64::new(0)),
            epoch,
        }
    }

    pub fn advance(&self, d: Duration) {
        self.nanos.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }

    /// Advances to `t` if it lies in the future.
    pub fn advance_to(&self, t: Duration) {
        self.nanos.fetch_max(t.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn set(&self, t: Duration) {
        self.nanos.store(t.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn epoch(&self) -> DateTime<Utc> {
        self.epoch
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn elapsed(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }

    fn now_utc(&self) -> DateTime<Utc> {
        self.epoch + chrono::Duration::nanoseconds(self.nanos.load(Ordering::SeqCst) as i64)
    }

    fn resume_at(&self, at: DateTime<Utc>) {
        let since = (at - self.epoch).num_nanoseconds().unwrap_or(0).max(0) as u64;
        self.set(Duration::from_nanos(since));
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

/// Start of virtual time for simulated campaigns.
pub fn default_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

#[derive(Debug, Clone)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock {
            start: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }

    fn now_utc(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn is_virtual(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_is_shared() {
        let a = VirtualClock::new();
        let b = a.clone();
        a.sleep(Duration::from_millis(1500));
        assert_eq!(b.elapsed(), Duration::from_millis(1500));
        b.advance_to(Duration::from_secs(1));
        assert_eq!(a.elapsed(), Duration::from_millis(1500));
        assert_eq!(
            a.now_utc(),
            default_epoch() + chrono::Duration::milliseconds(1500)
        );
    }

    #[test]
    fn resume_sets_absolute_time() {
        let c = VirtualClock::new();
        c.sleep(Duration::from_secs(100));
        let at = default_epoch() + chrono::Duration::seconds(7);
        c.resume_at(at);
        assert_eq!(c.now_utc(), at);
    }
}
