//! Live-byte accounting for [`Mat`](super::Mat) storage.
//!
//! Every matrix registers its buffer size on construction and releases it on
//! drop, so the peak of simultaneously live matrix bytes can be read back
//! deterministically (independent of the allocator or process RSS). Counters
//! are thread-local: a probe only sees matrices created on its own thread.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn track_alloc(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn track_free(bytes: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
}

/// Bytes of matrix storage currently alive on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(Cell::get)
}

/// Measures the peak of matrix bytes allocated after the probe was started.
///
/// Matrices that were already alive when the probe started are not counted.
/// Probes nest: dropping an inner probe folds its peak back into the outer one.
pub struct MemProbe {
    base: usize,
    outer_peak: usize,
}

impl MemProbe {
    pub fn start() -> Self {
        let base = live_bytes();
        let outer_peak = PEAK.with(|p| p.replace(base));
        MemProbe { base, outer_peak }
    }

    /// Peak transient bytes observed since `start`.
    pub fn peak_bytes(&self) -> usize {
        PEAK.with(Cell::get).saturating_sub(self.base)
    }
}

impl Drop for MemProbe {
    fn drop(&mut self) {
        PEAK.with(|p| p.set(p.get().max(self.outer_peak)));
    }
}
