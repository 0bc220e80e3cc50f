//! Multiply-accumulate instrumentation.
//!
//! Inside [`count_macs`] every kernel on the current thread runs its
//! reference (scalar) path and tallies each multiply it performs. Kernels
//! never fan out to worker threads while a count is active, so the tally is
//! complete.

use std::cell::Cell;

thread_local! {
    static TALLY: Cell<Option<u64>> = const { Cell::new(None) };
}

struct Restore(Option<u64>);

impl Drop for Restore {
    fn drop(&mut self) {
        TALLY.with(|t| t.set(self.0));
    }
}

/// Runs `f` with instrumentation enabled and returns the number of
/// multiply-accumulates executed by tensor kernels on this thread.
pub fn count_macs<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let outer = TALLY.with(|t| t.replace(Some(0)));
    let restore = Restore(outer);
    let out = f();
    let counted = TALLY.with(|t| t.get()).unwrap_or(0);
    drop(restore);
    if outer.is_some() {
        record(counted);
    }
    (out, counted)
}

pub fn is_active() -> bool {
    TALLY.with(|t| t.get().is_some())
}

pub(crate) fn record(macs: u64) {
    TALLY.with(|t| {
        if let Some(v) = t.get() {
            t.set(Some(v + macs));
        }
    });
}
