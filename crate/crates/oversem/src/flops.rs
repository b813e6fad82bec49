//! Per-rank floating point operation counters.
//!
//! Ranks run one per thread, so thread-local counters give per-rank totals.
//! FP32 operations are tallied separately and weighted 1/2 in reports.

use std::cell::Cell;

thread_local! {
    static FP64: Cell<u64> = const { Cell::new(0) };
    static FP32: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub fn add_fp64(n: u64) {
    FP64.with(|c| c.set(c.get() + n));
}

#[inline]
pub fn add_fp32(n: u64) {
    FP32.with(|c| c.set(c.get() + n));
}

pub fn reset() {
    FP64.with(|c| c.set(0));
    FP32.with(|c| c.set(0));
}

/// Raw (fp64, fp32) counts for this rank since the last reset.
pub fn counts() -> (u64, u64) {
    (FP64.with(|c| c.get()), FP32.with(|c| c.get()))
}

/// Weighted FLOP total: FP32 operations counted as 1/2 FLOP.
pub fn weighted_total() -> f64 {
    let (f64c, f32c) = counts();
    f64c as f64 + 0.5 * f32c as f64
}
