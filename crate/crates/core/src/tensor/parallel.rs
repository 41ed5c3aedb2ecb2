//! Data-parallel row iteration with a sequential fallback.
//!
//! Work is split over disjoint output rows, and the per-row body always runs
//! in a fixed inner order, so parallel and sequential execution produce
//! bitwise-identical results. The `parallel` cargo feature selects whether
//! rayon is compiled in at all; [`set_parallel`] flips between the two paths
//! at runtime (used by the benches to compare them in one binary).

#[cfg(feature = "parallel")]
use rayon::prelude::*;
#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(true);

/// Whether batch loops currently run on the rayon pool.
pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        PARALLEL_ENABLED.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Toggle the rayon path at runtime. A no-op when the `parallel` feature is
/// compiled out. Results do not depend on this switch.
pub fn set_parallel(enabled: bool) {
    #[cfg(feature = "parallel")]
    PARALLEL_ENABLED.store(enabled, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = enabled;
}

/// Splitting very small batches across threads costs more than it saves.
const MIN_ROWS_PER_TASK: usize = 8;

/// Apply `body(row_index, row)` to every `width`-sized chunk of `data`.
pub fn for_each_row<T, F>(data: &mut [T], width: usize, body: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    debug_assert!(width > 0 && data.len() % width == 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        data.par_chunks_mut(width)
            .with_min_len(MIN_ROWS_PER_TASK)
            .enumerate()
            .for_each(|(i, row)| body(i, row));
        return;
    }
    for (i, row) in data.chunks_mut(width).enumerate() {
        body(i, row);
    }
}

/// Apply `body(block_index, block)` to every `block_len`-sized chunk, without
/// the minimum-size hint. Used where one block is already a lot of work
/// (per-head attention, per-window decode).
pub fn for_each_block<T, F>(data: &mut [T], block_len: usize, body: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    debug_assert!(block_len > 0 && data.len() % block_len == 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        data.par_chunks_mut(block_len)
            .enumerate()
            .for_each(|(i, block)| body(i, block));
        return;
    }
    for (i, block) in data.chunks_mut(block_len).enumerate() {
        body(i, block);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential() {
        let width = 17;
        let rows = 64;
        let body = |i: usize, row: &mut [f64]| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ((i * 31 + j) as f64).sin();
            }
        };
        let mut seq = vec![0.0f64; width * rows];
        let mut par = vec![0.0f64; width * rows];
        set_parallel(false);
        for_each_row(&mut seq, width, body);
        set_parallel(true);
        for_each_row(&mut par, width, body);
        assert_eq!(seq, par);
    }
}
