//! Deterministic parallel map over index chunks.

use std::ops::Range;

use rayon::prelude::*;

/// Samples per work item. Chunk boundaries depend only on the index range,
/// so partial results, and their sequential merge, are identical for any
/// number of worker threads.
pub const CHUNK: u64 = 4096;

/// Applies `f` to consecutive sub-ranges of `range` of length at most
/// `chunk`, in parallel, returning results in index order.
pub fn map_chunks<A, F>(range: Range<u64>, chunk: u64, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(Range<u64>) -> A + Sync + Send,
{
    let chunk = chunk.max(1);
    let len = range.end.saturating_sub(range.start);
    let pieces = len.div_ceil(chunk);
    (0..pieces)
        .into_par_iter()
        .map(|i| {
            let lo = range.start + i * chunk;
            let hi = (lo + chunk).min(range.end);
            f(lo..hi)
        })
        .collect()
}
