//! Deterministic chunked map over index ranges.
//!
//! Work is split into fixed-size chunks whose results come back in chunk
//! order, so any reduction the caller performs over them is independent of
//! the thread count.

use std::ops::Range;

pub(crate) const CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
pub(crate) fn map_chunks<R, F>(len: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let chunks = len.div_ceil(chunk);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(c * chunk..((c + 1) * chunk).min(len)))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunks<R, F>(len: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    let chunks = len.div_ceil(chunk);
    (0..chunks)
        .map(|c| f(c * chunk..((c + 1) * chunk).min(len)))
        .collect()
}
