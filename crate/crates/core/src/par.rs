//! Deterministic chunked evaluation over observations.
//!
//! Observations are split into fixed-size chunks independent of the thread
//! count, and chunk results are returned in chunk order, so reductions give
//! bitwise-identical results however many threads run them.

use std::ops::Range;

use crate::error::Result;

pub(crate) const CHUNK: usize = 256;

pub(crate) fn map_chunks<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Range<usize>) -> Result<T> + Sync + Send,
{
    let ranges: Vec<Range<usize>> = (0..n)
        .step_by(CHUNK)
        .map(|start| start..(start + CHUNK).min(n))
        .collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}
