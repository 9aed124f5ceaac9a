//! Data-parallel execution over fixed-size point chunks.
//!
//! Chunk boundaries depend only on the chunk size, never on the thread count,
//! and partial results are always combined in chunk order. Parallel and
//! sequential execution therefore produce bitwise identical results.

use std::ops::Range;

/// How chunked work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Runs chunks on the rayon pool. Falls back to sequential execution when
    /// the crate is built without the `parallel` feature.
    #[default]
    Parallel,
}

/// Default number of collocation points per chunk.
pub const DEFAULT_CHUNK: usize = 32;

pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len)
        .step_by(chunk)
        .map(|start| start..(start + chunk).min(len))
        .collect()
}

impl Exec {
    /// Applies `f` to every range and returns the results in range order.
    pub fn map_chunks<R, F>(self, ranges: &[Range<usize>], f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(Range<usize>) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => ranges.iter().cloned().map(f).collect(),
            Exec::Parallel => par_map(ranges, f),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

#[cfg(feature = "parallel")]
fn par_map<R, F>(ranges: &[Range<usize>], f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    use rayon::prelude::*;
    ranges.par_iter().cloned().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<R, F>(ranges: &[Range<usize>], f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    ranges.iter().cloned().map(f).collect()
}
