//! Row-parallel helpers.
//!
//! With the `parallel` feature (default) rows are distributed over the rayon
//! pool; without it the same closures run sequentially. Each row is produced
//! by exactly one closure invocation with a fixed inner accumulation order, so
//! both paths give bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows below this count are never split across threads.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_ROWS: usize = 256;

/// Runs `f(row_index, row)` over every `cols`-wide row of `data`.
pub fn for_each_row<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if data.len() / cols >= MIN_PARALLEL_ROWS {
            data.par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    for_each_row_seq(data, cols, f);
}

pub fn for_each_row_seq<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    if cols == 0 {
        return;
    }
    data.chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Forces the rayon path regardless of size; used by benches and tests that
/// compare the two paths.
#[cfg(feature = "parallel")]
pub fn for_each_row_par<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    data.par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Maps `0..n` to a vector, in parallel when enabled. Output order is index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= MIN_PARALLEL_ROWS {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Maps over independent jobs (e.g. training runs). Output order is input order.
pub fn map_jobs<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}
