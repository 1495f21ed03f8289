//! Thin dispatch layer between rayon and sequential execution.
//!
//! Every kernel in this crate parallelizes over disjoint output rows and
//! collects results in index order, so outputs are bitwise identical no
//! matter how many threads run. Building without the `parallel` feature
//! swaps in the sequential bodies below.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to each `width`-sized row chunk of `data`, in parallel when enabled.
pub fn for_each_row<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(width > 0 && data.len() % width == 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for_each_row_seq(data, width, f);
    }
}

/// Sequential version of [`for_each_row`]; always available for benches.
pub fn for_each_row_seq<T, F>(data: &mut [T], width: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    debug_assert!(width > 0 && data.len() % width == 0);
    for (i, row) in data.chunks_mut(width).enumerate() {
        f(i, row);
    }
}

/// Map `f` over `0..n` and collect results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(n, f)
    }
}

/// Sequential version of [`map_indexed`]; always available for benches.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
