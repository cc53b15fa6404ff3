//! Execution helpers for the batch-level loops.
//!
//! With the `parallel` feature enabled (the default), [`map_indexed`] fans
//! out over rayon; without it, the same call runs sequentially. All
//! reductions combine per-item results in a fixed pairwise order over the
//! canonical item order, never in completion order, so outputs are
//! bit-identical across thread counts and across the two build modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U>(n: usize, f: impl Fn(usize) -> U) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Sequential reference version of [`map_indexed`]. Used by the comparison
/// benches and by tests that pin down bit-stability of the parallel path.
pub fn map_indexed_seq<U>(n: usize, f: impl Fn(usize) -> U) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Sums `xs` in a fixed pairwise (balanced tree) order.
///
/// The result depends only on the order of `xs`, not on how the work is
/// scheduled, and the tree shape keeps rounding error O(log n) instead of
/// O(n) for long accumulations.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Folds `items` pairwise in their given order: `(a0+a1) + (a2+a3), ...`
/// round by round until one accumulator remains. Returns `None` on empty
/// input. Like [`pairwise_sum`], the result is a pure function of the item
/// order.
pub fn pairwise_reduce<T>(mut items: Vec<T>, mut add: impl FnMut(T, T) -> T) -> Option<T> {
    if items.is_empty() {
        return None;
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(add(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}
