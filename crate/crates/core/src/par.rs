//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run on the calling thread. Every helper returns results in input order
//! so callers observe identical output either way.

/// Map `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

/// Map `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Index and value of the maximum of `f(i)` over `0..n`; ties go to the
/// smallest index, so the answer does not depend on scheduling.
pub fn argmax_range<F>(n: usize, f: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    fn better(a: (usize, f64), b: (usize, f64)) -> (usize, f64) {
        if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) || a.1.is_nan() {
            b
        } else {
            a
        }
    }
    if n == 0 {
        return None;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if n >= PARALLEL_THRESHOLD {
            return (0..n)
                .into_par_iter()
                .map(|i| (i, f(i)))
                .reduce_with(better);
        }
    }
    (0..n).map(|i| (i, f(i))).reduce(better)
}

/// Below this many items the scheduling overhead outweighs the work for the
/// cheap per-item closures used in the solver.
pub const PARALLEL_THRESHOLD: usize = 1024;
