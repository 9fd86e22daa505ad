//! Execution policy for read-only evaluation loops.
//!
//! Parameter snapshots are immutable values, so evaluation over many
//! queries is embarrassingly parallel. With the `parallel` feature
//! (default) enabled, `Parallelism::Auto` fans work out over a rayon
//! pool sized by the `FRAMEFUSE_THREADS` environment variable
//! (machine cores when unset). `Parallelism::Sequential` always runs
//! the plain iterator path; it is the reference the benchmarks compare
//! against, and what the single-threaded training loop uses.
//! Results are identical either way: the work items are independent
//! and order is preserved.

/// How to run a data-parallel evaluation loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Parallel when the `parallel` feature is enabled, sequential otherwise.
    #[default]
    Auto,
    /// Force the sequential path.
    Sequential,
}

/// Environment variable capping evaluation parallelism.
pub const THREADS_ENV: &str = "FRAMEFUSE_THREADS";

#[cfg(feature = "parallel")]
mod pool {
    use std::sync::OnceLock;

    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

    /// Dedicated pool honoring FRAMEFUSE_THREADS; `None` means use the
    /// global rayon pool (machine cores).
    pub(super) fn eval_pool() -> Option<&'static rayon::ThreadPool> {
        POOL.get_or_init(|| {
            let threads = std::env::var(super::THREADS_ENV)
                .ok()
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|n| *n > 0)?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .ok()
        })
        .as_ref()
    }
}

/// Order-preserving map over items, parallel or sequential per `mode`.
pub fn map_items<T, U, F>(mode: Parallelism, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if mode == Parallelism::Auto {
            return match pool::eval_pool() {
                Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                None => items.par_iter().map(&f).collect(),
            };
        }
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Order-preserving map over indices 0..n.
pub fn map_range<U, F>(mode: Parallelism, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if mode == Parallelism::Auto {
            return match pool::eval_pool() {
                Some(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
                None => (0..n).into_par_iter().map(&f).collect(),
            };
        }
    }
    let _ = mode;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<u64> = (0..100).collect();
        let seq = map_items(Parallelism::Sequential, &items, |x| x * x);
        let auto = map_items(Parallelism::Auto, &items, |x| x * x);
        assert_eq!(seq, auto);

        let seq = map_range(Parallelism::Sequential, 50, |i| i as f64 * 0.5);
        let auto = map_range(Parallelism::Auto, 50, |i| i as f64 * 0.5);
        assert_eq!(seq, auto);
    }
}
