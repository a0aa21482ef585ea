//! Worker configuration and deterministic parallel map over path indices.
//!
//! With the `parallel` feature (default) the map fans out over a scoped
//! rayon pool; without it the same API runs sequentially. Results are
//! collected in index order, so every reduction downstream is independent
//! of the worker count.

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "VOLTERRA_ASYM_WORKERS";

/// Resolve the effective worker count: env override, then the request,
/// then machine parallelism.
pub fn effective_workers(requested: Option<usize>) -> usize {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    match requested {
        Some(n) if n >= 1 => n,
        _ => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

/// Map `f` over `0..n`, in parallel when enabled, preserving index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("rayon pool");
    pool.install(|| {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    })
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, _workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = map_indexed(64, 1, |i| i * i);
        let par = map_indexed(64, 4, |i| i * i);
        assert_eq!(seq, par);
    }
}
