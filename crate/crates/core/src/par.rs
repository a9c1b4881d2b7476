//! Index-ordered data-parallel map with a sequential fallback.
//!
//! Results are always collected in index order, so output never depends on
//! the worker count. Without the `parallel` feature everything runs on the
//! calling thread.

/// Worker count request. `None` uses every available core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Workers(pub Option<usize>);

impl Workers {
    pub const SEQUENTIAL: Workers = Workers(Some(1));
    pub const ALL: Workers = Workers(None);

    pub fn is_sequential(self) -> bool {
        self.0 == Some(1) || !is_parallel_available()
    }
}

pub fn is_parallel_available() -> bool {
    cfg!(feature = "parallel")
}

/// `(0..count).map(f)` evaluated by `workers`.
pub fn map_indexed<T, F>(count: usize, workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers.is_sequential() {
        return (0..count).map(f).collect();
    }
    parallel_map(count, workers, f)
}

/// Maps over a slice.
pub fn map_slice<S, T, F>(items: &[S], workers: Workers, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(items.len(), workers, |i| f(&items[i]))
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(count: usize, workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..count).into_par_iter().map(&f).collect();
    match workers.0 {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(count: usize, _workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_index_order() {
        for w in [Workers::SEQUENTIAL, Workers(Some(4)), Workers::ALL] {
            let v = map_indexed(1000, w, |i| i * i);
            assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
        }
    }
}
