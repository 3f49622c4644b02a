//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) the heavy batch loops (Gram
//! blocks, update matrices, independent chains, per-coefficient
//! diagnostics) run on the rayon pool. Without it, or with
//! [`Execution::Sequential`], the same closures run in order on the calling
//! thread. Results are identical either way: every closure is pure and
//! outputs are collected in index order.

/// How a batch loop is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the crate is built without `parallel`.
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work will really be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps `f` over `items` in chunks of `chunk` and hands each result to
/// `consume` in input order. Bounds memory when per-item outputs are large.
pub fn map_chunked<I, T, F, C>(exec: Execution, items: &[I], chunk: usize, f: F, mut consume: C)
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
    C: FnMut(T),
{
    let chunk = chunk.max(1);
    for slab in items.chunks(chunk) {
        for out in map_range(exec, slab.len(), |k| f(&slab[k])) {
            consume(out);
        }
    }
}

/// A chunk size that keeps every worker busy without buffering too much.
pub fn default_chunk() -> usize {
    #[cfg(feature = "parallel")]
    {
        4 * rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let a = map_range(Execution::Sequential, 100, |k| k * k);
        let b = map_range(Execution::Parallel, 100, |k| k * k);
        assert_eq!(a, b);
    }

    #[test]
    fn chunked_preserves_order() {
        let items: Vec<usize> = (0..37).collect();
        let mut seen = Vec::new();
        map_chunked(Execution::Parallel, &items, 5, |x| x + 1, |y| seen.push(y));
        assert_eq!(seen, (1..38).collect::<Vec<_>>());
    }
}
