//! Data-parallel helpers. With the `parallel` feature these dispatch to
//! rayon unless sequential mode was requested at runtime; without it they are
//! plain loops. Results are always assembled in index order, so output does
//! not depend on the thread count.

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces sequential execution even when compiled with `parallel`.
pub fn set_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::Relaxed);
}

/// True when work is actually spread over the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !SEQUENTIAL.load(Ordering::Relaxed)
}

/// Sizes the worker pool. `1` switches to sequential mode; `0` keeps the
/// default of one worker per core. Fails if the global pool was already
/// built with another size.
pub fn set_threads(n: usize) -> Result<(), String> {
    set_sequential(n == 1);
    #[cfg(feature = "parallel")]
    if n > 1 {
        return rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string());
    }
    Ok(())
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(index, chunk)` for each `chunk_len`-sized chunk of `data`.
pub fn for_each_chunk_mut<V, F>(data: &mut [V], chunk_len: usize, f: F)
where
    V: Send,
    F: Fn(usize, &mut [V]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v = map_range(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        let mut d = vec![0usize; 30];
        for_each_chunk_mut(&mut d, 7, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(d[6], 0);
        assert_eq!(d[7], 1);
        assert_eq!(d[29], 4);
    }
}
