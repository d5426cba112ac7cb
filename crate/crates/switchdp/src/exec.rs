//! Data-parallel execution helpers.
//!
//! All batch-level loops in this crate are element-independent, so they can
//! run on the rayon pool without changing results: outputs are collected in
//! index order and floating-point reductions are always performed by a
//! sequential fold afterwards. With the `parallel` feature disabled every
//! helper degrades to a plain sequential loop.

/// Which execution backend to use for a batch loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// Plain sequential iteration.
    Seq,
    /// Rayon work-stealing pool when the `parallel` feature is enabled,
    /// sequential otherwise.
    Auto,
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indices<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Auto {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Apply `f` to equally sized disjoint chunks of `out`, one per index.
/// Chunk `i` is `out[i*chunk..(i+1)*chunk]`.
pub fn for_each_chunk<F>(mode: ExecMode, out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    debug_assert_eq!(out.len() % chunk.max(1), 0);
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Auto {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = mode;
    for (i, c) in out.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// True when the rayon backend is compiled in.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
