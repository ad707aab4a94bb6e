//! Thin switch between rayon-parallel and sequential execution.
//!
//! Every parallel site in the crate maps independent work items into an
//! index-ordered `Vec` and reduces sequentially afterwards, so floating-point
//! results are bit-identical whether the `parallel` feature is on or off and
//! regardless of the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `f` with a worker-count cap.
///
/// With the `parallel` feature, `Some(n)` installs a scoped rayon pool of `n`
/// threads for the duration of the call; `None` keeps the ambient pool.
/// Sequential builds run `f` directly.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match threads {
            Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("building a scoped thread pool cannot fail with valid sizes")
                .install(f),
            _ => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Map `f` over `0..n`, preserving index order in the output.
pub fn par_map_indexed<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
