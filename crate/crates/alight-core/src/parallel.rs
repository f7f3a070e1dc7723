//! Execution policy for the data-parallel entry points.
//!
//! Work items (scenes, faces, samples) are always independent and results are
//! collected in index order, so every policy produces byte-identical output.
//! With the `parallel` feature disabled the rayon paths compile away and
//! everything runs sequentially.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    /// Run on the calling thread.
    Sequential,
    /// Rayon pool with an explicit thread count.
    Threads(usize),
    /// Rayon pool sized by the available CPUs.
    Auto,
}

impl Parallelism {
    /// Maps a CLI-style `--jobs` value: 1 means sequential, `None` means auto.
    pub fn from_jobs(jobs: Option<usize>) -> Self {
        match jobs {
            None | Some(0) => Parallelism::Auto,
            Some(1) => Parallelism::Sequential,
            Some(n) => Parallelism::Threads(n),
        }
    }
}

/// Derives an independent RNG seed from a base seed and up to two indices
/// (splitmix64 finalizer). Parallel work items seed their own generator with
/// this, which keeps results independent of scheduling.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(b.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Applies `f` to `0..n` and collects results in index order.
pub fn map_indexed<T, F>(n: usize, par: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    match par {
        Parallelism::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Threads(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .expect("thread pool construction");
            pool.install(|| {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(&f).collect()
            })
        }
        #[cfg(feature = "parallel")]
        Parallelism::Auto => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(&f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        _ => (0..n).map(f).collect(),
    }
}
