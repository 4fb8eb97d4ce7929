//! Execution policy for the data-parallel loops in this crate.
//!
//! Every hot loop goes through [`Exec`], so the same call can run on the rayon
//! pool or on the current thread. Results are always collected in index order,
//! which keeps parallel and sequential runs bit-identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over a slice, preserving order.
    pub fn map_slice<'a, S, T, F>(self, items: &'a [S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&'a S) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Runs `f` on each mutable chunk of `data` (chunk index, chunk).
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
            _ => data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = Exec::Sequential.map_range(1000, f);
        let b = Exec::Parallel.map_range(1000, f);
        assert_eq!(a, b);
    }

    #[test]
    fn chunks_cover_everything() {
        let mut v = vec![0usize; 103];
        Exec::Parallel.for_each_chunk_mut(&mut v, 10, |ci, c| {
            for (k, x) in c.iter_mut().enumerate() {
                *x = ci * 10 + k;
            }
        });
        assert!(v.iter().enumerate().all(|(i, &x)| i == x));
    }
}
