//! Data-parallel dispatch.
//!
//! Every parallel map in the crate goes through [`Exec`]. Results are
//! collected in input order and all reductions happen sequentially on the
//! collected values, so `Sequential` and `Parallel` produce bit-identical
//! outputs. Without the `parallel` feature, `Parallel` runs sequentially.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Runs two independent closures, concurrently when parallel.
    pub fn join<A, B, FA, FB>(self, fa: FA, fb: FB) -> (A, B)
    where
        A: Send,
        B: Send,
        FA: FnOnce() -> A + Send,
        FB: FnOnce() -> B + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => rayon::join(fa, fb),
            _ => (fa(), fb()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Exec::Sequential.map(&xs, |x| x * x);
        let b = Exec::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(Exec::Parallel.map_range(5, |i| i + 1), vec![1, 2, 3, 4, 5]);
    }
}
