//! Order-preserving map helpers over slices.
//!
//! With the `parallel` feature (default) the `map_*` functions fan out over
//! the rayon pool; results are collected by index, so output order and
//! content are identical to the serial twins. The `_serial` variants always
//! run on the calling thread and exist so benchmarks can compare both paths
//! on any build.

use crate::error::Result;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, in parallel when the feature is enabled.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(|t| f(t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(|t| f(t)).collect()
    }
}

/// Serial twin of [`map_slice`].
pub fn map_slice_serial<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(|t| f(t)).collect()
}

/// Fallible map; the first error (by item index) wins.
pub fn try_map_slice<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        let partial: Vec<Result<U>> = items.par_iter().map(|t| f(t)).collect();
        partial.into_iter().collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(|t| f(t)).collect()
    }
}

/// Serial twin of [`try_map_slice`].
pub fn try_map_slice_serial<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    F: Fn(&T) -> Result<U>,
{
    items.iter().map(|t| f(t)).collect()
}

/// Map `f` over an index range, in parallel when the feature is enabled.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(|i| f(i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(|i| f(i)).collect()
    }
}

/// Run `f` on each element of `out` with its index. Parallel when enabled.
pub fn for_each_mut<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        out.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_serial_agree() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let a = map_slice(&xs, |x| x.sin() * 3.0);
        let b = map_slice_serial(&xs, |x| x.sin() * 3.0);
        assert_eq!(a, b); // bitwise: same arithmetic, same order
    }

    #[test]
    fn try_map_reports_first_error() {
        let xs = [1i32, -2, 3, -4];
        let r = try_map_slice(&xs, |x| {
            if *x < 0 {
                Err(crate::Error::InvalidArgument(format!("neg {x}")))
            } else {
                Ok(*x)
            }
        });
        let msg = r.unwrap_err().to_string();
        assert!(msg.contains("neg -2"), "{msg}");
    }
}
