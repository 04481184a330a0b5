//! Data-parallel helpers with a sequential fallback.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `f` applied to each index in `0..len`, in order.
pub(crate) fn map_range<T, F>(len: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..len).map(f).collect()
}

/// `f` applied to each item of `items`, in order.
pub(crate) fn map_slice<S, T, F>(items: &[S], parallel: bool, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let a = map_range(1000, true, |i| i * i);
        let b = map_range(1000, false, |i| i * i);
        assert_eq!(a, b);
        let c = map_slice(&a, true, |v| v + 1);
        assert_eq!(c[999], 999 * 999 + 1);
    }
}
