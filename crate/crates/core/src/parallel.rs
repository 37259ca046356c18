//! Optional data-parallel mapping. With the `parallel` feature enabled and
//! `parallel = true`, items map on the current rayon pool; otherwise the
//! loop runs sequentially. Results keep input order either way, so callers
//! get identical output regardless of worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub(crate) fn maybe_par_map<T, U, F>(items: &[T], parallel: bool, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.par_iter().map(&f).collect();
        }
    }
    let _ = parallel;
    items.iter().map(f).collect()
}
