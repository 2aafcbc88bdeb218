//! Order-preserving map over a slice, parallel when the `parallel` feature is
//! on and more than one worker is requested.

/// Applies `f` to every item and returns results in input order.
///
/// `jobs == 1` always runs on the calling thread; `jobs == 0` uses the global
/// pool, or the calling thread if that pool has a single worker. Without the `parallel` feature this is a plain sequential map.
pub fn map_ordered<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs == 1 {
        return map_sequential(items, f);
    }
    map_parallel(items, jobs, f)
}

pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn map_parallel<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let work = || items.par_iter().map(&f).collect();
    if jobs == 0 {
        if rayon::current_num_threads() == 1 {
            return map_sequential(items, f);
        }
        return work();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

#[cfg(not(feature = "parallel"))]
fn map_parallel<T, R, F>(items: &[T], _jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_sequential(items, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map_ordered(&items, 1, |x| x * x);
        for jobs in [0, 2, 8] {
            assert_eq!(map_ordered(&items, jobs, |x| x * x), seq);
        }
    }
}
