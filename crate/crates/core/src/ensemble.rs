//! Deterministic ensemble execution. Tasks are independent and keyed by
//! their position; results always come back in input order, so reductions
//! over them are reproducible regardless of scheduling.

/// Apply `f` to every item, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_sequential(items, f)
}

/// Always-sequential reference implementation.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Run `op` on a pool of `workers` threads (`0` = library default). Without
/// the `parallel` feature the worker count is ignored.
pub fn with_workers<R: Send>(workers: usize, op: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if workers > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return pool.install(op);
            }
        }
    }
    let _ = workers;
    op()
}

/// Sum in input order (the reduction used for every ensemble mean).
pub fn ordered_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let xs: Vec<u64> = (0..200).collect();
        let f = |&x: &u64| ((x as f64) * 0.1).sin().exp();
        let a = map_ordered(&xs, f);
        let b = map_sequential(&xs, f);
        assert_eq!(a, b);
        assert_eq!(ordered_mean(&a).to_bits(), ordered_mean(&b).to_bits());
        let c = with_workers(2, || map_ordered(&xs, f));
        assert_eq!(a, c);
    }
}
