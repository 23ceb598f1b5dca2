//! Batch-level concurrency, capped by `MGDFIS_THREADS`.

use std::num::NonZeroUsize;
use std::thread;

pub const THREADS_ENV: &str = "MGDFIS_THREADS";

/// Worker cap: `MGDFIS_THREADS` when it parses as a positive integer,
/// otherwise the available parallelism.
pub fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<NonZeroUsize>().ok())
        .or_else(|| thread::available_parallelism().ok())
        .map_or(1, NonZeroUsize::get)
}

/// `f(0..n)` on up to `threads` scoped workers, results in index order.
/// The first error by index wins.
pub fn for_each_batch<R, E, F>(n: usize, threads: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync,
{
    let workers = threads.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    let mut results: Vec<Result<R, E>> = Vec::with_capacity(n);
    thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|lo| s.spawn(move || (lo..(lo + chunk).min(n)).map(f).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            results.extend(h.join().expect("batch worker panicked"));
        }
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_kept_for_any_thread_count() {
        for threads in 1..6 {
            let got: Result<Vec<usize>, ()> = for_each_batch(7, threads, |i| Ok(i * i));
            assert_eq!(got.unwrap(), (0..7).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn first_error_by_index_wins() {
        let got: Result<Vec<usize>, usize> =
            for_each_batch(6, 3, |i| if i >= 2 { Err(i) } else { Ok(i) });
        assert_eq!(got, Err(2));
    }
}
