//! Data-parallel helper for per-sample work. Results are collected by
//! input index, so the output — and every artifact derived from it — is
//! identical no matter how many worker threads run.

use std::num::NonZeroUsize;

/// Worker count: `DOMINO_THREADS` when set (floored at 1), otherwise the
/// machine's available parallelism.
pub fn width() -> usize {
    if let Ok(v) = std::env::var("DOMINO_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(NonZeroUsize::get)
        .unwrap_or(1)
}

/// Apply `f` to every index in `0..count` across up to [`width`] threads,
/// preserving input order in the output.
pub fn parallel_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = width().min(count);
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let chunk = count.div_ceil(workers);
    let mut out: Vec<Option<T>> = Vec::with_capacity(count);
    out.resize_with(count, || None);
    std::thread::scope(|scope| {
        for (ci, slots) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (off, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(ci * chunk + off));
                }
            });
        }
    });
    out.into_iter()
        .map(|o| o.expect("every index visited"))
        .collect()
}
