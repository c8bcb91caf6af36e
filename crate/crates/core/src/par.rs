//! Deterministic data parallelism on scoped threads.
//!
//! Every output slot is computed independently, so results do not depend on the
//! thread count. `CSVL_THREADS` caps the number of workers.

use std::sync::OnceLock;

pub fn threads() -> usize {
    static N: OnceLock<usize> = OnceLock::new();
    *N.get_or_init(|| {
        let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
        match std::env::var("CSVL_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()) {
            Some(cap) if cap >= 1 => cap.min(avail),
            _ => avail,
        }
    })
}

/// `out[i] = f(i)` for `i in 0..len`.
pub fn map<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send + Default + Clone,
    F: Fn(usize) -> T + Sync,
{
    let mut out = vec![T::default(); len];
    fill(&mut out, f);
    out
}

pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = threads();
    let len = out.len();
    if workers <= 1 || len < 1024 {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(i);
        }
        return;
    }
    let chunk = len.div_ceil(workers);
    std::thread::scope(|s| {
        for (c, part) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            s.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    *slot = f(c * chunk + j);
                }
            });
        }
    });
}
