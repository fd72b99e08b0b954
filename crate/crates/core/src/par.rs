//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the lattice loops run on rayon; without it, or
//! after [`set_mode`]`(Mode::Sequential)`, the same code runs on one thread.
//! Reductions are chunked with a fixed chunk size and summed in order, so
//! results are bitwise identical in both modes and for any thread count.

use std::sync::atomic::{AtomicU8, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(1);

pub fn set_mode(mode: Mode) {
    MODE.store(
        match mode {
            Mode::Sequential => 0,
            Mode::Parallel => 1,
        },
        Ordering::Relaxed,
    );
}

/// Effective mode; always `Sequential` when built without `parallel`.
pub fn mode() -> Mode {
    if cfg!(feature = "parallel") && MODE.load(Ordering::Relaxed) == 1 {
        Mode::Parallel
    } else {
        Mode::Sequential
    }
}

/// `out[i] = f(i)` for every index.
pub fn fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let base = c * CHUNK;
                for (k, v) in chunk.iter_mut().enumerate() {
                    *v = f(base + k);
                }
            });
        return;
    }
    for (i, v) in out.iter_mut().enumerate() {
        *v = f(i);
    }
}

/// In-place elementwise update.
pub fn update<F>(values: &mut [f64], f: F)
where
    F: Fn(usize, f64) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        values
            .par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let base = c * CHUNK;
                for (k, v) in chunk.iter_mut().enumerate() {
                    *v = f(base + k, *v);
                }
            });
        return;
    }
    for (i, v) in values.iter_mut().enumerate() {
        *v = f(i, *v);
    }
}

fn chunk_partials<F>(len: usize, f: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>) -> f64 + Sync + Send,
{
    let n_chunks = len.div_ceil(CHUNK);
    let range = |c: usize| c * CHUNK..((c + 1) * CHUNK).min(len);
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        return (0..n_chunks).into_par_iter().map(|c| f(range(c))).collect();
    }
    (0..n_chunks).map(|c| f(range(c))).collect()
}

/// Deterministic sum of `g(i)` over `0..len`.
pub fn sum_by<F>(len: usize, g: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    chunk_partials(len, |r| r.map(&g).sum::<f64>())
        .into_iter()
        .sum()
}

pub fn sum(values: &[f64]) -> f64 {
    sum_by(values.len(), |i| values[i])
}

/// Maximum of `g(i)`; `-inf` for an empty range. NaN propagates as +inf.
pub fn max_by<F>(len: usize, g: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    chunk_partials(len, |r| {
        r.map(|i| {
            let v = g(i);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
    })
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_by<F>(len: usize, g: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    -max_by(len, |i| -g(i))
}

/// Map over independent work items, preserving order.
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Run `f` on `workers` threads when parallel; the closure's own inner loops
/// then share that pool.
pub fn with_workers<R: Send, F: FnOnce() -> R + Send>(workers: usize, f: F) -> R {
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel && workers > 0 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(f);
        }
    }
    let _ = workers;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential_bitwise() {
        let v: Vec<f64> = (0..20_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3 + 0.1).collect();
        let a = sum(&v);
        set_mode(Mode::Sequential);
        let b = sum(&v);
        set_mode(Mode::Parallel);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn max_and_min() {
        let v = [3.0, -1.0, 7.5, 2.0];
        assert_eq!(max_by(v.len(), |i| v[i]), 7.5);
        assert_eq!(min_by(v.len(), |i| v[i]), -1.0);
        assert_eq!(max_by(0, |_| 0.0), f64::NEG_INFINITY);
    }
}
