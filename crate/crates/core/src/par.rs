//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) the helpers fan work out over the
//! rayon pool; without it, or inside [`with_mode`]`(Mode::Sequential, ..)`,
//! they run on the calling thread. Results are always returned in input
//! order and every reduction in this crate folds them in that order, so the
//! two modes produce bitwise-identical numbers.

use std::cell::Cell;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for the data-parallel loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

thread_local! {
    static SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with the given mode active on the current thread.
///
/// Sequential mode never leaves the calling thread, so the flag is visible
/// to every nested helper call.
pub fn with_mode<R>(mode: Mode, f: impl FnOnce() -> R) -> R {
    let prev = SEQUENTIAL.with(|s| s.replace(mode == Mode::Sequential));
    let out = f();
    SEQUENTIAL.with(|s| s.set(prev));
    out
}

/// The mode helpers will use when called from this thread.
pub fn current_mode() -> Mode {
    if cfg!(feature = "parallel") && !SEQUENTIAL.with(|s| s.get()) {
        Mode::Parallel
    } else {
        Mode::Sequential
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if current_mode() == Mode::Parallel {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if current_mode() == Mode::Parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Like [`map`], short-circuiting on the first error in input order.
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let xs: Vec<u64> = (0..1000).collect();
        let par = with_mode(Mode::Parallel, || map(&xs, |x| x * x));
        let seq = with_mode(Mode::Sequential, || map(&xs, |x| x * x));
        assert_eq!(par, seq);
        assert_eq!(par[999], 999 * 999);
    }

    #[test]
    fn sequential_mode_is_scoped() {
        with_mode(Mode::Sequential, || {
            assert_eq!(current_mode(), Mode::Sequential);
        });
        if cfg!(feature = "parallel") {
            assert_eq!(current_mode(), Mode::Parallel);
        }
    }

    #[test]
    fn try_map_reports_first_error() {
        let xs = [1, 2, 3, 4];
        let r: Result<Vec<i32>, i32> = try_map(&xs, |&x| if x >= 3 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(3));
    }
}
