//! Order-preserving parallel map.
//!
//! Core code never reduces across tasks inside an executor: it collects the
//! per-task results in input order and folds them sequentially, so the thread
//! count cannot change a single bit of the output.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Applies `f` to every item and returns the results in input order.
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.iter().map(f).collect()
    }
}
