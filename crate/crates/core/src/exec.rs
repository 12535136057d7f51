//! Execution strategy for the data-parallel inner loops.
//!
//! With the `parallel` feature (on by default) loops fan out over the rayon
//! global pool; without it everything runs on the calling thread. Both paths
//! produce results in input order, so outputs are identical either way.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Execution {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

impl Execution {
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
        }
    }

    /// Like [`Execution::map`], stopping at an error. Which error is reported
    /// when several items fail is only deterministic in sequential mode.
    pub fn try_map<T, U, F>(self, items: &[T], f: F) -> Result<Vec<U>>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> Result<U> + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let xs: Vec<u64> = (0..10_000).collect();
        let seq = Execution::Sequential.map(&xs, |x| x * 3);
        let def = Execution::default().map(&xs, |x| x * 3);
        assert_eq!(seq, def);
        assert_eq!(seq[9_999], 29_997);
    }

    #[test]
    fn try_map_stops_on_error() {
        let xs = [1, 2, 3];
        let r = Execution::Sequential.try_map(&xs, |&x| if x == 2 { Err(crate::Error::EmptyText) } else { Ok(x) });
        assert!(matches!(r, Err(crate::Error::EmptyText)));
    }
}
