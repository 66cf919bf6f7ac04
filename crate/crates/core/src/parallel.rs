//! Order-preserving data-parallel map.
//!
//! Results always come back in input order, so any reduction performed by
//! the caller is independent of the worker count. Without the `parallel`
//! feature, or with one worker, everything runs on the calling thread.

use crate::error::{Error, Result};

pub struct Workers {
    count: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("count", &self.count).finish()
    }
}

impl Workers {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        #[cfg(feature = "parallel")]
        {
            let pool = if count > 1 {
                Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(count)
                        .build()
                        .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
                )
            } else {
                None
            };
            Ok(Self { count, pool })
        }
        #[cfg(not(feature = "parallel"))]
        Ok(Self { count })
    }

    pub fn sequential() -> Self {
        Self {
            count: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `f(i, &items[i])` for every item, in input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect());
        }
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::sequential()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..100).collect();
        let seq = Workers::sequential().map(&items, |i, x| x * 3 + i as u64);
        let par = Workers::new(4).unwrap().map(&items, |i, x| x * 3 + i as u64);
        assert_eq!(seq, par);
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(Workers::new(0).is_err());
    }
}
