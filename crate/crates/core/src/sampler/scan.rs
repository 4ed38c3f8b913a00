//! Random partial scans: each sweep updates a uniformly chosen subset of
//! blocks in a uniformly random order.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanPlan {
    pub subset_size: usize,
    /// Selected block indices in update order.
    pub order: Vec<usize>,
}

impl ScanPlan {
    /// A uniform `k`-subset of `0..n_blocks`, uniformly shuffled.
    pub fn draw(n_blocks: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        if k == 0 || k > n_blocks {
            return Err(Error::Parameter(format!("scan subset of size {k} from {n_blocks} blocks")));
        }
        let order = index::sample(rng, n_blocks, k).into_vec();
        Ok(ScanPlan { subset_size: k, order })
    }

    /// Sorted selection, independent of update order.
    pub fn selected(&self) -> Vec<usize> {
        let mut s = self.order.clone();
        s.sort_unstable();
        s
    }
}

/// `⌈fraction · n_blocks⌉`, at least one block.
pub fn subset_size(fraction: f64, n_blocks: usize) -> usize {
    let k = (fraction * n_blocks as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n_blocks)
}
