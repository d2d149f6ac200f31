use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::triplet::LcaTable;
use crate::tree::Tree;

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub iteration: u64,
    pub log_prior: f64,
    pub log_likelihood: f64,
    pub tree: Arc<Tree>,
}

impl Snapshot {
    pub fn log_posterior(&self) -> f64 {
        self.log_prior + self.log_likelihood
    }
}

/// Ring buffer of the most recent posterior samples.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    capacity: usize,
    items: VecDeque<Snapshot>,
}

impl SampleTrace {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, snap: Snapshot) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(snap);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Snapshot> {
        self.items.iter()
    }

    pub fn latest(&self) -> Option<&Snapshot> {
        self.items.back()
    }

    pub fn trees(&self) -> impl Iterator<Item = &Tree> {
        self.items.iter().map(|s| s.tree.as_ref())
    }
}

/// Tree-distance variance: the largest population variance, across the
/// snapshots, of the path length between two leaves of `subset` measured on
/// each snapshot's restriction to `subset`.
pub fn tdv<'a>(trees: impl IntoIterator<Item = &'a Tree>, subset: &[usize]) -> Result<f64> {
    let mut sorted: Vec<usize> = subset.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() < 2 {
        return Err(Error::SubsetTooSmall(2));
    }
    let k = sorted.len();
    let pairs = k * (k - 1) / 2;
    let mut sum = vec![0.0f64; pairs];
    let mut sum_sq = vec![0.0f64; pairs];
    let mut count = 0usize;
    for tree in trees {
        let induced = tree.induce(&sorted)?;
        let table = LcaTable::new(&induced);
        let mut p = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                let d = table.distance_at(i, j) as f64;
                sum[p] += d;
                sum_sq[p] += d * d;
                p += 1;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyTrace);
    }
    let n = count as f64;
    let best = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| {
            let mean = s / n;
            (q / n - mean * mean).max(0.0)
        })
        .fold(0.0f64, f64::max);
    Ok(best)
}

impl SampleTrace {
    pub fn tdv(&self, subset: &[usize]) -> Result<f64> {
        tdv(self.trees(), subset)
    }
}
