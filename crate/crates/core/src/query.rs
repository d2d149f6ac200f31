//! Choosing which leaves to show the user, and simulated users that answer
//! from a known target tree.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::leafset::LeafSet;
use crate::trace::SampleTrace;
use crate::tree::{NodeId, Tree};
use crate::triplet::{resolve_three, LcaTable, Triplet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchemeKind {
    /// Three random leaves; the user names the odd one out.
    Simple,
    /// The whole current tree.
    Smart,
    /// The current tree restricted to a random subset.
    Random,
    /// The random subset with the highest tree-distance variance across the
    /// recent samples, out of several candidates.
    Active,
    /// Random on even query indices, active on odd ones.
    Interleaved,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::Simple,
        SchemeKind::Smart,
        SchemeKind::Random,
        SchemeKind::Active,
        SchemeKind::Interleaved,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Simple => "simple",
            SchemeKind::Smart => "smart",
            SchemeKind::Random => "random",
            SchemeKind::Active => "active",
            SchemeKind::Interleaved => "interleaved",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or(Error::InvalidParameter("unknown query scheme"))
    }
}

/// How one particular query was chosen. Interleaved schemes alternate
/// between the random and active turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Simple,
    Smart,
    Random,
    Active,
}

impl Turn {
    pub fn name(self) -> &'static str {
        match self {
            Turn::Simple => "simple",
            Turn::Smart => "smart",
            Turn::Random => "random",
            Turn::Active => "active",
        }
    }
}

impl FromStr for Turn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Turn::Simple, Turn::Smart, Turn::Random, Turn::Active]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or(Error::InvalidParameter("unknown query turn"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryScheme {
    pub kind: SchemeKind,
    pub subset_size: usize,
    pub candidates: usize,
}

impl QueryScheme {
    pub const DEFAULT_SUBSET_SIZE: usize = 10;
    pub const DEFAULT_CANDIDATES: usize = 20;

    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            subset_size: Self::DEFAULT_SUBSET_SIZE,
            candidates: Self::DEFAULT_CANDIDATES,
        }
    }

    pub fn with_subset_size(mut self, size: usize) -> Self {
        self.subset_size = size;
        self
    }

    pub fn with_candidates(mut self, l: usize) -> Self {
        self.candidates = l;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.subset_size < 3 {
            return Err(Error::SubsetTooSmall(3));
        }
        if self.candidates == 0 {
            return Err(Error::InvalidParameter("candidate count must be at least 1"));
        }
        Ok(())
    }

    pub fn turn(&self, query_index: usize) -> Turn {
        match self.kind {
            SchemeKind::Simple => Turn::Simple,
            SchemeKind::Smart => Turn::Smart,
            SchemeKind::Random => Turn::Random,
            SchemeKind::Active => Turn::Active,
            SchemeKind::Interleaved if query_index % 2 == 0 => Turn::Random,
            SchemeKind::Interleaved => Turn::Active,
        }
    }
}

fn random_subset<R: Rng + ?Sized>(leaves: &[usize], size: usize, rng: &mut R) -> Vec<usize> {
    let size = size.min(leaves.len());
    let mut out: Vec<usize> = index::sample(rng, leaves.len(), size).into_iter().map(|i| leaves[i]).collect();
    out.sort_unstable();
    out
}

/// Leaves to show for query number `query_index` (0-based) under `scheme`.
/// Subsets are sorted; sizes are clamped to the number of leaves.
pub fn select_query<R: Rng + ?Sized>(
    scheme: &QueryScheme,
    tree: &Tree,
    trace: &SampleTrace,
    query_index: usize,
    rng: &mut R,
) -> Result<(Turn, Vec<usize>)> {
    scheme.validate()?;
    let leaves: Vec<usize> = tree.leaves().collect();
    let turn = scheme.turn(query_index);
    let subset = match turn {
        Turn::Simple => random_subset(&leaves, 3, rng),
        Turn::Smart => leaves,
        Turn::Random => random_subset(&leaves, scheme.subset_size, rng),
        Turn::Active => {
            if trace.is_empty() {
                return Err(Error::EmptyTrace);
            }
            let mut best: Option<(f64, Vec<usize>)> = None;
            for _ in 0..scheme.candidates {
                let cand = random_subset(&leaves, scheme.subset_size, rng);
                let v = trace.tdv(&cand)?;
                if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                    best = Some((v, cand));
                }
            }
            best.expect("at least one candidate").1
        }
    };
    Ok((turn, subset))
}

/// A simulated user looking at `shown`: finds target triplets violated at
/// the root split of `shown` (in-pair leaves on different sides) and returns
/// one uniformly at random; if there are none, recurses into the children,
/// left first. `None` means `shown` refines the target restricted to its
/// leaves.
pub fn simulated_oracle<R: Rng + ?Sized>(target: &Tree, shown: &Tree, rng: &mut R) -> Result<Option<Triplet>> {
    let subset: Vec<usize> = shown.leaves().collect();
    if !shown.leaf_set().is_subset(target.leaf_set()) {
        return Err(Error::LeafSetMismatch);
    }
    let restricted = target.induce(&subset)?;
    let table = LcaTable::new(&restricted);
    Ok(search(shown, shown.root(), &table, rng))
}

/// Target triplets `({a,b},c)` with `a`, `b` under different children of
/// `v` and `c` under `v`, visited in a fixed order.
fn for_each_violation(shown: &Tree, v: NodeId, table: &LcaTable, mut f: impl FnMut(Triplet) -> bool) {
    let kids = shown.children(v);
    let under: Vec<usize> = shown.leaves_of(v).iter().collect();
    let pos = |l: usize| table.position(l).expect("leaf of restricted target");
    for i in 0..kids.len() {
        for j in (i + 1)..kids.len() {
            for a in shown.leaves_of(kids[i]).iter() {
                for b in shown.leaves_of(kids[j]).iter() {
                    for &c in &under {
                        if c == a || c == b {
                            continue;
                        }
                        if table.resolve_at(pos(a), pos(b), pos(c)) == Some(2) {
                            let t = Triplet::new(a, b, c).expect("distinct leaves");
                            if !f(t) {
                                return;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn search<R: Rng + ?Sized>(shown: &Tree, v: NodeId, table: &LcaTable, rng: &mut R) -> Option<Triplet> {
    if shown.children(v).is_empty() {
        return None;
    }
    let mut count = 0usize;
    for_each_violation(shown, v, table, |_| {
        count += 1;
        true
    });
    if count > 0 {
        let mut k = rng.random_range(0..count);
        let mut found = None;
        for_each_violation(shown, v, table, |t| {
            if k == 0 {
                found = Some(t);
                false
            } else {
                k -= 1;
                true
            }
        });
        return found;
    }
    for &child in shown.children(v) {
        if let Some(t) = search(shown, child, table, rng) {
            return Some(t);
        }
    }
    None
}

/// A simulated user shown three leaves: the target's triplet over them, or
/// `None` when the target leaves them unresolved.
pub fn simple_oracle(target: &Tree, three: [usize; 3]) -> Result<Option<Triplet>> {
    let [x, y, z] = three;
    if x == y || y == z || x == z {
        return Err(Error::InvalidTriplet("leaves must be distinct"));
    }
    resolve_three(target, x, y, z)
}

/// Everything about one posed query.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub turn: Turn,
    pub subset: Vec<usize>,
    pub shown: Tree,
    pub answer: Option<Triplet>,
}

/// Leaves of a subset as a set, for membership checks on answers.
pub fn subset_mask(subset: &[usize]) -> LeafSet {
    let universe = subset.iter().max().map_or(0, |m| m + 1);
    LeafSet::from_iter_in(universe, subset.iter().copied())
}
