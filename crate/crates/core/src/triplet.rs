//! Triplet constraints `({a,b},c)` and the tree metrics built on them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tree::Tree;

/// `({a,b},c)`: some cluster holds `a` and `b` but not `c`.
///
/// The in-pair is stored with `a < b`, so equal constraints compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    a: usize,
    b: usize,
    c: usize,
}

impl Triplet {
    pub fn new(a: usize, b: usize, c: usize) -> Result<Self> {
        if a == b || a == c || b == c {
            return Err(Error::InvalidTriplet("leaves must be distinct"));
        }
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        Ok(Triplet { a, b, c })
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.a, self.b)
    }

    pub fn outgroup(&self) -> usize {
        self.c
    }

    pub fn leaves(&self) -> [usize; 3] {
        [self.a, self.b, self.c]
    }

    pub fn touches(&self, leaf: usize) -> bool {
        self.a == leaf || self.b == leaf || self.c == leaf
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({{{},{}}},{})", self.a, self.b, self.c)
    }
}

/// Deduplicated constraint set with a per-leaf index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletSet {
    items: BTreeSet<Triplet>,
    by_leaf: BTreeMap<usize, BTreeSet<Triplet>>,
}

impl TripletSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the triplet was already present.
    pub fn insert(&mut self, t: Triplet) -> bool {
        if !self.items.insert(t) {
            return false;
        }
        for l in t.leaves() {
            self.by_leaf.entry(l).or_default().insert(t);
        }
        true
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.items.contains(t)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triplet> {
        self.items.iter()
    }

    /// Triplets mentioning `leaf`.
    pub fn touching(&self, leaf: usize) -> impl Iterator<Item = &Triplet> {
        self.by_leaf.get(&leaf).into_iter().flatten()
    }

    pub fn is_subset(&self, other: &TripletSet) -> bool {
        self.items.is_subset(&other.items)
    }
}

impl FromIterator<Triplet> for TripletSet {
    fn from_iter<I: IntoIterator<Item = Triplet>>(iter: I) -> Self {
        let mut s = TripletSet::new();
        for t in iter {
            s.insert(t);
        }
        s
    }
}

impl Extend<Triplet> for TripletSet {
    fn extend<I: IntoIterator<Item = Triplet>>(&mut self, iter: I) {
        for t in iter {
            self.insert(t);
        }
    }
}

impl Tree {
    /// Whether `lca(a,b)` is a strict descendant of `lca(a,b,c)`.
    pub fn satisfies(&self, t: &Triplet) -> Result<bool> {
        self.leaf_node(t.c)?;
        let ab = self.lca(t.a, t.b)?;
        Ok(!self.leaves_of(ab).contains(t.c))
    }
}

/// Depth of the lowest common ancestor for every leaf pair, plus leaf
/// depths. Built in O(n²) from the children of each internal node.
#[derive(Debug, Clone)]
pub struct LcaTable {
    leaves: Vec<usize>,
    pos: Vec<usize>,
    depth: Vec<u32>,
    leaf_depth: Vec<u32>,
}

impl LcaTable {
    pub fn new(tree: &Tree) -> Self {
        let leaves: Vec<usize> = tree.leaves().collect();
        let k = leaves.len();
        let mut pos = vec![usize::MAX; tree.universe()];
        for (i, &l) in leaves.iter().enumerate() {
            pos[l] = i;
        }
        let mut depth = vec![0u32; k * k];
        let mut leaf_depth = vec![0u32; k];
        let mut stack = vec![(tree.root(), 0u32)];
        while let Some((id, d)) = stack.pop() {
            let node = tree.n(id);
            if let Some(l) = node.leaf() {
                leaf_depth[pos[l]] = d;
                continue;
            }
            let kids = node.children();
            for i in 0..kids.len() {
                for j in (i + 1)..kids.len() {
                    for x in tree.leaves_of(kids[i]).iter() {
                        for y in tree.leaves_of(kids[j]).iter() {
                            let (px, py) = (pos[x], pos[y]);
                            depth[px * k + py] = d;
                            depth[py * k + px] = d;
                        }
                    }
                }
            }
            for &c in kids {
                stack.push((c, d + 1));
            }
        }
        LcaTable {
            leaves,
            pos,
            depth,
            leaf_depth,
        }
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> u32 {
        self.depth[i * self.leaves.len() + j]
    }

    /// LCA depth by position in [`LcaTable::leaves`].
    #[inline]
    pub fn lca_depth_at(&self, i: usize, j: usize) -> u32 {
        self.at(i, j)
    }

    /// Path length in edges between leaves at positions `i` and `j`.
    pub fn distance_at(&self, i: usize, j: usize) -> u32 {
        if i == j {
            return 0;
        }
        self.leaf_depth[i] + self.leaf_depth[j] - 2 * self.at(i, j)
    }

    pub fn position(&self, leaf: usize) -> Option<usize> {
        self.pos.get(leaf).copied().filter(|&p| p != usize::MAX)
    }

    /// Resolution of the triple at positions `(i, j, k)`: the index (0, 1,
    /// 2) of the outgroup, or `None` when the three are unresolved.
    #[inline]
    pub fn resolve_at(&self, i: usize, j: usize, k: usize) -> Option<u8> {
        let ij = self.at(i, j);
        let ik = self.at(i, k);
        let jk = self.at(j, k);
        if ij > ik && ij > jk {
            Some(2)
        } else if ik > ij && ik > jk {
            Some(1)
        } else if jk > ij && jk > ik {
            Some(0)
        } else {
            None
        }
    }
}

fn triple_at(leaves: &[usize], i: usize, j: usize, k: usize, out: u8) -> Triplet {
    let (x, y, z) = (leaves[i], leaves[j], leaves[k]);
    let t = match out {
        0 => Triplet::new(y, z, x),
        1 => Triplet::new(x, z, y),
        _ => Triplet::new(x, y, z),
    };
    t.expect("distinct leaves")
}

/// All triplets a tree embodies: `({a,b},c)` for each resolved leaf triple.
pub fn extract_triplets(tree: &Tree) -> TripletSet {
    let lca = LcaTable::new(tree);
    let k = lca.leaves.len();
    let mut out = TripletSet::new();
    for i in 0..k {
        for j in (i + 1)..k {
            for m in (j + 1)..k {
                if let Some(o) = lca.resolve_at(i, j, m) {
                    out.insert(triple_at(&lca.leaves, i, j, m, o));
                }
            }
        }
    }
    out
}

/// The triplet `target` asserts about three leaves, if any.
pub fn resolve_three(tree: &Tree, x: usize, y: usize, z: usize) -> Result<Option<Triplet>> {
    let xy = tree.lca(x, y)?;
    let xz = tree.lca(x, z)?;
    let yz = tree.lca(y, z)?;
    let (dxy, dxz, dyz) = (tree.depth(xy), tree.depth(xz), tree.depth(yz));
    Ok(if dxy > dxz && dxy > dyz {
        Some(Triplet::new(x, y, z)?)
    } else if dxz > dxy && dxz > dyz {
        Some(Triplet::new(x, z, y)?)
    } else if dyz > dxy && dyz > dxz {
        Some(Triplet::new(y, z, x)?)
    } else {
        None
    })
}

fn same_leaves(a: &Tree, b: &Tree) -> Result<()> {
    if a.leaf_set() != b.leaf_set() {
        return Err(Error::LeafSetMismatch);
    }
    Ok(())
}

/// Whether every cluster of `target` is also a cluster of `t`.
pub fn is_refinement(t: &Tree, target: &Tree) -> Result<bool> {
    same_leaves(t, target)?;
    for cluster in target.clusters() {
        if cluster.len() < 2 {
            continue;
        }
        let z = t.lca_of(&cluster)?;
        if *t.leaves_of(z) != cluster {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Fraction of `target`'s triplets that `t` does not embody.
pub fn triplet_distance(target: &Tree, t: &Tree) -> Result<f64> {
    same_leaves(target, t)?;
    let lt = LcaTable::new(target);
    let lc = LcaTable::new(t);
    let k = lt.leaves.len();
    // Both tables list the same leaves in the same ascending order.
    let mut total = 0u64;
    let mut missing = 0u64;
    for i in 0..k {
        for j in (i + 1)..k {
            for m in (j + 1)..k {
                if let Some(o) = lt.resolve_at(i, j, m) {
                    total += 1;
                    if lc.resolve_at(i, j, m) != Some(o) {
                        missing += 1;
                    }
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::NoTargetTriplets);
    }
    Ok(missing as f64 / total as f64)
}

/// Monte Carlo estimate of [`triplet_distance`] from `samples` random
/// triples, for leaf counts where full enumeration is too slow. Triples the
/// target leaves unresolved are redrawn.
pub fn triplet_distance_sampled<R: Rng + ?Sized>(target: &Tree, t: &Tree, samples: usize, rng: &mut R) -> Result<f64> {
    same_leaves(target, t)?;
    let lt = LcaTable::new(target);
    let lc = LcaTable::new(t);
    let k = lt.leaves.len();
    if k < 3 || samples == 0 {
        return Err(Error::NoTargetTriplets);
    }
    let mut missing = 0usize;
    let mut drawn = 0usize;
    let mut attempts = 0usize;
    while drawn < samples {
        attempts += 1;
        if attempts > samples.saturating_mul(1000) {
            return Err(Error::NoTargetTriplets);
        }
        let i = rng.random_range(0..k);
        let j = rng.random_range(0..k);
        let m = rng.random_range(0..k);
        if i == j || i == m || j == m {
            continue;
        }
        if let Some(o) = lt.resolve_at(i, j, m) {
            drawn += 1;
            if lc.resolve_at(i, j, m) != Some(o) {
                missing += 1;
            }
        }
    }
    Ok(missing as f64 / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Tree;

    fn t(s: impl Into<crate::tree::Shape>) -> Tree {
        Tree::from_shape(s).unwrap()
    }

    fn tr(a: usize, b: usize, c: usize) -> Triplet {
        Triplet::new(a, b, c).unwrap()
    }

    #[test]
    fn triplet_is_normalized() {
        assert_eq!(tr(2, 1, 3), tr(1, 2, 3));
        assert!(Triplet::new(1, 1, 3).is_err());
        let mut s = TripletSet::new();
        assert!(s.insert(tr(1, 2, 3)));
        assert!(!s.insert(tr(2, 1, 3)));
        assert_eq!(s.touching(3).count(), 1);
    }

    #[test]
    fn triplets_of_small_trees() {
        let s = extract_triplets(&t(((1, 2), 3)));
        assert_eq!(s.iter().copied().collect::<Vec<_>>(), vec![tr(1, 2, 3)]);

        let s = extract_triplets(&t((((1, 2), 3), 4)));
        let want: TripletSet = [tr(1, 2, 3), tr(1, 2, 4), tr(1, 3, 4), tr(2, 3, 4)].into_iter().collect();
        assert_eq!(s, want);
    }

    #[test]
    fn unresolved_cluster_has_no_internal_triplets() {
        // {1,2,3} unresolved, grouped apart from 4 and 5.
        let target = t(((1, 2, 3), 4, 5));
        let s = extract_triplets(&target);
        assert!(s.iter().all(|x| !(x.leaves().iter().all(|l| [1, 2, 3].contains(l)))));
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn refinement_examples() {
        let target = t(((1, 2, 3), 4, 5));
        let refined = t(((((1, 2), 3), 4), 5));
        assert!(is_refinement(&target, &target).unwrap());
        assert!(is_refinement(&refined, &target).unwrap());
        assert!(!is_refinement(&t((((1, 3), 2), 4)), &t((((1, 2), 3), 4))).unwrap());
        assert_eq!(is_refinement(&t(((1, 2), 3)), &t(((1, 2), 4))), Err(Error::LeafSetMismatch));
    }

    #[test]
    fn triplet_distance_examples() {
        let target = t((((1, 2), 3), 4));
        assert_eq!(triplet_distance(&target, &target).unwrap(), 0.0);
        assert_eq!(triplet_distance(&target, &t((((1, 3), 2), 4))).unwrap(), 0.25);

        let star = t(((1, 2), 3, 4, 5));
        assert_eq!(extract_triplets(&star).len(), 3);
        assert_eq!(triplet_distance(&star, &t(((((1, 2), 3), 4), 5))).unwrap(), 0.0);
        assert_eq!(triplet_distance(&star, &t((((1, 2), (3, 4)), 5))).unwrap(), 0.0);

        let flat = t((1, 2, 3, 4));
        assert_eq!(triplet_distance(&flat, &target), Err(Error::NoTargetTriplets));
    }

    #[test]
    fn satisfies_matches_definition() {
        let tree = t(((1, 2), 3));
        assert!(tree.satisfies(&tr(1, 2, 3)).unwrap());
        assert!(!tree.satisfies(&tr(1, 3, 2)).unwrap());
        assert_eq!(tree.satisfies(&tr(1, 2, 9)), Err(Error::UnknownLeaf(9)));
    }

    #[test]
    fn resolve_three_on_star() {
        let target = t(((1, 2, 3), 4, 5));
        assert_eq!(resolve_three(&target, 1, 2, 3).unwrap(), None);
        assert_eq!(resolve_three(&target, 1, 4, 2).unwrap(), Some(tr(1, 2, 4)));
    }
}
