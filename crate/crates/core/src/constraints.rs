//! Aho graphs, the BUILD algorithm, and splicing new constraints into a tree.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::leafset::LeafSet;
use crate::tree::{NodeId, Tree};
use crate::triplet::{Triplet, TripletSet};

/// Graph on a leaf subset with an edge `{a,b}` for every triplet
/// `({a,b},c)` whose three leaves all lie in the subset.
#[derive(Debug, Clone)]
pub struct AhoGraph {
    vertices: Vec<usize>,
    edges: Vec<(usize, usize)>,
    components: Vec<Vec<usize>>,
}

impl AhoGraph {
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn is_connected(&self) -> bool {
        self.components.len() == 1
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as representative
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn sorted_subset(s: &[usize]) -> Vec<usize> {
    let mut v = s.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn aho_from<'a>(triplets: impl IntoIterator<Item = &'a Triplet>, vertices: Vec<usize>) -> AhoGraph {
    let pos = |l: usize| vertices.binary_search(&l).ok();
    let mut uf = UnionFind::new(vertices.len());
    let mut edges = Vec::new();
    for t in triplets {
        let (a, b) = t.pair();
        if let (Some(pa), Some(pb), Some(_)) = (pos(a), pos(b), pos(t.outgroup())) {
            uf.union(pa, pb);
            edges.push((a, b));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); vertices.len()];
    for (i, &v) in vertices.iter().enumerate() {
        let r = uf.find(i);
        by_root[r].push(v);
    }
    // representatives are the smallest position, so this is ordered by min
    let components = by_root.into_iter().filter(|c| !c.is_empty()).collect();
    AhoGraph {
        vertices,
        edges,
        components,
    }
}

pub fn aho_graph(c: &TripletSet, s: &[usize]) -> AhoGraph {
    aho_from(c.iter(), sorted_subset(s))
}

/// Chooses the left side of a split from the Aho components of the current
/// leaf set (sorted by smallest member, at least two of them). Returns the
/// indices of the components that go left; the rest go right. Both sides
/// must be nonempty.
pub trait SplitPolicy {
    fn left(&mut self, components: &[Vec<usize>]) -> Vec<usize>;
}

/// The component holding the smallest leaf index against everything else.
#[derive(Debug, Clone, Copy, Default)]
pub struct MinIndexSplit;

impl SplitPolicy for MinIndexSplit {
    fn left(&mut self, _components: &[Vec<usize>]) -> Vec<usize> {
        vec![0]
    }
}

/// Follows an existing tree so that BUILD changes as little of it as it
/// can. Starting at the tree's LCA of the leaves being split, each
/// component goes to the side of that node's split holding most of its
/// members below the node (ties go left). While every component lands on
/// the same side, the split is useless and the walk moves down into that
/// side; a component that straddles a split thus ends up next to where
/// most of it already was.
#[derive(Debug, Clone, Copy)]
pub struct TreeGuidedSplit<'a> {
    tree: &'a Tree,
}

impl<'a> TreeGuidedSplit<'a> {
    pub fn new(tree: &'a Tree) -> Self {
        Self { tree }
    }
}

impl SplitPolicy for TreeGuidedSplit<'_> {
    fn left(&mut self, components: &[Vec<usize>]) -> Vec<usize> {
        let t = self.tree;
        let all = LeafSet::from_iter_in(t.universe(), components.iter().flatten().copied());
        let Ok(mut node) = t.lca_of(&all) else { return vec![0] };
        loop {
            let kids = t.children(node);
            if kids.is_empty() {
                return vec![0];
            }
            let first = t.leaves_of(kids[0]);
            let under = t.leaves_of(node);
            let left: Vec<usize> = (0..components.len())
                .filter(|&i| {
                    let c = &components[i];
                    let inside = c.iter().filter(|&&l| under.contains(l)).count();
                    let on_first = c.iter().filter(|&&l| first.contains(l)).count();
                    2 * on_first >= inside
                })
                .collect();
            if !left.is_empty() && left.len() < components.len() {
                return left;
            }
            // all on one side: descend into it (for a wide node, the other
            // child holding the most leaves)
            node = if !left.is_empty() {
                kids[0]
            } else {
                *kids[1..]
                    .iter()
                    .max_by_key(|&&k| t.leaves_of(k).iter().filter(|&l| all.contains(l)).count())
                    .expect("two children")
            };
        }
    }
}

/// A tree over `s` satisfying every triplet of `c` that lies inside `s`,
/// using [`MinIndexSplit`].
pub fn build(c: &TripletSet, s: &[usize]) -> Result<Tree> {
    build_with(c, s, &mut MinIndexSplit)
}

pub fn build_with(c: &TripletSet, s: &[usize], policy: &mut dyn SplitPolicy) -> Result<Tree> {
    let leaves = sorted_subset(s);
    if leaves.is_empty() {
        return Err(Error::EmptySubset);
    }
    let inside: Vec<Triplet> = c
        .iter()
        .filter(|t| t.leaves().iter().all(|l| leaves.binary_search(l).is_ok()))
        .copied()
        .collect();
    let universe = leaves.last().map_or(0, |m| m + 1);
    let mut tree = Tree::with_stem(universe, 0);
    let root = build_rec(&mut tree, &inside, leaves, policy)?;
    tree.set_root(root);
    tree.assign_uniform_times(root);
    Ok(tree)
}

fn build_rec(tree: &mut Tree, triplets: &[Triplet], leaves: Vec<usize>, policy: &mut dyn SplitPolicy) -> Result<NodeId> {
    if leaves.len() == 1 {
        return tree.make_leaf(leaves[0], None);
    }
    let graph = aho_from(triplets.iter(), leaves);
    if graph.is_connected() {
        return Err(Error::Unrealizable);
    }
    let comps = graph.components;
    let mut go_left = vec![false; comps.len()];
    for i in policy.left(&comps) {
        go_left[i] = true;
    }
    if go_left.iter().all(|&g| g) || go_left.iter().all(|&g| !g) {
        go_left.iter_mut().for_each(|g| *g = false);
        go_left[0] = true;
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (comp, &l) in comps.into_iter().zip(&go_left) {
        if l {
            left.extend(comp);
        } else {
            right.extend(comp);
        }
    }
    left.sort_unstable();
    right.sort_unstable();
    let within = |side: &[usize]| -> Vec<Triplet> {
        triplets
            .iter()
            .filter(|t| t.leaves().iter().all(|l| side.binary_search(l).is_ok()))
            .copied()
            .collect()
    };
    let lt = within(&left);
    let rt = within(&right);
    let l = build_rec(tree, &lt, left, policy)?;
    let r = build_rec(tree, &rt, right, policy)?;
    Ok(tree.make_internal(vec![l, r], 0.0, None))
}

/// First triplet of `c` that `t` violates, if any.
pub fn first_violation(t: &Tree, c: &TripletSet) -> Result<Option<Triplet>> {
    for trip in c.iter() {
        if !t.satisfies(trip)? {
            return Ok(Some(*trip));
        }
    }
    Ok(None)
}

pub fn check_satisfies(t: &Tree, c: &TripletSet) -> Result<bool> {
    Ok(first_violation(t, c)?.is_none())
}

/// Makes `tree` satisfy `c ∪ {new}` by rebuilding the subtree under
/// `z = lca(a, b)` with BUILD on `leaves(z)`. Nodes outside that subtree are
/// untouched. New internal nodes get evenly spaced times below `z`'s parent
/// and values equal to the mean of the leaves beneath them.
///
/// Returns the root of the rebuilt subtree, or `None` when `tree` already
/// satisfied `new`.
pub fn incorporate_triplet(tree: &mut Tree, c: &TripletSet, new: Triplet) -> Result<Option<NodeId>> {
    incorporate_triplet_with(tree, c, new, &mut MinIndexSplit)
}

pub fn incorporate_triplet_with(
    tree: &mut Tree,
    c: &TripletSet,
    new: Triplet,
    policy: &mut dyn SplitPolicy,
) -> Result<Option<NodeId>> {
    if tree.satisfies(&new)? {
        return Ok(None);
    }
    let (a, b) = new.pair();
    let z = tree.lca(a, b)?;
    let leaves: Vec<usize> = tree.leaves_of(z).iter().collect();
    let mut local: TripletSet = c
        .iter()
        .filter(|t| t.leaves().iter().all(|&l| tree.leaves_of(z).contains(l)))
        .copied()
        .collect();
    local.insert(new);
    let sub = build_with(&local, &leaves, policy)?;
    let top = tree.replace_subtree(z, &sub)?;
    tree.assign_uniform_times(top);
    init_values_from_leaves(tree, top);
    Ok(Some(top))
}

/// Like [`incorporate_triplet`], but BUILD follows the current tree
/// ([`TreeGuidedSplit`]) and each rebuilt node takes the time and value of
/// the current LCA of its leaves. Where that would not sit strictly below
/// its new parent, the node is placed between the parent and 1 in
/// proportion to the height of its subtree.
pub fn incorporate_triplet_guided(tree: &mut Tree, c: &TripletSet, new: Triplet) -> Result<Option<NodeId>> {
    if tree.satisfies(&new)? {
        return Ok(None);
    }
    let old = tree.clone();
    let Some(top) = incorporate_triplet_with(tree, c, new, &mut TreeGuidedSplit::new(&old))? else {
        return Ok(None);
    };
    let order = tree.preorder_from(top);
    let mut height: BTreeMap<NodeId, usize> = BTreeMap::new();
    for &id in order.iter().rev() {
        let h = tree.children(id).iter().map(|c| height[c] + 1).max().unwrap_or(0);
        height.insert(id, h);
    }
    for id in order {
        if tree.n(id).is_leaf() {
            continue;
        }
        let h = height[&id];
        let above = tree.time(tree.parent(id).expect("below the stem"));
        let src = old.lca_of(tree.leaves_of(id))?;
        let t = old.time(src);
        let t = if t > above { t } else { above + (1.0 - above) / (h + 1) as f64 };
        tree.set_time_unchecked(id, t);
        tree.value_mut(id).copy_from_slice(old.value(src));
    }
    tree.validate(true)?;
    Ok(Some(top))
}

/// Sets every internal node under `top` to the mean value of its leaves.
pub(crate) fn init_values_from_leaves(tree: &mut Tree, top: NodeId) {
    let dim = tree.dim();
    if dim == 0 {
        return;
    }
    let mut order = tree.preorder_from(top);
    order.reverse();
    let mut sums: Vec<(NodeId, Vec<f64>, usize)> = Vec::new();
    for id in order {
        if tree.n(id).is_leaf() {
            continue;
        }
        let mut acc = vec![0.0; dim];
        let mut k = 0usize;
        for l in tree.leaves_of(id).iter() {
            let ln = tree.leaf_node(l).expect("leaf present");
            for (a, v) in acc.iter_mut().zip(tree.value(ln)) {
                *a += v;
            }
            k += 1;
        }
        sums.push((id, acc, k));
    }
    for (id, acc, k) in sums {
        let v = tree.value_mut(id);
        for (dst, s) in v.iter_mut().zip(acc) {
            *dst = s / k as f64;
        }
    }
}
