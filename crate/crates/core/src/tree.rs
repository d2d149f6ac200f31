//! Arena-backed rooted hierarchies with divergence times and latent values.
//!
//! Every tree carries a *stem*: a node at time 0 with value at the origin
//! whose single child is the root of the cladogram. The stem is never drawn,
//! never contributes triplets and is never pruned, but the stem-to-root edge
//! is part of the diffusion model.
//!
//! Nodes are addressed by generational [`NodeId`] handles. A handle whose
//! slot has since been released is rejected instead of aliasing a new node.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::leafset::LeafSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    index: u32,
    generation: u32,
}

impl NodeId {
    /// Slot index, stable for the lifetime of the node. Used for
    /// serialized node annotations.
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    time: f64,
    value: Vec<f64>,
    leaf: Option<usize>,
    leaves: LeafSet,
    count: usize,
}

impl Node {
    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    /// Dataset index carried by a leaf.
    pub fn leaf(&self) -> Option<usize> {
        self.leaf
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Leaves below (or at) this node.
    pub fn leaves(&self) -> &LeafSet {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.count
    }
}

#[derive(Debug, Clone)]
struct Slot {
    generation: u32,
    node: Option<Node>,
}

#[derive(Debug, Clone)]
pub struct Tree {
    slots: Vec<Slot>,
    free: Vec<u32>,
    stem: NodeId,
    dim: usize,
    universe: usize,
    leaf_nodes: Vec<Option<NodeId>>,
}

/// Nested description of a cladogram, convertible from integers and tuples:
/// `Shape::from(((1, 2), 3))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shape {
    Leaf(usize),
    Node(Vec<Shape>),
}

impl From<usize> for Shape {
    fn from(leaf: usize) -> Self {
        Shape::Leaf(leaf)
    }
}

impl From<i32> for Shape {
    fn from(leaf: i32) -> Self {
        Shape::Leaf(usize::try_from(leaf).expect("leaf index must be non-negative"))
    }
}

impl From<Vec<Shape>> for Shape {
    fn from(children: Vec<Shape>) -> Self {
        Shape::Node(children)
    }
}

macro_rules! shape_from_tuple {
    ($($name:ident),+) => {
        impl<$($name: Into<Shape>),+> From<($($name,)+)> for Shape {
            #[allow(non_snake_case)]
            fn from(($($name,)+): ($($name,)+)) -> Self {
                Shape::Node(vec![$($name.into()),+])
            }
        }
    };
}
shape_from_tuple!(A, B);
shape_from_tuple!(A, B, C);
shape_from_tuple!(A, B, C, D);
shape_from_tuple!(A, B, C, D, E);
shape_from_tuple!(A, B, C, D, E, F);

impl Shape {
    fn max_leaf(&self) -> usize {
        match self {
            Shape::Leaf(l) => *l,
            Shape::Node(ch) => ch.iter().map(Shape::max_leaf).max().unwrap_or(0),
        }
    }
}

impl Tree {
    /// A tree holding only the stem. Callers must attach a root.
    pub(crate) fn with_stem(universe: usize, dim: usize) -> Self {
        let mut t = Tree {
            slots: Vec::new(),
            free: Vec::new(),
            stem: NodeId {
                index: 0,
                generation: 0,
            },
            dim,
            universe,
            leaf_nodes: vec![None; universe],
        };
        t.stem = t.alloc(Node {
            parent: None,
            children: Vec::new(),
            time: 0.0,
            value: vec![0.0; dim],
            leaf: None,
            leaves: LeafSet::empty(universe),
            count: 0,
        });
        t
    }

    /// Builds a tree from a nested shape. Internal times are spaced
    /// uniformly by level; leaves sit at time 1. Values are empty (`dim = 0`).
    pub fn from_shape(shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        let mut t = Tree::with_stem(shape.max_leaf() + 1, 0);
        let root = t.build_shape(&shape)?;
        t.set_root(root);
        t.assign_uniform_times(root);
        Ok(t)
    }

    fn build_shape(&mut self, shape: &Shape) -> Result<NodeId> {
        match shape {
            Shape::Leaf(l) => self.make_leaf(*l, None),
            Shape::Node(ch) => {
                if ch.len() < 2 {
                    return Err(Error::Malformed("internal node with fewer than two children".into()));
                }
                let kids = ch
                    .iter()
                    .map(|c| self.build_shape(c))
                    .collect::<Result<Vec<_>>>()?;
                Ok(self.make_internal(kids, 0.0, None))
            }
        }
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        if let Some(index) = self.free.pop() {
            let slot = &mut self.slots[index as usize];
            slot.node = Some(node);
            NodeId {
                index,
                generation: slot.generation,
            }
        } else {
            self.slots.push(Slot {
                generation: 0,
                node: Some(node),
            });
            NodeId {
                index: (self.slots.len() - 1) as u32,
                generation: 0,
            }
        }
    }

    fn release(&mut self, id: NodeId) -> Node {
        let slot = &mut self.slots[id.index as usize];
        debug_assert_eq!(slot.generation, id.generation);
        slot.generation = slot.generation.wrapping_add(1);
        self.free.push(id.index);
        slot.node.take().expect("releasing an empty slot")
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.slots
            .get(id.index as usize)
            .filter(|s| s.generation == id.generation)
            .and_then(|s| s.node.as_ref())
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.get(id).ok_or(Error::StaleNode)
    }

    #[inline]
    pub(crate) fn n(&self, id: NodeId) -> &Node {
        self.get(id).expect("stale node handle")
    }

    #[inline]
    fn n_mut(&mut self, id: NodeId) -> &mut Node {
        let slot = &mut self.slots[id.index as usize];
        assert_eq!(slot.generation, id.generation, "stale node handle");
        slot.node.as_mut().expect("stale node handle")
    }

    pub(crate) fn make_leaf(&mut self, leaf: usize, value: Option<&[f64]>) -> Result<NodeId> {
        if leaf >= self.universe {
            self.universe = leaf + 1;
            self.leaf_nodes.resize(self.universe, None);
        }
        if self.leaf_nodes[leaf].is_some() {
            return Err(Error::DuplicateLeaf(leaf));
        }
        let value = match value {
            Some(v) => v.to_vec(),
            None => vec![0.0; self.dim],
        };
        let id = self.alloc(Node {
            parent: None,
            children: Vec::new(),
            time: 1.0,
            value,
            leaf: Some(leaf),
            leaves: LeafSet::singleton(self.universe, leaf),
            count: 1,
        });
        self.leaf_nodes[leaf] = Some(id);
        Ok(id)
    }

    pub(crate) fn make_internal(&mut self, children: Vec<NodeId>, time: f64, value: Option<&[f64]>) -> NodeId {
        let mut leaves = LeafSet::empty(self.universe);
        let mut count = 0;
        for &c in &children {
            let cn = self.n(c);
            leaves.union_with(&cn.leaves);
            count += cn.count;
        }
        let value = match value {
            Some(v) => v.to_vec(),
            None => vec![0.0; self.dim],
        };
        let id = self.alloc(Node {
            parent: None,
            children: children.clone(),
            time,
            value,
            leaf: None,
            leaves,
            count,
        });
        for c in children {
            self.n_mut(c).parent = Some(id);
        }
        id
    }

    pub(crate) fn set_root(&mut self, root: NodeId) {
        let stem = self.stem;
        let (leaves, count) = {
            let r = self.n(root);
            (r.leaves.clone(), r.count)
        };
        self.n_mut(root).parent = Some(stem);
        let s = self.n_mut(stem);
        s.children = vec![root];
        s.leaves = leaves;
        s.count = count;
    }

    pub fn stem(&self) -> NodeId {
        self.stem
    }

    /// Root of the cladogram (the stem's only child).
    pub fn root(&self) -> NodeId {
        self.n(self.stem).children[0]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// One past the largest leaf index this tree can address.
    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn n_leaves(&self) -> usize {
        self.n(self.stem).count
    }

    /// Leaf indices in ascending order.
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.n(self.stem).leaves.iter()
    }

    pub fn leaf_set(&self) -> &LeafSet {
        &self.n(self.stem).leaves
    }

    pub fn contains_leaf(&self, leaf: usize) -> bool {
        self.n(self.stem).leaves.contains(leaf)
    }

    pub fn leaf_node(&self, leaf: usize) -> Result<NodeId> {
        self.leaf_nodes
            .get(leaf)
            .copied()
            .flatten()
            .filter(|_| self.contains_leaf(leaf))
            .ok_or(Error::UnknownLeaf(leaf))
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.n(id).parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.n(id).children
    }

    pub fn time(&self, id: NodeId) -> f64 {
        self.n(id).time
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.n(id).value
    }

    pub fn leaves_of(&self, id: NodeId) -> &LeafSet {
        &self.n(id).leaves
    }

    pub fn leaf_count(&self, id: NodeId) -> usize {
        self.n(id).count
    }

    pub fn set_value(&mut self, id: NodeId, value: &[f64]) -> Result<()> {
        if value.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: value.len(),
            });
        }
        self.node(id)?;
        self.n_mut(id).value.copy_from_slice(value);
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, id: NodeId) -> &mut [f64] {
        &mut self.n_mut(id).value
    }

    /// Sets a time without checking its neighbours; callers restore the
    /// ordering before handing the tree out.
    pub(crate) fn set_time_unchecked(&mut self, id: NodeId, time: f64) {
        self.n_mut(id).time = time;
    }

    /// Sets an internal node's time, keeping parent < node < children.
    pub fn set_time(&mut self, id: NodeId, time: f64) -> Result<()> {
        let n = self.node(id)?;
        if n.is_leaf() || n.parent.is_none() {
            return Err(Error::InvalidParameter("only internal node times can be set"));
        }
        let pt = self.time(n.parent.unwrap());
        if time <= pt {
            return Err(Error::NonMonotoneTime { parent: pt, child: time });
        }
        for &c in &n.children {
            let ct = self.time(c);
            if ct <= time {
                return Err(Error::NonMonotoneTime { parent: time, child: ct });
            }
        }
        self.n_mut(id).time = time;
        Ok(())
    }

    /// Gives every node a value vector of length `dim`, leaves taken from
    /// `rows[leaf]`, internal nodes zeroed.
    pub fn with_values(mut self, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        self.dim = dim;
        let ids: Vec<NodeId> = self.all_nodes();
        for id in ids {
            let v = match self.n(id).leaf {
                Some(l) => {
                    let row = rows.get(l).ok_or(Error::UnknownLeaf(l))?;
                    if row.len() != dim {
                        return Err(Error::Dimension { expected: dim, got: row.len() });
                    }
                    row.clone()
                }
                None => vec![0.0; dim],
            };
            self.n_mut(id).value = v;
        }
        Ok(self)
    }

    /// Nodes reachable from the stem, stem included, in preorder.
    pub(crate) fn all_nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.stem];
        while let Some(id) = stack.pop() {
            out.push(id);
            for &c in self.n(id).children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Preorder over the cladogram, stem excluded, left child first.
    pub fn preorder(&self) -> Vec<NodeId> {
        self.preorder_from(self.root())
    }

    pub fn preorder_from(&self, top: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![top];
        while let Some(id) = stack.pop() {
            out.push(id);
            for &c in self.n(id).children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Children before parents, stem excluded.
    pub fn postorder(&self) -> Vec<NodeId> {
        let mut v = self.preorder();
        v.reverse();
        v
    }

    /// Internal nodes of the cladogram (stem excluded) in preorder.
    pub fn internal_nodes(&self) -> Vec<NodeId> {
        self.preorder().into_iter().filter(|&id| !self.n(id).is_leaf()).collect()
    }

    pub fn is_binary(&self) -> bool {
        self.preorder().into_iter().all(|id| {
            let k = self.n(id).children.len();
            k == 0 || k == 2
        })
    }

    /// Deepest node whose leaf set contains both `u` and `v`.
    pub fn lca(&self, u: usize, v: usize) -> Result<NodeId> {
        let mut cur = self.leaf_node(u)?;
        self.leaf_node(v)?;
        while !self.n(cur).leaves.contains(v) {
            cur = self.n(cur).parent.expect("leaf sets are consistent");
        }
        Ok(cur)
    }

    /// Deepest node containing every leaf of `set`.
    pub fn lca_of(&self, set: &LeafSet) -> Result<NodeId> {
        let first = set.min().ok_or(Error::EmptySubset)?;
        for l in set.iter() {
            self.leaf_node(l)?;
        }
        let mut cur = self.leaf_node(first)?;
        while !set.is_subset(&self.n(cur).leaves) {
            cur = self.n(cur).parent.expect("leaf sets are consistent");
        }
        Ok(cur)
    }

    /// Edges from the cladogram root down to `id` (root has depth 0).
    pub fn depth(&self, id: NodeId) -> usize {
        let root = self.root();
        let mut d = 0;
        let mut cur = id;
        while cur != root {
            match self.n(cur).parent {
                Some(p) => {
                    cur = p;
                    d += 1;
                }
                None => break,
            }
        }
        d
    }

    /// Number of edges on the path between two leaves.
    pub fn tree_distance(&self, u: usize, v: usize) -> Result<usize> {
        let a = self.leaf_node(u)?;
        let b = self.leaf_node(v)?;
        if u == v {
            return Ok(0);
        }
        let l = self.lca(u, v)?;
        Ok(self.depth(a) + self.depth(b) - 2 * self.depth(l))
    }

    /// True if `anc` is `node` or lies above it.
    pub fn is_ancestor_or_self(&self, anc: NodeId, node: NodeId) -> bool {
        let mut cur = Some(node);
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            cur = self.n(c).parent;
        }
        false
    }

    /// Restriction to `subset`: unary nodes are suppressed, retained nodes
    /// keep their times and values.
    pub fn induce(&self, subset: &[usize]) -> Result<Tree> {
        if subset.is_empty() {
            return Err(Error::EmptySubset);
        }
        let mut keep = LeafSet::empty(self.universe);
        for &l in subset {
            self.leaf_node(l)?;
            keep.insert(l);
        }
        let mut out = Tree::with_stem(self.universe, self.dim);
        let root = self
            .induce_rec(self.root(), &keep, &mut out)
            .expect("subset is nonempty");
        out.set_root(root);
        Ok(out)
    }

    fn induce_rec(&self, id: NodeId, keep: &LeafSet, out: &mut Tree) -> Option<NodeId> {
        let n = self.n(id);
        if n.leaves.is_disjoint(keep) {
            return None;
        }
        if let Some(l) = n.leaf {
            return Some(out.make_leaf(l, Some(&n.value)).expect("leaves are unique"));
        }
        let kids: Vec<NodeId> = n
            .children
            .iter()
            .filter_map(|&c| self.induce_rec(c, keep, out))
            .collect();
        if kids.len() == 1 {
            Some(kids[0])
        } else {
            Some(out.make_internal(kids, n.time, Some(&n.value)))
        }
    }

    /// Leaf sets of all cladogram nodes, leaves included.
    pub fn clusters(&self) -> Vec<LeafSet> {
        self.preorder().into_iter().map(|id| self.n(id).leaves.clone()).collect()
    }

    /// Topology string with children ordered by smallest leaf; equal for
    /// trees that differ only in child order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        self.canonical_rec(self.root(), &mut s);
        s
    }

    fn canonical_rec(&self, id: NodeId, out: &mut String) {
        let n = self.n(id);
        if let Some(l) = n.leaf {
            out.push_str(&format!("{l}"));
            return;
        }
        let mut kids: Vec<NodeId> = n.children.clone();
        kids.sort_by_key(|&c| self.n(c).leaves.min());
        out.push('(');
        for (i, c) in kids.into_iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            self.canonical_rec(c, out);
        }
        out.push(')');
    }

    /// Nested shape of the cladogram, children in stored order.
    pub fn to_shape(&self) -> Shape {
        self.shape_rec(self.root())
    }

    fn shape_rec(&self, id: NodeId) -> Shape {
        let n = self.n(id);
        match n.leaf {
            Some(l) => Shape::Leaf(l),
            None => Shape::Node(n.children.iter().map(|&c| self.shape_rec(c)).collect()),
        }
    }

    pub fn same_topology(&self, other: &Tree) -> bool {
        self.canonical() == other.canonical()
    }

    /// Places internal nodes below `top` (inclusive) on evenly spaced levels
    /// between the time of `top`'s parent and 1; leaves stay at 1.
    pub fn assign_uniform_times(&mut self, top: NodeId) {
        let t0 = self.n(top).parent.map_or(0.0, |p| self.n(p).time);
        let mut levels: Vec<(NodeId, usize)> = Vec::new();
        let mut stack = vec![(top, 1usize)];
        let mut max_level = 1;
        while let Some((id, lvl)) = stack.pop() {
            max_level = max_level.max(lvl);
            levels.push((id, lvl));
            for &c in &self.n(id).children {
                stack.push((c, lvl + 1));
            }
        }
        for (id, lvl) in levels {
            let t = if self.n(id).is_leaf() {
                1.0
            } else {
                t0 + (1.0 - t0) * lvl as f64 / max_level as f64
            };
            self.n_mut(id).time = t;
        }
    }

    /// Checks structural invariants: parent links, cached leaf sets and
    /// counts, strictly increasing times, leaves at time 1, and optionally
    /// binary internal nodes.
    pub fn validate(&self, require_binary: bool) -> Result<()> {
        let stem = self.n(self.stem);
        if stem.children.len() != 1 || stem.time != 0.0 {
            return Err(Error::Malformed("stem must have one child and time 0".into()));
        }
        for id in self.preorder() {
            let n = self.n(id);
            let p = n.parent.ok_or_else(|| Error::Malformed("orphan node".into()))?;
            if !self.n(p).children.contains(&id) {
                return Err(Error::Malformed("parent does not list child".into()));
            }
            let pt = self.n(p).time;
            if n.time <= pt {
                return Err(Error::NonMonotoneTime { parent: pt, child: n.time });
            }
            if n.is_leaf() {
                let l = n.leaf.ok_or_else(|| Error::Malformed("leaf without index".into()))?;
                if n.time != 1.0 {
                    return Err(Error::Malformed(format!("leaf {l} not at time 1")));
                }
                if self.leaf_nodes.get(l).copied().flatten() != Some(id) {
                    return Err(Error::Malformed(format!("leaf map out of date for {l}")));
                }
                if n.leaves != LeafSet::singleton(self.universe, l) || n.count != 1 {
                    return Err(Error::Malformed(format!("leaf set of leaf {l} stale")));
                }
            } else {
                if n.children.len() < 2 || (require_binary && n.children.len() != 2) {
                    return Err(Error::NotBinary);
                }
                let mut u = LeafSet::empty(self.universe);
                let mut c = 0;
                for &k in &n.children {
                    u.union_with(&self.n(k).leaves);
                    c += self.n(k).count;
                }
                if u != n.leaves || c != n.count || n.leaves.len() != c {
                    return Err(Error::Malformed("cached leaf set stale".into()));
                }
            }
        }
        let r = self.n(self.root());
        if r.leaves != stem.leaves || r.count != stem.count {
            return Err(Error::Malformed("stem leaf set stale".into()));
        }
        Ok(())
    }

    // ---- surgery used by SPR and constraint incorporation ----

    /// Unlinks `s` together with its parent `p`, splicing `s`'s sibling into
    /// `p`'s place. The subtree under `s` stays in the arena, detached.
    pub(crate) fn detach(&mut self, s: NodeId) -> Result<Detached> {
        self.node(s)?;
        let p = self.n(s).parent.ok_or(Error::PruneRoot)?;
        let g = self.n(p).parent.ok_or(Error::PruneRoot)?;
        let pn = self.n(p);
        if pn.children.len() != 2 {
            return Err(Error::NotBinary);
        }
        let s_slot = pn.children.iter().position(|&c| c == s).expect("child of parent");
        let sibling = pn.children[1 - s_slot];
        let p_slot = self.n(g).children.iter().position(|&c| c == p).expect("child of parent");
        let moved = self.n(s).leaves.clone();
        let moved_count = self.n(s).count;

        self.n_mut(g).children[p_slot] = sibling;
        self.n_mut(sibling).parent = Some(g);
        self.n_mut(s).parent = None;
        let mut cur = Some(g);
        while let Some(c) = cur {
            let n = self.n_mut(c);
            n.leaves.difference_with(&moved);
            n.count -= moved_count;
            cur = n.parent;
        }
        let removed = self.release(p);
        Ok(Detached {
            parent: g,
            sibling,
            time: removed.time,
            value: removed.value,
            s_first: s_slot == 0,
        })
    }

    /// Creates a node at `time` on the edge above `v`, with children `s`
    /// (a detached subtree root) and `v`.
    pub(crate) fn insert_above(&mut self, v: NodeId, s: NodeId, time: f64, value: Vec<f64>, s_first: bool) -> NodeId {
        let u = self.n(v).parent.expect("cannot insert above the stem");
        let v_slot = self.n(u).children.iter().position(|&c| c == v).expect("child of parent");
        let children = if s_first { vec![s, v] } else { vec![v, s] };
        let moved = self.n(s).leaves.clone();
        let moved_count = self.n(s).count;
        let p = self.make_internal(children, time, Some(&value));
        self.n_mut(p).parent = Some(u);
        self.n_mut(u).children[v_slot] = p;
        let mut cur = Some(u);
        while let Some(c) = cur {
            let n = self.n_mut(c);
            n.leaves.union_with(&moved);
            n.count += moved_count;
            cur = n.parent;
        }
        p
    }

    /// Replaces the subtree rooted at `z` with the shape of `replacement`
    /// (a tree over exactly the leaves of `z`). Leaf values carry over;
    /// new internal nodes get zero values and the replacement's times.
    pub(crate) fn replace_subtree(&mut self, z: NodeId, replacement: &Tree) -> Result<NodeId> {
        if replacement.leaf_set() != self.leaves_of(z) {
            return Err(Error::LeafSetMismatch);
        }
        let parent = self.n(z).parent.ok_or(Error::PruneRoot)?;
        let slot = self.n(parent).children.iter().position(|&c| c == z).expect("child of parent");
        let mut leaf_values: Vec<(usize, Vec<f64>)> = Vec::new();
        for id in self.preorder_from(z) {
            let n = self.release(id);
            if let Some(l) = n.leaf {
                self.leaf_nodes[l] = None;
                leaf_values.push((l, n.value));
            }
        }
        let new_root = self.copy_from(replacement, replacement.root(), &leaf_values)?;
        self.n_mut(new_root).parent = Some(parent);
        self.n_mut(parent).children[slot] = new_root;
        Ok(new_root)
    }

    fn copy_from(&mut self, src: &Tree, id: NodeId, leaf_values: &[(usize, Vec<f64>)]) -> Result<NodeId> {
        let n = src.n(id);
        if let Some(l) = n.leaf {
            let v = leaf_values
                .iter()
                .find(|(k, _)| *k == l)
                .map(|(_, v)| v.as_slice());
            return self.make_leaf(l, v);
        }
        let kids = n
            .children
            .iter()
            .map(|&c| self.copy_from(src, c, leaf_values))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.make_internal(kids, n.time, None))
    }
}

/// What [`Tree::detach`] removed: the former parent node's attachment point
/// and state.
#[derive(Debug, Clone)]
pub(crate) struct Detached {
    pub parent: NodeId,
    pub sibling: NodeId,
    pub time: f64,
    pub value: Vec<f64>,
    pub s_first: bool,
}

/// Incremental construction of a tree bottom-up. Used by file-format
/// readers; optional times are either all present (validated) or replaced
/// by uniform level spacing.
#[derive(Debug, Default)]
pub struct TreeBuilder {
    nodes: Vec<BuildNode>,
}

#[derive(Debug)]
struct BuildNode {
    leaf: Option<usize>,
    children: Vec<usize>,
    time: Option<f64>,
}

/// Handle into a [`TreeBuilder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildId(usize);

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&mut self, leaf: usize) -> BuildId {
        self.nodes.push(BuildNode {
            leaf: Some(leaf),
            children: Vec::new(),
            time: Some(1.0),
        });
        BuildId(self.nodes.len() - 1)
    }

    pub fn internal(&mut self, children: Vec<BuildId>, time: Option<f64>) -> BuildId {
        self.nodes.push(BuildNode {
            leaf: None,
            children: children.into_iter().map(|c| c.0).collect(),
            time,
        });
        BuildId(self.nodes.len() - 1)
    }

    /// Finishes with `root` as the cladogram root. If every internal node
    /// has a time they must strictly increase downwards and stay below 1;
    /// otherwise all internal times are replaced by uniform spacing.
    pub fn finish(self, root: BuildId) -> Result<Tree> {
        let universe = self
            .nodes
            .iter()
            .filter_map(|n| n.leaf)
            .max()
            .map_or(0, |m| m + 1);
        let mut t = Tree::with_stem(universe, 0);
        let all_timed = self.nodes.iter().all(|n| n.time.is_some());
        let r = self.emit(&mut t, root.0)?;
        t.set_root(r);
        if all_timed {
            t.validate(false)?;
        } else {
            t.assign_uniform_times(r);
        }
        Ok(t)
    }

    fn emit(&self, t: &mut Tree, idx: usize) -> Result<NodeId> {
        let n = &self.nodes[idx];
        if let Some(l) = n.leaf {
            return t.make_leaf(l, None);
        }
        if n.children.len() < 2 {
            return Err(Error::Malformed("internal node with fewer than two children".into()));
        }
        let kids = n
            .children
            .iter()
            .map(|&c| self.emit(t, c))
            .collect::<Result<Vec<_>>>()?;
        let time = n.time.unwrap_or(0.0);
        if n.time.is_some() && !(0.0..1.0).contains(&time) {
            return Err(Error::TimeOutOfRange(time));
        }
        Ok(t.make_internal(kids, time, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: impl Into<Shape>) -> Tree {
        Tree::from_shape(shape).unwrap()
    }

    #[test]
    fn lca_of_cherry_and_outgroup() {
        let tree = t(((1, 2), 3));
        let cherry = tree.lca(1, 2).unwrap();
        assert_eq!(tree.leaves_of(cherry).iter().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(tree.lca(1, 3).unwrap(), tree.root());
        assert_eq!(tree.lca(9, 1), Err(Error::UnknownLeaf(9)));
    }

    #[test]
    fn uniform_times_are_monotone() {
        let tree = t((((1, 2), 3), (4, (5, 6))));
        tree.validate(true).unwrap();
        assert!(tree.time(tree.root()) > 0.0);
    }

    #[test]
    fn tree_distance_counts_edges_below_root() {
        let tree = t((((1, 2), 3), 4));
        assert_eq!(tree.tree_distance(1, 2).unwrap(), 2);
        assert_eq!(tree.tree_distance(1, 4).unwrap(), 4);
        assert_eq!(tree.tree_distance(3, 3).unwrap(), 0);
    }

    #[test]
    fn induce_suppresses_unary_nodes() {
        let tree = t((((1, 2), 3), 4));
        let sub = tree.induce(&[1, 3, 4]).unwrap();
        assert_eq!(sub.canonical(), "((1,3),4)");
        sub.validate(true).unwrap();
        // retained nodes keep their times
        assert_eq!(sub.time(sub.lca(1, 3).unwrap()), tree.time(tree.lca(1, 3).unwrap()));
        let all = tree.induce(&[1, 2, 3, 4]).unwrap();
        assert!(all.same_topology(&tree));
        assert_eq!(tree.induce(&[]).unwrap_err(), Error::EmptySubset);
        assert_eq!(tree.induce(&[7]).unwrap_err(), Error::UnknownLeaf(7));
    }

    #[test]
    fn stale_handles_are_rejected() {
        let mut tree = t(((1, 2), 3));
        let leaf1 = tree.leaf_node(1).unwrap();
        let p = tree.parent(leaf1).unwrap();
        let d = tree.detach(leaf1).unwrap();
        assert_eq!(tree.node(p).unwrap_err(), Error::StaleNode);
        let root = tree.root();
        tree.insert_above(root, leaf1, 0.05, d.value, true);
        assert!(tree.get(p).is_none());
        tree.validate(true).unwrap();
        assert_eq!(tree.canonical(), "(1,(2,3))");
    }

    #[test]
    fn builder_rejects_bad_times_and_duplicates() {
        let mut b = TreeBuilder::new();
        let a = b.leaf(0);
        let c = b.leaf(0);
        let r = b.internal(vec![a, c], None);
        assert_eq!(b.finish(r).unwrap_err(), Error::DuplicateLeaf(0));

        let mut b = TreeBuilder::new();
        let a = b.leaf(0);
        let c = b.leaf(1);
        let inner = b.internal(vec![a, c], Some(0.3));
        let d = b.leaf(2);
        let r = b.internal(vec![inner, d], Some(0.5));
        assert!(matches!(b.finish(r), Err(Error::NonMonotoneTime { .. })));
    }

    #[test]
    fn multifurcations_are_kept() {
        let tree = t(((1, 2, 3), (4, 5)));
        tree.validate(false).unwrap();
        assert!(!tree.is_binary());
        assert_eq!(tree.validate(true), Err(Error::NotBinary));
    }
}
