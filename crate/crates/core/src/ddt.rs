//! Dirichlet diffusion tree model.
//!
//! A point travels from the origin at time 0 by Brownian motion with
//! variance `sigma2` per unit time per dimension. Along a segment already
//! traversed by `m` earlier points it diverges at hazard `a(t) / m`, with
//! `a(t) = c / (1 - t)`; at an existing branch point it follows each
//! branch with probability proportional to the points that went that way.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{expm1, lgamma, log, log1p};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tree::{NodeId, Tree};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdtParams {
    sigma2: f64,
    c: f64,
    dim: usize,
}

impl DdtParams {
    pub fn new(sigma2: f64, c: f64, dim: usize) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter("sigma2 must be positive"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter("c must be positive"));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1"));
        }
        Ok(Self { sigma2, c, dim })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `a(t) = c / (1 - t)`.
    pub fn acquisition(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.c / (1.0 - t))
    }

    /// `A(t) = -c ln(1 - t)`, the integral of `a` from 0.
    pub fn cumulative_hazard(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.hazard(t))
    }

    /// Unchecked `A(t)`; `+inf` at `t = 1`.
    #[inline]
    pub(crate) fn hazard(&self, t: f64) -> f64 {
        if t >= 1.0 {
            f64::INFINITY
        } else {
            -self.c * log1p(-t)
        }
    }

    #[inline]
    fn log_acquisition(&self, t: f64) -> f64 {
        log(self.c) - log1p(-t)
    }

    /// Time at which the cumulative hazard reaches `a`.
    #[inline]
    pub(crate) fn hazard_inverse(&self, a: f64) -> f64 {
        -expm1(-a / self.c)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    Ok(())
}

/// Mean over dimensions of the per-dimension sample variance.
pub fn estimate_sigma2(rows: &[Vec<f64>]) -> Result<f64> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two rows to estimate sigma2"));
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::InvalidParameter("rows have no features"));
    }
    let mut total = 0.0;
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let ss: f64 = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum();
        total += ss / (n - 1) as f64;
    }
    let s2 = total / d as f64;
    if s2 > 0.0 {
        Ok(s2)
    } else {
        Err(Error::InvalidParameter("data has zero variance"))
    }
}

fn harmonic(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

/// Log density of the tree structure and divergence times.
///
/// Each internal node `v` with parent `u`, children holding `l` and `r`
/// leaves and `m = l + r`, contributes
/// `ln a(t_v) + ln[(l-1)! (r-1)! / (m-1)!] - (A(t_v) - A(t_u)) H_{m-1}`.
pub fn log_prior(tree: &Tree, params: &DdtParams) -> Result<f64> {
    let mut total = 0.0;
    for id in tree.internal_nodes() {
        total += node_log_prior(tree, params, id)?;
    }
    Ok(total)
}

pub(crate) fn node_log_prior(tree: &Tree, params: &DdtParams, id: NodeId) -> Result<f64> {
    let node = tree.n(id);
    let parent = node.parent().expect("internal nodes have parents");
    let (tu, tv) = (tree.time(parent), node.time());
    if tv <= tu {
        return Err(Error::NonMonotoneTime { parent: tu, child: tv });
    }
    if tv >= 1.0 {
        return Err(Error::TimeOutOfRange(tv));
    }
    let kids = node.children();
    if kids.len() != 2 {
        return Err(Error::NotBinary);
    }
    let l = tree.leaf_count(kids[0]);
    let r = tree.leaf_count(kids[1]);
    let m = l + r;
    for &k in kids {
        if tree.time(k) <= tv {
            return Err(Error::NonMonotoneTime { parent: tv, child: tree.time(k) });
        }
    }
    let combinatorial = lgamma(l as f64) + lgamma(r as f64) - lgamma(m as f64);
    Ok(params.log_acquisition(tv) + combinatorial - (params.hazard(tv) - params.hazard(tu)) * harmonic(m - 1))
}

#[inline]
fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * log(2.0 * PI * var) - d * d / (2.0 * var)
}

/// Log density of one edge's Brownian increment.
pub(crate) fn edge_loglik(parent_val: &[f64], child_val: &[f64], dt: f64, params: &DdtParams) -> Result<f64> {
    if dt <= 0.0 {
        return Err(Error::ZeroLengthEdge);
    }
    let var = params.sigma2 * dt;
    Ok(parent_val
        .iter()
        .zip(child_val)
        .map(|(&u, &v)| log_normal(v, u, var))
        .sum())
}

/// Gaussian log density of every node value given its parent's, summed over
/// all edges including the one leaving the stem.
pub fn log_data_likelihood(tree: &Tree, params: &DdtParams) -> Result<f64> {
    if tree.dim() != params.dim {
        return Err(Error::Dimension { expected: params.dim, got: tree.dim() });
    }
    let mut total = 0.0;
    for id in tree.preorder() {
        let p = tree.parent(id).expect("non-stem node");
        total += edge_loglik(tree.value(p), tree.value(id), tree.time(id) - tree.time(p), params)?;
    }
    Ok(total)
}

/// Message from the leaves below a node: the leaf density as a function of
/// the node's value is `exp(log_scale) * N(mean; x, var)` per dimension.
#[derive(Debug, Clone)]
struct UpMessage {
    mean: Vec<f64>,
    var: f64,
    log_scale: f64,
}

fn upward(tree: &Tree, data: &[Vec<f64>], params: &DdtParams) -> Result<Vec<(NodeId, UpMessage)>> {
    let mut msgs: Vec<(NodeId, UpMessage)> = Vec::new();
    let mut index = vec![usize::MAX; tree_slot_bound(tree)];
    for id in tree.postorder() {
        let node = tree.n(id);
        let msg = if let Some(l) = node.leaf() {
            let row = data.get(l).ok_or(Error::UnknownLeaf(l))?;
            if row.len() != params.dim {
                return Err(Error::Dimension { expected: params.dim, got: row.len() });
            }
            UpMessage {
                mean: row.clone(),
                var: 0.0,
                log_scale: 0.0,
            }
        } else {
            let mut acc: Option<UpMessage> = None;
            for &k in node.children() {
                let child = &msgs[index[k.index()]].1;
                let dt = tree.time(k) - node.time();
                if dt <= 0.0 {
                    return Err(Error::ZeroLengthEdge);
                }
                let lifted = UpMessage {
                    mean: child.mean.clone(),
                    var: child.var + params.sigma2 * dt,
                    log_scale: child.log_scale,
                };
                acc = Some(match acc {
                    None => lifted,
                    Some(prev) => combine(&prev, &lifted)?,
                });
            }
            acc.expect("internal node has children")
        };
        index[id.index()] = msgs.len();
        msgs.push((id, msg));
    }
    Ok(msgs)
}

fn tree_slot_bound(tree: &Tree) -> usize {
    tree.preorder().iter().map(|id| id.index()).max().unwrap_or(0) + 1
}

fn combine(a: &UpMessage, b: &UpMessage) -> Result<UpMessage> {
    let s = a.var + b.var;
    if !(s > 0.0) {
        return Err(Error::Singular);
    }
    let mut log_scale = a.log_scale + b.log_scale;
    let mut mean = Vec::with_capacity(a.mean.len());
    for (&ma, &mb) in a.mean.iter().zip(&b.mean) {
        log_scale += log_normal(ma, mb, s);
        mean.push((ma * b.var + mb * a.var) / s);
    }
    Ok(UpMessage {
        mean,
        var: a.var * b.var / s,
        log_scale,
    })
}

/// Log density of the leaf values with every internal value integrated
/// out, by upward Gaussian message passing. `data[i]` is leaf `i`'s row.
pub fn marginal_leaf_loglik(tree: &Tree, data: &[Vec<f64>], params: &DdtParams) -> Result<f64> {
    let msgs = upward(tree, data, params)?;
    let (root_id, root) = msgs.last().expect("tree has a root");
    debug_assert_eq!(*root_id, tree.root());
    let var = root.var + params.sigma2 * tree.time(tree.root());
    if !(var > 0.0) {
        return Err(Error::Singular);
    }
    Ok(root.log_scale + root.mean.iter().map(|&m| log_normal(m, 0.0, var)).sum::<f64>())
}

/// Exact posterior mean and variance of every internal node value given the
/// leaves, from an upward and a downward pass.
pub fn posterior_internal_values(tree: &Tree, data: &[Vec<f64>], params: &DdtParams) -> Result<Vec<(NodeId, Vec<f64>, f64)>> {
    let msgs = upward(tree, data, params)?;
    let mut index = vec![usize::MAX; tree_slot_bound(tree)];
    for (i, (id, _)) in msgs.iter().enumerate() {
        index[id.index()] = i;
    }
    let up = |id: NodeId| &msgs[index[id.index()]].1;
    let d = params.dim;
    // message into each node from above: N(x; mean, var)
    let mut down: Vec<Option<(Vec<f64>, f64)>> = vec![None; msgs.len()];
    let root = tree.root();
    down[index[root.index()]] = Some((vec![0.0; d], params.sigma2 * tree.time(root)));
    let mut out = Vec::new();
    for id in tree.preorder() {
        let node = tree.n(id);
        if node.is_leaf() {
            continue;
        }
        let (pm, pv) = down[index[id.index()]].clone().expect("parents visited first");
        // posterior at this node: product of above-message and all children
        let lifted: Vec<(Vec<f64>, f64)> = node
            .children()
            .iter()
            .map(|&k| {
                let m = up(k);
                (m.mean.clone(), m.var + params.sigma2 * (tree.time(k) - node.time()))
            })
            .collect();
        let (mean, var) = product(core::iter::once((pm.clone(), pv)).chain(lifted.iter().cloned()), d)?;
        out.push((id, mean, var));
        for (i, &k) in node.children().iter().enumerate() {
            if tree.n(k).is_leaf() {
                continue;
            }
            let others = core::iter::once((pm.clone(), pv)).chain(
                lifted
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, m)| m.clone()),
            );
            let (m, v) = product(others, d)?;
            down[index[k.index()]] = Some((m, v + params.sigma2 * (tree.time(k) - node.time())));
        }
    }
    Ok(out)
}

/// Product of Gaussian factors `N(x; mean_i, var_i)` in `x`, returned as
/// (mean, var). Zero-variance factors pin the result.
fn product(factors: impl Iterator<Item = (Vec<f64>, f64)>, d: usize) -> Result<(Vec<f64>, f64)> {
    let mut prec = 0.0;
    let mut wsum = vec![0.0; d];
    for (m, v) in factors {
        if v <= 0.0 {
            return Ok((m, 0.0));
        }
        prec += 1.0 / v;
        for (w, x) in wsum.iter_mut().zip(&m) {
            *w += x / v;
        }
    }
    if prec <= 0.0 {
        return Err(Error::Singular);
    }
    Ok((wsum.into_iter().map(|w| w / prec).collect(), 1.0 / prec))
}

/// Where a new point diverges: on the edge `parent -> child` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttachLocation {
    pub parent: NodeId,
    pub child: NodeId,
    pub time: f64,
}

/// What a walk may do on one branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchRule {
    /// The branch may be entered at all.
    pub enter: bool,
    /// This branch must be taken at its upper node, excluding its siblings,
    /// and the walk may not diverge on it.
    pub required: bool,
    /// Diverging on the branch is allowed.
    pub diverge: bool,
    /// Continuing into the branch's lower node is allowed.
    pub descend: bool,
}

impl BranchRule {
    pub const FREE: BranchRule = BranchRule {
        enter: true,
        required: false,
        diverge: true,
        descend: true,
    };
}

/// Restrictions on where the generative walk may end. A rule must depend on
/// the tree and the branch only; a location is allowed when every branch on
/// the path to it permits the steps taken.
pub trait WalkRules {
    fn rule(&self, tree: &Tree, parent: NodeId, child: NodeId) -> BranchRule;
}

/// No restrictions: the plain generative process.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unconstrained;

impl WalkRules for Unconstrained {
    fn rule(&self, _tree: &Tree, _parent: NodeId, _child: NodeId) -> BranchRule {
        BranchRule::FREE
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BranchMass {
    /// Walk may diverge here.
    diverge: bool,
    /// Walk may continue into the lower node.
    descend: bool,
    /// Probability of diverging on the branch before the ceiling, for a walk
    /// that has entered it.
    div_mass: f64,
    /// Weighted sum over allowed children of their `h`.
    below: f64,
    /// Probability that a walk entering the branch ends at an allowed
    /// location before the ceiling.
    h: f64,
    /// Branch may be chosen at its upper node.
    chosen: bool,
}

/// The generative walk conditioned on ending at an allowed location strictly
/// before a time ceiling. Equivalent to running the unrestricted walk and
/// discarding disallowed or late outcomes, but exact and restart-free: each
/// branch carries the probability `h` that a walk entering it succeeds, and
/// choices are weighted by it.
#[derive(Debug, Clone)]
pub struct WalkPlan {
    mass: Vec<BranchMass>,
    ceiling: f64,
    params: DdtParams,
}

impl WalkPlan {
    pub fn new(tree: &Tree, params: &DdtParams, rules: &dyn WalkRules, ceiling: Option<f64>) -> Result<Self> {
        let ceiling = ceiling.unwrap_or(1.0);
        if !(ceiling > 0.0 && ceiling <= 1.0) {
            return Err(Error::TimeOutOfRange(ceiling));
        }
        let mut mass = vec![BranchMass::default(); tree_slot_bound(tree).max(tree.stem().index() + 1)];
        let a_ceil = params.hazard(ceiling);
        for y in tree.postorder() {
            let x = tree.parent(y).expect("non-stem node");
            let node = tree.n(y);
            let rule = rules.rule(tree, x, y);
            let m = node.leaf_count() as f64;
            let (tx, ty) = (tree.time(x), node.time());
            let ax = params.hazard(tx);
            let div_mass = if tx >= ceiling {
                0.0
            } else {
                let top = if ty < ceiling { params.hazard(ty) } else { a_ceil };
                -expm1(-(top - ax) / m)
            };
            let pass = if node.is_leaf() || ty >= ceiling {
                0.0
            } else {
                libm::exp(-(params.hazard(ty) - ax) / m)
            };
            let mut below = 0.0;
            if let Some(kids) = allowed_children(tree, y, rules) {
                for k in kids {
                    let w = tree.leaf_count(k) as f64 / m;
                    below += w * mass[k.index()].h;
                    mass[k.index()].chosen = true;
                }
            }
            let diverge = rule.diverge && !rule.required;
            let descend = rule.descend && !node.is_leaf();
            let mut h = 0.0;
            if diverge {
                h += div_mass;
            }
            if descend {
                h += pass * below;
            }
            mass[y.index()] = BranchMass {
                diverge,
                descend,
                div_mass,
                below,
                h,
                chosen: false,
            };
        }
        let root = tree.root();
        let r = rules.rule(tree, tree.stem(), root);
        mass[root.index()].chosen = r.enter;
        let plan = WalkPlan {
            mass,
            ceiling,
            params: *params,
        };
        if !(plan.normalizer(tree) > 0.0) {
            return Err(Error::NoValidLocation);
        }
        Ok(plan)
    }

    /// Probability that the unrestricted walk ends at an allowed location
    /// before the ceiling.
    pub fn normalizer(&self, tree: &Tree) -> f64 {
        let b = &self.mass[tree.root().index()];
        if b.chosen {
            b.h
        } else {
            0.0
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, tree: &Tree, rng: &mut R) -> Result<AttachLocation> {
        let mut x = tree.stem();
        let mut y = tree.root();
        loop {
            let b = &self.mass[y.index()];
            let p_div = if b.diverge { b.div_mass / b.h } else { 0.0 };
            let u: f64 = rng.random();
            if u < p_div {
                let m = tree.leaf_count(y) as f64;
                let ax = self.params.hazard(tree.time(x));
                let v: f64 = rng.random();
                let a = ax - m * log1p(-v * b.div_mass);
                let t = self.params.hazard_inverse(a);
                return Ok(clamp_into(tree, x, y, t, self.ceiling));
            }
            let kids = allowed_children_from(tree, y, &self.mass);
            let target = rng.random::<f64>() * b.below;
            let mut acc = 0.0;
            let mut next = None;
            for &k in &kids {
                let w = tree.leaf_count(k) as f64 / tree.leaf_count(y) as f64 * self.mass[k.index()].h;
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                next = Some(k);
                if target < acc {
                    break;
                }
            }
            let Some(k) = next else {
                return Err(Error::NoValidLocation);
            };
            x = y;
            y = k;
        }
    }

    /// Log density of the conditioned walk ending at `loc`; `-inf` if the
    /// location is not allowed.
    pub fn log_density(&self, tree: &Tree, loc: &AttachLocation) -> Result<f64> {
        tree.node(loc.parent)?;
        tree.node(loc.child)?;
        if tree.parent(loc.child) != Some(loc.parent) {
            return Err(Error::InvalidAttach("parent is not the parent of child"));
        }
        let (tx, ty) = (tree.time(loc.parent), tree.time(loc.child));
        if !(loc.time > tx && loc.time < ty) {
            return Err(Error::InvalidAttach("time outside branch"));
        }
        if loc.time >= self.ceiling {
            return Ok(f64::NEG_INFINITY);
        }
        let p = &self.params;
        let last = &self.mass[loc.child.index()];
        if !last.diverge {
            return Ok(f64::NEG_INFINITY);
        }
        let m = tree.leaf_count(loc.child) as f64;
        let mut logp = p.log_acquisition(loc.time) - log(m) - (p.hazard(loc.time) - p.hazard(tx)) / m;
        // every branch above must have been chosen and passed through
        let mut y = loc.child;
        loop {
            let b = &self.mass[y.index()];
            if !b.chosen {
                return Ok(f64::NEG_INFINITY);
            }
            let x = tree.parent(y).expect("non-stem node");
            if x == tree.stem() {
                break;
            }
            let bx = &self.mass[x.index()];
            if !bx.descend {
                return Ok(f64::NEG_INFINITY);
            }
            let mx = tree.leaf_count(x) as f64;
            logp += log(tree.leaf_count(y) as f64 / mx) - (p.hazard(tree.time(x)) - p.hazard(tree.time(tree.parent(x).expect("non-stem")))) / mx;
            y = x;
        }
        Ok(logp - log(self.normalizer(tree)))
    }
}

/// Children of `y` the walk may choose: all allowed ones, or the single
/// required one. `None` if two children are required.
fn allowed_children(tree: &Tree, y: NodeId, rules: &dyn WalkRules) -> Option<Vec<NodeId>> {
    let mut out = Vec::new();
    let mut required = None;
    for &k in tree.children(y) {
        let r = rules.rule(tree, y, k);
        if !r.enter {
            continue;
        }
        if r.required {
            if required.is_some() {
                return None;
            }
            required = Some(k);
        }
        out.push(k);
    }
    match required {
        Some(k) => Some(vec![k]),
        None => Some(out),
    }
}

fn allowed_children_from(tree: &Tree, y: NodeId, mass: &[BranchMass]) -> Vec<NodeId> {
    tree.children(y).iter().copied().filter(|k| mass[k.index()].chosen).collect()
}

fn clamp_into(tree: &Tree, x: NodeId, y: NodeId, t: f64, ceiling: f64) -> AttachLocation {
    let hi = if tree.time(y) < ceiling { tree.time(y) } else { ceiling };
    let t = t.max(next_up(tree.time(x))).min(next_down(hi));
    AttachLocation { parent: x, child: y, time: t }
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    let bits = x.to_bits();
    if x >= 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// Draws from the walk under `rules`, conditioned on a divergence before
/// `ceiling`.
pub fn sample_walk<R: Rng + ?Sized>(
    tree: &Tree,
    params: &DdtParams,
    rules: &dyn WalkRules,
    ceiling: Option<f64>,
    rng: &mut R,
) -> Result<AttachLocation> {
    WalkPlan::new(tree, params, rules, ceiling)?.sample(tree, rng)
}

/// Draws where an additional point would diverge from `tree` under the
/// generative process. With a ceiling, the draw is conditioned on diverging
/// before it, which matches discarding late walks and restarting.
pub fn sample_attach_location<R: Rng + ?Sized>(tree: &Tree, params: &DdtParams, ceiling: Option<f64>, rng: &mut R) -> Result<AttachLocation> {
    sample_walk(tree, params, &Unconstrained, ceiling, rng)
}

/// Log density of the unrestricted generative walk ending at `loc`.
pub fn attach_log_density(tree: &Tree, params: &DdtParams, loc: &AttachLocation) -> Result<f64> {
    WalkPlan::new(tree, params, &Unconstrained, None)?.log_density(tree, loc)
}

/// A tree over leaves `0..n` drawn from the prior by attaching points one
/// at a time at locations from [`sample_attach_location`]. Values are left
/// at zero with dimension `dim`.
pub fn simulate_prior_tree<R: Rng + ?Sized>(n: usize, dim: usize, params: &DdtParams, rng: &mut R) -> Result<Tree> {
    if n == 0 {
        return Err(Error::EmptySubset);
    }
    let mut tree = Tree::with_stem(n, dim);
    let first = tree.make_leaf(0, None)?;
    tree.set_root(first);
    for leaf in 1..n {
        let loc = sample_attach_location(&tree, params, None, rng)?;
        let new_leaf = tree.make_leaf(leaf, None)?;
        tree.insert_above(loc.child, new_leaf, loc.time, vec![0.0; dim], false);
    }
    Ok(tree)
}

/// Draws a sample from `N(mean, var)` per dimension.
pub(crate) fn draw_gaussian<R: Rng + ?Sized>(mean: &[f64], var: f64, rng: &mut R) -> Vec<f64> {
    let sd = libm::sqrt(var);
    mean.iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            m + sd * z
        })
        .collect()
}

/// Log density of `x` under `N(mean, var)` per dimension.
pub(crate) fn gaussian_log_density(x: &[f64], mean: &[f64], var: f64) -> f64 {
    x.iter().zip(mean).map(|(&a, &m)| log_normal(a, m, var)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> DdtParams {
        DdtParams::new(1.0, 1.0, 1).unwrap()
    }

    #[test]
    fn hazard_values() {
        let p = params();
        assert_eq!(p.cumulative_hazard(0.0).unwrap(), 0.0);
        assert!((p.acquisition(0.5).unwrap() - 2.0).abs() < 1e-15);
        assert!((p.cumulative_hazard(0.5).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(p.acquisition(1.0), Err(Error::TimeOutOfRange(1.0)));
        assert!((p.hazard_inverse(p.hazard(0.37)) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn hazard_matches_quadrature() {
        let p = DdtParams::new(1.0, 1.7, 1).unwrap();
        for i in 1..=9 {
            let t = i as f64 / 10.0;
            // composite Simpson on a smooth integrand
            let n = 2000;
            let h = t / n as f64;
            let mut s = p.acquisition(0.0).unwrap() + p.acquisition(t).unwrap();
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * p.acquisition(k as f64 * h).unwrap();
            }
            let quad = s * h / 3.0;
            assert!((quad - p.cumulative_hazard(t).unwrap()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(DdtParams::new(0.0, 1.0, 1).is_err());
        assert!(DdtParams::new(1.0, -1.0, 1).is_err());
        assert!(DdtParams::new(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn two_leaf_prior_is_normalized_pointwise() {
        let mut t = Tree::from_shape((0, 1)).unwrap();
        let p = params();
        for &time in &[0.1, 0.5, 0.9] {
            let root = t.root();
            t.set_time(root, time).unwrap();
            assert!(log_prior(&t, &p).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn prior_behaviour_as_times_approach_one() {
        // with c = 1 a cherry's divergence time is uniform, so its term is
        // flat; with c > 1 it strictly decreases
        let mut t = Tree::from_shape(((0, 1), 2)).unwrap();
        let inner = t.lca(0, 1).unwrap();
        for (c, strict) in [(1.0, false), (2.0, true)] {
            let p = DdtParams::new(1.0, c, 1).unwrap();
            let mut last = f64::INFINITY;
            for &time in &[0.7, 0.9, 0.99, 0.999] {
                t.set_time(inner, time).unwrap();
                let lp = log_prior(&t, &p).unwrap();
                assert!(lp.is_finite());
                if strict {
                    assert!(lp < last);
                } else if last.is_finite() {
                    assert!((lp - last).abs() < 1e-9);
                }
                last = lp;
            }
        }
        // root over three leaves at c = 1: the joint density is
        // (1 - r)^(-1/2) / 2, rising with r
        let p = params();
        let root = t.root();
        t.set_time(inner, 0.95).unwrap();
        for &r in &[0.1, 0.5, 0.9] {
            t.set_time(root, r).unwrap();
            let want = -0.5 * log1p(-r) - core::f64::consts::LN_2;
            assert!((log_prior(&t, &p).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_edge_likelihood() {
        // stem (0) -> root at 0.5 with value 0 -> leaf at 1 with value 1,
        // checked on the leaf edge only by differencing
        let t = Tree::from_shape((0, 1)).unwrap();
        let mut t = t.with_values(&[vec![1.0], vec![0.0]]).unwrap();
        let root = t.root();
        t.set_time(root, 0.5).unwrap();
        t.set_value(root, &[0.0]).unwrap();
        let p = params();
        let total = log_data_likelihood(&t, &p).unwrap();
        let stem_edge = -0.5 * log(2.0 * PI * 0.5);
        let leaf0 = -0.5 * log(2.0 * PI * 0.5) - 1.0;
        let leaf1 = -0.5 * log(2.0 * PI * 0.5);
        assert!((total - (stem_edge + leaf0 + leaf1)).abs() < 1e-12);
    }

    #[test]
    fn single_leaf_marginal_is_standard_normal() {
        let t = Tree::from_shape((0, 1)).unwrap().induce(&[0]).unwrap();
        let p = DdtParams::new(2.0, 1.0, 1).unwrap();
        let ll = marginal_leaf_loglik(&t, &[vec![0.7]], &p).unwrap();
        assert!((ll - log_normal(0.7, 0.0, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn cherry_marginal_matches_bivariate_normal() {
        let mut t = Tree::from_shape((0, 1)).unwrap();
        let root = t.root();
        t.set_time(root, 0.25).unwrap();
        let p = params();
        let (x, y) = (0.3, -1.1);
        let ll = marginal_leaf_loglik(&t, &[vec![x], vec![y]], &p).unwrap();
        // covariance [[1, .25], [.25, 1]]
        let det: f64 = 1.0 - 0.0625;
        let q = (x * x - 2.0 * 0.25 * x * y + y * y) / det;
        let want = -log(2.0 * PI) - 0.5 * log(det) - 0.5 * q;
        assert!((ll - want).abs() < 1e-12);
    }

    #[test]
    fn walk_density_matches_single_branch_formula() {
        let t = Tree::from_shape((0, 1)).unwrap().induce(&[0]).unwrap();
        let p = params();
        let loc = AttachLocation {
            parent: t.stem(),
            child: t.root(),
            time: 0.3,
        };
        // density a(t) exp(-A(t)) = 1/(1-t) * (1-t) = 1
        assert!(attach_log_density(&t, &p, &loc).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ceiling_is_respected() {
        let t = Tree::from_shape((0, 1)).unwrap().induce(&[0]).unwrap();
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let loc = sample_attach_location(&t, &p, Some(0.2), &mut rng).unwrap();
            assert!(loc.time < 0.2);
        }
    }

    #[test]
    fn prior_simulation_gives_valid_trees() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..12 {
            let t = simulate_prior_tree(n, 2, &p, &mut rng).unwrap();
            t.validate(true).unwrap();
            assert_eq!(t.n_leaves(), n);
            if n > 1 {
                assert!(log_prior(&t, &p).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn sigma2_estimate() {
        let rows = [vec![0.0, 1.0], vec![2.0, 1.0], vec![4.0, 1.0]];
        // variances 4 and 0
        assert!((estimate_sigma2(&rows).unwrap() - 2.0).abs() < 1e-12);
    }
}
