//! Metropolis-Hastings over tree space with subtree-prune-and-regraft moves
//! that never leave the set of trees satisfying the current constraints,
//! interleaved with Gibbs sweeps over internal node values.

use alloc::sync::Arc;
use alloc::vec::Vec;

use libm::log;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{check_satisfies, first_violation, incorporate_triplet, incorporate_triplet_guided, init_values_from_leaves};
use crate::ddt::{
    self, draw_gaussian, gaussian_log_density, AttachLocation, BranchRule, DdtParams, WalkPlan, WalkRules,
};
use crate::error::{Error, Result};
use crate::leafset::LeafSet;
use crate::trace::{SampleTrace, Snapshot};
use crate::tree::{NodeId, Tree};
use crate::triplet::{Triplet, TripletSet};

/// A subtree cut out of a tree by [`prune`]. The subtree's nodes stay in the
/// tree's arena, unlinked, until [`regraft`] puts them back.
#[derive(Debug, Clone)]
pub struct Pruned {
    /// Root of the detached subtree.
    pub subtree: NodeId,
    /// Where the removed parent used to sit: its parent, its other child and
    /// its time.
    pub location: AttachLocation,
    /// Value of the removed parent.
    pub value: Vec<f64>,
    s_first: bool,
}

/// Removes `s` and its parent, splicing the sibling into the parent's place.
pub fn prune(tree: &mut Tree, s: NodeId) -> Result<Pruned> {
    if s == tree.root() {
        return Err(Error::PruneRoot);
    }
    let d = tree.detach(s)?;
    Ok(Pruned {
        subtree: s,
        location: AttachLocation {
            parent: d.parent,
            child: d.sibling,
            time: d.time,
        },
        value: d.value,
        s_first: d.s_first,
    })
}

/// Attaches the detached subtree rooted at `s` on the branch of `loc`, via a
/// new node at `loc.time` holding `value`. Returns the new node.
pub fn regraft(tree: &mut Tree, s: NodeId, loc: &AttachLocation, value: Vec<f64>) -> Result<NodeId> {
    regraft_ordered(tree, s, loc, value, false)
}

/// Puts a pruned subtree back exactly where it was.
pub fn restore(tree: &mut Tree, pruned: Pruned) -> Result<NodeId> {
    regraft_ordered(tree, pruned.subtree, &pruned.location, pruned.value, pruned.s_first)
}

fn regraft_ordered(tree: &mut Tree, s: NodeId, loc: &AttachLocation, value: Vec<f64>, s_first: bool) -> Result<NodeId> {
    tree.node(s)?;
    tree.node(loc.parent)?;
    tree.node(loc.child)?;
    if tree.parent(s).is_some() {
        return Err(Error::InvalidAttach("subtree is still attached"));
    }
    if tree.parent(loc.child) != Some(loc.parent) {
        return Err(Error::InvalidAttach("parent is not the parent of child"));
    }
    let mut cur = loc.child;
    while let Some(p) = tree.parent(cur) {
        cur = p;
    }
    if cur != tree.stem() {
        return Err(Error::InvalidAttach("branch is not in the tree"));
    }
    let (tx, ty, ts) = (tree.time(loc.parent), tree.time(loc.child), tree.time(s));
    if !(loc.time > tx && loc.time < ty) {
        return Err(Error::InvalidAttach("time outside branch"));
    }
    if loc.time >= ts {
        return Err(Error::NonMonotoneTime {
            parent: loc.time,
            child: ts,
        });
    }
    if value.len() != tree.dim() {
        return Err(Error::Dimension {
            expected: tree.dim(),
            got: value.len(),
        });
    }
    Ok(tree.insert_above(loc.child, s, loc.time, value, s_first))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    /// The outgroup is in the moving subtree: never descend below the
    /// node whose children split `a` and `b`.
    Split { a: usize, b: usize },
    /// One in-pair leaf is in the moving subtree; `near` is the other one
    /// and `far` the outgroup.
    Side { near: usize, far: usize },
}

/// Branch restrictions that keep a regrafted subtree consistent with a
/// triplet set.
#[derive(Debug, Clone)]
pub struct ConstraintRules {
    rules: Vec<Rule>,
}

impl ConstraintRules {
    /// Rules for moving a subtree with leaves `moving`. Triplets with none or
    /// all of their leaves moving cannot be affected, and neither can those
    /// with both in-pair leaves moving.
    pub fn new(c: &TripletSet, moving: &LeafSet) -> Self {
        let mut all = Vec::new();
        for t in c.iter() {
            let (a, b) = t.pair();
            let oc = t.outgroup();
            match (moving.contains(a), moving.contains(b), moving.contains(oc)) {
                (false, false, true) => all.push(Rule::Split { a, b }),
                (true, false, false) => all.push(Rule::Side { near: b, far: oc }),
                (false, true, false) => all.push(Rule::Side { near: a, far: oc }),
                _ => {}
            }
        }
        Self { rules: all }
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

fn splits(tree: &Tree, y: NodeId, a: usize, b: usize) -> bool {
    let ys = tree.leaves_of(y);
    ys.contains(a) && ys.contains(b) && !tree.children(y).iter().any(|&k| tree.leaves_of(k).contains(a) && tree.leaves_of(k).contains(b))
}

impl WalkRules for ConstraintRules {
    fn rule(&self, tree: &Tree, _parent: NodeId, child: NodeId) -> BranchRule {
        let mut out = BranchRule::FREE;
        let ys = tree.leaves_of(child);
        for r in &self.rules {
            match *r {
                Rule::Split { a, b } => {
                    if splits(tree, child, a, b) {
                        out.descend = false;
                    }
                }
                Rule::Side { near, far } => match (ys.contains(near), ys.contains(far)) {
                    (true, true) => out.required = true,
                    (false, true) => out.enter = false,
                    _ => {}
                },
            }
        }
        out
    }
}

/// Draws a regraft location for the detached subtree `s` from the walk
/// restricted by `c`, with divergence before the subtree's root time.
pub fn constrained_regraft_sample<R: Rng + ?Sized>(
    tree: &Tree,
    s: NodeId,
    c: &TripletSet,
    params: &DdtParams,
    rng: &mut R,
) -> Result<AttachLocation> {
    let rules = ConstraintRules::new(c, tree.node(s)?.leaves());
    WalkPlan::new(tree, params, &rules, Some(tree.time(s)))?.sample(tree, rng)
}

/// Rejection-sampling counterpart of [`constrained_regraft_sample`]: draw
/// from the unrestricted walk and keep the first location whose graft
/// satisfies `c`.
pub fn rejection_regraft_sample<R: Rng + ?Sized>(
    tree: &Tree,
    s: NodeId,
    c: &TripletSet,
    params: &DdtParams,
    max_tries: usize,
    rng: &mut R,
) -> Result<AttachLocation> {
    let ceiling = tree.time(s);
    for _ in 0..max_tries {
        let loc = ddt::sample_attach_location(tree, params, Some(ceiling), rng)?;
        let mut trial = tree.clone();
        trial.insert_above(loc.child, s, loc.time, alloc::vec![0.0; tree.dim()], false);
        if check_satisfies(&trial, c)? {
            return Ok(loc);
        }
    }
    Err(Error::NoValidLocation)
}

/// Gaussian over a node value given neighbours at the given edge lengths:
/// (mean, variance) per dimension.
fn neighbour_conditional(neighbours: &[(&[f64], f64)], params: &DdtParams) -> Result<(Vec<f64>, f64)> {
    let d = params.dim();
    let mut prec = 0.0;
    let mut mean = alloc::vec![0.0; d];
    for &(x, dt) in neighbours {
        if dt <= 0.0 {
            return Err(Error::ZeroLengthEdge);
        }
        let w = 1.0 / dt;
        prec += w;
        for (m, v) in mean.iter_mut().zip(x) {
            *m += w * v;
        }
    }
    for m in mean.iter_mut() {
        *m /= prec;
    }
    Ok((mean, params.sigma2() / prec))
}

/// Full conditional of an internal node's value given its parent and
/// children: (mean, variance) per dimension.
pub fn node_conditional(tree: &Tree, id: NodeId, params: &DdtParams) -> Result<(Vec<f64>, f64)> {
    let node = tree.node(id)?;
    let parent = node.parent().ok_or(Error::InvalidParameter("the stem value is fixed"))?;
    if node.is_leaf() {
        return Err(Error::InvalidParameter("leaf values are observed"));
    }
    let t = node.time();
    let mut nb: Vec<(&[f64], f64)> = Vec::with_capacity(3);
    nb.push((tree.value(parent), t - tree.time(parent)));
    for &k in node.children() {
        nb.push((tree.value(k), tree.time(k) - t));
    }
    neighbour_conditional(&nb, params)
}

/// One sweep redrawing every internal value from its full conditional, in
/// preorder.
pub fn gibbs_internal_values<R: Rng + ?Sized>(tree: &mut Tree, params: &DdtParams, rng: &mut R) -> Result<()> {
    if tree.dim() != params.dim() {
        return Err(Error::Dimension {
            expected: params.dim(),
            got: tree.dim(),
        });
    }
    for id in tree.internal_nodes() {
        let (mean, var) = node_conditional(tree, id, params)?;
        let x = draw_gaussian(&mean, var, rng);
        tree.value_mut(id).copy_from_slice(&x);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acceptance {
    MetropolisHastings,
    /// Targets the prior over structure and times alone, ignoring the data.
    PriorOnly,
    /// Every proposal is accepted, which samples the proposal's own
    /// stationary behaviour. Used to check state-space coverage.
    Always,
}

/// How a new constraint the current tree violates is spliced in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Incorporation {
    /// BUILD guided by the current tree, keeping its times and values.
    #[default]
    Guided,
    /// Plain BUILD (smallest-index split) with evenly spaced times.
    Rebuild,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    /// Gibbs value sweeps after each SPR move.
    pub gibbs_sweeps: usize,
    pub acceptance: Acceptance,
    pub incorporation: Incorporation,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            gibbs_sweeps: 1,
            acceptance: Acceptance::MetropolisHastings,
            incorporation: Incorporation::Guided,
        }
    }
}

/// Result of one SPR proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub accepted: bool,
    pub log_accept_ratio: f64,
}

/// One Markov chain: the current tree, constraint set and model.
#[derive(Debug, Clone)]
pub struct ChainState {
    tree: Tree,
    constraints: TripletSet,
    params: DdtParams,
    config: ChainConfig,
    rng: ChaCha8Rng,
    iteration: u64,
    log_prior: f64,
    log_likelihood: f64,
    proposed: u64,
    accepted: u64,
}

impl ChainState {
    /// Wraps an existing tree whose leaves carry the data.
    pub fn new(tree: Tree, constraints: TripletSet, params: DdtParams, seed: u64) -> Result<Self> {
        tree.validate(true)?;
        if tree.dim() != params.dim() {
            return Err(Error::Dimension {
                expected: params.dim(),
                got: tree.dim(),
            });
        }
        if let Some(t) = first_violation(&tree, &constraints)? {
            let (a, b) = t.pair();
            return Err(Error::Violates { a, b, c: t.outgroup() });
        }
        let mut s = Self {
            tree,
            constraints,
            params,
            config: ChainConfig::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            iteration: 0,
            log_prior: 0.0,
            log_likelihood: 0.0,
            proposed: 0,
            accepted: 0,
        };
        s.refresh()?;
        Ok(s)
    }

    /// Starts from a tree drawn from the prior by sequential attachment, with
    /// internal values set to descendant means and then one Gibbs sweep.
    pub fn from_prior(data: &[Vec<f64>], params: DdtParams, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = ddt::simulate_prior_tree(data.len(), params.dim(), &params, &mut rng)?;
        let mut tree = tree.with_values(data)?;
        let root = tree.root();
        init_values_from_leaves(&mut tree, root);
        gibbs_internal_values(&mut tree, &params, &mut rng)?;
        let mut s = Self::new(tree, TripletSet::new(), params, 0)?;
        s.rng = rng;
        Ok(s)
    }

    pub fn with_config(mut self, config: ChainConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> ChainConfig {
        self.config
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn constraints(&self) -> &TripletSet {
        &self.constraints
    }

    pub fn params(&self) -> &DdtParams {
        &self.params
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn log_prior(&self) -> f64 {
        self.log_prior
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn log_posterior(&self) -> f64 {
        self.log_prior + self.log_likelihood
    }

    /// (proposed, accepted) SPR moves so far.
    pub fn acceptance_counts(&self) -> (u64, u64) {
        (self.proposed, self.accepted)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            iteration: self.iteration,
            log_prior: self.log_prior,
            log_likelihood: self.log_likelihood,
            tree: Arc::new(self.tree.clone()),
        }
    }

    fn refresh(&mut self) -> Result<()> {
        self.log_prior = ddt::log_prior(&self.tree, &self.params)?;
        self.log_likelihood = ddt::log_data_likelihood(&self.tree, &self.params)?;
        Ok(())
    }

    /// Adds a constraint, rebuilding the affected subtree if the current tree
    /// violates it and then resampling values. Returns `false` for an exact
    /// duplicate. On error the state is unchanged.
    pub fn add_constraint(&mut self, t: Triplet) -> Result<bool> {
        for l in t.leaves() {
            self.tree.leaf_node(l)?;
        }
        if self.constraints.contains(&t) {
            return Ok(false);
        }
        let rebuilt = match self.config.incorporation {
            Incorporation::Guided => incorporate_triplet_guided(&mut self.tree, &self.constraints, t)?,
            Incorporation::Rebuild => incorporate_triplet(&mut self.tree, &self.constraints, t)?,
        };
        if rebuilt.is_some() {
            gibbs_internal_values(&mut self.tree, &self.params, &mut self.rng)?;
        }
        self.constraints.insert(t);
        self.refresh()?;
        debug_assert!(check_satisfies(&self.tree, &self.constraints).unwrap_or(false));
        Ok(true)
    }

    /// One constrained SPR proposal with its accept/reject decision.
    pub fn mh_step(&mut self) -> Result<StepInfo> {
        let candidates: Vec<NodeId> = {
            let root = self.tree.root();
            self.tree.preorder().into_iter().filter(|&id| id != root).collect()
        };
        if candidates.is_empty() {
            return Ok(StepInfo {
                accepted: false,
                log_accept_ratio: f64::NEG_INFINITY,
            });
        }
        self.proposed += 1;
        let s = candidates[self.rng.random_range(0..candidates.len())];
        let rules = ConstraintRules::new(&self.constraints, self.tree.leaves_of(s));
        let pruned = prune(&mut self.tree, s)?;
        let ts = self.tree.time(s);
        let sampled = WalkPlan::new(&self.tree, &self.params, &rules, Some(ts)).and_then(|plan| {
            let loc = plan.sample(&self.tree, &mut self.rng)?;
            let fwd = plan.log_density(&self.tree, &loc)?;
            let rev = plan.log_density(&self.tree, &pruned.location)?;
            Ok((loc, fwd, rev))
        });
        let (new_loc, mut log_q_fwd, mut log_q_rev) = match sampled {
            Ok(v) => v,
            Err(e) => {
                restore(&mut self.tree, pruned)?;
                return Err(e);
            }
        };
        debug_assert!(log_q_rev.is_finite(), "reverse move has zero density");
        let (log_q_fwd_walk, log_q_rev_walk) = (log_q_fwd, log_q_rev);

        let (m_new, v_new) = self.attach_conditional(s, &new_loc)?;
        let x_new = draw_gaussian(&m_new, v_new, &mut self.rng);
        let (m_old, v_old) = self.attach_conditional(s, &pruned.location)?;
        log_q_fwd += gaussian_log_density(&x_new, &m_new, v_new);
        log_q_rev += gaussian_log_density(&pruned.value, &m_old, v_old);

        let old_post = self.log_posterior();
        regraft(&mut self.tree, s, &new_loc, x_new)?;
        let new_prior = ddt::log_prior(&self.tree, &self.params)?;
        let new_lik = ddt::log_data_likelihood(&self.tree, &self.params)?;
        let log_ratio = match self.config.acceptance {
            Acceptance::PriorOnly => new_prior - self.log_prior + log_q_rev_walk - log_q_fwd_walk,
            _ => new_prior + new_lik - old_post + log_q_rev - log_q_fwd,
        };
        let accept = match self.config.acceptance {
            Acceptance::Always => true,
            Acceptance::MetropolisHastings | Acceptance::PriorOnly => {
                let u: f64 = self.rng.random();
                log_ratio >= 0.0 || log(u) < log_ratio
            }
        };
        if accept {
            self.accepted += 1;
            self.log_prior = new_prior;
            self.log_likelihood = new_lik;
        } else {
            prune(&mut self.tree, s)?;
            restore(&mut self.tree, pruned)?;
        }
        debug_assert!(check_satisfies(&self.tree, &self.constraints).unwrap_or(false));
        Ok(StepInfo {
            accepted: accept,
            log_accept_ratio: log_ratio,
        })
    }

    /// Conditional for the value of a node inserted at `loc` above the
    /// detached subtree `s`.
    fn attach_conditional(&self, s: NodeId, loc: &AttachLocation) -> Result<(Vec<f64>, f64)> {
        let t = loc.time;
        let tree = &self.tree;
        neighbour_conditional(
            &[
                (tree.value(loc.parent), t - tree.time(loc.parent)),
                (tree.value(loc.child), tree.time(loc.child) - t),
                (tree.value(s), tree.time(s) - t),
            ],
            &self.params,
        )
    }

    pub fn gibbs_sweep(&mut self) -> Result<()> {
        gibbs_internal_values(&mut self.tree, &self.params, &mut self.rng)?;
        self.log_likelihood = ddt::log_data_likelihood(&self.tree, &self.params)?;
        Ok(())
    }

    /// One iteration: an SPR move followed by the configured Gibbs sweeps.
    pub fn step(&mut self) -> Result<StepInfo> {
        let info = self.mh_step()?;
        for _ in 0..self.config.gibbs_sweeps {
            self.gibbs_sweep()?;
        }
        self.iteration += 1;
        Ok(info)
    }

    /// Runs `iterations` steps, pushing a snapshot into `trace` after every
    /// `stride`-th one. Returns the log posterior after each step.
    pub fn run(&mut self, iterations: usize, stride: usize, trace: &mut SampleTrace) -> Result<Vec<f64>> {
        let stride = stride.max(1);
        let mut series = Vec::with_capacity(iterations);
        for i in 0..iterations {
            self.step()?;
            series.push(self.log_posterior());
            if (i + 1) % stride == 0 {
                trace.push(self.snapshot());
            }
        }
        Ok(series)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rows(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 * 0.3 - 1.0]).collect()
    }

    #[test]
    fn prune_and_restore_round_trip() {
        let mut t = Tree::from_shape((((1, 2), 3), 4)).unwrap();
        let s = t.lca(1, 2).unwrap();
        let p = prune(&mut t, s).unwrap();
        assert_eq!(t.canonical(), "(3,4)");
        assert_eq!(t.node(s).unwrap().leaves().iter().collect::<Vec<_>>(), vec![1, 2]);
        restore(&mut t, p).unwrap();
        assert_eq!(t.canonical(), "(((1,2),3),4)");
        t.validate(true).unwrap();
    }

    #[test]
    fn prune_leaf_and_regraft_elsewhere() {
        let mut t = Tree::from_shape(((1, 2), 3)).unwrap();
        let s = t.leaf_node(1).unwrap();
        let p = prune(&mut t, s).unwrap();
        assert_eq!(t.canonical(), "(2,3)");
        let three = t.leaf_node(3).unwrap();
        let loc = AttachLocation {
            parent: t.root(),
            child: three,
            time: 0.9,
        };
        regraft(&mut t, s, &loc, vec![]).unwrap();
        assert_eq!(t.canonical(), "((1,3),2)");
        t.validate(true).unwrap();
        let root = t.root();
        assert!(matches!(prune(&mut t, root), Err(Error::PruneRoot)));
        let _ = p;
    }

    #[test]
    fn regraft_rejects_time_after_subtree_root() {
        let mut t = Tree::from_shape((((1, 2), 3), 4)).unwrap();
        let s = t.lca(1, 2).unwrap();
        prune(&mut t, s).unwrap();
        let four = t.leaf_node(4).unwrap();
        let loc = AttachLocation {
            parent: t.root(),
            child: four,
            time: 0.99,
        };
        assert!(matches!(regraft(&mut t, s, &loc, vec![]), Err(Error::NonMonotoneTime { .. })));
    }

    #[test]
    fn conditional_matches_precision_weighting() {
        let p = DdtParams::new(1.0, 1.0, 1).unwrap();
        let (m, v) = neighbour_conditional(&[(&[0.0], 0.5), (&[1.0], 0.5)], &p).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-15);
        assert!((v - 0.25).abs() < 1e-15);
        let (m, _) = neighbour_conditional(&[(&[2.0], 0.1), (&[2.0], 0.7), (&[2.0], 0.3)], &p).unwrap();
        assert!((m[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn zero_iterations_leave_state_alone() {
        let mut chain = ChainState::from_prior(&rows(6), DdtParams::new(1.0, 1.0, 1).unwrap(), 1).unwrap();
        let before = chain.tree().canonical();
        let mut trace = SampleTrace::new(5);
        assert!(chain.run(0, 5, &mut trace).unwrap().is_empty());
        assert_eq!(chain.tree().canonical(), before);
        assert_eq!(chain.iteration(), 0);
        assert!(trace.is_empty());
    }

    #[test]
    fn trace_length_follows_stride() {
        let mut chain = ChainState::from_prior(&rows(6), DdtParams::new(1.0, 1.0, 1).unwrap(), 2).unwrap();
        let mut trace = SampleTrace::new(100);
        let series = chain.run(23, 5, &mut trace).unwrap();
        assert_eq!(series.len(), 23);
        assert_eq!(trace.len(), 4);
        assert!(series.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn cached_posterior_matches_recomputation() {
        let params = DdtParams::new(0.7, 1.0, 1).unwrap();
        let mut chain = ChainState::from_prior(&rows(8), params, 3).unwrap();
        for _ in 0..200 {
            chain.step().unwrap();
            let lp = ddt::log_prior(chain.tree(), &params).unwrap();
            let ll = ddt::log_data_likelihood(chain.tree(), &params).unwrap();
            assert!((lp - chain.log_prior()).abs() < 1e-9);
            assert!((ll - chain.log_likelihood()).abs() < 1e-9);
        }
    }

    #[test]
    fn constraints_hold_throughout() {
        let params = DdtParams::new(1.0, 1.0, 1).unwrap();
        let mut chain = ChainState::from_prior(&rows(7), params, 5).unwrap();
        for t in [Triplet::new(0, 1, 6).unwrap(), Triplet::new(2, 3, 0).unwrap(), Triplet::new(4, 5, 2).unwrap()] {
            chain.add_constraint(t).unwrap();
            assert!(!chain.add_constraint(t).unwrap());
        }
        for _ in 0..500 {
            chain.step().unwrap();
            assert!(check_satisfies(chain.tree(), chain.constraints()).unwrap());
        }
    }

    #[test]
    fn rules_ignore_unaffected_triplets() {
        let c: TripletSet = [Triplet::new(1, 2, 3).unwrap()].into_iter().collect();
        assert!(ConstraintRules::new(&c, &LeafSet::from_iter_in(8, [5])).is_empty());
        assert!(ConstraintRules::new(&c, &LeafSet::from_iter_in(8, [1, 2])).is_empty());
        assert!(ConstraintRules::new(&c, &LeafSet::from_iter_in(8, [1, 2, 3])).is_empty());
        assert!(!ConstraintRules::new(&c, &LeafSet::from_iter_in(8, [3])).is_empty());
    }
}
