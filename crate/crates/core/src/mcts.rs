//! Monte Carlo Tree Search over alternating region / mutation choices.
//!
//! Nodes at even depth (counted from the batch's original root) choose a
//! region; nodes at odd depth choose a mutation for the region picked by their
//! incoming edge. An even node other than the original root therefore closes a
//! complete action, and its batch is its grandparent's batch with that action
//! applied. Odd nodes share their parent's batch.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::CoverageTracker;
use crate::error::{FuzzError, Result};
use crate::model::Model;
use crate::mutation::{CompleteAction, MutatorConfig};
use crate::tensor::Tensor;

pub const MAX_DEPTH_LEVELS: usize = 8;
pub const ITERATIONS_PER_ROOT: usize = 25;

fn default_exploration() -> f64 {
    std::f64::consts::SQRT_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Deepest tree level any node may occupy (two levels per complete action).
    pub max_depth_levels: usize,
    pub iterations_per_root: usize,
    #[serde(default = "default_exploration")]
    pub exploration: f64,
    /// Stop after this many roots even if depth remains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_roots: Option<usize>,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_depth_levels: MAX_DEPTH_LEVELS,
            iterations_per_root: ITERATIONS_PER_ROOT,
            exploration: default_exploration(),
            max_roots: None,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth_levels == 0 || self.iterations_per_root == 0 || !(self.exploration >= 0.0) {
            return Err(FuzzError::InvalidConfig(format!("search budget must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Upper bound on candidate evaluations for one batch.
    pub fn max_evaluations(&self) -> usize {
        let roots = self.max_roots.unwrap_or(self.max_depth_levels).min(self.max_depth_levels);
        roots * self.iterations_per_root
    }
}

/// `v + e * sqrt(ln N / n)`; unvisited nodes rank above everything.
pub fn uct_potential(value_sum: f64, visits: u64, parent_visits: u64, exploration: f64) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    let n = visits as f64;
    let ln_parent = (parent_visits.max(1) as f64).ln();
    value_sum / n + exploration * (ln_parent / n).sqrt()
}

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    ChooseRegion,
    ChooseMutation,
}

#[derive(Debug, Clone)]
pub struct MctsNode {
    pub depth: usize,
    pub parent: Option<NodeId>,
    /// Region index (odd nodes) or mutation index (even nodes) of the incoming edge.
    pub action: Option<usize>,
    pub children: BTreeMap<usize, NodeId>,
    pub visits: u64,
    pub value_sum: f64,
    /// Backpropagations that started at this node.
    pub own_backprops: u64,
    /// Excluded from selection: over the distance limit or nothing left below.
    pub terminal: bool,
    batch: Option<Arc<Vec<Tensor>>>,
}

impl MctsNode {
    fn new(depth: usize, parent: Option<NodeId>, action: Option<usize>) -> Self {
        MctsNode {
            depth,
            parent,
            action,
            children: BTreeMap::new(),
            visits: 0,
            value_sum: 0.0,
            own_backprops: 0,
            terminal: false,
            batch: None,
        }
    }

    pub fn role(&self) -> NodeRole {
        if self.depth % 2 == 0 {
            NodeRole::ChooseRegion
        } else {
            NodeRole::ChooseMutation
        }
    }

    pub fn value(&self) -> Option<f64> {
        (self.visits > 0).then(|| self.value_sum / self.visits as f64)
    }
}

/// Search tree for one seed batch.
#[derive(Debug, Clone)]
pub struct GameTree {
    nodes: Vec<MctsNode>,
    root: NodeId,
    regions: usize,
    mutations: usize,
    max_depth: usize,
    exploration: f64,
}

impl GameTree {
    pub fn new(seed: Vec<Tensor>, regions: usize, mutations: usize, budget: &SearchBudget) -> Self {
        let mut root = MctsNode::new(0, None, None);
        root.batch = Some(Arc::new(seed));
        GameTree {
            nodes: vec![root],
            root: 0,
            regions,
            mutations,
            max_depth: budget.max_depth_levels,
            exploration: budget.exploration,
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &MctsNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Level relative to the current root.
    pub fn level(&self, id: NodeId) -> usize {
        self.nodes[id].depth - self.nodes[self.root].depth
    }

    fn action_count(&self, id: NodeId) -> usize {
        match self.nodes[id].role() {
            NodeRole::ChooseRegion => self.regions,
            NodeRole::ChooseMutation => self.mutations,
        }
    }

    pub fn unexpanded(&self, id: NodeId) -> Vec<usize> {
        let node = &self.nodes[id];
        (0..self.action_count(id)).filter(|a| !node.children.contains_key(a)).collect()
    }

    pub fn is_expandable(&self, id: NodeId) -> bool {
        self.nodes[id].depth < self.max_depth && self.nodes[id].children.len() < self.action_count(id)
    }

    fn live_children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes[id].children.values().copied().filter(|&c| !self.nodes[c].terminal)
    }

    /// Descends by UCT from the current root to a node that can be expanded,
    /// sits at the depth cap, or has no selectable children.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeId {
        let mut cur = self.root;
        loop {
            if self.is_expandable(cur) || self.nodes[cur].depth >= self.max_depth {
                return cur;
            }
            let parent_visits = self.nodes[cur].visits;
            let scored: Vec<(NodeId, f64)> = self
                .live_children(cur)
                .map(|c| {
                    let n = &self.nodes[c];
                    (c, uct_potential(n.value_sum, n.visits, parent_visits, self.exploration))
                })
                .collect();
            match pick_max(&scored, rng) {
                Some(next) => cur = next,
                None => return cur,
            }
        }
    }

    /// Adds one child for a uniformly chosen unexpanded action.
    pub fn expand<R: Rng + ?Sized>(&mut self, id: NodeId, rng: &mut R) -> Result<NodeId> {
        let depth = self.nodes[id].depth;
        if depth >= self.max_depth {
            return Err(FuzzError::DepthExceeded {
                level: depth,
                max: self.max_depth,
            });
        }
        let open = self.unexpanded(id);
        if open.is_empty() {
            return Err(FuzzError::FullyExpanded);
        }
        let action = open[rng.gen_range(0..open.len())];
        let child = self.nodes.len();
        self.nodes.push(MctsNode::new(depth + 1, Some(id), Some(action)));
        self.nodes[id].children.insert(action, child);
        Ok(child)
    }

    /// Completes the pending action at `id`. A mutation-choice node draws the
    /// mutation uniformly; a node closing a complete action returns it as is.
    /// Returns `None` only for the original root, which has no incoming edge.
    pub fn simulate<R: Rng + ?Sized>(&self, id: NodeId, rng: &mut R) -> Option<CompleteAction> {
        let node = &self.nodes[id];
        match node.role() {
            NodeRole::ChooseMutation => Some(CompleteAction {
                region: node.action.expect("odd nodes have an incoming edge"),
                mutation: rng.gen_range(0..self.mutations),
            }),
            NodeRole::ChooseRegion => {
                let parent = node.parent?;
                Some(CompleteAction {
                    region: self.nodes[parent].action.expect("odd parent"),
                    mutation: node.action.expect("even non-root"),
                })
            }
        }
    }

    /// The region-choice node whose batch the simulated action applies to.
    pub fn simulation_base(&self, id: NodeId) -> Option<NodeId> {
        let node = &self.nodes[id];
        match node.role() {
            NodeRole::ChooseMutation => node.parent,
            NodeRole::ChooseRegion => node.parent.and_then(|p| self.nodes[p].parent),
        }
    }

    /// Complete actions on the path from the original root to `id`. A dangling
    /// region edge (odd `id`) is not included.
    pub fn path_actions(&self, id: NodeId) -> Vec<CompleteAction> {
        let mut edges = Vec::new();
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            edges.push(self.nodes[cur].action.expect("non-root edge"));
            cur = p;
        }
        edges.reverse();
        edges
            .chunks_exact(2)
            .map(|pair| CompleteAction {
                region: pair[0],
                mutation: pair[1],
            })
            .collect()
    }

    /// Raw edge indices from the original root to `id`.
    pub fn path_edges(&self, id: NodeId) -> Vec<usize> {
        let mut edges = Vec::new();
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            edges.push(self.nodes[cur].action.expect("non-root edge"));
            cur = p;
        }
        edges.reverse();
        edges
    }

    /// The node's batch, materialised on first use and cached.
    pub fn batch(&mut self, id: NodeId, mutator: &MutatorConfig) -> Result<Arc<Vec<Tensor>>> {
        if let Some(b) = &self.nodes[id].batch {
            return Ok(Arc::clone(b));
        }
        let node = &self.nodes[id];
        let batch = match node.role() {
            NodeRole::ChooseMutation => self.batch(node.parent.expect("odd"), mutator)?,
            NodeRole::ChooseRegion => {
                let action = self.simulate_fixed(id);
                let base = self.simulation_base(id).expect("even non-root");
                let base_batch = self.batch(base, mutator)?;
                Arc::new(mutator.apply(&base_batch, action)?)
            }
        };
        self.nodes[id].batch = Some(Arc::clone(&batch));
        Ok(batch)
    }

    fn simulate_fixed(&self, id: NodeId) -> CompleteAction {
        let node = &self.nodes[id];
        CompleteAction {
            region: self.nodes[node.parent.expect("even non-root")].action.expect("odd parent"),
            mutation: node.action.expect("even non-root"),
        }
    }

    /// Adds one visit and `reward` to every node from `id` up to the current root.
    pub fn backpropagate(&mut self, id: NodeId, reward: f64) {
        self.nodes[id].own_backprops += 1;
        let mut cur = Some(id);
        while let Some(c) = cur {
            let node = &mut self.nodes[c];
            node.visits += 1;
            node.value_sum += reward;
            if c == self.root {
                break;
            }
            cur = node.parent;
        }
    }

    /// Marks `id` terminal, then any ancestor below the root left with nothing
    /// to expand or select.
    pub fn mark_terminal(&mut self, id: NodeId) {
        self.nodes[id].terminal = true;
        let mut cur = self.nodes[id].parent;
        while let Some(c) = cur {
            if c == self.root || self.is_expandable(c) || self.live_children(c).next().is_some() {
                break;
            }
            self.nodes[c].terminal = true;
            cur = self.nodes[c].parent;
        }
    }

    /// True when the current root can neither expand nor descend.
    pub fn is_exhausted(&self) -> bool {
        !self.is_expandable(self.root) && self.live_children(self.root).next().is_none()
    }

    /// Moves the root to the child with the highest mean reward, keeping its
    /// subtree. Unvisited children rank lowest; ties go to the RNG.
    pub fn advance_root<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<NodeId> {
        let live: Vec<NodeId> = self.live_children(self.root).collect();
        let pool: Vec<NodeId> = if live.is_empty() {
            self.nodes[self.root].children.values().copied().collect()
        } else {
            live
        };
        let scored: Vec<(NodeId, f64)> = pool
            .iter()
            .map(|&c| (c, self.nodes[c].value().unwrap_or(f64::NEG_INFINITY)))
            .collect();
        let next = pick_max(&scored, rng)?;
        self.root = next;
        Some(next)
    }

    /// Visit conservation and level alternation over the current root's subtree.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let child_visits: u64 = node.children.values().map(|&c| self.nodes[c].visits).sum();
            if node.visits != child_visits + node.own_backprops {
                return Err(format!(
                    "node {id}: n = {} but children sum {child_visits} + own {}",
                    node.visits, node.own_backprops
                ));
            }
            if node.depth > self.max_depth {
                return Err(format!("node {id} at depth {} beyond cap", node.depth));
            }
            for (&action, &c) in &node.children {
                let child = &self.nodes[c];
                if child.depth != node.depth + 1 || child.parent != Some(id) || child.action != Some(action) {
                    return Err(format!("edge {id} -> {c} is inconsistent"));
                }
                if child.role() == node.role() {
                    return Err(format!("roles do not alternate on {id} -> {c}"));
                }
                if action >= self.action_count(id) {
                    return Err(format!("node {id}: action {action} out of range"));
                }
                stack.push(c);
            }
        }
        Ok(())
    }
}

fn pick_max<R: Rng + ?Sized>(scored: &[(NodeId, f64)], rng: &mut R) -> Option<NodeId> {
    let best = scored.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<NodeId> = scored.iter().filter(|&&(_, s)| s == best).map(|&(c, _)| c).collect();
    match ties.len() {
        0 => None,
        1 => Some(ties[0]),
        n => Some(ties[rng.gen_range(0..n)]),
    }
}

/// Scores a candidate batch. The campaign uses [`ModelEvaluator`]; tests
/// plug in synthetic rewards.
pub trait BatchEvaluator {
    fn coverage_increase(&mut self, batch: &[Tensor]) -> Result<f64>;
}

impl<F> BatchEvaluator for F
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    fn coverage_increase(&mut self, batch: &[Tensor]) -> Result<f64> {
        self(batch)
    }
}

/// Forward pass plus a coverage query against the committed state.
pub struct ModelEvaluator<'a> {
    pub model: &'a Model,
    pub tracker: &'a dyn CoverageTracker,
    pub forward_batches: usize,
}

impl<'a> ModelEvaluator<'a> {
    pub fn new(model: &'a Model, tracker: &'a dyn CoverageTracker) -> Self {
        ModelEvaluator {
            model,
            tracker,
            forward_batches: 0,
        }
    }
}

impl BatchEvaluator for ModelEvaluator<'_> {
    fn coverage_increase(&mut self, batch: &[Tensor]) -> Result<f64> {
        self.forward_batches += 1;
        let records = self.model.forward_batch(batch)?;
        self.tracker.coverage_increase(&records)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub root_depth: usize,
    /// Edge indices from the original root to the expanded node.
    pub path: Vec<usize>,
    pub actions: Vec<CompleteAction>,
    /// `None` when the candidate broke the distance limit and was not scored.
    pub reward: Option<f64>,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub root_depth: usize,
    pub iterations: usize,
    pub evaluations: usize,
    /// Children of this root after the round, against its action count.
    pub root_children: usize,
    pub root_actions: usize,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_batch: Vec<Tensor>,
    pub best_increase: f64,
    pub best_actions: Vec<CompleteAction>,
    pub evaluations: usize,
    pub rounds: Vec<RoundSummary>,
    pub trace: Vec<TraceRecord>,
    /// The final tree; `None` for searches that do not build one.
    pub tree: Option<GameTree>,
}

/// Searches mutation sequences for the batch with the largest coverage increase.
///
/// Per root: `iterations_per_root` rounds of select, expand, simulate,
/// distance check, evaluate and backpropagate; then the root moves to its best
/// child. Candidates over the distance limit are neither scored nor
/// backpropagated, and their node is withdrawn from selection. Returns the
/// seed batch with increase 0 if nothing ever increased coverage.
pub fn search_batch<E, R>(
    seed: &[Tensor],
    evaluator: &mut E,
    mutator: &MutatorConfig,
    budget: &SearchBudget,
    rng: &mut R,
) -> Result<SearchOutcome>
where
    E: BatchEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    budget.validate()?;
    let mut tree = GameTree::new(seed.to_vec(), mutator.region_count(), mutator.mutation_count(), budget);
    let mut best_increase = 0.0;
    let mut best_batch = seed.to_vec();
    let mut best_actions = Vec::new();
    let mut evaluations = 0;
    let mut rounds = Vec::new();
    let mut trace = Vec::new();
    let mut iteration = 0;

    'roots: loop {
        let root = tree.root();
        let root_depth = tree.node(root).depth;
        if root_depth >= budget.max_depth_levels || budget.max_roots.is_some_and(|m| rounds.len() >= m) {
            break;
        }
        let round_evals = evaluations;
        let mut round_iters = 0;
        for _ in 0..budget.iterations_per_root {
            if tree.is_exhausted() {
                break;
            }
            round_iters += 1;
            iteration += 1;
            let leaf = tree.select(rng);
            let child = if tree.is_expandable(leaf) {
                tree.expand(leaf, rng)?
            } else if leaf == root {
                break;
            } else {
                // a leaf at the depth cap has nothing more to offer
                tree.mark_terminal(leaf);
                continue;
            };
            let Some(action) = tree.simulate(child, rng) else {
                continue;
            };
            let base = tree.simulation_base(child).expect("child has a base");
            let candidate = if tree.node(child).role() == NodeRole::ChooseRegion {
                tree.batch(child, mutator)?
            } else {
                Arc::new(mutator.apply(&tree.batch(base, mutator)?, action)?)
            };
            let mut actions = tree.path_actions(base);
            actions.push(action);

            let reward = if mutator.constraint.batch_within(&candidate, seed)? {
                evaluations += 1;
                let inc = evaluator.coverage_increase(&candidate)?;
                if inc > best_increase {
                    best_increase = inc;
                    best_batch = candidate.as_ref().clone();
                    best_actions = actions.clone();
                }
                tree.backpropagate(child, inc);
                if tree.node(child).depth >= budget.max_depth_levels {
                    tree.mark_terminal(child);
                }
                Some(inc)
            } else {
                tree.mark_terminal(child);
                None
            };
            trace.push(TraceRecord {
                iteration,
                root_depth,
                path: tree.path_edges(child),
                actions,
                reward,
                best_so_far: best_increase,
            });
        }
        rounds.push(RoundSummary {
            root_depth,
            iterations: round_iters,
            evaluations: evaluations - round_evals,
            root_children: tree.node(root).children.len(),
            root_actions: tree.action_count(root),
        });
        if tree.is_exhausted() || tree.advance_root(rng).is_none() {
            break 'roots;
        }
    }

    Ok(SearchOutcome {
        best_batch,
        best_increase,
        best_actions,
        evaluations,
        rounds,
        trace,
        tree: Some(tree),
    })
}
