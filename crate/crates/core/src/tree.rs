//! Scenario trees, root-to-leaf paths and node-indexed trajectories.
//!
//! Nodes are numbered breadth-first, so all nodes of one time step form a
//! contiguous index range. Only balanced trees are representable: every leaf
//! sits at the horizon `N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

const WEIGHT_TOL: f64 = 1e-9;

/// One branching: every node at `step` gets `arity` children whose
/// probabilities are the parent's weight times `weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub step: usize,
    pub arity: usize,
    /// Conditional child probabilities; empty means uniform.
    #[serde(default)]
    pub weights: Vec<f64>,
}

impl BranchSpec {
    pub fn uniform(step: usize, arity: usize) -> Self {
        BranchSpec {
            step,
            arity,
            weights: Vec::new(),
        }
    }

    fn child_weights(&self) -> Vec<f64> {
        if self.weights.is_empty() {
            vec![1.0 / self.arity as f64; self.arity]
        } else {
            self.weights.clone()
        }
    }
}

/// JSON form of a tree: `{"horizon": N, "branchings": [{step, arity, weights}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub horizon: usize,
    #[serde(default)]
    pub branchings: Vec<BranchSpec>,
}

impl TreeSpec {
    pub fn path(horizon: usize) -> Self {
        TreeSpec {
            horizon,
            branchings: Vec::new(),
        }
    }

    pub fn build(&self) -> Result<TreeTopology> {
        build_tree(self.horizon, &self.branchings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeTopology {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    time_step: Vec<usize>,
    weight: Vec<f64>,
    leaves: Vec<usize>,
    /// `level_start[k]..level_start[k + 1]` are the nodes at step `k`.
    level_start: Vec<usize>,
    horizon: usize,
    last_branch_step: Option<usize>,
}

/// Builds a balanced tree of depth `horizon` from a list of branchings.
pub fn build_tree(horizon: usize, branchings: &[BranchSpec]) -> Result<TreeTopology> {
    for pair in branchings.windows(2) {
        if pair[1].step <= pair[0].step {
            return Err(Error::InvalidTree(format!(
                "branching steps must be strictly increasing ({} then {})",
                pair[0].step, pair[1].step
            )));
        }
    }
    for b in branchings {
        if b.step >= horizon {
            return Err(Error::InvalidTree(format!(
                "branching step {} must be below the horizon {}",
                b.step, horizon
            )));
        }
        if b.arity == 0 {
            return Err(Error::InvalidTree(format!("zero arity at step {}", b.step)));
        }
        let w = b.child_weights();
        if w.len() != b.arity {
            return Err(Error::InvalidTree(format!(
                "{} weights given for arity {} at step {}",
                w.len(),
                b.arity,
                b.step
            )));
        }
        if w.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
            return Err(Error::InvalidTree(format!(
                "weights at step {} must lie in (0, 1]",
                b.step
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidTree(format!(
                "weights at step {} sum to {sum}, not 1",
                b.step
            )));
        }
    }

    let mut parent = vec![None];
    let mut weight = vec![1.0];
    let mut level = vec![0usize];
    let mut level_start = vec![0];
    for k in 0..horizon {
        let branch = branchings.iter().find(|b| b.step == k);
        let mut next = Vec::new();
        for &node in &level {
            match branch {
                Some(b) => {
                    for w in b.child_weights() {
                        parent.push(Some(node));
                        weight.push(weight[node] * w);
                        next.push(parent.len() - 1);
                    }
                }
                None => {
                    parent.push(Some(node));
                    weight.push(weight[node]);
                    next.push(parent.len() - 1);
                }
            }
        }
        level_start.push(next[0]);
        level = next;
    }
    TreeTopology::from_parents(parent, weight).map(|t| {
        debug_assert_eq!(t.level_start[..=horizon], level_start[..]);
        t
    })
}

impl TreeTopology {
    /// Validates a breadth-first parent list and assembles the topology.
    pub fn from_parents(parent: Vec<Option<usize>>, weight: Vec<f64>) -> Result<Self> {
        let n = parent.len();
        if n == 0 {
            return Err(Error::InvalidTree("empty tree".into()));
        }
        if weight.len() != n {
            return Err(Error::InvalidTree("one weight per node required".into()));
        }
        if parent[0].is_some() {
            return Err(Error::InvalidTree("node 0 must be the root".into()));
        }
        let mut time_step = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for i in 1..n {
            let p = parent[i].ok_or_else(|| {
                Error::InvalidTree(format!("node {i} has no parent but is not the root"))
            })?;
            if p >= i {
                return Err(Error::InvalidTree(format!(
                    "node {i} has parent {p}; parents must precede children"
                )));
            }
            time_step[i] = time_step[p] + 1;
            if i > 1 && time_step[i] < time_step[i - 1] {
                return Err(Error::InvalidTree("nodes are not in breadth-first order".into()));
            }
            children[p].push(i);
        }
        if (weight[0] - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidTree("root weight must be 1".into()));
        }
        for i in 0..n {
            if !(weight[i] > 0.0 && weight[i] <= 1.0 + WEIGHT_TOL) {
                return Err(Error::InvalidTree(format!("weight of node {i} outside (0, 1]")));
            }
            if !children[i].is_empty() {
                let s: f64 = children[i].iter().map(|&c| weight[c]).sum();
                if (s - weight[i]).abs() > WEIGHT_TOL {
                    return Err(Error::InvalidTree(format!(
                        "children of node {i} carry weight {s}, expected {}",
                        weight[i]
                    )));
                }
            }
        }
        let leaves: Vec<usize> = (0..n).filter(|&i| children[i].is_empty()).collect();
        let horizon = time_step[leaves[0]];
        if leaves.iter().any(|&l| time_step[l] != horizon) {
            return Err(Error::InvalidTree(
                "unbalanced tree: all leaves must share the same time step".into(),
            ));
        }
        let mut level_start = vec![n; horizon + 2];
        for i in (0..n).rev() {
            level_start[time_step[i]] = i;
        }
        let last_branch_step = (0..n)
            .filter(|&i| children[i].len() >= 2)
            .map(|i| time_step[i])
            .max();
        Ok(TreeTopology {
            parent,
            children,
            time_step,
            weight,
            leaves,
            level_start,
            horizon,
            last_branch_step,
        })
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn time_step(&self, i: usize) -> usize {
        self.time_step[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weight[i]
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    /// Largest step at which some node has two or more children; `None`
    /// for a path graph.
    pub fn last_branch_step(&self) -> Option<usize> {
        self.last_branch_step
    }

    /// First step of the per-branch suffix segments (`N_b + 1`, or 0 when
    /// the tree never branches).
    pub fn suffix_start(&self) -> usize {
        self.last_branch_step.map_or(0, |b| b + 1)
    }

    /// Nodes at step `k`, as a contiguous index range.
    pub fn nodes_at_step(&self, k: usize) -> Result<std::ops::Range<usize>> {
        if k > self.horizon {
            return Err(Error::StepOutOfRange {
                step: k,
                horizon: self.horizon,
            });
        }
        Ok(self.level_start[k]..self.level_start[k + 1])
    }

    /// Non-leaf nodes, i.e. those carrying an input.
    pub fn non_leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&i| !self.is_leaf(i))
    }

    /// Number of leaves below (or at) node `i`.
    pub fn descendant_leaves(&self, i: usize) -> usize {
        if self.is_leaf(i) {
            return 1;
        }
        self.children[i]
            .iter()
            .map(|&c| self.descendant_leaves(c))
            .sum()
    }

    /// Node sequence from the root to `node`.
    pub fn ancestry(&self, node: usize) -> Vec<usize> {
        let mut seq = vec![node];
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            seq.push(p);
            cur = p;
        }
        seq.reverse();
        seq
    }

    /// The unique leaf below a node that has no branching descendants.
    pub fn leaf_below(&self, mut node: usize) -> Option<usize> {
        loop {
            match self.children[node].as_slice() {
                [] => return Some(node),
                [only] => node = *only,
                _ => return None,
            }
        }
    }

    /// Chains of nodes between branch points: each segment starts at the
    /// root or at a branch node and runs through single-child nodes until
    /// it reaches a branch node or a leaf. Segments are listed parents first.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        for s in 0..self.node_count() {
            if s != 0 && self.children[s].len() < 2 {
                continue;
            }
            for &first in &self.children[s] {
                let mut nodes = vec![first];
                let mut cur = first;
                while let [only] = self.children[cur].as_slice() {
                    cur = *only;
                    nodes.push(cur);
                }
                out.push(Segment { start: s, nodes });
            }
        }
        out
    }
}

/// A chain of edges `start -> nodes[0] -> nodes[1] -> ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreePath {
    pub nodes: Vec<usize>,
}

/// One root-to-leaf path per leaf, in leaf index order.
pub fn flatten(topology: &TreeTopology) -> Vec<TreePath> {
    topology
        .leaves()
        .iter()
        .map(|&l| TreePath {
            nodes: topology.ancestry(l),
        })
        .collect()
}

/// States on every node and inputs on every non-leaf node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTree {
    pub states: Vec<Vector>,
    pub inputs: Vec<Option<Vector>>,
}

impl TrajectoryTree {
    pub fn zeros(topology: &TreeTopology, nx: usize, nu: usize) -> Self {
        let n = topology.node_count();
        TrajectoryTree {
            states: vec![Vector::zeros(nx); n],
            inputs: (0..n)
                .map(|i| (!topology.is_leaf(i)).then(|| Vector::zeros(nu)))
                .collect(),
        }
    }

    pub fn input(&self, i: usize) -> &Vector {
        self.inputs[i]
            .as_ref()
            .expect("input requested on a leaf node")
    }

    /// `self + alpha * step`, node by node.
    pub fn axpy(&self, alpha: f64, step: &TrajectoryTree) -> TrajectoryTree {
        TrajectoryTree {
            states: self
                .states
                .iter()
                .zip(&step.states)
                .map(|(x, d)| x + d * alpha)
                .collect(),
            inputs: self
                .inputs
                .iter()
                .zip(&step.inputs)
                .map(|(u, d)| match (u, d) {
                    (Some(u), Some(d)) => Some(u + d * alpha),
                    _ => None,
                })
                .collect(),
        }
    }

    /// Largest absolute input entry.
    pub fn max_abs_input(&self) -> f64 {
        self.inputs
            .iter()
            .flatten()
            .flat_map(|u| u.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
