//! Nonlinear branch MPC problems and the quantities evaluated on them:
//! weighted objective, augmented-Lagrangian objective, dynamics defects and
//! constraint violation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::random::{random_stage, random_terminal};
use crate::tree::{TrajectoryTree, TreeTopology};

/// Value, gradient and Hessian of a cost term. On leaves the input parts
/// are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CostExpansion {
    pub value: f64,
    pub l_x: Vector,
    pub l_u: Vector,
    pub l_xx: Mat,
    pub l_uu: Mat,
    /// `n_u × n_x`.
    pub l_ux: Mat,
}

/// Constraint values `g ≤ 0` and their Jacobians at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub g: Vector,
    pub jac_x: Mat,
    /// Zero-column on leaves.
    pub jac_u: Mat,
}

/// A branch MPC problem on a fixed scenario tree.
///
/// Node `i` owns the dynamics `f_i` that produce its children, the stage cost
/// `ℓ_i` (non-leaves) or terminal cost `ℓ_{f,i}` (leaves), and constraints
/// `g_i`. Costs are returned unweighted; callers scale them by the node
/// weight.
pub trait BmpcProblem: Sync {
    fn topology(&self) -> &TreeTopology;
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn initial_state(&self) -> Vector;

    fn dynamics(&self, node: usize, x: &Vector, u: &Vector) -> Vector;
    /// `(∂f/∂x, ∂f/∂u)`.
    fn dynamics_jacobians(&self, node: usize, x: &Vector, u: &Vector) -> (Mat, Mat);

    fn stage_cost(&self, node: usize, x: &Vector, u: &Vector) -> f64;
    fn stage_cost_expansion(&self, node: usize, x: &Vector, u: &Vector) -> CostExpansion;
    fn terminal_cost(&self, leaf: usize, x: &Vector) -> f64;
    fn terminal_cost_expansion(&self, leaf: usize, x: &Vector) -> CostExpansion;

    fn constraint_count(&self, _node: usize) -> usize {
        0
    }

    /// `g_i(x, u)`; `u` is `None` on leaves.
    fn constraints(&self, _node: usize, _x: &Vector, _u: Option<&Vector>) -> Vector {
        Vector::zeros(0)
    }

    fn constraint_jacobians(&self, node: usize, _x: &Vector, u: Option<&Vector>) -> (Mat, Mat) {
        let m = self.constraint_count(node);
        (Mat::zeros(m, self.nx()), Mat::zeros(m, u.map_or(0, |u| u.len())))
    }
}

/// Multipliers and penalty of the augmented Lagrangian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ALState {
    pub multipliers: Vec<Vector>,
    pub rho: f64,
}

impl ALState {
    pub fn new<P: BmpcProblem + ?Sized>(problem: &P, rho: f64) -> Self {
        let n = problem.topology().node_count();
        ALState {
            multipliers: (0..n).map(|i| Vector::zeros(problem.constraint_count(i))).collect(),
            rho,
        }
    }

    /// Diagonal of `I_ρ`: zero for inactive constraints with zero multiplier.
    pub fn active_penalty(&self, node: usize, g: &Vector) -> Vector {
        let eta = &self.multipliers[node];
        Vector::from_fn(g.len(), |m, _| {
            if g[m] < 0.0 && eta[m] == 0.0 {
                0.0
            } else {
                self.rho
            }
        })
    }

    /// `(η + ½ I_ρ g)ᵀ g`.
    pub fn penalty(&self, node: usize, g: &Vector) -> f64 {
        let i_rho = self.active_penalty(node, g);
        (&self.multipliers[node] + i_rho.component_mul(g) * 0.5).dot(g)
    }

    /// `η ← max(0, η + ρ g)`.
    pub fn update_multipliers(&mut self, constraint_values: &[Vector]) {
        for (eta, g) in self.multipliers.iter_mut().zip(constraint_values) {
            *eta = (&*eta + g * self.rho).map(|v| v.max(0.0));
        }
    }
}

fn node_input<'a>(traj: &'a TrajectoryTree, i: usize) -> Option<&'a Vector> {
    traj.inputs[i].as_ref()
}

/// Weighted objective `Σ w_i ℓ_i + Σ w_i ℓ_{f,i}`.
pub fn objective<P: BmpcProblem + ?Sized>(problem: &P, traj: &TrajectoryTree) -> f64 {
    (0..problem.topology().node_count())
        .map(|i| weighted_cost(problem, i, &traj.states[i], node_input(traj, i)))
        .sum()
}

fn weighted_cost<P: BmpcProblem + ?Sized>(problem: &P, i: usize, x: &Vector, u: Option<&Vector>) -> f64 {
    let w = problem.topology().weight(i);
    match u {
        Some(u) => w * problem.stage_cost(i, x, u),
        None => w * problem.terminal_cost(i, x),
    }
}

/// Contribution of node `i` to the augmented-Lagrangian objective.
pub fn al_node_term<P: BmpcProblem + ?Sized>(
    problem: &P,
    al: &ALState,
    i: usize,
    x: &Vector,
    u: Option<&Vector>,
) -> f64 {
    let mut v = weighted_cost(problem, i, x, u);
    if problem.constraint_count(i) > 0 {
        v += al.penalty(i, &problem.constraints(i, x, u));
    }
    v
}

/// Objective plus the (unweighted) augmented-Lagrangian penalty terms.
pub fn al_objective<P: BmpcProblem + ?Sized>(
    problem: &P,
    traj: &TrajectoryTree,
    al: &ALState,
) -> f64 {
    (0..problem.topology().node_count())
        .map(|i| al_node_term(problem, al, i, &traj.states[i], node_input(traj, i)))
        .sum()
}

/// Per-node defects `f_{p(i)}(x_{p(i)}, u_{p(i)}) − x_i` (zero at the root).
pub fn defects<P: BmpcProblem + ?Sized>(problem: &P, traj: &TrajectoryTree) -> Vec<Vector> {
    let topo = problem.topology();
    (0..topo.node_count())
        .into_par_iter()
        .map(|i| match topo.parent(i) {
            None => Vector::zeros(problem.nx()),
            Some(p) => problem.dynamics(p, &traj.states[p], traj.input(p)) - &traj.states[i],
        })
        .collect()
}

pub fn l1_norm(vs: &[Vector]) -> f64 {
    vs.iter().map(|v| v.lp_norm(1)).sum()
}

pub fn constraint_values<P: BmpcProblem + ?Sized>(problem: &P, traj: &TrajectoryTree) -> Vec<Vector> {
    (0..problem.topology().node_count())
        .map(|i| problem.constraints(i, &traj.states[i], node_input(traj, i)))
        .collect()
}

/// Largest positive constraint value over the tree.
pub fn max_violation<P: BmpcProblem + ?Sized>(problem: &P, traj: &TrajectoryTree) -> f64 {
    constraint_values(problem, traj)
        .iter()
        .flat_map(|g| g.iter().copied())
        .fold(0.0f64, |m, v| m.max(v))
}

/// Propagates the exact dynamics through the tree from `x0` using the
/// inputs of `inputs`; the resulting trajectory has zero defects.
pub fn nonlinear_rollout<P: BmpcProblem + ?Sized>(
    problem: &P,
    inputs: &TrajectoryTree,
    x0: &Vector,
) -> Result<TrajectoryTree> {
    let topo = problem.topology();
    let mut traj = inputs.clone();
    traj.states[0] = x0.clone();
    for i in 1..topo.node_count() {
        let p = topo.parent(i).expect("non-root node has a parent");
        let x = problem.dynamics(p, &traj.states[p], traj.input(p));
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                node: i,
                what: "state in nonlinear rollout".into(),
            });
        }
        traj.states[i] = x;
    }
    Ok(traj)
}

/// Zero inputs, states from a nonlinear rollout: the default initial guess.
pub fn initial_guess<P: BmpcProblem + ?Sized>(problem: &P) -> Result<TrajectoryTree> {
    let zeros = TrajectoryTree::zeros(problem.topology(), problem.nx(), problem.nu());
    nonlinear_rollout(problem, &zeros, &problem.initial_state())
}

/// Linear dynamics and quadratic costs on a tree, with optional box bounds
/// on the inputs. Used to check exactness of one Newton step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQuadraticProblem {
    pub topology: TreeTopology,
    pub x0: Vector,
    /// Per non-leaf node: `(A, B, c)`.
    pub dynamics: Vec<Option<(Mat, Mat, Vector)>>,
    /// Per non-leaf node: `(Q, R, M, q, r)`.
    pub stage_costs: Vec<Option<(Mat, Mat, Mat, Vector, Vector)>>,
    /// Per leaf: `(Q_f, q_f)`.
    pub terminal_costs: Vec<Option<(Mat, Vector)>>,
    /// Elementwise bound `|u| ≤ u_max` on every non-leaf input.
    pub input_bound: Option<f64>,
}

impl LinearQuadraticProblem {
    pub fn random(rng: &mut impl Rng, topology: &TreeTopology, nx: usize, nu: usize) -> Self {
        let n = topology.node_count();
        let mut dynamics = Vec::with_capacity(n);
        let mut stage_costs = Vec::with_capacity(n);
        let mut terminal_costs = Vec::with_capacity(n);
        for i in 0..n {
            if topology.is_leaf(i) {
                let t = random_terminal(rng, nx);
                dynamics.push(None);
                stage_costs.push(None);
                terminal_costs.push(Some((t.p_mat, t.p_vec)));
            } else {
                let s = random_stage(rng, nx, nu);
                dynamics.push(Some((s.a, s.b, s.c)));
                stage_costs.push(Some((s.q_xx, s.r_uu, s.m_ux, s.q_x, s.r_u)));
                terminal_costs.push(None);
            }
        }
        LinearQuadraticProblem {
            topology: topology.clone(),
            x0: crate::random::random_vec(rng, nx),
            dynamics,
            stage_costs,
            terminal_costs,
            input_bound: None,
        }
    }

    fn dyn_at(&self, i: usize) -> &(Mat, Mat, Vector) {
        self.dynamics[i].as_ref().expect("dynamics on a non-leaf node")
    }

    fn cost_at(&self, i: usize) -> &(Mat, Mat, Mat, Vector, Vector) {
        self.stage_costs[i].as_ref().expect("stage cost on a non-leaf node")
    }

    fn term_at(&self, i: usize) -> &(Mat, Vector) {
        self.terminal_costs[i].as_ref().expect("terminal cost on a leaf")
    }
}

impl BmpcProblem for LinearQuadraticProblem {
    fn topology(&self) -> &TreeTopology {
        &self.topology
    }

    fn nx(&self) -> usize {
        self.x0.len()
    }

    fn nu(&self) -> usize {
        self.dyn_at(0).1.ncols()
    }

    fn initial_state(&self) -> Vector {
        self.x0.clone()
    }

    fn dynamics(&self, node: usize, x: &Vector, u: &Vector) -> Vector {
        let (a, b, c) = self.dyn_at(node);
        a * x + b * u + c
    }

    fn dynamics_jacobians(&self, node: usize, _x: &Vector, _u: &Vector) -> (Mat, Mat) {
        let (a, b, _) = self.dyn_at(node);
        (a.clone(), b.clone())
    }

    fn stage_cost(&self, node: usize, x: &Vector, u: &Vector) -> f64 {
        let (q, r, m, qv, rv) = self.cost_at(node);
        0.5 * x.dot(&(q * x)) + 0.5 * u.dot(&(r * u)) + u.dot(&(m * x)) + qv.dot(x) + rv.dot(u)
    }

    fn stage_cost_expansion(&self, node: usize, x: &Vector, u: &Vector) -> CostExpansion {
        let (q, r, m, qv, rv) = self.cost_at(node);
        CostExpansion {
            value: self.stage_cost(node, x, u),
            l_x: q * x + m.transpose() * u + qv,
            l_u: r * u + m * x + rv,
            l_xx: q.clone(),
            l_uu: r.clone(),
            l_ux: m.clone(),
        }
    }

    fn terminal_cost(&self, leaf: usize, x: &Vector) -> f64 {
        let (q, qv) = self.term_at(leaf);
        0.5 * x.dot(&(q * x)) + qv.dot(x)
    }

    fn terminal_cost_expansion(&self, leaf: usize, x: &Vector) -> CostExpansion {
        let (q, qv) = self.term_at(leaf);
        let nx = x.len();
        CostExpansion {
            value: self.terminal_cost(leaf, x),
            l_x: q * x + qv,
            l_u: Vector::zeros(0),
            l_xx: q.clone(),
            l_uu: Mat::zeros(0, 0),
            l_ux: Mat::zeros(0, nx),
        }
    }

    fn constraint_count(&self, node: usize) -> usize {
        match (self.input_bound, self.topology.is_leaf(node)) {
            (Some(_), false) => 2 * self.nu(),
            _ => 0,
        }
    }

    fn constraints(&self, node: usize, _x: &Vector, u: Option<&Vector>) -> Vector {
        match (self.input_bound, u) {
            (Some(b), Some(u)) if self.constraint_count(node) > 0 => {
                let nu = u.len();
                Vector::from_fn(2 * nu, |m, _| {
                    if m < nu {
                        u[m] - b
                    } else {
                        -u[m - nu] - b
                    }
                })
            }
            _ => Vector::zeros(0),
        }
    }

    fn constraint_jacobians(&self, node: usize, _x: &Vector, u: Option<&Vector>) -> (Mat, Mat) {
        let m = self.constraint_count(node);
        let nu = u.map_or(0, |u| u.len());
        let mut ju = Mat::zeros(m, nu);
        if m > 0 {
            for j in 0..nu {
                ju[(j, j)] = 1.0;
                ju[(nu + j, j)] = -1.0;
            }
        }
        (Mat::zeros(m, self.nx()), ju)
    }
}
