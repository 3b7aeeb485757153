//! Brute-force reference solvers.
//!
//! Every tree LQR is also a single equality-constrained QP over all node
//! states and inputs. These routines assemble the full KKT system and solve
//! it with a pivoted LU, independently of the Riccati, scan and condensing
//! code paths they are used to check.

use crate::linalg::{add_block, Mat, Vector};
use crate::lqr::{StageModel, ValueFunction};
use crate::riccati::TreeStageModels;
use crate::tree::{build_tree, TrajectoryTree};

struct Layout {
    nx: usize,
    nu: usize,
    state_count: usize,
    input_slot: Vec<Option<usize>>,
    input_count: usize,
}

impl Layout {
    fn new(models: &TreeStageModels) -> Self {
        let topo = &models.topology;
        let mut input_slot = vec![None; topo.node_count()];
        let mut input_count = 0;
        for i in topo.non_leaves() {
            input_slot[i] = Some(input_count);
            input_count += 1;
        }
        Layout {
            nx: models.nx(),
            nu: models.nu(),
            state_count: topo.node_count(),
            input_slot,
            input_count,
        }
    }

    fn x(&self, i: usize) -> usize {
        i * self.nx
    }

    fn u(&self, i: usize) -> usize {
        self.state_count * self.nx + self.input_slot[i].unwrap() * self.nu
    }

    fn primal(&self) -> usize {
        self.state_count * self.nx + self.input_count * self.nu
    }
}

/// Hessian, gradient and constraint data of the full-space QP.
struct KktSystem {
    layout: Layout,
    hess: Mat,
    grad: Vector,
    eq: Mat,
    /// Equality right-hand side without the `x_0` rows.
    eq_rhs: Vector,
}

fn assemble(models: &TreeStageModels) -> KktSystem {
    let lay = Layout::new(models);
    let (nx, nu) = (lay.nx, lay.nu);
    let topo = &models.topology;
    let n = topo.node_count();
    let np = lay.primal();
    let mut hess = Mat::zeros(np, np);
    let mut grad = Vector::zeros(np);
    let mut eq = Mat::zeros(n * nx, np);
    let mut eq_rhs = Vector::zeros(n * nx);

    for i in 0..n {
        let xi = lay.x(i);
        if let Some(t) = &models.terminals[i] {
            add_block(&mut hess, xi, xi, &t.p_mat);
            grad.rows_mut(xi, nx).copy_from(&t.p_vec);
        }
        if let Some(s) = &models.stages[i] {
            let ui = lay.u(i);
            add_block(&mut hess, xi, xi, &s.q_xx);
            add_block(&mut hess, ui, ui, &s.r_uu);
            add_block(&mut hess, ui, xi, &s.m_ux);
            add_block(&mut hess, xi, ui, &s.m_ux.transpose());
            grad.rows_mut(xi, nx).copy_from(&s.q_x);
            grad.rows_mut(ui, nu).copy_from(&s.r_u);
        }
        let row = i * nx;
        add_block(&mut eq, row, xi, &Mat::identity(nx, nx));
        if let Some(p) = topo.parent(i) {
            let s = models.stage(p);
            add_block(&mut eq, row, lay.x(p), &-&s.a);
            add_block(&mut eq, row, lay.u(p), &-&s.b);
            eq_rhs.rows_mut(row, nx).copy_from(&models.defects[i]);
        }
    }
    KktSystem {
        layout: lay,
        hess,
        grad,
        eq,
        eq_rhs,
    }
}

impl KktSystem {
    fn matrix(&self) -> Mat {
        let np = self.hess.nrows();
        let ne = self.eq.nrows();
        let mut k = Mat::zeros(np + ne, np + ne);
        add_block(&mut k, 0, 0, &self.hess);
        add_block(&mut k, np, 0, &self.eq);
        add_block(&mut k, 0, np, &self.eq.transpose());
        k
    }

    fn rhs(&self, x0: &Vector) -> Vector {
        let np = self.hess.nrows();
        let mut rhs = Vector::zeros(np + self.eq.nrows());
        rhs.rows_mut(0, np).copy_from(&-&self.grad);
        let mut e = self.eq_rhs.clone();
        e.rows_mut(0, self.layout.nx).copy_from(x0);
        rhs.rows_mut(np, e.len()).copy_from(&e);
        rhs
    }

    fn unpack(&self, models: &TreeStageModels, z: &Vector) -> TrajectoryTree {
        let lay = &self.layout;
        let topo = &models.topology;
        TrajectoryTree {
            states: (0..topo.node_count())
                .map(|i| z.rows(lay.x(i), lay.nx).into_owned())
                .collect(),
            inputs: (0..topo.node_count())
                .map(|i| {
                    lay.input_slot[i].map(|_| z.rows(lay.u(i), lay.nu).into_owned())
                })
                .collect(),
        }
    }
}

/// Optimum of a tree LQR from its full KKT system.
pub fn dense_tree_optimum(models: &TreeStageModels, x0: &Vector) -> Option<TrajectoryTree> {
    let sys = assemble(models);
    let z = sys.matrix().lu().solve(&sys.rhs(x0))?;
    Some(sys.unpack(models, &z))
}

/// Hessian of the optimal cost with respect to the root state.
pub fn dense_tree_value_hessian(models: &TreeStageModels) -> Option<Mat> {
    let sys = assemble(models);
    let nx = sys.layout.nx;
    let np = sys.hess.nrows();
    let lu = sys.matrix().lu();
    // sensitivity of the primal solution to x_0
    let mut rhs = Mat::zeros(lu.l().nrows(), nx);
    for j in 0..nx {
        rhs[(np + j, j)] = 1.0;
    }
    let sens = lu.solve(&rhs)?;
    let z = sens.rows(0, np);
    Some(z.transpose() * &sys.hess * z)
}

/// Objective value of a trajectory under the tree LQR cost.
pub fn tree_cost(models: &TreeStageModels, traj: &TrajectoryTree) -> f64 {
    let mut total = 0.0;
    for i in 0..models.topology.node_count() {
        if let Some(t) = &models.terminals[i] {
            total += t.eval(&traj.states[i]);
        }
        if let Some(s) = &models.stages[i] {
            total += s.cost(&traj.states[i], traj.input(i));
        }
    }
    total
}

/// Wraps a path LQR as a tree with one leaf.
pub fn path_as_tree(stages: &[StageModel], terminal: &ValueFunction) -> TreeStageModels {
    let n = stages.len();
    let topology = build_tree(n, &[]).expect("a path graph is always valid");
    let nx = terminal.p_vec.len();
    let mut defects = vec![Vector::zeros(nx)];
    defects.extend(stages.iter().map(|s| s.c.clone()));
    let mut node_stages: Vec<Option<StageModel>> = stages
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.c = Vector::zeros(nx);
            Some(s)
        })
        .collect();
    node_stages.push(None);
    let mut terminals = vec![None; n];
    terminals.push(Some(terminal.clone()));
    TreeStageModels {
        topology,
        stages: node_stages,
        defects,
        terminals,
    }
}

/// Optimal `(states, inputs)` of a path LQR from its KKT system.
pub fn dense_path_optimum(
    stages: &[StageModel],
    terminal: &ValueFunction,
    x0: &Vector,
) -> Option<(Vec<Vector>, Vec<Vector>)> {
    let models = path_as_tree(stages, terminal);
    let traj = dense_tree_optimum(&models, x0)?;
    let inputs = traj.inputs.into_iter().flatten().collect();
    Some((traj.states, inputs))
}
