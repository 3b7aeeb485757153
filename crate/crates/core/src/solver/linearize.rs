//! Second-order model of the augmented-Lagrangian objective around a
//! nominal trajectory tree.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{all_finite_mat, all_finite_vec, symmetrize, Mat, Vector};
use crate::lqr::{StageModel, ValueFunction};
use crate::problem::{ALState, BmpcProblem};
use crate::riccati::TreeStageModels;
use crate::tree::TrajectoryTree;

enum NodeModel {
    Stage(StageModel),
    Terminal(ValueFunction),
}

/// Adds the Gauss-Newton model of `(η + ½ I_ρ g)ᵀ g`: gradient
/// `Jᵀ(η + I_ρ g)` and Hessian `Jᵀ I_ρ J`.
fn al_terms(al: &ALState, node: usize, g: &Vector, jac: &Mat) -> (Vector, Mat) {
    let i_rho = al.active_penalty(node, g);
    let weighted = &al.multipliers[node] + i_rho.component_mul(g);
    let mut scaled = jac.clone();
    for (m, mut row) in scaled.row_iter_mut().enumerate() {
        row *= i_rho[m];
    }
    (jac.transpose() * weighted, jac.transpose() * scaled)
}

fn node_model<P: BmpcProblem + ?Sized>(
    problem: &P,
    nominal: &TrajectoryTree,
    al: &ALState,
    i: usize,
) -> Result<NodeModel> {
    let topo = problem.topology();
    let w = topo.weight(i);
    let x = &nominal.states[i];
    let (nx, nu) = (problem.nx(), problem.nu());
    let has_constraints = problem.constraint_count(i) > 0;
    let model = match nominal.inputs[i].as_ref() {
        Some(u) => {
            let (a, b) = problem.dynamics_jacobians(i, x, u);
            let cost = problem.stage_cost_expansion(i, x, u);
            let mut s = StageModel {
                a,
                b,
                c: Vector::zeros(nx),
                q_xx: cost.l_xx * w,
                r_uu: cost.l_uu * w,
                m_ux: cost.l_ux * w,
                q_x: cost.l_x * w,
                r_u: cost.l_u * w,
            };
            if has_constraints {
                let g = problem.constraints(i, x, Some(u));
                let (jx, ju) = problem.constraint_jacobians(i, x, Some(u));
                let mut jac = Mat::zeros(g.len(), nx + nu);
                jac.view_mut((0, 0), (g.len(), nx)).copy_from(&jx);
                jac.view_mut((0, nx), (g.len(), nu)).copy_from(&ju);
                let (grad, hess) = al_terms(al, i, &g, &jac);
                s.q_x += grad.rows(0, nx);
                s.r_u += grad.rows(nx, nu);
                s.q_xx += hess.view((0, 0), (nx, nx));
                s.r_uu += hess.view((nx, nx), (nu, nu));
                s.m_ux += hess.view((nx, 0), (nu, nx));
            }
            symmetrize(&mut s.q_xx);
            symmetrize(&mut s.r_uu);
            let finite = [&s.a, &s.b, &s.q_xx, &s.r_uu, &s.m_ux].iter().all(|m| all_finite_mat(m))
                && all_finite_vec(&s.q_x)
                && all_finite_vec(&s.r_u);
            if !finite {
                return Err(Error::NonFinite {
                    node: i,
                    what: "derivatives in linearization".into(),
                });
            }
            NodeModel::Stage(s)
        }
        None => {
            let cost = problem.terminal_cost_expansion(i, x);
            let mut v = ValueFunction {
                p_mat: cost.l_xx * w,
                p_vec: cost.l_x * w,
            };
            if has_constraints {
                let g = problem.constraints(i, x, None);
                let (jx, _) = problem.constraint_jacobians(i, x, None);
                let (grad, hess) = al_terms(al, i, &g, &jx);
                v.p_vec += grad;
                v.p_mat += hess;
            }
            symmetrize(&mut v.p_mat);
            if !all_finite_mat(&v.p_mat) || !all_finite_vec(&v.p_vec) {
                return Err(Error::NonFinite {
                    node: i,
                    what: "terminal derivatives in linearization".into(),
                });
            }
            NodeModel::Terminal(v)
        }
    };
    Ok(model)
}

/// Tree LQR in the deviations `(δx, δu)` from `nominal`.
///
/// Node costs are weighted by the node probability; the augmented-Lagrangian
/// terms enter unweighted, with Gauss-Newton curvature. The offset of the
/// edge `p(i) -> i` is the defect `f_{p(i)}(x̄_{p(i)}, ū_{p(i)}) − x̄_i`.
pub fn linearize<P: BmpcProblem + ?Sized>(
    problem: &P,
    nominal: &TrajectoryTree,
    al: &ALState,
    defects: &[Vector],
) -> Result<TreeStageModels> {
    let topo = problem.topology();
    let nodes = (0..topo.node_count())
        .into_par_iter()
        .map(|i| node_model(problem, nominal, al, i))
        .collect::<Result<Vec<_>>>()?;
    let mut stages = Vec::with_capacity(nodes.len());
    let mut terminals = Vec::with_capacity(nodes.len());
    for m in nodes {
        match m {
            NodeModel::Stage(s) => {
                stages.push(Some(s));
                terminals.push(None);
            }
            NodeModel::Terminal(v) => {
                stages.push(None);
                terminals.push(Some(v));
            }
        }
    }
    Ok(TreeStageModels {
        topology: topo.clone(),
        stages,
        defects: defects.to_vec(),
        terminals,
    })
}

/// Copy of `models` with `λ I` added to every input Hessian and terminal
/// Hessian.
pub fn regularized(models: &TreeStageModels, lambda: f64) -> TreeStageModels {
    if lambda == 0.0 {
        return models.clone();
    }
    let mut out = models.clone();
    for s in out.stages.iter_mut().flatten() {
        let nu = s.r_uu.nrows();
        s.r_uu += Mat::identity(nu, nu) * lambda;
    }
    for t in out.terminals.iter_mut().flatten() {
        let nx = t.p_mat.nrows();
        t.p_mat += Mat::identity(nx, nx) * lambda;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{defects, initial_guess, LinearQuadraticProblem};
    use crate::random;
    use crate::tree::build_tree;

    #[test]
    fn linear_quadratic_problem_linearizes_to_itself() {
        let topo = build_tree(4, &[]).unwrap();
        let mut rng = random::rng(1);
        let p = LinearQuadraticProblem::random(&mut rng, &topo, 2, 1);
        let zero = TrajectoryTree::zeros(&topo, 2, 1);
        let al = ALState::new(&p, 10.0);
        let d = defects(&p, &zero);
        let m = linearize(&p, &zero, &al, &d).unwrap();
        for i in 0..4 {
            let s = m.stage(i);
            let (a, b, c) = p.dynamics[i].as_ref().unwrap();
            assert_eq!(&s.a, a);
            assert_eq!(&s.b, b);
            assert_eq!(&m.defects[i + 1], c);
            assert_eq!(&s.q_x, &p.stage_costs[i].as_ref().unwrap().3);
        }
        let guess = initial_guess(&p).unwrap();
        let m = linearize(&p, &guess, &al, &defects(&p, &guess)).unwrap();
        assert!(m.defects.iter().all(|d| d.amax() == 0.0));
    }

    #[test]
    fn scalar_constraint_terms() {
        // g = x − 1 at x̄ = 2, η = 0, ρ = 10
        let al = ALState {
            multipliers: vec![Vector::zeros(1)],
            rho: 10.0,
        };
        let g = Vector::from_element(1, 1.0);
        let jac = Mat::from_element(1, 1, 1.0);
        let (grad, hess) = al_terms(&al, 0, &g, &jac);
        assert_eq!(grad[0], 10.0);
        assert_eq!(hess[(0, 0)], 10.0);
        // inactive with zero multiplier contributes nothing
        let (grad, hess) = al_terms(&al, 0, &Vector::from_element(1, -1.0), &jac);
        assert_eq!((grad[0], hess[(0, 0)]), (0.0, 0.0));
    }
}
