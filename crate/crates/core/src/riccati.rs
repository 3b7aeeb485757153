//! Sequential Riccati recursion on paths and on scenario trees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Mat, Vector};
use crate::lqr::{FeedbackPolicy, StageModel, ValueFunction};
use crate::tree::TreeTopology;

/// LQR data on a tree.
///
/// Dynamics and costs live on non-leaf nodes; the offset of the edge
/// `p(i) -> i` lives in `defects[i]`, because children of a branch node
/// share `(A, B)` but not the offset. The `c` field of the stored stage
/// models is ignored. Costs are already scaled by the node weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeStageModels {
    pub topology: TreeTopology,
    pub stages: Vec<Option<StageModel>>,
    pub defects: Vec<Vector>,
    pub terminals: Vec<Option<ValueFunction>>,
}

impl TreeStageModels {
    pub fn nx(&self) -> usize {
        self.defects[0].len()
    }

    pub fn nu(&self) -> usize {
        self.stage(0).nu()
    }

    pub fn stage(&self, i: usize) -> &StageModel {
        self.stages[i]
            .as_ref()
            .expect("stage model requested on a leaf")
    }

    pub fn terminal(&self, leaf: usize) -> &ValueFunction {
        self.terminals[leaf]
            .as_ref()
            .expect("terminal cost requested on a non-leaf")
    }

    /// Stage of node `i` with the offset of the edge towards `child`.
    pub fn stage_toward(&self, i: usize, child: usize) -> StageModel {
        let mut s = self.stage(i).clone();
        s.c = self.defects[child].clone();
        s
    }

    /// Stages along consecutive `nodes` (the last node only supplies the
    /// offset of the final edge).
    pub fn chain_stages(&self, nodes: &[usize]) -> Vec<StageModel> {
        nodes
            .windows(2)
            .map(|w| self.stage_toward(w[0], w[1]))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.topology.node_count();
        if self.stages.len() != n || self.defects.len() != n || self.terminals.len() != n {
            return Err(Error::Dimension("per-node arrays must cover every node".into()));
        }
        for i in 0..n {
            let leaf = self.topology.is_leaf(i);
            if leaf != self.stages[i].is_none() || leaf != self.terminals[i].is_some() {
                return Err(Error::Dimension(format!(
                    "node {i}: stage models on non-leaves, terminal costs on leaves"
                )));
            }
        }
        Ok(())
    }
}

/// One Bellman step given the next value Hessian and the shifted linear
/// term `p⁺ + P⁺c`.
fn riccati_step(
    stage: &StageModel,
    p_next: &Mat,
    shifted: &Vector,
    node: usize,
) -> Result<(ValueFunction, FeedbackPolicy)> {
    let at_p = stage.a.transpose() * p_next;
    let bt_p = stage.b.transpose() * p_next;
    let g_uu = &stage.r_uu + &bt_p * &stage.b;
    let g_ux = &stage.m_ux + &bt_p * &stage.a;
    let g_u = &stage.r_u + stage.b.transpose() * shifted;
    let chol = g_uu.cholesky().ok_or(Error::IndefiniteHessian { node })?;
    let gain = -chol.solve(&g_ux);
    let feedforward = -chol.solve(&g_u);
    let mut p_mat = &stage.q_xx + &at_p * &stage.a + g_ux.transpose() * &gain;
    symmetrize(&mut p_mat);
    let p_vec = &stage.q_x + stage.a.transpose() * shifted + g_ux.transpose() * &feedforward;
    if !p_mat.iter().chain(p_vec.iter()).all(|v| v.is_finite()) {
        return Err(Error::IndefiniteHessian { node });
    }
    Ok((ValueFunction { p_mat, p_vec }, FeedbackPolicy { gain, feedforward }))
}

/// Backward Riccati recursion on a single path; returns `V_0 .. V_N` and
/// the policies of stages `0 .. N-1`.
pub fn riccati_path(
    stages: &[StageModel],
    terminal: &ValueFunction,
) -> Result<(Vec<ValueFunction>, Vec<FeedbackPolicy>)> {
    let n = stages.len();
    let mut values = vec![terminal.clone(); n + 1];
    let mut policies = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let next = &values[k + 1];
        let shifted = &next.p_vec + &next.p_mat * &stages[k].c;
        let (v, pol) = riccati_step(&stages[k], &next.p_mat, &shifted, k)?;
        values[k] = v;
        policies.push(pol);
    }
    policies.reverse();
    Ok((values, policies))
}

/// Per-node value functions and policies of a tree LQR.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSolution {
    pub values: Vec<Option<ValueFunction>>,
    pub policies: Vec<Option<FeedbackPolicy>>,
}

/// Riccati recursion from the leaves to the root.
pub fn riccati_tree(models: &TreeStageModels) -> Result<TreeSolution> {
    models.validate()?;
    let n = models.topology.node_count();
    let mut sol = TreeSolution {
        values: models.terminals.clone(),
        policies: vec![None; n],
    };
    riccati_tree_upto(models, &mut sol, models.topology.horizon())?;
    Ok(sol)
}

/// Fills values and policies for every non-leaf node with step `< below`,
/// assuming values at step `below` are already present in `sol`.
pub(crate) fn riccati_tree_upto(
    models: &TreeStageModels,
    sol: &mut TreeSolution,
    below: usize,
) -> Result<()> {
    let topo = &models.topology;
    let end = topo.nodes_at_step(below)?.start;
    for i in (0..end).rev() {
        let (p_next, shifted) = children_value(models, &sol.values, i);
        let (v, pol) = riccati_step(models.stage(i), &p_next, &shifted, i)?;
        sol.values[i] = Some(v);
        sol.policies[i] = Some(pol);
    }
    Ok(())
}

/// Sum over children of `(P_ch, p_ch + P_ch c_ch)`, in child index order.
fn children_value(
    models: &TreeStageModels,
    values: &[Option<ValueFunction>],
    i: usize,
) -> (Mat, Vector) {
    let mut acc: Option<(Mat, Vector)> = None;
    for &ch in models.topology.children(i) {
        let v = values[ch]
            .as_ref()
            .expect("child value must be computed before its parent");
        let shifted = &v.p_vec + &v.p_mat * &models.defects[ch];
        acc = Some(match acc {
            None => (v.p_mat.clone(), shifted),
            Some((p, s)) => (p + &v.p_mat, s + shifted),
        });
    }
    acc.expect("non-leaf node without children")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::build_tree;
    use approx::assert_relative_eq;

    fn scalar_stage() -> StageModel {
        let one = Mat::from_element(1, 1, 1.0);
        StageModel {
            a: one.clone(),
            b: one.clone(),
            c: Vector::zeros(1),
            q_xx: one.clone(),
            r_uu: one,
            m_ux: Mat::zeros(1, 1),
            q_x: Vector::zeros(1),
            r_u: Vector::zeros(1),
        }
    }

    #[test]
    fn hand_riccati_step() {
        let term = ValueFunction {
            p_mat: Mat::from_element(1, 1, 1.0),
            p_vec: Vector::zeros(1),
        };
        let (vs, pols) = riccati_path(&[scalar_stage()], &term).unwrap();
        assert_relative_eq!(vs[0].p_mat[(0, 0)], 1.5);
        assert_relative_eq!(pols[0].gain[(0, 0)], -0.5);
    }

    #[test]
    fn zero_state_cost_gives_zero_values() {
        let mut s = scalar_stage();
        s.q_xx[(0, 0)] = 0.0;
        s.r_uu[(0, 0)] = 2.0;
        s.r_u[0] = 1.0;
        let (vs, pols) = riccati_path(&[s.clone(), s.clone(), s], &ValueFunction::zeros(1)).unwrap();
        for v in &vs {
            assert_eq!(v.p_mat[(0, 0)], 0.0);
            assert_eq!(v.p_vec[0], 0.0);
        }
        for p in &pols {
            // K = −R⁻¹M = 0, k = −R⁻¹r
            assert_eq!(p.gain[(0, 0)], 0.0);
            assert_relative_eq!(p.feedforward[0], -0.5);
        }
    }

    #[test]
    fn zero_everything() {
        let mut s = scalar_stage();
        s.q_xx[(0, 0)] = 0.0;
        let (vs, pols) = riccati_path(&[s.clone(), s], &ValueFunction::zeros(1)).unwrap();
        for v in &vs {
            assert_eq!(v.p_mat[(0, 0)], 0.0);
            assert_eq!(v.p_vec[0], 0.0);
        }
        for p in &pols {
            assert_eq!(p.gain[(0, 0)], 0.0);
            assert_eq!(p.feedforward[0], 0.0);
        }
    }

    #[test]
    fn path_tree_reduces_to_riccati_path() {
        let topo = build_tree(4, &[]).unwrap();
        let mut stages = Vec::new();
        for k in 0..4 {
            let mut s = scalar_stage();
            s.a[(0, 0)] = 1.0 + 0.1 * k as f64;
            s.q_x[0] = 0.3 * k as f64;
            s.c[0] = 0.2 - 0.05 * k as f64;
            stages.push(s);
        }
        let term = ValueFunction {
            p_mat: Mat::from_element(1, 1, 2.0),
            p_vec: Vector::from_element(1, -1.0),
        };
        let mut defects = vec![Vector::zeros(1)];
        defects.extend(stages.iter().map(|s| s.c.clone()));
        let models = TreeStageModels {
            topology: topo,
            stages: stages
                .iter()
                .map(|s| Some(s.clone()))
                .chain(std::iter::once(None))
                .collect(),
            defects,
            terminals: vec![None, None, None, None, Some(term.clone())],
        };
        let tree = riccati_tree(&models).unwrap();
        let (vs, pols) = riccati_path(&stages, &term).unwrap();
        for k in 0..4 {
            assert_eq!(tree.values[k].as_ref().unwrap(), &vs[k]);
            assert_eq!(tree.policies[k].as_ref().unwrap(), &pols[k]);
        }
    }
}
