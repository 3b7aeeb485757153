//! Condensed (input-only) form of path and tree LQR problems.
//!
//! States are eliminated through the prediction identity
//! `x = Φ x_0 + S u + F c`, leaving the dense QP `min ½uᵀHu + hᵀu`.
//! Trees are condensed path by path and the per-path QPs are merged by
//! the sharing map Γ, which identifies input slots of different paths that
//! belong to the same tree node.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_block, set_block, symmetrize, Mat, Vector};
use crate::lqr::{StageModel, ValueFunction};
use crate::riccati::TreeStageModels;
use crate::scan::{prefix_scan, suffix_scan, ScanSchedule};

/// `Φ`, `S`, `F` with one block row per state `x_0 .. x_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub phi: Mat,
    pub s: Mat,
    pub f: Mat,
    nx: usize,
    nu: usize,
}

impl PredictionMatrices {
    pub fn horizon(&self) -> usize {
        self.phi.nrows() / self.nx - 1
    }

    /// Stacked states for an initial state, stacked inputs and stacked offsets.
    pub fn predict(&self, x0: &Vector, u: &Vector, c: &Vector) -> Vector {
        &self.phi * x0 + &self.s * u + &self.f * c
    }

    pub fn phi_block(&self, k: usize) -> Mat {
        self.phi.rows(k * self.nx, self.nx).into_owned()
    }

    pub fn s_block(&self, i: usize, j: usize) -> Mat {
        self.s
            .view((i * self.nx, j * self.nu), (self.nx, self.nu))
            .into_owned()
    }

    pub fn f_block(&self, i: usize, j: usize) -> Mat {
        self.f
            .view((i * self.nx, j * self.nx), (self.nx, self.nx))
            .into_owned()
    }
}

fn mat_product(first: &Mat, second: &Mat) -> std::result::Result<Mat, Error> {
    Ok(second * first)
}

/// Builds the prediction matrices with scans: `Φ` from a prefix scan over
/// `[I, A_0, .., A_{N-1}]`, and each block row of `F` from a reverse scan
/// over the transition matrices between the offset and the state.
pub fn build_prediction(stages: &[StageModel], schedule: ScanSchedule) -> Result<PredictionMatrices> {
    let n = stages.len();
    if n == 0 {
        return Err(Error::Dimension("prediction needs at least one stage".into()));
    }
    let nx = stages[0].nx();
    let nu = stages[0].nu();

    let mut items = vec![Mat::identity(nx, nx)];
    items.extend(stages.iter().map(|s| s.a.clone()));
    let powers = prefix_scan(items, schedule, &mat_product)?;
    let mut phi = Mat::zeros((n + 1) * nx, nx);
    for (k, p) in powers.iter().enumerate() {
        set_block(&mut phi, k * nx, 0, p);
    }

    // row i holds A_{i-1} .. A_{j+1} in column j < i - 1, and I in column i - 1
    let rows: Vec<Vec<Mat>> = (1..=n)
        .into_par_iter()
        .map(|i| {
            let items: Vec<Mat> = (1..i).map(|j| stages[j].a.clone()).collect();
            let mut row = if items.is_empty() {
                Vec::new()
            } else {
                suffix_scan(items, schedule, &mat_product)?
            };
            row.push(Mat::identity(nx, nx));
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut f = Mat::zeros((n + 1) * nx, n * nx);
    let mut s = Mat::zeros((n + 1) * nx, n * nu);
    for (r, row) in rows.iter().enumerate() {
        let i = r + 1;
        for (j, block) in row.iter().enumerate() {
            set_block(&mut f, i * nx, j * nx, block);
            set_block(&mut s, i * nx, j * nu, &(block * &stages[j].b));
        }
    }
    Ok(PredictionMatrices { phi, s, f, nx, nu })
}

/// `min_u ½uᵀHu + hᵀu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedQP {
    pub h_mat: Mat,
    pub h_vec: Vector,
}

/// Condenses a path LQR at initial state `x0`.
pub fn condense(
    stages: &[StageModel],
    terminal: &ValueFunction,
    x0: &Vector,
    schedule: ScanSchedule,
) -> Result<CondensedQP> {
    let pred = build_prediction(stages, schedule)?;
    let n = stages.len();
    let (nx, nu) = (pred.nx, pred.nu);

    let offsets = Vector::from_iterator(n * nx, stages.iter().flat_map(|s| s.c.iter().copied()));
    let free = &pred.phi * x0 + &pred.f * &offsets;

    // block-diagonal Q̄ and M̄ applied block row by block row
    let mut q_s = Mat::zeros((n + 1) * nx, n * nu);
    let mut q_free = Vector::zeros((n + 1) * nx);
    let mut m_s = Mat::zeros(n * nu, n * nu);
    let mut m_free = Vector::zeros(n * nu);
    for k in 0..=n {
        let q = if k < n { &stages[k].q_xx } else { &terminal.p_mat };
        let s_row = pred.s.rows(k * nx, nx);
        let w = free.rows(k * nx, nx);
        q_s.rows_mut(k * nx, nx).copy_from(&(q * s_row));
        q_free.rows_mut(k * nx, nx).copy_from(&(q * w));
        if k < n {
            let m = &stages[k].m_ux;
            m_s.rows_mut(k * nu, nu).copy_from(&(m * s_row));
            m_free.rows_mut(k * nu, nu).copy_from(&(m * w));
        }
    }

    let mut h_mat = pred.s.transpose() * &q_s + &m_s + m_s.transpose();
    for (k, s) in stages.iter().enumerate() {
        add_block(&mut h_mat, k * nu, k * nu, &s.r_uu);
    }
    symmetrize(&mut h_mat);

    let mut q_bar = Vector::zeros((n + 1) * nx);
    let mut r_bar = Vector::zeros(n * nu);
    for (k, s) in stages.iter().enumerate() {
        q_bar.rows_mut(k * nx, nx).copy_from(&s.q_x);
        r_bar.rows_mut(k * nu, nu).copy_from(&s.r_u);
    }
    q_bar.rows_mut(n * nx, nx).copy_from(&terminal.p_vec);
    let h_vec = pred.s.transpose() * (q_free + q_bar) + r_bar + m_free;
    Ok(CondensedQP { h_mat, h_vec })
}

/// Γ stored as index maps: `slots[p][k]` is the tree input slot used by
/// path `p` at step `k`, and `nodes[t]` is the tree node owning slot `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingMap {
    pub nodes: Vec<usize>,
    pub slots: Vec<Vec<usize>>,
    pub nu: usize,
}

impl SharingMap {
    /// Builds the map for the paths ending at every node of step `cut`.
    pub fn new(models: &TreeStageModels, cut: usize) -> Result<Self> {
        let topo = &models.topology;
        let ends = topo.nodes_at_step(cut)?;
        let mut slot_of = vec![usize::MAX; topo.node_count()];
        let mut nodes = Vec::new();
        for i in 0..topo.nodes_at_step(cut)?.start {
            slot_of[i] = nodes.len();
            nodes.push(i);
        }
        let slots = ends
            .map(|end| {
                let anc = topo.ancestry(end);
                anc[..cut].iter().map(|&i| slot_of[i]).collect()
            })
            .collect();
        Ok(SharingMap {
            nodes,
            slots,
            nu: models.nu(),
        })
    }

    pub fn tree_dim(&self) -> usize {
        self.nodes.len() * self.nu
    }

    pub fn path_count(&self) -> usize {
        self.slots.len()
    }

    /// Number of paths through each tree slot (`Γᵀ𝟙` per slot).
    pub fn multiplicity(&self) -> Vec<usize> {
        let mut count = vec![0; self.nodes.len()];
        for path in &self.slots {
            for &t in path {
                count[t] += 1;
            }
        }
        count
    }

    /// `Γ u_tree`: one stacked input vector per path.
    pub fn expand(&self, u_tree: &Vector) -> Vec<Vector> {
        let nu = self.nu;
        self.slots
            .iter()
            .map(|path| {
                Vector::from_iterator(
                    path.len() * nu,
                    path.iter().flat_map(|&t| u_tree.rows(t * nu, nu).iter().copied().collect::<Vec<_>>()),
                )
            })
            .collect()
    }

    /// Inverse of [`SharingMap::expand`]; shared slots must agree exactly.
    pub fn gather(&self, stacked: &[Vector]) -> Result<Vector> {
        let nu = self.nu;
        let mut out = Vector::zeros(self.tree_dim());
        let mut seen = vec![false; self.nodes.len()];
        for (path, u) in self.slots.iter().zip(stacked) {
            for (k, &t) in path.iter().enumerate() {
                let part = u.rows(k * nu, nu);
                if seen[t] {
                    if out.rows(t * nu, nu) != part {
                        return Err(Error::InconsistentSharedNode {
                            node: self.nodes[t],
                            reason: "paths carry different inputs".into(),
                        });
                    }
                } else {
                    out.rows_mut(t * nu, nu).copy_from(&part);
                    seen[t] = true;
                }
            }
        }
        Ok(out)
    }

    /// Per-node inputs of a tree input vector.
    pub fn node_inputs(&self, u_tree: &Vector) -> Vec<(usize, Vector)> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(t, &i)| (i, u_tree.rows(t * self.nu, self.nu).into_owned()))
            .collect()
    }
}

fn scale_cost(stage: &mut StageModel, factor: f64) {
    stage.q_xx *= factor;
    stage.r_uu *= factor;
    stage.m_ux *= factor;
    stage.q_x *= factor;
    stage.r_u *= factor;
}

/// Condenses the steps `0 .. cut` of a tree LQR.
///
/// Each path ends at a node of step `cut` and uses that node's entry of
/// `cut_values` as its terminal cost. Costs of nodes shared by several paths
/// are divided by the number of paths through them, so that
/// `Γᵀ diag(H^p) Γ` counts every node cost once.
pub fn condense_tree_upto(
    models: &TreeStageModels,
    cut: usize,
    cut_values: &[Option<ValueFunction>],
    x0: &Vector,
    schedule: ScanSchedule,
) -> Result<(CondensedQP, SharingMap)> {
    models.validate()?;
    if cut == 0 {
        return Err(Error::Dimension("nothing to condense at cut step 0".into()));
    }
    let topo = &models.topology;
    let gamma = SharingMap::new(models, cut)?;
    let mult = gamma.multiplicity();
    let nu = gamma.nu;

    let ends: Vec<usize> = topo.nodes_at_step(cut)?.collect();
    let per_path = ends
        .par_iter()
        .zip(&gamma.slots)
        .map(|(&end, slots)| {
            let nodes = topo.ancestry(end);
            let mut stages = models.chain_stages(&nodes);
            for (stage, &t) in stages.iter_mut().zip(slots) {
                scale_cost(stage, 1.0 / mult[t] as f64);
            }
            let terminal = cut_values[end].as_ref().ok_or_else(|| {
                Error::Dimension(format!("no terminal value supplied for node {end}"))
            })?;
            condense(&stages, terminal, x0, schedule)
        })
        .collect::<Result<Vec<_>>>()?;

    let dim = gamma.tree_dim();
    let mut h_mat = Mat::zeros(dim, dim);
    let mut h_vec = Vector::zeros(dim);
    for (qp, slots) in per_path.iter().zip(&gamma.slots) {
        for (k, &tk) in slots.iter().enumerate() {
            let mut part = h_vec.rows_mut(tk * nu, nu);
            part += qp.h_vec.rows(k * nu, nu);
            for (l, &tl) in slots.iter().enumerate() {
                let block = qp.h_mat.view((k * nu, l * nu), (nu, nu)).into_owned();
                add_block(&mut h_mat, tk * nu, tl * nu, &block);
            }
        }
    }
    symmetrize(&mut h_mat);
    Ok((CondensedQP { h_mat, h_vec }, gamma))
}

/// Condenses a whole tree LQR, with leaf terminal costs.
pub fn condense_tree(
    models: &TreeStageModels,
    x0: &Vector,
    schedule: ScanSchedule,
) -> Result<(CondensedQP, SharingMap)> {
    condense_tree_upto(models, models.topology.horizon(), &models.terminals, x0, schedule)
}

/// Solves `H u = −h` by Cholesky. When that fails on round-off, a pivoted
/// LU is tried and accepted only if `H` is positive along the solution.
pub fn solve_dense(qp: &CondensedQP) -> Result<Vector> {
    if let Some(chol) = qp.h_mat.clone().cholesky() {
        return Ok(-chol.solve(&qp.h_vec));
    }
    let u = qp
        .h_mat
        .clone()
        .lu()
        .solve(&-&qp.h_vec)
        .ok_or(Error::IndefiniteCondensed)?;
    let curvature = u.dot(&(&qp.h_mat * &u));
    if curvature > 0.0 && u.iter().all(|v| v.is_finite()) {
        Ok(u)
    } else {
        Err(Error::IndefiniteCondensed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_stage(a: f64, b: f64) -> StageModel {
        StageModel {
            a: Mat::from_element(1, 1, a),
            b: Mat::from_element(1, 1, b),
            c: Vector::zeros(1),
            q_xx: Mat::from_element(1, 1, 1.0),
            r_uu: Mat::from_element(1, 1, 1.0),
            m_ux: Mat::zeros(1, 1),
            q_x: Vector::zeros(1),
            r_u: Vector::zeros(1),
        }
    }

    #[test]
    fn scalar_two_step_prediction() {
        let stages = [scalar_stage(2.0, 0.5), scalar_stage(3.0, 4.0)];
        for sched in [ScanSchedule::Sequential, ScanSchedule::Tree] {
            let p = build_prediction(&stages, sched).unwrap();
            assert_eq!(p.phi.as_slice(), &[1.0, 2.0, 6.0]);
            // rows x_1, x_2 of F
            assert_eq!(p.f_block(1, 0)[(0, 0)], 1.0);
            assert_eq!(p.f_block(1, 1)[(0, 0)], 0.0);
            assert_eq!(p.f_block(2, 0)[(0, 0)], 3.0);
            assert_eq!(p.f_block(2, 1)[(0, 0)], 1.0);
            assert_eq!(p.s_block(2, 0)[(0, 0)], 1.5);
            assert_eq!(p.s_block(2, 1)[(0, 0)], 4.0);
            assert_eq!(p.f.rows(0, 1).amax(), 0.0);
        }
    }

    #[test]
    fn identity_dynamics_give_lower_triangular_ones() {
        let one = scalar_stage(1.0, 1.0);
        let p = build_prediction(&vec![one; 4], ScanSchedule::Tree).unwrap();
        for i in 0..=4 {
            for j in 0..4 {
                let want = if j < i { 1.0 } else { 0.0 };
                assert_eq!(p.s_block(i, j)[(0, 0)], want);
            }
        }
    }

    #[test]
    fn one_step_condensing_by_hand() {
        let mut s = scalar_stage(1.5, 2.0);
        s.c[0] = 0.3;
        s.r_uu[(0, 0)] = 0.7;
        s.r_u[0] = -0.2;
        let term = ValueFunction {
            p_mat: Mat::from_element(1, 1, 3.0),
            p_vec: Vector::from_element(1, 0.4),
        };
        let x0 = Vector::from_element(1, -1.0);
        let qp = condense(&[s], &term, &x0, ScanSchedule::Tree).unwrap();
        // H = B²P + R, h = B(P(Ax0 + c) + p) + r
        assert_relative_eq!(qp.h_mat[(0, 0)], 4.0 * 3.0 + 0.7);
        assert_relative_eq!(qp.h_vec[0], 2.0 * (3.0 * (-1.5 + 0.3) + 0.4) - 0.2);
    }

    #[test]
    fn dense_solve_small_cases() {
        let qp = CondensedQP {
            h_mat: Mat::identity(3, 3),
            h_vec: Vector::from_vec(vec![1.0, -2.0, 3.0]),
        };
        assert_eq!(solve_dense(&qp).unwrap(), -&qp.h_vec);
        let qp = CondensedQP {
            h_mat: Mat::from_element(1, 1, 2.0),
            h_vec: Vector::from_element(1, -4.0),
        };
        assert_relative_eq!(solve_dense(&qp).unwrap()[0], 2.0);
        let qp = CondensedQP {
            h_mat: Mat::from_element(1, 1, -1.0),
            h_vec: Vector::from_element(1, 1.0),
        };
        assert_eq!(solve_dense(&qp), Err(Error::IndefiniteCondensed));
    }
}
