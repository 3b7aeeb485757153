//! Seeded random LQR instances for oracle suites and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{symmetrize, Mat, Vector};
use crate::lqr::{StageModel, ValueFunction};
use crate::riccati::TreeStageModels;
use crate::tree::TreeTopology;

pub type InstanceRng = ChaCha8Rng;

pub fn rng(seed: u64) -> InstanceRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| normal(rng))
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| normal(rng))
}

/// `L Lᵀ / n + eps I`.
pub fn random_spd(rng: &mut impl Rng, n: usize, eps: f64) -> Mat {
    let l = random_mat(rng, n, n);
    let mut m = &l * l.transpose() / n as f64 + Mat::identity(n, n) * eps;
    symmetrize(&mut m);
    m
}

/// Stage with `[Q Mᵀ; M R]` positive definite and moderately stable `A`.
pub fn random_stage(rng: &mut impl Rng, nx: usize, nu: usize) -> StageModel {
    let w = random_spd(rng, nx + nu, 0.1);
    let a = Mat::identity(nx, nx) * 0.6 + random_mat(rng, nx, nx) * (0.4 / (nx as f64).sqrt());
    StageModel {
        a,
        b: random_mat(rng, nx, nu),
        c: random_vec(rng, nx) * 0.5,
        q_xx: w.view((0, 0), (nx, nx)).into_owned(),
        r_uu: w.view((nx, nx), (nu, nu)).into_owned(),
        m_ux: w.view((nx, 0), (nu, nx)).into_owned(),
        q_x: random_vec(rng, nx),
        r_u: random_vec(rng, nu),
    }
}

pub fn random_terminal(rng: &mut impl Rng, nx: usize) -> ValueFunction {
    ValueFunction {
        p_mat: random_spd(rng, nx, 0.1),
        p_vec: random_vec(rng, nx),
    }
}

/// A path LQR instance: stages, terminal value and initial state.
#[derive(Debug, Clone)]
pub struct LqrInstance {
    pub stages: Vec<StageModel>,
    pub terminal: ValueFunction,
    pub x0: Vector,
}

pub fn random_lqr(rng: &mut impl Rng, nx: usize, nu: usize, horizon: usize) -> LqrInstance {
    LqrInstance {
        stages: (0..horizon).map(|_| random_stage(rng, nx, nu)).collect(),
        terminal: random_terminal(rng, nx),
        x0: random_vec(rng, nx),
    }
}

/// Random tree LQR with node costs scaled by the node weights.
pub fn random_tree_models(
    rng: &mut impl Rng,
    topology: &TreeTopology,
    nx: usize,
    nu: usize,
) -> TreeStageModels {
    let n = topology.node_count();
    let mut stages = Vec::with_capacity(n);
    let mut terminals = Vec::with_capacity(n);
    let mut defects = Vec::with_capacity(n);
    for i in 0..n {
        let w = topology.weight(i);
        defects.push(if i == 0 {
            Vector::zeros(nx)
        } else {
            random_vec(rng, nx) * 0.5
        });
        if topology.is_leaf(i) {
            let mut t = random_terminal(rng, nx);
            t.p_mat *= w;
            t.p_vec *= w;
            stages.push(None);
            terminals.push(Some(t));
        } else {
            let mut s = random_stage(rng, nx, nu);
            s.c = Vector::zeros(nx);
            s.q_xx *= w;
            s.r_uu *= w;
            s.m_ux *= w;
            s.q_x *= w;
            s.r_u *= w;
            stages.push(Some(s));
            terminals.push(None);
        }
    }
    TreeStageModels {
        topology: topology.clone(),
        stages,
        defects,
        terminals,
    }
}
