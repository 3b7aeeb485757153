//! Associative-scan solution of a time-varying LQR problem.
//!
//! The backward pass scans conditional value functions `V_{k->i}` kept in
//! dual form
//!
//! ```text
//! g(λ; x_k, x_i) = ½ x_kᵀ P x_k + pᵀ x_k − ½ λᵀ C λ + λᵀ (x_i − A x_k − c)
//! ```
//!
//! and the forward pass scans the closed-loop affine maps
//! `x_i = Ã_{k,i} x_k + c̃_{k,i}`.

use nalgebra::linalg::LU;
use nalgebra::Dyn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite_mat, all_finite_vec, symmetrize, Mat, Vector};
use crate::scan::{prefix_scan, suffix_scan, ScanSchedule};

/// Linearized dynamics `x⁺ = A x + B u + c` with the quadratic stage cost
/// `½xᵀQx + ½uᵀRu + uᵀMx + qᵀx + rᵀu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageModel {
    pub a: Mat,
    pub b: Mat,
    pub c: Vector,
    pub q_xx: Mat,
    pub r_uu: Mat,
    /// Input-state cross weight, `n_u × n_x`.
    pub m_ux: Mat,
    pub q_x: Vector,
    pub r_u: Vector,
}

impl StageModel {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    /// Stage cost at `(x, u)`.
    pub fn cost(&self, x: &Vector, u: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q_xx * x))
            + 0.5 * u.dot(&(&self.r_uu * u))
            + u.dot(&(&self.m_ux * x))
            + self.q_x.dot(x)
            + self.r_u.dot(u)
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u + &self.c
    }

    fn check_dims(&self) -> Result<()> {
        let (nx, nu) = (self.nx(), self.nu());
        let ok = self.a.shape() == (nx, nx)
            && self.b.nrows() == nx
            && self.c.len() == nx
            && self.q_xx.shape() == (nx, nx)
            && self.r_uu.shape() == (nu, nu)
            && self.m_ux.shape() == (nu, nx)
            && self.q_x.len() == nx
            && self.r_u.len() == nu;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "stage model inconsistent with n_x = {nx}, n_u = {nu}"
            )))
        }
    }
}

/// Quadratic value function `½xᵀPx + pᵀx` (constant term not tracked).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub p_mat: Mat,
    pub p_vec: Vector,
}

impl ValueFunction {
    pub fn zeros(nx: usize) -> Self {
        ValueFunction {
            p_mat: Mat::zeros(nx, nx),
            p_vec: Vector::zeros(nx),
        }
    }

    pub fn eval(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.p_mat * x)) + self.p_vec.dot(x)
    }

    /// Embeds `V_i` as a right scan element with `C = 0, A = 0, c = 0`.
    pub fn as_element(&self, step: usize) -> ScanElementBwd {
        let nx = self.p_vec.len();
        ScanElementBwd {
            p_mat: self.p_mat.clone(),
            p_vec: self.p_vec.clone(),
            c_mat: Mat::zeros(nx, nx),
            a: Mat::zeros(nx, nx),
            c_vec: Vector::zeros(nx),
            from: step,
            to: step,
        }
    }
}

/// Affine feedback `u = K x + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPolicy {
    pub gain: Mat,
    pub feedforward: Vector,
}

impl FeedbackPolicy {
    pub fn apply(&self, x: &Vector) -> Vector {
        &self.gain * x + &self.feedforward
    }

    /// Open-loop input `u`, expressed as a policy with zero gain.
    pub fn open_loop(u: Vector, nx: usize) -> Self {
        FeedbackPolicy {
            gain: Mat::zeros(u.len(), nx),
            feedforward: u,
        }
    }
}

/// Dual parameters `(P, p, C, A, c)` of the conditional value function
/// from step `from` to step `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanElementBwd {
    pub p_mat: Mat,
    pub p_vec: Vector,
    pub c_mat: Mat,
    pub a: Mat,
    pub c_vec: Vector,
    pub from: usize,
    pub to: usize,
}

impl ScanElementBwd {
    pub fn value(&self) -> ValueFunction {
        ValueFunction {
            p_mat: self.p_mat.clone(),
            p_vec: self.p_vec.clone(),
        }
    }
}

/// One-step conditional value function `V_{k->k+1}` of a stage.
pub fn init_bwd_element(stage: &StageModel, step: usize) -> Result<ScanElementBwd> {
    stage.check_dims()?;
    let chol = stage
        .r_uu
        .clone()
        .cholesky()
        .ok_or(Error::SingularInputCost { stage: step })?;
    // R⁻¹ [Mᵀ... ] computed column-wise: R⁻¹M, R⁻¹r, R⁻¹Bᵀ
    let rinv_m = chol.solve(&stage.m_ux);
    let rinv_r = chol.solve(&stage.r_u);
    let rinv_bt = chol.solve(&stage.b.transpose());
    let mut p_mat = &stage.q_xx - stage.m_ux.transpose() * &rinv_m;
    let mut c_mat = &stage.b * &rinv_bt;
    symmetrize(&mut p_mat);
    symmetrize(&mut c_mat);
    Ok(ScanElementBwd {
        p_mat,
        p_vec: &stage.q_x - stage.m_ux.transpose() * &rinv_r,
        c_mat,
        a: &stage.a - &stage.b * &rinv_m,
        c_vec: &stage.c - &stage.b * &rinv_r,
        from: step,
        to: step + 1,
    })
}

/// Combines `V_{k->j}` with `V_{j->i}` into `V_{k->i}`.
///
/// One LU factorization of `I + P_{j,i} C_{k,j}` serves both inverses,
/// since `(I + C P)⁻¹ = ((I + P C)⁻¹)ᵀ` for symmetric `P`, `C`.
pub fn combine_bwd(first: &ScanElementBwd, second: &ScanElementBwd) -> Result<ScanElementBwd> {
    let nx = first.p_vec.len();
    if second.p_vec.len() != nx {
        return Err(Error::Dimension(format!(
            "combining elements of size {nx} and {}",
            second.p_vec.len()
        )));
    }
    let fail = || Error::SingularCombination {
        k: first.from,
        j: first.to,
        i: second.to,
    };
    let lu: LU<f64, Dyn, Dyn> =
        (Mat::identity(nx, nx) + &second.p_mat * &first.c_mat).lu();

    // right-hand sides: [P_ji A_kj | p_ji + P_ji c_kj | A_jiᵀ]
    let mut rhs = Mat::zeros(nx, 2 * nx + 1);
    rhs.columns_mut(0, nx)
        .copy_from(&(&second.p_mat * &first.a));
    rhs.column_mut(nx)
        .copy_from(&(&second.p_vec + &second.p_mat * &first.c_vec));
    rhs.columns_mut(nx + 1, nx)
        .copy_from(&second.a.transpose());
    let sol = lu.solve(&rhs).ok_or_else(fail)?;
    if !all_finite_mat(&sol) {
        return Err(fail());
    }

    let at = first.a.transpose();
    let mut p_mat = &at * sol.columns(0, nx) + &first.p_mat;
    let p_vec = &at * sol.column(nx) + &first.p_vec;
    // A_ji (I + C_kj P_ji)⁻¹
    let g = sol.columns(nx + 1, nx).transpose();
    let a = &g * &first.a;
    let c_vec = &g * (&first.c_vec - &first.c_mat * &second.p_vec) + &second.c_vec;
    let mut c_mat = &g * &first.c_mat * second.a.transpose() + &second.c_mat;
    symmetrize(&mut p_mat);
    symmetrize(&mut c_mat);
    Ok(ScanElementBwd {
        p_mat,
        p_vec,
        c_mat,
        a,
        c_vec,
        from: first.from,
        to: second.to,
    })
}

/// `V_k = min_{x_i} V_{k->i}(x_k, x_i) + V_i(x_i)`.
pub fn combine_with_terminal(
    elem: &ScanElementBwd,
    terminal: &ValueFunction,
) -> Result<ValueFunction> {
    combine_bwd(elem, &terminal.as_element(elem.to)).map(|e| e.value())
}

/// Value functions `V_0 .. V_N` by a suffix scan over the one-step
/// elements with the terminal value folded in as the last element.
pub fn backward_scan(
    stages: &[StageModel],
    terminal: &ValueFunction,
    schedule: ScanSchedule,
) -> Result<Vec<ValueFunction>> {
    backward_scan_with(stages, terminal, schedule, &combine_bwd)
}

/// [`backward_scan`] with a caller-supplied combination operator.
pub fn backward_scan_with<F>(
    stages: &[StageModel],
    terminal: &ValueFunction,
    schedule: ScanSchedule,
    op: &F,
) -> Result<Vec<ValueFunction>>
where
    F: Fn(&ScanElementBwd, &ScanElementBwd) -> Result<ScanElementBwd> + Sync,
{
    if stages.is_empty() {
        return Err(Error::Dimension("backward scan needs at least one stage".into()));
    }
    let n = stages.len();
    let mut elements = stages
        .iter()
        .enumerate()
        .map(|(k, s)| init_bwd_element(s, k))
        .collect::<Result<Vec<_>>>()?;
    elements.push(terminal.as_element(n));
    let scanned = suffix_scan(elements, schedule, op)?;
    Ok(scanned.into_iter().map(|e| e.value()).collect())
}

/// `K = −(R + BᵀPB)⁻¹(M + BᵀPA)`, `k = −(R + BᵀPB)⁻¹(r + Bᵀ(p + Pc))`.
pub fn feedback_from_values(
    stage: &StageModel,
    next: &ValueFunction,
    node: usize,
) -> Result<FeedbackPolicy> {
    let bt_p = stage.b.transpose() * &next.p_mat;
    let hess = &stage.r_uu + &bt_p * &stage.b;
    let chol = hess.cholesky().ok_or(Error::IndefiniteHessian { node })?;
    let cross = &stage.m_ux + &bt_p * &stage.a;
    let grad = &stage.r_u + stage.b.transpose() * (&next.p_vec + &next.p_mat * &stage.c);
    let policy = FeedbackPolicy {
        gain: -chol.solve(&cross),
        feedforward: -chol.solve(&grad),
    };
    if !all_finite_mat(&policy.gain) || !all_finite_vec(&policy.feedforward) {
        return Err(Error::IndefiniteHessian { node });
    }
    Ok(policy)
}

/// Closed-loop affine map `x_i = Ã x_k + c̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanElementFwd {
    pub a: Mat,
    pub c: Vector,
}

impl ScanElementFwd {
    pub fn identity(nx: usize) -> Self {
        ScanElementFwd {
            a: Mat::identity(nx, nx),
            c: Vector::zeros(nx),
        }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.a * x + &self.c
    }
}

pub fn init_fwd_element(stage: &StageModel, policy: &FeedbackPolicy) -> ScanElementFwd {
    ScanElementFwd {
        a: &stage.a + &stage.b * &policy.gain,
        c: &stage.c + &stage.b * &policy.feedforward,
    }
}

/// Composes `k -> j` with `j -> i`.
pub fn combine_fwd(first: &ScanElementFwd, second: &ScanElementFwd) -> ScanElementFwd {
    ScanElementFwd {
        a: &second.a * &first.a,
        c: &second.a * &first.c + &second.c,
    }
}

/// States `x_1 .. x_N` from the prefix-composed closed-loop maps.
pub fn forward_scan(
    elements: Vec<ScanElementFwd>,
    x0: &Vector,
    schedule: ScanSchedule,
) -> Vec<Vector> {
    let op = |a: &ScanElementFwd, b: &ScanElementFwd| Ok::<_, Error>(combine_fwd(a, b));
    let maps = prefix_scan(elements, schedule, &op).unwrap_or_else(|_| unreachable!());
    maps.iter().map(|m| m.apply(x0)).collect()
}

/// Full solution of one LQR problem.
#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub values: Vec<ValueFunction>,
    pub policies: Vec<FeedbackPolicy>,
    /// `x_0 .. x_N`.
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
}

/// Backward scan, feedback laws and forward scan in one call.
pub fn solve_lqr(
    stages: &[StageModel],
    terminal: &ValueFunction,
    x0: &Vector,
    schedule: ScanSchedule,
) -> Result<LqrSolution> {
    let values = backward_scan(stages, terminal, schedule)?;
    let policies = stages
        .iter()
        .enumerate()
        .map(|(k, s)| feedback_from_values(s, &values[k + 1], k))
        .collect::<Result<Vec<_>>>()?;
    let elements = stages
        .iter()
        .zip(&policies)
        .map(|(s, p)| init_fwd_element(s, p))
        .collect();
    let mut states = vec![x0.clone()];
    states.extend(forward_scan(elements, x0, schedule));
    let inputs = policies
        .iter()
        .zip(&states)
        .map(|(p, x)| p.apply(x))
        .collect();
    Ok(LqrSolution {
        values,
        policies,
        states,
        inputs,
    })
}
