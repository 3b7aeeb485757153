//! L1 merit function, expected cost change and the step-size search.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{al_objective, defects, l1_norm, ALState, BmpcProblem};
use crate::riccati::TreeStageModels;
use crate::tree::TrajectoryTree;
use crate::lqr::FeedbackPolicy;

/// `M = J + μ ‖d‖₁`.
pub fn merit(cost: f64, defect_l1: f64, mu: f64) -> f64 {
    cost + mu * defect_l1
}

/// Coefficients `(a₁, a₂)` of `EC(α) = α a₁ + α² a₂`, the change of the
/// quadratic model along the step `(α δx, α δu)`.
pub fn expected_change(models: &TreeStageModels, step: &TrajectoryTree) -> (f64, f64) {
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    for i in 0..models.topology.node_count() {
        let dx = &step.states[i];
        if let Some(s) = &models.stages[i] {
            let du = step.input(i);
            a1 += s.q_x.dot(dx) + s.r_u.dot(du);
            a2 += 0.5 * dx.dot(&(&s.q_xx * dx)) + 0.5 * du.dot(&(&s.r_uu * du)) + du.dot(&(&s.m_ux * dx));
        }
        if let Some(t) = &models.terminals[i] {
            a1 += t.p_vec.dot(dx);
            a2 += 0.5 * dx.dot(&(&t.p_mat * dx));
        }
    }
    (a1, a2)
}

pub fn ec(coeffs: (f64, f64), alpha: f64) -> f64 {
    alpha * coeffs.0 + alpha * alpha * coeffs.1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritParams {
    pub beta: f64,
    pub gamma: f64,
    pub mu0: f64,
    pub eps: f64,
}

/// Adaptive penalty: `μ_trial = EC(1)/((1 − γ)‖d‖₁) + μ₀` when `‖d‖₁ > ε`,
/// and `μ = max(μ_trial, μ_prev)`.
pub fn update_mu(mu_prev: f64, ec1: f64, defect_l1: f64, params: &MeritParams) -> f64 {
    if defect_l1 > params.eps {
        let trial = ec1 / ((1.0 - params.gamma) * defect_l1) + params.mu0;
        trial.max(mu_prev)
    } else {
        mu_prev
    }
}

/// Right-hand side of the sufficient-decrease test.
pub fn decrease_bound(merit0: f64, ec_alpha: f64, alpha: f64, mu: f64, defect_l1: f64, beta: f64) -> f64 {
    merit0 + beta * (ec_alpha - alpha * mu * defect_l1)
}

/// How trial points are generated from the step.
pub enum Trial<'a> {
    /// `(x̄ + α δx, ū + α δu)`.
    Linear { step: &'a TrajectoryTree },
    /// Nonlinear rollout of `u = ū + α k + K (x − x̄)`.
    Nonlinear { policies: &'a [Option<FeedbackPolicy>] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialPoint {
    pub alpha: f64,
    pub trajectory: TrajectoryTree,
    pub cost: f64,
    pub defect_l1: f64,
    pub merit: f64,
    pub bound: f64,
}

impl TrialPoint {
    pub fn accepted(&self) -> bool {
        self.merit.is_finite() && self.merit <= self.bound
    }
}

pub struct SearchContext<'a, P: BmpcProblem + ?Sized> {
    pub problem: &'a P,
    pub al: &'a ALState,
    pub nominal: &'a TrajectoryTree,
    pub merit0: f64,
    pub mu: f64,
    pub defect_l1: f64,
    pub ec_coeffs: (f64, f64),
    pub beta: f64,
}

fn policy_rollout<P: BmpcProblem + ?Sized>(
    problem: &P,
    nominal: &TrajectoryTree,
    policies: &[Option<FeedbackPolicy>],
    alpha: f64,
) -> Result<TrajectoryTree> {
    let topo = problem.topology();
    let mut out = nominal.clone();
    out.states[0] = problem.initial_state();
    for i in 0..topo.node_count() {
        if let Some(p) = &policies[i] {
            let dx = &out.states[i] - &nominal.states[i];
            out.inputs[i] = Some(nominal.input(i) + &p.feedforward * alpha + &p.gain * dx);
            for &ch in topo.children(i) {
                out.states[ch] = problem.dynamics(i, &out.states[i], out.input(i));
            }
        }
    }
    match out.states.iter().position(|x| !x.iter().all(|v| v.is_finite())) {
        Some(node) => Err(Error::NonFinite {
            node,
            what: "state in nonlinear rollout".into(),
        }),
        None => Ok(out),
    }
}

impl<'a, P: BmpcProblem + ?Sized> SearchContext<'a, P> {
    pub fn evaluate(&self, trial: &Trial<'_>, alpha: f64) -> Option<TrialPoint> {
        let trajectory = match trial {
            Trial::Linear { step } => self.nominal.axpy(alpha, step),
            Trial::Nonlinear { policies } => {
                policy_rollout(self.problem, self.nominal, policies, alpha).ok()?
            }
        };
        let cost = al_objective(self.problem, &trajectory, self.al);
        let defect_l1 = match trial {
            Trial::Linear { .. } => l1_norm(&defects(self.problem, &trajectory)),
            Trial::Nonlinear { .. } => 0.0,
        };
        Some(TrialPoint {
            alpha,
            trajectory,
            cost,
            defect_l1,
            merit: merit(cost, defect_l1, self.mu),
            bound: decrease_bound(
                self.merit0,
                ec(self.ec_coeffs, alpha),
                alpha,
                self.mu,
                self.defect_l1,
                self.beta,
            ),
        })
    }

    /// Evaluates every step size concurrently and keeps the largest one
    /// that passes the test.
    pub fn search_parallel(&self, trial: &Trial<'_>, alphas: &[f64]) -> Option<TrialPoint> {
        alphas
            .par_iter()
            .filter_map(|&a| self.evaluate(trial, a))
            .filter(TrialPoint::accepted)
            .max_by(|a, b| a.alpha.total_cmp(&b.alpha))
    }

    /// Backtracks from the largest step size and stops at the first
    /// accepted one.
    pub fn search_sequential(&self, trial: &Trial<'_>, alphas: &[f64]) -> Option<TrialPoint> {
        let mut sorted = alphas.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted
            .into_iter()
            .filter_map(|a| self.evaluate(trial, a))
            .find(TrialPoint::accepted)
    }
}
