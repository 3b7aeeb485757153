//! Multiple-shooting iLQR on scenario trees with an augmented-Lagrangian
//! outer loop.
//!
//! Each inner iteration linearizes the problem around the current trajectory
//! tree, solves the tree LQR with one of the backward strategies, rolls the
//! closed loop out linearly and picks the step size with an L1 merit test.

pub mod backward;
pub mod line_search;
pub mod linearize;
pub mod rollout;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{
    al_objective, constraint_values, defects, initial_guess, l1_norm, max_violation, objective,
    ALState, BmpcProblem,
};
use crate::scan::ScanSchedule;
use crate::tree::TrajectoryTree;

pub use backward::{backward_pass, BackwardResult, BackwardStrategy};
pub use line_search::{expected_change, merit, update_mu, MeritParams, SearchContext, Trial};
pub use linearize::{linearize, regularized};
pub use rollout::{linear_rollout, sequential_rollout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutMode {
    /// Multiple shooting: trial points move along the linear rollout.
    Linear,
    /// Single shooting: trial points come from a nonlinear rollout.
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineSearchMode {
    Parallel,
    Sequential,
}

/// Named combinations of backward pass, rollout and line search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Pmsilqr,
    Hypmsilqr,
    Smsilqr,
    Sssilqr,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [
        SolverKind::Pmsilqr,
        SolverKind::Hypmsilqr,
        SolverKind::Smsilqr,
        SolverKind::Sssilqr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Pmsilqr => "pmsilqr",
            SolverKind::Hypmsilqr => "hypmsilqr",
            SolverKind::Smsilqr => "smsilqr",
            SolverKind::Sssilqr => "sssilqr",
        }
    }

    pub fn options(self) -> SolverOptions {
        let base = SolverOptions::default();
        match self {
            SolverKind::Pmsilqr => base,
            SolverKind::Hypmsilqr => SolverOptions {
                backward: BackwardStrategy::ScanCondensed,
                ..base
            },
            SolverKind::Smsilqr => SolverOptions {
                backward: BackwardStrategy::Sequential,
                line_search: LineSearchMode::Sequential,
                schedule: ScanSchedule::Sequential,
                ..base
            },
            SolverKind::Sssilqr => SolverOptions {
                backward: BackwardStrategy::Sequential,
                rollout: RolloutMode::Nonlinear,
                line_search: LineSearchMode::Sequential,
                schedule: ScanSchedule::Sequential,
                ..base
            },
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidOption(format!("unknown solver '{s}'")))
    }
}

/// Solver settings; every field has a default, so a JSON object with any
/// subset of keys is accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub backward: BackwardStrategy,
    pub rollout: RolloutMode,
    pub line_search: LineSearchMode,
    pub schedule: ScanSchedule,
    /// Step sizes `1, 1/2, .., 2^-alpha_min_exponent`.
    pub alpha_min_exponent: u32,
    pub beta: f64,
    pub gamma: f64,
    pub mu0: f64,
    pub eps: f64,
    pub max_inner: usize,
    pub defect_tol: f64,
    pub cost_tol: f64,
    pub step_tol: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub rho0: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    pub constraint_tol: f64,
    pub max_outer: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            backward: BackwardStrategy::ScanRiccati,
            rollout: RolloutMode::Linear,
            line_search: LineSearchMode::Parallel,
            schedule: ScanSchedule::ParallelTree,
            alpha_min_exponent: 10,
            beta: 1e-4,
            gamma: 0.5,
            mu0: 1.0,
            eps: 1e-8,
            max_inner: 100,
            defect_tol: 1e-8,
            cost_tol: 1e-8,
            step_tol: 1e-6,
            reg_min: 1e-6,
            reg_max: 1e10,
            rho0: 10.0,
            rho_growth: 10.0,
            rho_max: 1e8,
            constraint_tol: 1e-4,
            max_outer: 10,
        }
    }
}

impl SolverOptions {
    pub fn from_json(text: &str) -> Result<Self> {
        let opts: SolverOptions =
            serde_json::from_str(text).map_err(|e| Error::InvalidOption(e.to_string()))?;
        opts.validate()?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.beta > 0.0 && self.beta < 1.0, "beta must lie in (0, 1)"),
            (self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)"),
            (self.mu0 > 0.0, "mu0 must be positive"),
            (self.eps > 0.0, "eps must be positive"),
            (self.rho0 > 0.0 && self.rho_growth >= 1.0, "rho0 > 0 and rho_growth >= 1 required"),
            (self.reg_min > 0.0 && self.reg_max >= self.reg_min, "0 < reg_min <= reg_max required"),
            (self.max_outer >= 1, "max_outer must be at least 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidOption((*msg).into())),
            None => Ok(()),
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..=self.alpha_min_exponent).map(|e| 0.5f64.powi(e as i32)).collect()
    }

    pub fn merit_params(&self) -> MeritParams {
        MeritParams {
            beta: self.beta,
            gamma: self.gamma,
            mu0: self.mu0,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIter,
    Error,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIter => "max-iter",
            Status::Error => "error",
        }
    }
}

/// One inner iteration. `alpha` is `None` when every step size was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub outer: usize,
    pub inner: usize,
    pub cost: f64,
    pub defect_l1: f64,
    pub violation: f64,
    pub ec1: f64,
    pub mu: f64,
    pub reg: f64,
    pub alpha: Option<f64>,
    pub merit_before: f64,
    pub merit_after: Option<f64>,
    pub decrease_bound: Option<f64>,
}

/// Accumulated wall time per phase, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub setup_ms: f64,
    pub bp1_ms: f64,
    pub bp2_ms: f64,
    pub fwd_ms: f64,
    pub ls_ms: f64,
    pub total_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: Status,
    pub message: Option<String>,
    /// Inner iterations that attempted a step, summed over outer iterations.
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Weighted objective of the final trajectory (no penalty terms).
    pub cost: f64,
    pub al_cost: f64,
    pub defect_l1: f64,
    pub violation: f64,
    pub mu: f64,
    pub rho: f64,
    pub times: PhaseTimes,
    pub iterations: Vec<IterationLog>,
}

impl SolveReport {
    /// Every accepted step satisfied the sufficient-decrease inequality.
    pub fn merit_descent_holds(&self) -> bool {
        self.iterations.iter().all(|it| match (it.merit_after, it.decrease_bound) {
            (Some(m), Some(b)) => m <= b,
            _ => true,
        })
    }

    pub fn mu_monotone(&self) -> bool {
        self.iterations.windows(2).all(|w| w[1].mu >= w[0].mu)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

enum InnerExit {
    Converged,
    MaxIter,
    Failed(String),
}

fn regularizable(e: &Error) -> bool {
    matches!(
        e,
        Error::IndefiniteHessian { .. } | Error::IndefiniteCondensed | Error::SingularCombination { .. }
    )
}

/// Solver state carried across iterations.
struct SolverState<'p, P: BmpcProblem + ?Sized> {
    problem: &'p P,
    options: SolverOptions,
    trajectory: TrajectoryTree,
    al: ALState,
    mu: f64,
    reg: f64,
    times: PhaseTimes,
    log: Vec<IterationLog>,
    inner_total: usize,
}

impl<P: BmpcProblem + ?Sized> SolverState<'_, P> {
    fn bump_reg(&mut self) -> bool {
        self.reg = (self.reg * 10.0).max(self.options.reg_min);
        self.reg <= self.options.reg_max
    }

    fn decay_reg(&mut self) {
        self.reg /= 10.0;
        if self.reg < self.options.reg_min {
            self.reg = 0.0;
        }
    }

    fn inner_loop(&mut self, outer: usize) -> Result<InnerExit> {
        let opts = self.options.clone();
        let alphas = opts.alphas();
        for inner in 0..=opts.max_inner {
            let t = Instant::now();
            let d = defects(self.problem, &self.trajectory);
            let d1 = l1_norm(&d);
            let models = linearize(self.problem, &self.trajectory, &self.al, &d)?;
            self.times.setup_ms += ms(t.elapsed());

            let bwd = loop {
                match backward_pass(&regularized(&models, self.reg), opts.backward, opts.schedule) {
                    Ok(b) => break b,
                    Err(e) if regularizable(&e) => {
                        if !self.bump_reg() {
                            return Ok(InnerExit::Failed(format!(
                                "regularization exceeded {:e}: {e}",
                                opts.reg_max
                            )));
                        }
                    }
                    Err(e) => return Err(e),
                }
            };
            self.times.bp1_ms += ms(bwd.t_p1);
            self.times.bp2_ms += ms(bwd.t_p2);

            let t = Instant::now();
            let step = linear_rollout(&models, &bwd.policies, opts.schedule);
            self.times.fwd_ms += ms(t.elapsed());

            let coeffs = expected_change(&models, &step);
            let ec1 = line_search::ec(coeffs, 1.0);
            let cost = al_objective(self.problem, &self.trajectory, &self.al);
            if d1 <= opts.defect_tol
                && ec1.abs() <= opts.cost_tol * (1.0 + cost.abs())
                && step.max_abs_input() <= opts.step_tol
            {
                return Ok(InnerExit::Converged);
            }
            if inner == opts.max_inner {
                return Ok(InnerExit::MaxIter);
            }
            self.inner_total += 1;

            let t = Instant::now();
            self.mu = update_mu(self.mu, ec1, d1, &opts.merit_params());
            let merit0 = merit(cost, d1, self.mu);
            let ctx = SearchContext {
                problem: self.problem,
                al: &self.al,
                nominal: &self.trajectory,
                merit0,
                mu: self.mu,
                defect_l1: d1,
                ec_coeffs: coeffs,
                beta: opts.beta,
            };
            let trial = match opts.rollout {
                RolloutMode::Linear => Trial::Linear { step: &step },
                RolloutMode::Nonlinear => Trial::Nonlinear {
                    policies: &bwd.policies,
                },
            };
            let found = match opts.line_search {
                LineSearchMode::Parallel => ctx.search_parallel(&trial, &alphas),
                LineSearchMode::Sequential => ctx.search_sequential(&trial, &alphas),
            };
            self.times.ls_ms += ms(t.elapsed());

            let mut entry = IterationLog {
                outer,
                inner,
                cost,
                defect_l1: d1,
                violation: max_violation(self.problem, &self.trajectory),
                ec1,
                mu: self.mu,
                reg: self.reg,
                alpha: None,
                merit_before: merit0,
                merit_after: None,
                decrease_bound: None,
            };
            match found {
                Some(point) => {
                    entry.alpha = Some(point.alpha);
                    entry.merit_after = Some(point.merit);
                    entry.decrease_bound = Some(point.bound);
                    self.trajectory = point.trajectory;
                    self.decay_reg();
                    self.log.push(entry);
                }
                None => {
                    self.log.push(entry);
                    if !self.bump_reg() {
                        return Ok(InnerExit::Failed(format!(
                            "line search failed with regularization above {:e}",
                            opts.reg_max
                        )));
                    }
                }
            }
        }
        unreachable!("the loop returns at inner == max_inner")
    }
}

/// Runs the double loop from `guess` (default: zero inputs rolled out
/// through the dynamics).
pub fn solve<P: BmpcProblem + ?Sized>(
    problem: &P,
    options: &SolverOptions,
    guess: Option<TrajectoryTree>,
) -> Result<(TrajectoryTree, SolveReport)> {
    options.validate()?;
    let start = Instant::now();
    let topo = problem.topology();
    let trajectory = match guess {
        Some(g) => {
            if g.states.len() != topo.node_count() {
                return Err(Error::Dimension("initial guess does not match the tree".into()));
            }
            g
        }
        None => initial_guess(problem)?,
    };
    let constrained = (0..topo.node_count()).any(|i| problem.constraint_count(i) > 0);
    let mut state = SolverState {
        problem,
        options: options.clone(),
        trajectory,
        al: ALState::new(problem, options.rho0),
        mu: options.mu0,
        reg: 0.0,
        times: PhaseTimes::default(),
        log: Vec::new(),
        inner_total: 0,
    };

    let mut status = Status::MaxIter;
    let mut message = None;
    let mut outer_done = 0;
    for outer in 0..options.max_outer {
        outer_done = outer + 1;
        let exit = state.inner_loop(outer)?;
        if let InnerExit::Failed(msg) = exit {
            status = Status::Error;
            message = Some(msg);
            break;
        }
        let inner_ok = matches!(exit, InnerExit::Converged);
        let violation = max_violation(problem, &state.trajectory);
        if !constrained || violation <= options.constraint_tol {
            status = if inner_ok { Status::Converged } else { Status::MaxIter };
            break;
        }
        let g = constraint_values(problem, &state.trajectory);
        state.al.update_multipliers(&g);
        state.al.rho = (state.al.rho * options.rho_growth).min(options.rho_max);
    }

    let traj = state.trajectory;
    state.times.total_ms = ms(start.elapsed());
    let report = SolveReport {
        status,
        message,
        inner_iterations: state.inner_total,
        outer_iterations: outer_done,
        cost: objective(problem, &traj),
        al_cost: al_objective(problem, &traj, &state.al),
        defect_l1: l1_norm(&defects(problem, &traj)),
        violation: max_violation(problem, &traj),
        mu: state.mu,
        rho: state.al.rho,
        times: state.times,
        iterations: state.log,
    };
    Ok((traj, report))
}
