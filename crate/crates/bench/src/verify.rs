//! Oracle-equivalence suites with measured worst-case errors.

use bmpc::condensed::{condense, condense_tree, solve_dense};
use bmpc::linalg::{rel_err_mat, rel_err_vec, Vector};
use bmpc::lqr::{
    backward_scan_with, combine_bwd, forward_scan, init_fwd_element, ScanElementBwd, ScanElementFwd,
};
use bmpc::models::{build_intersection_case, IntersectionSpec};
use bmpc::oracle::dense_tree_optimum;
use bmpc::problem::{defects, initial_guess, ALState, LinearQuadraticProblem};
use bmpc::random::{self, random_lqr, random_tree_models};
use bmpc::riccati::{riccati_path, riccati_tree};
use bmpc::solver::{backward_pass, linear_rollout, linearize, solve, BackwardStrategy, SolverKind};
use bmpc::{build_tree, BranchSpec, ScanSchedule, TrajectoryTree, TreeStageModels};
use serde::Serialize;

pub const SUITES: [&str; 5] = ["scan", "forward", "condensed", "tree", "strategies"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub suite: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn check(suite: &str, max_error: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        suite: suite.into(),
        max_error,
        tolerance,
        // NaN errors fail
        pass: max_error <= tolerance,
    }
}

/// Combination with the sign of `A` flipped, for the mutation mode.
fn flipped_combine(a: &ScanElementBwd, b: &ScanElementBwd) -> bmpc::Result<ScanElementBwd> {
    let mut e = combine_bwd(a, b)?;
    e.a = -e.a;
    Ok(e)
}

fn scan_suite(seed: u64, mutate: bool) -> f64 {
    let mut rng = random::rng(seed);
    let mut worst = 0.0f64;
    for (nx, nu, n) in [(2, 1, 8), (4, 2, 64), (8, 4, 511), (4, 4, 100)] {
        let inst = random_lqr(&mut rng, nx, nu, n);
        let (want, _) = riccati_path(&inst.stages, &inst.terminal).unwrap();
        let got = if mutate {
            backward_scan_with(&inst.stages, &inst.terminal, ScanSchedule::ParallelTree, &flipped_combine)
        } else {
            backward_scan_with(&inst.stages, &inst.terminal, ScanSchedule::ParallelTree, &combine_bwd)
        };
        let Ok(got) = got else { return f64::INFINITY };
        for (g, w) in got.iter().zip(&want) {
            worst = worst
                .max(rel_err_mat(&g.p_mat, &w.p_mat, 1e-300))
                .max(rel_err_vec(&g.p_vec, &w.p_vec, 1e-300));
        }
    }
    worst
}

fn forward_suite(seed: u64) -> f64 {
    let mut rng = random::rng(seed);
    let mut worst = 0.0f64;
    for (nx, nu, n) in [(2, 1, 8), (4, 2, 64), (8, 4, 511)] {
        let inst = random_lqr(&mut rng, nx, nu, n);
        let (_, pols) = riccati_path(&inst.stages, &inst.terminal).unwrap();
        let elems: Vec<ScanElementFwd> =
            inst.stages.iter().zip(&pols).map(|(s, p)| init_fwd_element(s, p)).collect();
        let got = forward_scan(elems, &inst.x0, ScanSchedule::ParallelTree);
        let mut x = inst.x0.clone();
        for ((s, p), g) in inst.stages.iter().zip(&pols).zip(&got) {
            x = s.step(&x, &p.apply(&x));
            worst = worst.max(rel_err_vec(g, &x, 1.0));
        }
    }
    worst
}

fn closed_loop(models: &TreeStageModels, x0: &Vector) -> TrajectoryTree {
    let sol = riccati_tree(models).unwrap();
    let topo = &models.topology;
    let mut traj = TrajectoryTree::zeros(topo, models.nx(), models.nu());
    traj.states[0] = x0.clone();
    for i in 0..topo.node_count() {
        if let Some(pol) = &sol.policies[i] {
            let u = pol.apply(&traj.states[i]);
            for &ch in topo.children(i) {
                traj.states[ch] = models.stage_toward(i, ch).step(&traj.states[i], &u);
            }
            traj.inputs[i] = Some(u);
        }
    }
    traj
}

fn condensed_suite(seed: u64) -> f64 {
    let mut rng = random::rng(seed);
    let mut worst = 0.0f64;
    for (nx, nu, n) in [(2, 1, 10), (4, 2, 20)] {
        let inst = random_lqr(&mut rng, nx, nu, n);
        let qp = condense(&inst.stages, &inst.terminal, &inst.x0, ScanSchedule::ParallelTree).unwrap();
        let u = solve_dense(&qp).unwrap();
        let (_, pols) = riccati_path(&inst.stages, &inst.terminal).unwrap();
        let mut x = inst.x0.clone();
        for (k, (s, p)) in inst.stages.iter().zip(&pols).enumerate() {
            let uk = p.apply(&x);
            worst = worst.max(rel_err_vec(&u.rows(k * nu, nu).into_owned(), &uk, 1.0));
            x = s.step(&x, &uk);
        }
    }
    let topo = build_tree(6, &[BranchSpec::uniform(2, 2), BranchSpec::uniform(4, 2)]).unwrap();
    let models = random_tree_models(&mut rng, &topo, 3, 2);
    let x0 = Vector::from_element(3, 0.5);
    let (qp, gamma) = condense_tree(&models, &x0, ScanSchedule::ParallelTree).unwrap();
    let u = solve_dense(&qp).unwrap();
    let want = closed_loop(&models, &x0);
    for (i, ui) in gamma.node_inputs(&u) {
        worst = worst.max(rel_err_vec(&ui, want.input(i), 1.0));
    }
    worst
}

fn tree_gap(a: &TrajectoryTree, b: &TrajectoryTree) -> f64 {
    let s = a.states.iter().zip(&b.states).map(|(x, y)| rel_err_vec(x, y, 1.0));
    let u = a
        .inputs
        .iter()
        .zip(&b.inputs)
        .filter_map(|(x, y)| Some(rel_err_vec(x.as_ref()?, y.as_ref()?, 1.0)));
    s.chain(u).fold(0.0, f64::max)
}

fn tree_suite(seed: u64) -> f64 {
    let mut rng = random::rng(seed);
    let mut worst = 0.0f64;
    for topo in [
        build_tree(7, &[BranchSpec::uniform(3, 2)]).unwrap(),
        build_tree(6, &[BranchSpec::uniform(1, 2), BranchSpec::uniform(3, 2)]).unwrap(),
    ] {
        let models = random_tree_models(&mut rng, &topo, 4, 2);
        let x0 = Vector::from_element(4, 1.0);
        let dense = dense_tree_optimum(&models, &x0).unwrap();
        worst = worst.max(tree_gap(&closed_loop(&models, &x0), &dense));
    }
    worst
}

/// Backward strategies on one LQ tree step, and both P2 strategies on a
/// small intersection solve (relative cost gap).
fn strategies_suite(seed: u64) -> f64 {
    let mut rng = random::rng(seed);
    let topo = build_tree(9, &[BranchSpec::uniform(2, 3), BranchSpec::uniform(5, 2)]).unwrap();
    let p = LinearQuadraticProblem::random(&mut rng, &topo, 3, 2);
    let guess = initial_guess(&p).unwrap();
    let models = linearize(&p, &guess, &ALState::new(&p, 10.0), &defects(&p, &guess)).unwrap();
    let steps: Vec<TrajectoryTree> = [
        BackwardStrategy::ScanRiccati,
        BackwardStrategy::ScanCondensed,
        BackwardStrategy::Sequential,
    ]
    .into_iter()
    .map(|s| {
        let bwd = backward_pass(&models, s, ScanSchedule::ParallelTree).unwrap();
        linear_rollout(&models, &bwd.policies, ScanSchedule::ParallelTree)
    })
    .collect();
    let mut worst = steps[1..].iter().map(|s| tree_gap(s, &steps[0])).fold(0.0, f64::max);

    let spec = IntersectionSpec { horizon: 31, ..Default::default() };
    let problem = build_intersection_case(&spec).unwrap();
    let (_, a) = solve(&problem, &SolverKind::Pmsilqr.options(), None).unwrap();
    let (_, b) = solve(&problem, &SolverKind::Hypmsilqr.options(), None).unwrap();
    worst = worst.max((a.cost - b.cost).abs() / a.cost.abs());
    worst
}

/// Runs the named suites (all of [`SUITES`] when `None`). `mutate` swaps in
/// a wrong-signed combination operator, which the scan suite must catch.
pub fn verify(suites: Option<&[String]>, seed: u64, mutate: bool) -> Result<VerifyReport, String> {
    let names: Vec<String> = match suites {
        Some(s) => s.to_vec(),
        None => SUITES.iter().map(|s| s.to_string()).collect(),
    };
    let mut checks = Vec::new();
    for name in &names {
        checks.push(match name.as_str() {
            "scan" => check("scan", scan_suite(seed, mutate), 1e-8),
            "forward" => check("forward", forward_suite(seed), 1e-10),
            "condensed" => check("condensed", condensed_suite(seed), 1e-8),
            "tree" => check("tree", tree_suite(seed), 1e-7),
            "strategies" => check("strategies", strategies_suite(seed), 1e-5),
            other => return Err(format!("unknown suite '{other}' (known: {})", SUITES.join(", "))),
        });
    }
    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_selection_passes() {
        let r = verify(Some(&[]), 0, false).unwrap();
        assert!(r.checks.is_empty() && r.passed());
    }

    #[test]
    fn mutation_is_caught() {
        let names = vec!["scan".to_string()];
        assert!(verify(Some(&names), 1, false).unwrap().passed());
        assert!(!verify(Some(&names), 1, true).unwrap().passed());
        assert!(verify(Some(&["bogus".to_string()]), 1, false).is_err());
    }
}
