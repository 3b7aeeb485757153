use bmpc::linalg::Vector;
use bmpc::models::{build_intersection_case, build_latency_case, unicycle_step, IntersectionSpec, LatencySpec, ScenarioConfig};
use bmpc::problem::{defects, initial_guess, l1_norm, nonlinear_rollout, ALState, BmpcProblem};
use bmpc::random::{self, random_vec};
use bmpc::solver::{
    backward_pass, expected_change, line_search::ec, linear_rollout, linearize, merit, solve,
    update_mu, BackwardStrategy, SearchContext, SolverKind, SolverOptions, Status, Trial,
};
use bmpc::{ScanSchedule, TrajectoryTree, TreeTopology};

fn check_weights(topo: &TreeTopology) {
    let leaf_sum: f64 = topo.leaves().iter().map(|&l| topo.weight(l)).sum();
    assert!((leaf_sum - 1.0).abs() <= 1e-12);
    assert_eq!(topo.weight(0), 1.0);
    for i in topo.non_leaves() {
        let below: f64 = topo.children(i).iter().map(|&c| topo.weight(c)).sum();
        assert!((below - topo.weight(i)).abs() <= 1e-12, "node {i}");
    }
}

#[test]
fn generated_trees_have_normalized_weights() {
    for leaves in [1, 2, 4, 6, 9, 12] {
        let (a, b) = IntersectionSpec::counts_for_leaves(leaves).unwrap();
        let spec = IntersectionSpec { v1_count: a, v2_count: b, ..Default::default() };
        let p = build_intersection_case(&spec).unwrap();
        assert_eq!(p.topology.leaves().len(), leaves);
        check_weights(&p.topology);
    }
    for t1 in [0.5, 1.0, 1.5, 2.0] {
        let spec = LatencySpec { shared_time1: t1, ..Default::default() };
        let p = build_latency_case(&spec).unwrap();
        assert_eq!(p.topology.leaves().len(), 4);
        assert_eq!(p.topology.last_branch_step(), Some(spec.branch_steps().1));
        check_weights(&p.topology);
    }
}

#[test]
fn scenario_configs_parse_with_defaults() {
    let cfg: ScenarioConfig =
        serde_json::from_str(r#"{"latency": {"shared_time1": 1.5, "horizon": 127}}"#).unwrap();
    let p = cfg.build().unwrap();
    assert_eq!(p.topology.horizon(), 127);
    assert!(serde_json::from_str::<ScenarioConfig>(r#"{"latency": {"bogus": 1}}"#).is_err());
    let bad: ScenarioConfig =
        serde_json::from_str(r#"{"intersection": {"v1_count": 4}}"#).unwrap();
    assert!(bad.build().is_err());
}

#[test]
fn rollout_on_a_path_repeats_the_integrator() {
    let spec = IntersectionSpec { v1_count: 1, v2_count: 1, horizon: 20, ..Default::default() };
    let p = build_intersection_case(&spec).unwrap();
    let mut rng = random::rng(3);
    let mut inputs = TrajectoryTree::zeros(&p.topology, 4, 2);
    for i in p.topology.non_leaves().collect::<Vec<_>>() {
        inputs.inputs[i] = Some(random_vec(&mut rng, 2));
    }
    let traj = nonlinear_rollout(&p, &inputs, &p.x0).unwrap();
    let mut x = p.x0.clone();
    for k in 0..20 {
        assert_eq!(traj.states[k], x);
        x = unicycle_step(&x, inputs.input(k), p.dt);
    }
    assert_eq!(traj.states[20], x);
    assert_eq!(l1_norm(&defects(&p, &traj)), 0.0);

    let rest = Vector::from_vec(vec![2.0, -1.0, 0.3, 0.0]);
    let zeros = TrajectoryTree::zeros(&p.topology, 4, 2);
    let still = nonlinear_rollout(&p, &zeros, &rest).unwrap();
    assert!(still.states.iter().all(|s| *s == rest));
}

#[test]
fn intersection_solution_is_reproduced_by_rollout() {
    let spec = IntersectionSpec { horizon: 31, ..Default::default() };
    let p = build_intersection_case(&spec).unwrap();
    let (traj, report) = solve(&p, &SolverKind::Smsilqr.options(), None).unwrap();
    assert_eq!(report.status, Status::Converged, "{:?}", report.message);
    assert!(report.violation <= 1e-4);
    assert!(report.merit_descent_holds());
    assert!(report.mu_monotone());
    let again = nonlinear_rollout(&p, &traj, &p.x0).unwrap();
    let gap = traj
        .states
        .iter()
        .zip(&again.states)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    assert!(gap <= 1e-6, "{gap}");
}

#[test]
fn parallel_and_backtracking_line_search_pick_the_same_step() {
    let spec = IntersectionSpec::default();
    let p = build_intersection_case(&spec).unwrap();
    let opts = SolverOptions::default();
    let al = ALState::new(&p, opts.rho0);
    // a nominal with nonzero defects, so the merit term matters
    let mut nominal = initial_guess(&p).unwrap();
    let mut rng = random::rng(9);
    for x in nominal.states.iter_mut().skip(1) {
        *x += random_vec(&mut rng, 4) * 0.2;
    }
    let d = defects(&p, &nominal);
    let d1 = l1_norm(&d);
    let models = linearize(&p, &nominal, &al, &d).unwrap();
    let bwd = backward_pass(&models, BackwardStrategy::ScanRiccati, ScanSchedule::Tree).unwrap();
    let step = linear_rollout(&models, &bwd.policies, ScanSchedule::Tree);
    let coeffs = expected_change(&models, &step);
    let mu = update_mu(opts.mu0, ec(coeffs, 1.0), d1, &opts.merit_params());
    let cost = bmpc::problem::al_objective(&p, &nominal, &al);
    let ctx = SearchContext {
        problem: &p,
        al: &al,
        nominal: &nominal,
        merit0: merit(cost, d1, mu),
        mu,
        defect_l1: d1,
        ec_coeffs: coeffs,
        beta: opts.beta,
    };
    let trial = Trial::Linear { step: &step };
    let alphas = opts.alphas();
    let a = ctx.search_parallel(&trial, &alphas).expect("some step accepted");
    let b = ctx.search_sequential(&trial, &alphas).expect("some step accepted");
    assert_eq!(a.alpha, b.alpha);
    assert_eq!(a.merit, b.merit);
}

#[test]
fn latency_case_converges() {
    let spec = LatencySpec { horizon: 63, shared_time1: 1.0, ..Default::default() };
    let p = build_latency_case(&spec).unwrap();
    let (traj, report) = solve(&p, &SolverKind::Pmsilqr.options(), None).unwrap();
    assert_eq!(report.status, Status::Converged, "{:?}", report.message);
    assert!(report.violation <= 1e-4);
    // the anomaly branches keep clear of the obstacle
    for i in 0..p.topology().node_count() {
        for o in &p.obstacles[i] {
            let x = &traj.states[i];
            let dist = ((x[0] - o[0]).powi(2) + (x[1] - o[1]).powi(2)).sqrt();
            assert!(dist >= p.limits.safety_radius - 1e-4);
        }
    }
}
