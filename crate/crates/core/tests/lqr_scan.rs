use bmpc::linalg::{rel_err_mat, rel_err_vec, Mat, Vector};
use bmpc::lqr::{
    backward_scan, combine_bwd, combine_fwd, combine_with_terminal, feedback_from_values,
    forward_scan, init_bwd_element, init_fwd_element, solve_lqr, ScanElementBwd,
    ScanElementFwd, StageModel, ValueFunction,
};
use bmpc::oracle::{dense_path_optimum, dense_tree_value_hessian, path_as_tree};
use bmpc::random::{self, random_lqr, random_mat, random_spd, random_stage, random_vec};
use bmpc::riccati::riccati_path;
use bmpc::ScanSchedule;
use proptest::prelude::*;

const SCHEDULES: [ScanSchedule; 3] = [
    ScanSchedule::Sequential,
    ScanSchedule::Tree,
    ScanSchedule::ParallelTree,
];

/// Random element with symmetric PSD `P`, `C` and a contracting `A`.
fn random_element(rng: &mut random::InstanceRng, nx: usize) -> ScanElementBwd {
    ScanElementBwd {
        p_mat: random_spd(rng, nx, 0.05),
        p_vec: random_vec(rng, nx),
        c_mat: random_spd(rng, nx, 0.05),
        a: random_mat(rng, nx, nx) * (0.8 / (nx as f64).sqrt()),
        c_vec: random_vec(rng, nx),
        from: 0,
        to: 1,
    }
}

fn elem_rel_err(a: &ScanElementBwd, b: &ScanElementBwd) -> f64 {
    [
        rel_err_mat(&a.p_mat, &b.p_mat, 1.0),
        rel_err_vec(&a.p_vec, &b.p_vec, 1.0),
        rel_err_mat(&a.c_mat, &b.c_mat, 1.0),
        rel_err_mat(&a.a, &b.a, 1.0),
        rel_err_vec(&a.c_vec, &b.c_vec, 1.0),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Solves `min_u ℓ(x, u)` subject to `x⁺ = A x + B u + c` through its KKT
/// system; requires a square, invertible `B`.
fn fixed_end_cost(stage: &StageModel, x: &Vector, x_next: &Vector) -> f64 {
    let nu = stage.nu();
    let nx = stage.nx();
    let mut k = Mat::zeros(nu + nx, nu + nx);
    k.view_mut((0, 0), (nu, nu)).copy_from(&stage.r_uu);
    k.view_mut((0, nu), (nu, nx)).copy_from(&stage.b.transpose());
    k.view_mut((nu, 0), (nx, nu)).copy_from(&stage.b);
    let mut rhs = Vector::zeros(nu + nx);
    rhs.rows_mut(0, nu)
        .copy_from(&-(&stage.m_ux * x + &stage.r_u));
    rhs.rows_mut(nu, nx)
        .copy_from(&(x_next - &stage.a * x - &stage.c));
    let sol = k.lu().solve(&rhs).unwrap();
    let u = sol.rows(0, nu).into_owned();
    stage.cost(x, &u)
}

/// `max_λ g(λ; x, x⁺)` of the dual form, with the constant dropped.
fn dual_value(e: &ScanElementBwd, x: &Vector, x_next: &Vector) -> f64 {
    let resid = x_next - &e.a * x - &e.c_vec;
    let lam = e.c_mat.clone().lu().solve(&resid).unwrap();
    0.5 * x.dot(&(&e.p_mat * x)) + e.p_vec.dot(x) + 0.5 * lam.dot(&resid)
}

#[test]
fn init_element_matches_fixed_end_qp() {
    let mut rng = random::rng(11);
    for _ in 0..10 {
        let stage = random_stage(&mut rng, 3, 3);
        let e = init_bwd_element(&stage, 0).unwrap();
        // the dual form drops a constant; differences between points must agree
        let pts: Vec<(Vector, Vector)> = (0..4)
            .map(|_| (random_vec(&mut rng, 3), random_vec(&mut rng, 3)))
            .collect();
        let offset = fixed_end_cost(&stage, &pts[0].0, &pts[0].1) - dual_value(&e, &pts[0].0, &pts[0].1);
        for (x, xn) in &pts[1..] {
            let got = dual_value(&e, x, xn) + offset;
            let want = fixed_end_cost(&stage, x, xn);
            assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }
}

#[test]
fn transpose_inverse_identity() {
    let mut rng = random::rng(3);
    for n in [1, 2, 4, 8] {
        for _ in 0..20 {
            let c = random_spd(&mut rng, n, 0.01);
            let p = random_spd(&mut rng, n, 0.01);
            let id = Mat::identity(n, n);
            let lhs = (&id + &c * &p).try_inverse().unwrap().transpose();
            let rhs = (&id + &p * &c).try_inverse().unwrap();
            assert!(rel_err_mat(&lhs, &rhs, 1.0) <= 1e-10);
        }
    }
}

#[test]
fn combine_with_terminal_is_one_riccati_step() {
    let mut rng = random::rng(5);
    for _ in 0..20 {
        let stage = random_stage(&mut rng, 4, 2);
        let term = random::random_terminal(&mut rng, 4);
        let v = combine_with_terminal(&init_bwd_element(&stage, 0).unwrap(), &term).unwrap();
        let (vs, _) = riccati_path(&[stage], &term).unwrap();
        assert!(rel_err_mat(&v.p_mat, &vs[0].p_mat, 1.0) <= 1e-10);
        assert!(rel_err_vec(&v.p_vec, &vs[0].p_vec, 1.0) <= 1e-10);
    }
}

#[test]
fn scalar_chain_of_four() {
    let one = Mat::from_element(1, 1, 1.0);
    let stage = StageModel {
        a: Mat::from_element(1, 1, 1.1),
        b: one.clone(),
        c: Vector::zeros(1),
        q_xx: one.clone(),
        r_uu: one.clone(),
        m_ux: Mat::zeros(1, 1),
        q_x: Vector::zeros(1),
        r_u: Vector::zeros(1),
    };
    let term = ValueFunction {
        p_mat: one,
        p_vec: Vector::zeros(1),
    };
    let stages = vec![stage; 4];
    let (want, _) = riccati_path(&stages, &term).unwrap();
    for s in SCHEDULES {
        let got = backward_scan(&stages, &term, s).unwrap();
        assert!((got[0].p_mat[(0, 0)] - want[0].p_mat[(0, 0)]).abs() <= 1e-10);
    }
}

#[test]
fn scan_matches_riccati_on_random_instances() {
    let mut rng = random::rng(8);
    let inst = random_lqr(&mut rng, 4, 2, 8);
    let (want, pols) = riccati_path(&inst.stages, &inst.terminal).unwrap();
    for s in SCHEDULES {
        let got = backward_scan(&inst.stages, &inst.terminal, s).unwrap();
        assert_eq!(got.len(), 9);
        assert_eq!(got[8], inst.terminal);
        for k in 0..=8 {
            assert!(rel_err_mat(&got[k].p_mat, &want[k].p_mat, 1e-12) <= 1e-9);
            assert!(rel_err_vec(&got[k].p_vec, &want[k].p_vec, 1e-12) <= 1e-9);
            let sym = (&got[k].p_mat - got[k].p_mat.transpose()).norm();
            assert!(sym <= 1e-12 * got[k].p_mat.norm());
        }
        for k in 0..8 {
            let pol = feedback_from_values(&inst.stages[k], &got[k + 1], k).unwrap();
            assert!(rel_err_mat(&pol.gain, &pols[k].gain, 1e-12) <= 1e-9);
            assert!(rel_err_vec(&pol.feedforward, &pols[k].feedforward, 1e-12) <= 1e-9);
        }
    }
}

#[test]
fn parallel_tree_is_bitwise_identical_to_tree() {
    let mut rng = random::rng(21);
    let inst = random_lqr(&mut rng, 3, 2, 77);
    let a = backward_scan(&inst.stages, &inst.terminal, ScanSchedule::Tree).unwrap();
    let b = backward_scan(&inst.stages, &inst.terminal, ScanSchedule::ParallelTree).unwrap();
    assert_eq!(a, b);
}

#[test]
fn riccati_value_hessian_matches_dense_qp() {
    let mut rng = random::rng(13);
    let inst = random_lqr(&mut rng, 3, 2, 8);
    let (vs, _) = riccati_path(&inst.stages, &inst.terminal).unwrap();
    let h = dense_tree_value_hessian(&path_as_tree(&inst.stages, &inst.terminal)).unwrap();
    assert!(rel_err_mat(&vs[0].p_mat, &h, 1.0) <= 1e-9);
}

#[test]
fn long_constant_chain_approaches_dare_fixed_point() {
    let one = Mat::from_element(1, 1, 1.0);
    let stage = StageModel {
        a: Mat::from_element(1, 1, 1.2),
        b: one.clone(),
        c: Vector::zeros(1),
        q_xx: one.clone(),
        r_uu: one,
        m_ux: Mat::zeros(1, 1),
        q_x: Vector::zeros(1),
        r_u: Vector::zeros(1),
    };
    // fixed point of P = 1 + a²P − a²P²/(1 + P) by plain iteration
    let mut dare = 0.0f64;
    for _ in 0..10_000 {
        dare = 1.0 + 1.44 * dare - 1.44 * dare * dare / (1.0 + dare);
    }
    let vs = backward_scan(
        &vec![stage; 511],
        &ValueFunction::zeros(1),
        ScanSchedule::Tree,
    )
    .unwrap();
    let gaps: Vec<f64> = vs.iter().map(|v| (v.p_mat[(0, 0)] - dare).abs()).collect();
    // gap shrinks monotonically as N − k grows (k = 511 is the free terminal)
    for k in 0..511 {
        assert!(gaps[k] <= gaps[k + 1] + 1e-12, "k = {k}");
    }
    assert!(gaps[0] <= 1e-10);
}

#[test]
fn forward_scan_matches_sequential_rollout() {
    let mut rng = random::rng(17);
    let inst = random_lqr(&mut rng, 4, 2, 8);
    let (_, pols) = riccati_path(&inst.stages, &inst.terminal).unwrap();
    let elems: Vec<ScanElementFwd> = inst
        .stages
        .iter()
        .zip(&pols)
        .map(|(s, p)| init_fwd_element(s, p))
        .collect();
    let mut x = inst.x0.clone();
    let mut seq = Vec::new();
    for (s, p) in inst.stages.iter().zip(&pols) {
        x = s.step(&x, &p.apply(&x));
        seq.push(x.clone());
    }
    for sched in SCHEDULES {
        let got = forward_scan(elems.clone(), &inst.x0, sched);
        for (g, w) in got.iter().zip(&seq) {
            assert!((g - w).amax() <= 1e-10 * (1.0 + w.amax()));
        }
    }
    // the closed-loop element is the direct formula
    let e = init_fwd_element(&inst.stages[0], &pols[0]);
    let direct = &inst.stages[0].a + &inst.stages[0].b * &pols[0].gain;
    assert_eq!(e.a, direct);
}

#[test]
fn scan_solution_satisfies_kkt_of_dense_qp() {
    let mut rng = random::rng(23);
    for (nx, nu, n) in [(2, 1, 5), (4, 2, 12), (3, 3, 20)] {
        let inst = random_lqr(&mut rng, nx, nu, n);
        let sol = solve_lqr(&inst.stages, &inst.terminal, &inst.x0, ScanSchedule::Tree).unwrap();
        let (xs, us) = dense_path_optimum(&inst.stages, &inst.terminal, &inst.x0).unwrap();
        for k in 0..n {
            assert!((&sol.inputs[k] - &us[k]).amax() <= 1e-7 * (1.0 + us[k].amax()));
        }
        for k in 0..=n {
            assert!((&sol.states[k] - &xs[k]).amax() <= 1e-7 * (1.0 + xs[k].amax()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn combine_bwd_is_associative(seed in any::<u64>(), nx in 1usize..6) {
        let mut rng = random::rng(seed);
        let (a, b, c) = (
            random_element(&mut rng, nx),
            random_element(&mut rng, nx),
            random_element(&mut rng, nx),
        );
        let left = combine_bwd(&combine_bwd(&a, &b).unwrap(), &c).unwrap();
        let right = combine_bwd(&a, &combine_bwd(&b, &c).unwrap()).unwrap();
        prop_assert!(elem_rel_err(&left, &right) <= 1e-9);
    }

    #[test]
    fn combine_fwd_is_associative(seed in any::<u64>(), nx in 1usize..6) {
        let mut rng = random::rng(seed);
        let mut f = || ScanElementFwd { a: random_mat(&mut rng, nx, nx), c: random_vec(&mut rng, nx) };
        let (a, b, c) = (f(), f(), f());
        let left = combine_fwd(&combine_fwd(&a, &b), &c);
        let right = combine_fwd(&a, &combine_fwd(&b, &c));
        prop_assert!(rel_err_mat(&left.a, &right.a, 1.0) <= 1e-12);
        prop_assert!(rel_err_vec(&left.c, &right.c, 1.0) <= 1e-12);
    }

    #[test]
    fn combined_matrices_stay_symmetric(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let inst = random_lqr(&mut rng, 3, 2, 33);
        let elems: Vec<_> = inst.stages.iter().enumerate()
            .map(|(k, s)| init_bwd_element(s, k).unwrap()).collect();
        let total = elems[1..].iter().try_fold(elems[0].clone(), |acc, e| combine_bwd(&acc, e)).unwrap();
        prop_assert_eq!(&total.p_mat, &total.p_mat.transpose());
        prop_assert_eq!(&total.c_mat, &total.c_mat.transpose());
        prop_assert_eq!((total.from, total.to), (0, 33));
    }
}
