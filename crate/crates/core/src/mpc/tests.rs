use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dimensional::{match_similar_system, DimensionVector, QuantitySet};
use crate::dynamics::{cartpole, racecar, rk4_step, OdeModel, Track};

fn matched_cartpole(l: f64) -> QuantitySet {
    let fixed = vec!["mu_f".to_string(), "g".to_string()];
    match_similar_system(&cartpole::reference_params(), &fixed, &BTreeMap::from([("l".to_string(), l)])).unwrap()
}

fn linear_model(a: DMatrix<f64>, b: DMatrix<f64>) -> OdeModel {
    let (nx, nu) = (a.nrows(), b.ncols());
    let none = DimensionVector::dimensionless(3);
    OdeModel::from_fn("linear", vec![none.clone(); nx], vec![none; nu], cartpole::reference_params(), move |x, u| {
        let dx = &a * DVector::from_column_slice(x) + &b * DVector::from_column_slice(u);
        dx.iter().copied().collect()
    })
}

/// Columns of the exact RK4 map of a linear model.
fn discrete_matrices(model: &OdeModel, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nx, nu) = (model.n_states(), model.n_inputs());
    let zx = vec![0.0; nx];
    let zu = vec![0.0; nu];
    let ad = DMatrix::from_fn(nx, nx, |i, j| {
        let mut e = zx.clone();
        e[j] = 1.0;
        rk4_step(model, &e, &zu, dt).unwrap()[i]
    });
    let bd = DMatrix::from_fn(nx, nu, |i, j| {
        let mut e = zu.clone();
        e[j] = 1.0;
        rk4_step(model, &zx, &e, dt).unwrap()[i]
    });
    (ad, bd)
}

/// First feedback gain of the discounted finite-horizon LQR.
fn riccati_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qn: &DMatrix<f64>,
    n: usize,
    gamma: f64,
) -> DMatrix<f64> {
    let mut p = qn.clone();
    let mut k = DMatrix::zeros(b.ncols(), a.nrows());
    for _ in 0..n {
        let pg = &p * gamma;
        let s = r + b.transpose() * &pg * b;
        k = s.lu().solve(&(b.transpose() * &pg * a)).unwrap();
        p = q + a.transpose() * &pg * a - a.transpose() * &pg * b * &k;
        p = (&p + p.transpose()) * 0.5;
    }
    k
}

#[test]
fn unconstrained_lq_matches_riccati() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let nx = rng.gen_range(1..=4);
        let nu = rng.gen_range(1..=2);
        let n = rng.gen_range(1..=20);
        let dt = 0.1;
        let a = DMatrix::from_fn(nx, nx, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(nx, nu, |_, _| rng.gen_range(-1.0..1.0));
        let model = linear_model(a, b);
        let q: Vec<f64> = (0..nx).map(|_| rng.gen_range(0.0..2.0)).collect();
        let r: Vec<f64> = (0..nu).map(|_| rng.gen_range(0.1..2.0)).collect();
        let qn: Vec<f64> = (0..nx).map(|_| rng.gen_range(0.0..4.0)).collect();
        let gamma = if rng.gen_bool(0.5) { 1.0 } else { rng.gen_range(0.5..1.0) };
        let x0: Vec<f64> = (0..nx).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (ad, bd) = discrete_matrices(&model, dt);
        let p = MpcProblem::new(model, n, dt).with_weights(q.clone(), r.clone(), qn.clone()).with_discount(gamma);
        let sol = solve(&p, &x0, None).unwrap();
        assert!(sol.converged);
        let k = riccati_gain(
            &ad,
            &bd,
            &DMatrix::from_diagonal(&DVector::from_vec(q)),
            &DMatrix::from_diagonal(&DVector::from_vec(r)),
            &DMatrix::from_diagonal(&DVector::from_vec(qn)),
            n,
            gamma,
        );
        let u_oracle = -(k * DVector::from_vec(x0));
        let scale = u_oracle.amax().max(1e-3);
        for j in 0..nu {
            assert!((sol.u0[j] - u_oracle[j]).abs() / scale < 1e-6, "{:?} vs {}", sol.u0, u_oracle);
        }
    }
}

fn random_cartpole_case(rng: &mut ChaCha8Rng) -> (MpcProblem, Vec<f64>, Vec<Vec<f64>>) {
    let l = [0.1, 0.8, 5.0][rng.gen_range(0..3)];
    let params = matched_cartpole(l);
    let p = build_cartpole_problem(&params, &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
    let s = p.scaling.clone().unwrap();
    let x0: Vec<f64> = [rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0)]
        .iter()
        .zip(&s.m_x)
        .map(|(v, m)| v * m)
        .collect();
    let us = (0..p.horizon).map(|_| vec![rng.gen_range(-3.0..3.0) * s.m_u[0]]).collect();
    (p, x0, us)
}

#[test]
fn gauss_newton_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (p, x0, us) = random_cartpole_case(&mut rng);
        let g = trajectory_gradient(&p, &x0, &us).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for k in 0..p.horizon {
            let h = 1e-6 * p.scaling.as_ref().unwrap().m_u[0];
            let mut up = us.clone();
            up[k][0] += h;
            let mut um = us.clone();
            um[k][0] -= h;
            let fd = (trajectory_cost(&p, &x0, &up).unwrap() - trajectory_cost(&p, &x0, &um).unwrap()) / (2.0 * h);
            assert!((g[k] - fd).abs() / scale < 1e-5, "stage {k}: {} vs {fd}", g[k]);
        }
    }
}

#[test]
fn discount_scales_each_stage() {
    let params = cartpole::reference_params();
    let base = build_cartpole_problem(&params, &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
    let x0 = vec![0.3, 2.0, -0.2, 0.5];
    let us: Vec<Vec<f64>> = (0..base.horizon).map(|k| vec![(k as f64 * 0.7).sin() * 3.0]).collect();
    let mut xs = vec![x0.clone()];
    for u in &us {
        xs.push(rk4_step(&base.model, xs.last().unwrap(), u, base.dt).unwrap());
    }
    let full = stage_costs(&base, &x0, &xs, &us);
    let half = stage_costs(&base.clone().with_discount(0.5), &x0, &xs, &us);
    for k in 0..=base.horizon {
        assert!((half[k] - full[k] * 0.5f64.powi(k as i32)).abs() <= 1e-12 * full[k].abs());
    }

    // with no state weights the condensed Hessian is diag(2γᵏR)
    let mut p = base.clone().with_discount(0.5);
    p.q = vec![0.0; 4];
    p.q_terminal = vec![0.0; 4];
    let qp = CondensedQp::assemble(&p, &x0, &xs, &us).unwrap();
    for k in 0..p.horizon {
        for j in 0..p.horizon {
            let expected = if j == k { 2.0 * 0.5f64.powi(k as i32) * p.r[0] } else { 0.0 };
            assert!((qp.hessian[(k, j)] - expected).abs() <= 1e-12 * p.r[0]);
        }
    }

    // equal weights and γ = 1: reversing the input order only reorders the terms
    let mut p1 = base.clone();
    p1.q = vec![0.0; 4];
    p1.q_terminal = vec![0.0; 4];
    let rev: Vec<Vec<f64>> = us.iter().rev().cloned().collect();
    let a: f64 = stage_costs(&p1, &x0, &xs, &us).iter().sum();
    let b: f64 = stage_costs(&p1, &x0, &xs, &rev).iter().sum();
    assert!((a - b).abs() <= 1e-12 * a);
}

#[test]
fn inputs_respect_their_bounds() {
    for l in [0.1, 0.8, 5.0] {
        let params = matched_cartpole(l);
        let p = build_cartpole_problem(&params, &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
        let sol = solve(&p, &[0.0, std::f64::consts::PI, 0.0, 0.0], None).unwrap();
        assert_eq!(sol.u0, sol.u_traj[0]);
        for u in &sol.u_traj {
            assert!(u[0] >= p.u_lb[0] && u[0] <= p.u_ub[0]);
        }
    }
    // swinging up from rest needs the full force
    let p = build_cartpole_problem(&cartpole::reference_params(), &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
    let d = nondimensionalize_mpc(&p, p.scaling.as_ref().unwrap()).unwrap();
    let sol = solve(&d, &[0.0, std::f64::consts::PI, 0.0, 0.0], None).unwrap();
    assert!(sol.u_traj.iter().any(|u| u[0] == d.u_ub[0] || u[0] == d.u_lb[0]));
}

#[test]
fn reference_equilibrium_is_optimal() {
    let params = cartpole::reference_params();
    let mut p = build_cartpole_problem(&params, &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
    let sol = solve(&p, &[0.0; 4], None).unwrap();
    assert!(sol.converged);
    assert_eq!(sol.u0, vec![0.0]);
    assert!(sol.objective.abs() < 1e-20);

    // a shifted cart is still an equilibrium
    p.x_ref = vec![0.5, 0.0, 0.0, 0.0];
    let sol = solve(&p, &[0.5, 0.0, 0.0, 0.0], None).unwrap();
    assert!(sol.converged);
    assert!(sol.u0[0].abs() < 1e-12);
    assert!(sol.objective.abs() < 1e-20);
    assert_eq!(sol.max_state_violation, 0.0);
}

#[test]
fn identity_scaling_keeps_the_problem() {
    let p = build_cartpole_problem(&cartpole::reference_params(), &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
    let d = nondimensionalize_mpc(&p, &ScalingTransform::identity(4, 1)).unwrap();
    assert_eq!(d.q, p.q);
    assert_eq!(d.r, p.r);
    assert_eq!(d.q_terminal, p.q_terminal);
    assert_eq!(d.x_lb, p.x_lb);
    assert_eq!(d.u_ub, p.u_ub);
    assert_eq!(d.dt, p.dt);
    let x = [0.1, 1.0, -0.3, 0.7];
    assert_eq!(d.model.rhs(&x, &[2.0]).unwrap(), p.model.rhs(&x, &[2.0]).unwrap());
    let a = solve(&p, &x, None).unwrap();
    let b = solve(&d, &x, None).unwrap();
    assert_eq!(a.u_traj, b.u_traj);
}

#[test]
fn cartpole_bounds_in_dimensionless_form() {
    for l in [0.1, 0.8, 5.0] {
        let params = matched_cartpole(l);
        let p = build_cartpole_problem(&params, &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
        let d = nondimensionalize_mpc(&p, p.scaling.as_ref().unwrap()).unwrap();
        assert!((d.x_ub[0] - 3.0).abs() < 1e-12 && (d.x_lb[0] + 3.0).abs() < 1e-12);
        assert!((d.x_ub_terminal[0] - 3.0).abs() < 1e-12);
        let m_c = params.value("m_c").unwrap();
        let g = params.value("g").unwrap();
        let f_max = 80.0 * m_c * g / 9.81;
        assert!((d.u_ub[0] - f_max / (m_c * g)).abs() < 1e-12);
        assert!((d.dt - cartpole_dimensionless_dt()).abs() < 1e-14);
        for (w, w0) in d.q.iter().zip(&DEFAULT_CARTPOLE_WEIGHTS[..4]) {
            assert!((w - w0).abs() <= 1e-12 * w0);
        }
    }
}

#[test]
fn unit_cost_needs_a_scale() {
    let mut p = build_cartpole_problem(&cartpole::reference_params(), &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
    p.cost_dim = DimensionVector::mlt(1, 2, -2);
    let s = p.scaling.clone().unwrap();
    assert!(matches!(nondimensionalize_mpc(&p, &s), Err(MpcError::Unit)));
}

#[test]
fn racecar_rate_scaling() {
    let params = racecar::reference_params();
    let l = 0.06;
    let c_r3 = params.value("c_r3").unwrap();
    let p = build_racecar_delta_u_problem(&params, &Track::desk(l), &DEFAULT_RACECAR_WEIGHTS).unwrap();
    let s = p.scaling.as_ref().unwrap();
    let expected = [l, l, 1.0, 1.0 / c_r3, 1.0, 1.0];
    for (m, e) in s.m_x.iter().zip(expected) {
        assert!((m - e).abs() <= 1e-15 * e);
    }
    for m in &s.m_u {
        assert!((m - 1.0 / (l * c_r3)).abs() <= 1e-12 * m);
    }
    assert!((s.m_t - l * c_r3).abs() <= 1e-15);
    let mut neg = DEFAULT_RACECAR_WEIGHTS;
    neg[2] = -1.0;
    assert!(matches!(
        build_racecar_delta_u_problem(&params, &Track::desk(l), &neg),
        Err(MpcError::Invalid(_))
    ));
    assert!(build_racecar_delta_u_problem(&params, &Track::desk(l), &neg[..5]).is_err());
}

#[test]
fn zero_rates_hold_the_actuators() {
    let params = racecar::reference_params();
    let p = build_racecar_delta_u_problem(&params, &Track::desk(0.06), &DEFAULT_RACECAR_WEIGHTS).unwrap();
    let mut x = vec![0.0, 0.01, 0.05, 0.5, 0.3, -0.1];
    for _ in 0..p.horizon {
        x = rk4_step(&p.model, &x, &[0.0, 0.0], p.dt).unwrap();
        assert_eq!(x[4], 0.3);
        assert_eq!(x[5], -0.1);
    }
}

#[test]
fn racecar_policy_outputs_scaled_rates() {
    let params = racecar::reference_params();
    let p = build_racecar_delta_u_problem(&params, &Track::desk(0.06), &DEFAULT_RACECAR_WEIGHTS).unwrap();
    let s = p.scaling.clone().unwrap();
    let d = nondimensionalize_mpc(&p, &s).unwrap();
    let mut c = MpcController::new(d, s.clone()).unwrap();
    let x = vec![0.0, 0.0, 0.0, 0.3, 0.2, 0.0];
    let u = c.step(&x).unwrap();
    let ut = c.last_solution().unwrap().u0.clone();
    for j in 0..2 {
        assert_eq!(u[j], ut[j] * s.m_u[j]);
    }
}

fn dimensionless_cartpole(l: f64) -> (MpcProblem, MpcProblem, ScalingTransform) {
    let p = build_cartpole_problem(&matched_cartpole(l), &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
    let s = p.scaling.clone().unwrap();
    let d = nondimensionalize_mpc(&p, &s).unwrap();
    (p, d, s)
}

#[test]
fn matched_cartpoles_share_dimensionless_solutions() {
    let (pa, da, sa) = dimensionless_cartpole(0.8);
    let (_, db, sb) = dimensionless_cartpole(0.1);
    let mut ca = MpcController::new(da, sa.clone()).unwrap();
    let mut cb = MpcController::new(db, sb.clone()).unwrap();
    let mut x = vec![0.0, std::f64::consts::PI, 0.0, 0.0];
    for _ in 0..40 {
        let st = sa.to_dimensionless_state(&x);
        let ua = ca.step(&x).unwrap();
        let ub = cb.step(&sb.to_physical_state(&st)).unwrap();
        let ta = &ca.last_solution().unwrap().u_traj;
        let tb = &cb.last_solution().unwrap().u_traj;
        for (p, q) in ta.iter().flatten().zip(tb.iter().flatten()) {
            assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
        let ratio = sb.m_u[0] / sa.m_u[0];
        assert!((ub[0] - ua[0] * ratio).abs() <= 1e-9 * sb.m_u[0]);
        x = rk4_step(&pa.model, &x, &ua, pa.dt).unwrap();
    }
}

#[test]
fn warm_start_reuses_the_shifted_solution() {
    let (_, d, _) = dimensionless_cartpole(0.8);
    let x0 = [0.0, 0.4, 0.0, 0.0];
    let first = solve(&d, &x0, None).unwrap();
    assert!(first.converged);
    let x1 = rk4_step(&d.model, &x0, &first.u0, d.dt).unwrap();
    let warm = solve(&d, &x1, Some(&first)).unwrap();
    let cold = solve(&d, &x1, None).unwrap();
    assert!(warm.converged && cold.converged);
    assert!(warm.iterations <= cold.iterations);
    assert!((warm.u0[0] - cold.u0[0]).abs() < 1e-6);
}

#[test]
fn problems_round_trip_through_json() {
    let p = build_racecar_delta_u_problem(&racecar::reference_params(), &Track::desk(0.06), &DEFAULT_RACECAR_WEIGHTS)
        .unwrap();
    let text = p.to_json().unwrap();
    let back = MpcProblem::from_json(&text).unwrap();
    assert_eq!(back.to_file(), p.to_file());
    let x = [0.1, 0.0, 0.0, 0.2, 0.1, 0.0];
    assert_eq!(solve(&back, &x, None).unwrap().u_traj, solve(&p, &x, None).unwrap().u_traj);

    let c = build_cartpole_problem(&cartpole::reference_params(), &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
    let back = MpcProblem::from_json(&c.to_json().unwrap()).unwrap();
    assert_eq!(back.x_ub[1], f64::INFINITY);
    assert_eq!(back.angle_states, vec![1]);
}

#[test]
fn tunable_weights_round_trip() {
    let mut p = build_cartpole_problem(&cartpole::reference_params(), &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
    let v: Vec<f64> = (1..=5).map(f64::from).collect();
    p.set_tunable(&v).unwrap();
    assert_eq!(p.tunable_values(), v);
    assert_eq!(p.q_terminal, vec![1.0, 2.0, 3.0, 4.0]);
    assert!(p.set_tunable(&[1.0]).is_err());
    assert!(p.set_tunable(&[1.0, 1.0, 1.0, -1.0, 1.0]).is_err());
}

#[test]
fn invalid_problems_are_rejected() {
    let p = build_cartpole_problem(&cartpole::reference_params(), &DEFAULT_CARTPOLE_WEIGHTS).unwrap();
    assert!(p.clone().with_discount(0.0).validate().is_err());
    let mut bad = p.clone();
    bad.horizon = 0;
    assert!(bad.validate().is_err());
    let mut bad = p.clone();
    bad.u_lb = vec![1.0];
    bad.u_ub = vec![-1.0];
    assert!(bad.validate().is_err());
    assert!(solve(&p, &[0.0, f64::NAN, 0.0, 0.0], None).is_err());
    assert!(solve(&p, &[0.0; 3], None).is_err());
}

#[test]
fn angles_wrap_into_the_half_open_interval() {
    use std::f64::consts::PI;
    assert_eq!(wrap_angle(PI), PI);
    assert_eq!(wrap_angle(-PI), PI);
    assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    assert!((wrap_angle(-0.2) + 0.2).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn inputs_stay_feasible(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, x0, _) = random_cartpole_case(&mut rng);
        let sol = solve(&p, &x0, None).unwrap();
        for u in &sol.u_traj {
            prop_assert!(u[0] >= p.u_lb[0] && u[0] <= p.u_ub[0]);
        }
        prop_assert!(!sol.converged || sol.kkt_residual <= TOLERANCE);
    }
}
