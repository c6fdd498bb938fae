use std::f64::consts::PI;

use mfpinn::autodiff::{jet_eval_fn, Jet, JetValue, Scalar};
use mfpinn::problems::*;
use mfpinn::refsolvers::{bvp_solve, bvp_solve_hydraulic, fd_adr_solve, rk4_integrate};
use mfpinn::training::{ParamScaling, Physics};
use mfpinn::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Output jets with the given value and derivatives along each input dimension.
fn jet(value: f64, first: &[f64], second: &[f64]) -> JetValue {
    Jet {
        value,
        first: first.iter().map(|&v| Some(v)).collect(),
        second: second.iter().map(|&v| Some(v)).collect(),
    }
}

fn constant(value: f64, dims: usize) -> JetValue {
    jet(value, &vec![0.0; dims], &vec![0.0; dims])
}

#[test]
fn relative_l2_examples() {
    let y = vec![vec![1.0, -2.0], vec![0.5, 3.0]];
    assert_eq!(relative_l2(&y, &y).unwrap(), 0.0);
    let zero = vec![vec![0.0, 0.0]; 2];
    assert!((relative_l2(&zero, &y).unwrap() - 1.0).abs() < 1e-15);
    let twice: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
    assert!((relative_l2(&twice, &y).unwrap() - 1.0).abs() < 1e-15);
    assert!(matches!(relative_l2(&y, &zero), Err(Error::UndefinedMetric(_))));
    assert!(matches!(relative_l2(&[], &[]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(relative_l2(&y[..1], &y), Err(Error::Shape(_))));
}

#[test]
fn relative_l2_per_slice_groups_by_time() {
    let pts = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 1.0], vec![0.2, 0.0]];
    let truth = vec![vec![1.0], vec![2.0], vec![1.0], vec![2.0]];
    let pred = vec![vec![1.0], vec![2.0], vec![3.0], vec![2.0]];
    let s = relative_l2_by_slice(&pts, &pred, &truth, 1).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0], (0.0, 0.0));
    assert!((s[1].1 - (4.0f64 / 2.0).sqrt()).abs() < 1e-15);
}

proptest! {
    #[test]
    fn relative_l2_is_scale_invariant(
        pairs in prop::collection::vec((-5.0f64..5.0, 0.5f64..5.0), 1..20),
        c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
    ) {
        let p: Vec<Vec<f64>> = pairs.iter().map(|&(a, _)| vec![a]).collect();
        let t: Vec<Vec<f64>> = pairs.iter().map(|&(_, b)| vec![b]).collect();
        let cp: Vec<Vec<f64>> = p.iter().map(|r| vec![c * r[0]]).collect();
        let ct: Vec<Vec<f64>> = t.iter().map(|r| vec![c * r[0]]).collect();
        let a = relative_l2(&p, &t).unwrap();
        let b = relative_l2(&cp, &ct).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert!(a >= 0.0);
    }
}

#[test]
fn pendulum_equilibria() {
    let p = Pendulum::new(50.0);
    for s1 in [0.0, PI] {
        let r = p.residual(&[0.3], &[constant(s1, 1), constant(0.0, 1)], &[]);
        assert!(r.iter().all(|v| v.abs() < 1e-14), "{r:?}");
    }
}

#[test]
fn pendulum_residual_vanishes_on_fine_trajectory() {
    let p = Pendulum::new(5.0);
    let dt = 1e-3;
    let ts = rk4_integrate(|t, s| p.rhs(t, s), &p.initial, (0.0, 5.0), dt).unwrap();
    // Fourth-order central differences of the sampled states.
    for k in (10..ts.len() - 10).step_by(97) {
        let d = |c: usize| {
            let s = |j: usize| ts.states[j][c];
            (-s(k + 2) + 8.0 * s(k + 1) - 8.0 * s(k - 1) + s(k - 2)) / (12.0 * dt)
        };
        let y = [jet(ts.states[k][0], &[d(0)], &[]), jet(ts.states[k][1], &[d(1)], &[])];
        let r = p.residual(&[ts.times[k]], &y, &[]);
        assert!(r.iter().all(|v| v.abs() < 1e-4), "t={}: {r:?}", ts.times[k]);
    }
}

#[test]
fn van_genuchten_limits_and_value() {
    assert!((van_genuchten_k_f64(0.0, 0.036, 0.36) - SATURATED_K).abs() < 1e-15);
    assert!((van_genuchten_k_f64(2.0, 0.036, 0.36) - SATURATED_K).abs() < 1e-15);
    let mut prev = SATURATED_K;
    for h in [-0.5, -3.0, -10.0, -50.0, -500.0, -1e5] {
        let k = van_genuchten_k_f64(h, 0.036, 0.36);
        assert!(k < prev && k > 0.0);
        prev = k;
    }
    assert!(prev < 1e-6);
    // One-line evaluation of the same closed form.
    let (h, a, m): (f64, f64, f64) = (-10.0, 0.036, 0.36);
    let se = (1.0 + (a * h).abs().powf(1.0 / (1.0 - m))).powf(-m);
    let want = 1.04 * se.sqrt() * (1.0 - (1.0 - se.powf(1.0 / m)).powf(m)).powi(2);
    assert!((van_genuchten_k_f64(h, a, m) - want).abs() < 1e-14 * want);
}

#[test]
fn van_genuchten_derivative_matches_fd() {
    for h in [-3.0, -6.5, -10.0] {
        let j = jet_eval_fn(|x| vec![van_genuchten_k(&x[0], &x[0].lift(0.036), &x[0].lift(0.36))], &[h], 2).unwrap();
        let f = |h: f64| van_genuchten_k_f64(h, 0.036, 0.36);
        let e = 1e-4;
        let d1 = (f(h + e) - f(h - e)) / (2.0 * e);
        let d2 = (f(h + e) - 2.0 * f(h) + f(h - e)) / (e * e);
        assert!((j[0].d1(0) - d1).abs() < 1e-8 * d1.abs().max(1e-3));
        assert!((j[0].d2(0) - d2).abs() < 1e-5 * d2.abs().max(1e-3));
    }
}

#[test]
fn hydraulic_constant_k_hooks() {
    let q0 = 0.035;
    let mut flux = Hydraulic::new(HydraulicForm::Flux { q0 });
    flux.conductivity = Conductivity::Constant;
    let y = [jet(-5.0, &[-q0 / SATURATED_K], &[])];
    assert!(flux.residual(&[10.0], &y, &[0.036, 0.36])[0].abs() < 1e-15);

    let mut diff = Hydraulic::new(HydraulicForm::Differential);
    diff.conductivity = Conductivity::Constant;
    let y = [jet(-5.0, &[-0.035], &[0.0])];
    assert_eq!(diff.residual(&[10.0], &y, &[0.036, 0.36])[0], 0.0);
}

#[test]
fn hydraulic_forms_vanish_on_bvp_solution() {
    let dx = 0.25;
    let sol = bvp_solve_hydraulic(EXACT_ALPHA, EXACT_M, -3.0, -10.0, 200.0, dx).unwrap();
    let q0 = sol.mean_flux();
    let flux = Hydraulic::new(HydraulicForm::Flux { q0 });
    let diff = Hydraulic::new(HydraulicForm::Differential);
    let h: Vec<f64> = sol.field.values.iter().map(|v| v[0]).collect();
    let p = [EXACT_ALPHA, EXACT_M];
    for i in (40..h.len() - 40).step_by(61) {
        let d1 = (-h[i + 2] + 8.0 * h[i + 1] - 8.0 * h[i - 1] + h[i - 2]) / (12.0 * dx);
        let d2 = (-h[i + 2] + 16.0 * h[i + 1] - 30.0 * h[i] + 16.0 * h[i - 1] - h[i - 2]) / (12.0 * dx * dx);
        let y = [jet(h[i], &[d1], &[d2])];
        let rf = flux.residual(&[0.0], &y, &p)[0];
        let rd = diff.residual(&[0.0], &y, &p)[0];
        assert!(rf.abs() < 1e-6, "flux form at node {i}: {rf}");
        assert!(rd.abs() < 1e-6 * 200.0 * 200.0, "differential form at node {i}: {rd}");
    }
}

#[test]
fn hydraulic_bvp_with_constant_k_is_linear() {
    let sol = bvp_solve(|_| (SATURATED_K, 0.0), -3.0, -10.0, 200.0, 8.0).unwrap();
    for (x, v) in sol.field.axes[0].iter().zip(&sol.field.values) {
        assert!((v[0] - (-3.0 - 7.0 * x / 200.0)).abs() < 1e-12);
    }
}

#[test]
fn parameter_scaling_hits_interval_ends() {
    let s = ParamScaling {
        lo: ALPHA_RANGE.0,
        hi: ALPHA_RANGE.1,
    };
    assert_eq!(s.to_scaled(0.015), -1.0);
    assert_eq!(s.to_scaled(0.057), 1.0);
    let s = ParamScaling {
        lo: M_RANGE.0,
        hi: M_RANGE.1,
    };
    assert_eq!(s.to_scaled(0.31), -1.0);
    assert_eq!(s.to_scaled(0.40), 1.0);
    assert!((s.to_raw(s.to_scaled(0.36)) - 0.36).abs() < 1e-15);
}

#[test]
fn chemreact_trivial_states() {
    let c = ChemReact::default();
    let r = c.residual(&[1.0, 0.5], &[constant(0.0, 2), constant(0.0, 2)], &[EXACT_KF, EXACT_AR]);
    assert_eq!(r, vec![0.0, 0.0]);
    let r = c.residual(&[1.0, 0.5], &[constant(1.0, 2), constant(0.0, 2)], &[0.0, EXACT_AR]);
    assert_eq!(r, vec![0.0, 0.0]);
    // Negative concentration is clamped rather than producing NaN.
    let r = c.residual(&[1.0, 0.5], &[constant(-0.1, 2), constant(0.0, 2)], &[EXACT_KF, 1.7]);
    assert!(r.iter().all(|v| v.is_finite()));
}

#[test]
fn chemreact_residual_small_on_fd_solution() {
    let c = ChemReact::default();
    let (dx, dt) = (0.0125, 0.005);
    let sol = fd_adr_solve(EXACT_KF, EXACT_AR, dx, dt).unwrap();
    // Points away from the front x = 1.25 t, where the solution has a kink.
    for &(x, t) in &[(0.3, 0.8), (2.5, 0.5), (3.75, 1.0), (4.0, 0.3), (0.5, 0.9)] {
        let i = (x / dx as f64).round() as usize;
        let n = (t / dt as f64).round() as usize;
        let a = |i: usize, n: usize| sol.ca[n][i];
        let b = |i: usize, n: usize| sol.cb[n][i];
        let dt_back = |f: &dyn Fn(usize, usize) -> f64| (3.0 * f(i, n) - 4.0 * f(i, n - 1) + f(i, n - 2)) / (2.0 * dt);
        let dxc = |f: &dyn Fn(usize, usize) -> f64| (f(i + 1, n) - f(i - 1, n)) / (2.0 * dx);
        let dxx = |f: &dyn Fn(usize, usize) -> f64| (f(i + 1, n) - 2.0 * f(i, n) + f(i - 1, n)) / (dx * dx);
        let y = [
            jet(a(i, n), &[dxc(&a), dt_back(&a)], &[dxx(&a), 0.0]),
            jet(b(i, n), &[dxc(&b), dt_back(&b)], &[dxx(&b), 0.0]),
        ];
        let r = c.residual(&[x, t], &y, &[EXACT_KF, EXACT_AR]);
        assert!(r.iter().all(|v| v.abs() < 1e-8), "({x}, {t}): {r:?}");
        let (ea, eb) = c.advective_solution(EXACT_KF, x, t);
        assert!((a(i, n) - ea).abs() < 1e-4 && (b(i, n) - eb).abs() < 1e-4);
    }
}

#[test]
fn grayscott_fixed_point_and_initial_state() {
    let g = GrayScott::new(25.0);
    let r = g.residual(&[3.0, 1.0], &[constant(1.0, 2), constant(0.0, 2)], &[]);
    assert_eq!(r, vec![0.0, 0.0]);
    assert_eq!(g.initial(50.0), (1.0, 0.0));
    let (u, v) = g.initial(0.0);
    assert!((u - 0.5).abs() < 1e-15 && (v - 0.25).abs() < 1e-15);
}

#[test]
fn grayscott_residual_of_spatially_uniform_ode() {
    // u_t = −uv² + f(1−u), v_t = uv² − (f+k)v for x-independent states.
    let g = GrayScott::new(25.0);
    let (u, v) = (0.7, 0.2);
    let ut = -u * v * v + 0.1 * (1.0 - u);
    let vt = u * v * v - 0.1 * v;
    let r = g.residual(&[0.0, 0.0], &[jet(u, &[0.0, ut], &[0.0, 0.0]), jet(v, &[0.0, vt], &[0.0, 0.0])], &[]);
    assert!(r.iter().all(|x| x.abs() < 1e-15));
}

#[test]
fn navier_stokes_rest_state_and_shear() {
    for ns in [
        NavierStokes::steady(400.0).unwrap(),
        NavierStokes::unsteady(1000.0, 2.0).unwrap(),
    ] {
        let d = ns.input_dims();
        let rest = [constant(0.0, d), constant(0.0, d), constant(3.0, d)];
        assert!(ns.residual(&vec![0.5; d], &rest, &[]).iter().all(|v| *v == 0.0));
        let mut du = vec![0.0; d];
        du[1] = 1.0;
        let shear = [jet(0.4, &du, &vec![0.0; d]), constant(0.0, d), constant(1.0, d)];
        assert!(ns.residual(&vec![0.5; d], &shear, &[]).iter().all(|v| *v == 0.0));
    }
    let inv = NavierStokes::inverse();
    let rest = [constant(0.0, 2), constant(0.0, 2), constant(0.0, 2)];
    assert!(inv.residual(&[0.2, 0.3], &rest, &[1000.0]).iter().all(|v| *v == 0.0));
}

#[test]
fn navier_stokes_viscous_term_uses_reynolds() {
    // u = x², so ∇²u = 2 and only the viscous and convective terms remain.
    let ns = NavierStokes::steady(200.0).unwrap();
    let x = 0.3;
    let y = [jet(x * x, &[2.0 * x, 0.0], &[2.0, 0.0]), constant(0.0, 2), constant(0.0, 2)];
    let r = ns.residual(&[x, 0.1], &y, &[]);
    assert!((r[1] - (x * x * 2.0 * x - 2.0 / 200.0)).abs() < 1e-15);
    let r = NavierStokes::inverse().residual(&[x, 0.1], &y, &[200.0]);
    assert!((r[1] - (x * x * 2.0 * x - 2.0 / 200.0)).abs() < 1e-15);
}

#[test]
fn nonpositive_reynolds_is_a_domain_error() {
    assert!(matches!(NavierStokes::steady(0.0), Err(Error::Domain(_))));
    assert!(matches!(NavierStokes::steady(-5.0), Err(Error::Domain(_))));
    let opts = ProblemOptions {
        reynolds: Some(-1.0),
        ..Default::default()
    };
    assert!(matches!(Problem::build(ProblemKind::LidSteady, &opts), Err(Error::Domain(_))));
}

#[test]
fn lid_velocity_profiles() {
    let s = NavierStokes::steady(1000.0).unwrap();
    assert_eq!(s.lid_velocity(0.0, 0.0), 0.0);
    assert_eq!(s.lid_velocity(1.0, 0.0), 0.0);
    assert!((s.lid_velocity(0.5, 0.3) - 1.0).abs() < 1e-15);
    let u = NavierStokes::unsteady(1000.0, 1.0).unwrap();
    assert!((u.lid_velocity(0.25, 0.25) - (16.0 * 0.0625 * 0.5625 + 1.0)).abs() < 1e-12);
}

#[test]
fn every_preset_builds_consistent_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for kind in ProblemKind::ALL {
        let opts = ProblemOptions {
            inlet_flux: Some(0.01),
            ..Default::default()
        };
        let p = Problem::build(kind, &opts).unwrap();
        assert_eq!(kind.name().parse::<ProblemKind>().unwrap(), kind);
        assert_eq!(serde_json::to_string(&kind).unwrap(), format!("\"{}\"", kind.name()));
        assert_eq!(p.input_names().len(), p.input_dims());
        assert_eq!(p.output_names().len(), p.outputs());
        let (lo, hi) = p.domain();
        for x in p.residual_points(64, &mut rng) {
            assert!(x.iter().zip(lo.iter().zip(&hi)).all(|(v, (a, b))| v >= a && v <= b));
        }
        for t in p.boundary_terms(&mut rng) {
            t.validate(p.input_dims(), p.outputs()).unwrap();
        }
        let inv = p.inverse_params(&mut rng);
        assert_eq!(inv.len(), p.exact_parameters().len());
        for (q, (lo, hi)) in inv.iter().zip(p.parameter_ranges()) {
            assert!(q.init >= lo && q.init <= hi);
        }
    }
    assert!("cavity".parse::<ProblemKind>().is_err());
    assert!(Problem::build(ProblemKind::HydraulicFlux, &ProblemOptions::default()).is_err());
}

#[test]
fn pendulum_residual_grid_includes_endpoints() {
    let p = Problem::build(ProblemKind::Pendulum, &ProblemOptions::default()).unwrap();
    let pts = p.residual_points(8192, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(pts.len(), 8192);
    assert_eq!(pts[0][0], 0.0);
    assert_eq!(pts[8191][0], 50.0);
}
