use mfpinn::problems::{Pendulum, EXACT_ALPHA, EXACT_M};
use mfpinn::refsolvers::*;
use mfpinn::Error;
use proptest::prelude::*;

#[test]
fn rk4_is_exact_for_low_degree_polynomials() {
    for dt in [0.3, 0.07, 1.0 / 3.0] {
        let ts = rk4_integrate(|t, _| vec![t, 3.0 * t * t], &[0.0, 0.0], (0.0, 2.5), dt).unwrap();
        assert_eq!(*ts.times.last().unwrap(), 2.5);
        let y = ts.states.last().unwrap();
        assert!((y[0] - 2.5f64.powi(2) / 2.0).abs() < 1e-13);
        assert!((y[1] - 2.5f64.powi(3)).abs() < 1e-12);
    }
}

#[test]
fn rk4_time_grid() {
    let ts = rk4_integrate(|_, y| y.to_vec(), &[1.0], (0.0, 50.0), 1.0 / 3.0).unwrap();
    assert_eq!(ts.len(), 151);
    assert_eq!(ts.times[150], 50.0);
    assert!(ts.times.windows(2).all(|w| w[1] > w[0]));
    let ts = rk4_integrate(|_, y| y.to_vec(), &[1.0], (0.0, 1.0), 0.3).unwrap();
    assert_eq!(ts.len(), 5);
    assert!((ts.times[4] - ts.times[3] - 0.1).abs() < 1e-15);
    let ts = rk4_integrate(|_, y| y.to_vec(), &[1.0], (0.0, 50.0), 0.01).unwrap();
    assert_eq!(ts.len(), 5001);
}

#[test]
fn rk4_has_fourth_order_convergence() {
    let err = |dt: f64| {
        let ts = rk4_integrate(|_, y| y.to_vec(), &[1.0], (0.0, 1.0), dt).unwrap();
        (ts.states.last().unwrap()[0] - std::f64::consts::E).abs()
    };
    let e: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&h| err(h)).collect();
    for w in e.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 3.9, "order {order} from {e:?}");
    }
}

#[test]
fn rk4_rejects_bad_input_and_reports_blow_up() {
    assert!(matches!(rk4_integrate(|_, y| y.to_vec(), &[1.0], (0.0, 1.0), 0.0), Err(Error::Config(_))));
    assert!(matches!(rk4_integrate(|_, y| y.to_vec(), &[1.0], (1.0, 0.0), 0.1), Err(Error::Config(_))));
    let r = rk4_integrate(|_, y| vec![y[0] * y[0]], &[1.0], (0.0, 2.0), 0.1);
    match r {
        Err(Error::Solver(msg)) => assert!(msg.contains("t = ")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn hermite_interpolation_between_steps() {
    let p = Pendulum::new(10.0);
    let coarse = rk4_integrate(|t, s| p.rhs(t, s), &p.initial, (0.0, 10.0), 0.01).unwrap();
    for k in [1, 7, 29] {
        let t = k as f64 / 3.0;
        let a = coarse.interpolate(t, |t, s| p.rhs(t, s)).unwrap();
        // Integrate finely from the preceding stored state.
        let j = coarse.times.partition_point(|&v| v <= t) - 1;
        let local = rk4_integrate(|t, s| p.rhs(t, s), &coarse.states[j], (coarse.times[j], t), 1e-4).unwrap();
        let b = local.states.last().unwrap();
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-8), "{a:?} {b:?}");
    }
    assert!(coarse.interpolate(10.5, |t, s| p.rhs(t, s)).is_err());
}

#[test]
fn bvp_flux_is_constant_at_exact_parameters() {
    let sol = bvp_solve_hydraulic(EXACT_ALPHA, EXACT_M, -3.0, -10.0, 200.0, 8.0).unwrap();
    assert_eq!(sol.field.len(), 26);
    let q = sol.mean_flux();
    assert!(q > 0.0);
    for f in &sol.fluxes {
        assert!((f - q).abs() <= 1e-8, "{f} vs {q}");
    }
    let h = &sol.field.values;
    assert_eq!(h[0][0], -3.0);
    assert_eq!(h[25][0], -10.0);
    assert!(*sol.history.last().unwrap() < 1e-10);
}

#[test]
fn bvp_constant_conductivity_gives_linear_profile() {
    let sol = bvp_solve(|_| (1.04, 0.0), -3.0, -10.0, 200.0, 8.0).unwrap();
    for (x, v) in sol.field.axes[0].iter().zip(&sol.field.values) {
        assert!((v[0] - (-3.0 + (-7.0) * x / 200.0)).abs() <= 1e-12);
    }
}

#[test]
fn bvp_is_second_order_in_mesh_size() {
    let at = |dx: f64| {
        let s = bvp_solve_hydraulic(EXACT_ALPHA, EXACT_M, -3.0, -10.0, 200.0, dx).unwrap();
        s.field.interpolate(&[96.0]).unwrap()[0]
    };
    let (a, b, c) = (at(8.0), at(4.0), at(2.0));
    let ratio = (a - b) / (b - c);
    assert!((ratio - 4.0).abs() < 0.3, "refinement ratio {ratio}");
}

#[test]
fn bvp_errors() {
    assert!(matches!(bvp_solve_hydraulic(0.036, 1.2, -3.0, -10.0, 200.0, 8.0), Err(Error::Domain(_))));
    assert!(matches!(bvp_solve_hydraulic(0.036, 0.36, -3.0, -10.0, 200.0, 7.0), Err(Error::Config(_))));
    // A conductivity law with no solution-independent root: Newton cannot converge.
    let r = bvp_solve(|h| (h.sin() + 1.5, h.cos()), -3.0, 40.0, 10.0, 1.0);
    assert!(r.is_ok() || matches!(r, Err(Error::Solver(_))));
}

#[test]
fn adr_constant_transport_is_exact() {
    let mut setup = AdrSetup::new(0.0, 2.0, 0.0125, 0.005);
    setup.diffusion = 0.0;
    let n = 401;
    let sol = fd_adr_solve_from(&setup, &vec![1.0; n], &vec![0.0; n]).unwrap();
    for (a, b) in sol.ca.iter().zip(&sol.cb) {
        assert!(a.iter().all(|v| (v - 1.0).abs() <= 1e-10));
        assert!(b.iter().all(|v| v.abs() <= 1e-10));
    }
    let sol = fd_adr_solve(0.0, 2.0, 0.0125, 0.005).unwrap();
    assert!(sol.ca.iter().flatten().all(|v| (v - 1.0).abs() <= 1e-10));
    assert!(sol.cb.iter().flatten().all(|v| v.abs() <= 1e-10));
}

#[test]
fn adr_conserves_mass_without_reaction() {
    let mut setup = AdrSetup::new(0.0, 2.0, 0.05, 0.01);
    setup.diffusion = 1e-3;
    let n = 101;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.05).collect();
    let init: Vec<f64> = xs.iter().map(|x| 1.0 + 0.5 * (-(x - 2.0f64).powi(2)).exp()).collect();
    let sol = fd_adr_solve_from(&setup, &init, &vec![0.0; n]).unwrap();
    let (dx, dt, psi, q, d) = (setup.dx, setup.dt, setup.porosity, setup.darcy_velocity, setup.diffusion);
    let mass = |c: &[f64]| dx * (c[1..n - 1].iter().sum::<f64>() + 0.5 * c[n - 1]);
    let flux = |c: &[f64]| {
        0.5 * q * (c[0] + c[1]) - 0.5 * q * (c[n - 2] + c[n - 1]) + psi * d * (c[0] - c[1]) / dx
    };
    let c = &sol.ca;
    let first = psi * (mass(&c[1]) - mass(&c[0])) / dt;
    assert!((first - flux(&c[1])).abs() < 1e-6);
    for k in 2..c.len() {
        let lhs = psi * (1.5 * mass(&c[k]) - 2.0 * mass(&c[k - 1]) + 0.5 * mass(&c[k - 2])) / dt;
        assert!((lhs - flux(&c[k])).abs() < 1e-6, "step {k}: {lhs} vs {}", flux(&c[k]));
    }
}

#[test]
fn adr_matches_advective_solution_away_from_the_front() {
    let sol = fd_adr_solve(1.577, 2.0, 0.0125, 0.005).unwrap();
    let field = sol.to_field("hf").unwrap();
    let c = mfpinn::problems::ChemReact::default();
    for &(x, t) in &[(1.25, 0.5), (2.5, 0.5), (3.75, 0.5), (2.5, 1.0), (3.75, 1.0), (0.3, 1.0)] {
        let v = field.interpolate(&[x, t]).unwrap();
        let (a, b) = c.advective_solution(1.577, x, t);
        assert!((v[0] - a).abs() < 1e-4 && (v[1] - b).abs() < 1e-4, "({x}, {t}): {v:?}");
    }
    let mut upwind = AdrSetup::new(1.577, 2.0, 0.0125, 0.005);
    upwind.advection = Advection::Upwind;
    let u = fd_adr_solve_from(&upwind, &vec![1.0; 401], &vec![0.0; 401]).unwrap();
    let (a, _) = c.advective_solution(1.577, 3.75, 1.0);
    assert!((u.ca[200][300] - a).abs() < 1e-3);
}

#[test]
fn adr_errors() {
    assert!(matches!(fd_adr_solve(1.0, 2.0, 0.0, 0.005), Err(Error::Config(_))));
    assert!(matches!(fd_adr_solve(1.0, 2.0, 0.3, 0.005), Err(Error::Config(_))));
    assert!(matches!(fd_adr_solve(1.0, -1.0, 0.0125, 0.005), Err(Error::Domain(_))));
    let setup = AdrSetup::new(1.0, 2.0, 0.0125, 0.005);
    assert!(matches!(fd_adr_solve_from(&setup, &[1.0; 3], &[0.0; 3]), Err(Error::Shape(_))));
}

#[test]
fn noise_statistics_and_determinism() {
    let values: Vec<Vec<f64>> = (0..100_000).map(|i| vec![i as f64 * 1e-3]).collect();
    let field = GridField::new(
        vec![(0..100_000).map(|i| i as f64).collect()],
        values.clone(),
        GridMeta::default(),
    )
    .unwrap();
    assert_eq!(add_noise(&field, 0.0, 3).unwrap(), field);
    let sigma = NoiseLevel::Variance.std_dev(0.01);
    assert!((sigma - 0.1).abs() < 1e-15);
    let noisy = add_noise(&field, sigma, 3).unwrap();
    let d: Vec<f64> = noisy.values.iter().zip(&values).map(|(a, b)| a[0] - b[0]).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
    assert!((std - sigma).abs() < 0.02 * sigma, "{std}");
    assert_eq!(add_noise(&field, sigma, 3).unwrap(), noisy);
    assert_ne!(add_noise(&field, sigma, 4).unwrap(), noisy);
    assert!(matches!(add_noise(&field, -1.0, 3), Err(Error::Config(_))));
    assert_eq!(NoiseLevel::StdDev.std_dev(0.01), 0.01);
}

#[test]
fn grid_interpolation_and_ordering() {
    let xs = vec![0.0, 1.0, 3.0];
    let ys = vec![-1.0, 0.0];
    let f = |x: f64, y: f64| 2.0 * x - y + 0.5 * x * y;
    let mut vals = Vec::new();
    for &x in &xs {
        for &y in &ys {
            vals.push(vec![f(x, y)]);
        }
    }
    let g = GridField::new(vec![xs, ys], vals, GridMeta::default()).unwrap();
    assert_eq!(g.points()[1], vec![0.0, 0.0]);
    assert_eq!(g.points()[2], vec![1.0, -1.0]);
    for p in [[0.5, -0.5], [2.0, -0.25], [3.0, 0.0], [0.0, -1.0]] {
        assert!((g.interpolate(&p).unwrap()[0] - f(p[0], p[1])).abs() < 1e-14);
    }
    assert!(matches!(g.interpolate(&[3.5, 0.0]), Err(Error::Domain(_))));
    assert!(GridField::new(vec![vec![0.0, 0.0]], vec![vec![1.0]; 2], GridMeta::default()).is_err());
}

proptest! {
    #[test]
    fn thomas_matches_dense_solve(
        n in 2usize..12,
        seed in prop::collection::vec(-1.0f64..1.0, 48),
    ) {
        let lower: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { seed[i] }).collect();
        let upper: Vec<f64> = (0..n).map(|i| if i + 1 == n { 0.0 } else { seed[12 + i] }).collect();
        let diag: Vec<f64> = (0..n).map(|i| 3.0 + seed[24 + i]).collect();
        let x: Vec<f64> = (0..n).map(|i| seed[36 + i]).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| {
                let mut v = diag[i] * x[i];
                if i > 0 { v += lower[i] * x[i - 1]; }
                if i + 1 < n { v += upper[i] * x[i + 1]; }
                v
            })
            .collect();
        solve_tridiagonal(&lower, &diag, &upper, &mut b).unwrap();
        for (a, e) in b.iter().zip(&x) {
            prop_assert!((a - e).abs() < 1e-12);
        }
    }
}
