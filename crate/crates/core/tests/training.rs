use mfpinn::autodiff::{jet_eval, Jet, Scalar};
use mfpinn::network::{Fidelity, InputScaler, MultiFidelityNet, NetworkConfig, OutputScaler};
use mfpinn::training::{
    assemble_loss, lbfgs_run, lr_schedule, prepare_terms, train, update_sa_weights, Adam, InverseParam,
    LbfgsOptions, LossTerm, ParamScaling, Physics, SaRule, Schedule, TermKind, Termination,
};
use mfpinn::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `y₀' + k·y₀ = 0`, `y₁'' − y₀·y₁ = 0` on one input dimension.
struct Toy;

impl Physics for Toy {
    fn input_dims(&self) -> usize {
        1
    }
    fn outputs(&self) -> usize {
        2
    }
    fn residual_derivatives(&self) -> (Vec<usize>, Vec<usize>) {
        (vec![0], vec![0])
    }
    fn residual<S: Scalar>(&self, _x: &[S], y: &[Jet<S>], p: &[S]) -> Vec<S> {
        vec![
            y[0].d1(0) + p[0].clone() * y[0].value.clone(),
            y[1].d2(0) - y[0].value.clone() * y[1].value.clone(),
        ]
    }
}

fn tiny_net(hidden: usize, layers: usize, seed: u64) -> MultiFidelityNet {
    let mut cfg = NetworkConfig::uniform(layers, hidden, 1);
    cfg.feature_distance = 0.6;
    MultiFidelityNet::init(
        &cfg,
        InputScaler::new(vec![0.0], vec![2.0]).unwrap(),
        OutputScaler::standard(vec![0.2, -0.1], vec![1.5, 0.7]).unwrap(),
        2,
        seed,
    )
    .unwrap()
}

fn rand_points(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| vec![rng.random_range(0.0..2.0)]).collect()
}

fn term_set(npts: usize, seed: u64) -> Vec<LossTerm> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut targets = |n: usize, c: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    };
    vec![
        LossTerm::residual("hf_residual", Fidelity::High, rand_points(npts, seed + 1)),
        LossTerm::values("hf_bc", TermKind::Boundary, Fidelity::High, vec![1], vec![vec![0.0]], targets(1, 1)),
        LossTerm::values("lf_data", TermKind::Labeled, Fidelity::Low, vec![0, 1], rand_points(npts, seed + 2), targets(npts, 2)),
        LossTerm::derivative("hf_neumann", Fidelity::High, vec![0], 0, rand_points(npts, seed + 3), targets(npts, 1)),
    ]
}

fn inverse() -> Vec<InverseParam> {
    vec![InverseParam {
        name: "k".into(),
        init: 0.7,
        scaling: Some(ParamScaling { lo: 0.2, hi: 1.4 }),
    }]
}

/// Direct double loop using per-point jets.
fn naive_loss(net: &MultiFidelityNet, terms: &[LossTerm], inv: &[InverseParam], theta: &[f64], w: &[Vec<f64>]) -> f64 {
    let np = net.n_params();
    let mut probe = net.clone();
    probe.theta.copy_from_slice(&theta[..np]);
    let k = inv[0].raw(theta[np]);
    let mut total = 0.0;
    for (t, term) in terms.iter().enumerate() {
        let mut s = 0.0;
        for (i, x) in term.points.iter().enumerate() {
            let jets = jet_eval(&probe.view(term.fidelity), x, 2).unwrap();
            let e: f64 = match &term.constraint {
                mfpinn::training::Constraint::Residual => Toy.residual(x, &jets, &[k]).iter().map(|r| r * r).sum(),
                mfpinn::training::Constraint::Value { components } => components
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| (jets[c].value - term.targets[i][j]).powi(2))
                    .sum(),
                mfpinn::training::Constraint::Derivative { components, dim } => components
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| (jets[c].d1(*dim) - term.targets[i][j]).powi(2))
                    .sum(),
            };
            s += w[t][i] * w[t][i] * e;
        }
        total += s / term.len() as f64;
    }
    total
}

fn full_theta(net: &MultiFidelityNet, inv: &[InverseParam]) -> Vec<f64> {
    let mut th = net.theta.clone();
    th.extend(inv.iter().map(InverseParam::trained_init));
    th
}

fn random_weights(terms: &[LossTerm], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    terms.iter().map(|t| (0..t.len()).map(|_| rng.random_range(0.5..2.0)).collect()).collect()
}

#[test]
fn loss_matches_direct_summation() {
    let net = tiny_net(6, 4, 3);
    let terms = term_set(5, 10);
    let inv = inverse();
    let prep = prepare_terms::<f64, _>(&net, &Toy, &terms).unwrap();
    let theta = full_theta(&net, &inv);
    let w = random_weights(&terms, 4);
    let ev = assemble_loss(&net, &Toy, &terms, &prep, &inv, &theta, &w, false).unwrap();
    let want = naive_loss(&net, &terms, &inv, &theta, &w);
    assert!((ev.total - want).abs() < 1e-12 * want.max(1.0), "{} vs {want}", ev.total);
    assert!((ev.per_term.iter().sum::<f64>() - ev.total).abs() < 1e-12 * want.max(1.0));
}

#[test]
fn labeled_term_direct_formula() {
    let net = tiny_net(4, 2, 1);
    let pts = vec![vec![0.5], vec![1.5]];
    let pred: Vec<f64> = pts.iter().map(|x| net.forward_lf(x).unwrap()[0]).collect();
    let targets = vec![vec![pred[0] - 1.0], vec![pred[1] - 3f64.sqrt()]];
    let terms = vec![LossTerm::values("d", TermKind::Labeled, Fidelity::Low, vec![0], pts, targets)];
    let prep = prepare_terms::<f64, _>(&net, &Toy, &terms).unwrap();
    let ev = assemble_loss(&net, &Toy, &terms, &prep, &[], &net.theta, &[vec![1.0, 1.0]], false).unwrap();
    assert!((ev.total - 2.0).abs() < 1e-12);
    assert!((ev.point_errors[0][0] - 1.0).abs() < 1e-12);
    assert!((ev.point_errors[0][1] - 3.0).abs() < 1e-12);

    let exact = vec![vec![pred[0]], vec![pred[1]]];
    let terms = vec![LossTerm::values("d", TermKind::Labeled, Fidelity::Low, vec![0], vec![vec![0.5], vec![1.5]], exact)];
    let prep = prepare_terms::<f64, _>(&net, &Toy, &terms).unwrap();
    let ev = assemble_loss(&net, &Toy, &terms, &prep, &[], &net.theta, &[vec![1.0, 1.0]], false).unwrap();
    assert!(ev.total < 1e-28, "{}", ev.total);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    // Miniature configuration: 2 points per term, 1-hidden-layer sub-nets.
    let net = tiny_net(5, 2, 7);
    assert_eq!(net.decoder.hidden_layers(), 1);
    let terms = term_set(2, 20);
    let inv = inverse();
    let prep = prepare_terms::<f64, _>(&net, &Toy, &terms).unwrap();
    let theta = full_theta(&net, &inv);
    let w = random_weights(&terms, 5);
    let ev = assemble_loss(&net, &Toy, &terms, &prep, &inv, &theta, &w, true).unwrap();
    let h = 1e-6;
    for i in 0..theta.len() {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[i] += h;
        tm[i] -= h;
        let fd = (naive_loss(&net, &terms, &inv, &tp, &w) - naive_loss(&net, &terms, &inv, &tm, &w)) / (2.0 * h);
        assert!((ev.grad[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "param {i}: {} vs {fd}", ev.grad[i]);
    }
}

#[test]
fn empty_or_missing_terms_are_rejected() {
    let net = tiny_net(4, 2, 1);
    assert!(matches!(prepare_terms::<f64, _>(&net, &Toy, &[]), Err(Error::Config(_))));
    let empty = vec![LossTerm::residual("r", Fidelity::High, vec![])];
    assert!(matches!(prepare_terms::<f64, _>(&net, &Toy, &empty), Err(Error::Config(_))));
    let sched = Schedule {
        adam_iters: 1,
        lbfgs_iters: 0,
        ..Schedule::default()
    };
    let mut n2 = net.clone();
    assert!(train(&mut n2, &Toy, &[], &[], &sched, 0).is_err());
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut a = Adam::new(3);
    let mut th = vec![0.5, -1.0, 2.0];
    a.step(&mut th, &[0.0; 3], 1e-3).unwrap();
    assert_eq!(th, vec![0.5, -1.0, 2.0]);
    assert_eq!(a.step, 1);
}

#[test]
fn adam_first_step_by_hand() {
    let mut a = Adam::new(1);
    let mut th = vec![1.0];
    a.step(&mut th, &[2.0], 1e-3).unwrap();
    // m = 0.2, v = 0.004; corrected 2 and 4.
    let want = 1.0 - 1e-3 * 2.0 / (2.0 + 1e-8);
    assert!((th[0] - want).abs() < 1e-15);
    assert!(a.step(&mut th, &[f64::NAN], 1e-3).is_err());
}

#[test]
fn adam_minimizes_a_parabola() {
    let mut a = Adam::new(1);
    let mut th = vec![1.0];
    for k in 0..5000 {
        let g = 2.0 * th[0];
        a.step(&mut th, &[g], lr_schedule(k)).unwrap();
    }
    assert!(th[0].abs() < 1e-3, "{}", th[0]);
}

#[test]
fn schedule_matches_repeated_decay() {
    let mut eta = 0.001;
    for k in 0..=72_000 {
        if k > 0 && k % 400 == 0 {
            eta *= 0.99;
        }
        assert!((lr_schedule(k) - eta).abs() <= 1e-12 * eta, "iteration {k}");
    }
}

#[test]
fn lbfgs_solves_spd_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    // A = MᵀM + I
    let a: Vec<Vec<f64>> = (0..5)
        .map(|i| {
            (0..5)
                .map(|j| (0..5).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut x = vec![1.0, -2.0, 0.5, 3.0, -1.0];
    let opts = LbfgsOptions {
        max_iters: 50,
        grad_tol: 1e-10,
        ..LbfgsOptions::default()
    };
    let r = lbfgs_run(
        &mut x,
        |x| {
            let ax: Vec<f64> = a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect();
            Ok((0.5 * ax.iter().zip(x).map(|(p, q)| p * q).sum::<f64>(), ax))
        },
        &opts,
    )
    .unwrap();
    assert_eq!(r.termination, Termination::GradientNorm, "{r:?}");
    assert!(r.grad_norm < 1e-10 && r.iterations <= 50);
}

fn rosenbrock(x: &[f64]) -> mfpinn::Result<(f64, Vec<f64>)> {
    let (a, b) = (x[0], x[1]);
    let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
    let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
    Ok((f, g))
}

#[test]
fn lbfgs_solves_rosenbrock() {
    let mut x = vec![-1.2, 1.0];
    let r = lbfgs_run(&mut x, rosenbrock, &LbfgsOptions { max_iters: 500, ..LbfgsOptions::default() }).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?} {r:?}");
}

#[test]
fn lbfgs_zero_gradient_leaves_theta() {
    let mut x = vec![1.0, 1.0];
    let r = lbfgs_run(&mut x, rosenbrock, &LbfgsOptions::default()).unwrap();
    assert_eq!(r.iterations, 0);
    assert_eq!(x, vec![1.0, 1.0]);
}

#[test]
fn lbfgs_stops_cleanly_when_no_descent_is_possible() {
    // Gradient inconsistent with the function: every line search fails.
    let mut x = vec![0.3];
    let r = lbfgs_run(&mut x, |x| Ok((x[0] * x[0], vec![-1.0])), &LbfgsOptions::default()).unwrap();
    assert_eq!(r.termination, Termination::LineSearchFailure);
}

#[test]
fn weights_are_frozen_during_lbfgs_and_training_is_reproducible() {
    let terms = term_set(4, 30);
    let inv = inverse();
    let adam_only = Schedule {
        adam_iters: 30,
        lbfgs_iters: 0,
        log_every: 10,
        ..Schedule::default()
    };
    let both = Schedule {
        lbfgs_iters: 20,
        ..adam_only.clone()
    };
    let mut n1 = tiny_net(5, 2, 9);
    let mut n2 = n1.clone();
    let mut n3 = n1.clone();
    let a = train(&mut n1, &Toy, &terms, &inv, &adam_only, 1).unwrap();
    let b = train(&mut n2, &Toy, &terms, &inv, &both, 1).unwrap();
    let c = train(&mut n3, &Toy, &terms, &inv, &both, 1).unwrap();
    for (wa, wb) in a.state.weights.iter().zip(&b.state.weights) {
        assert!(wa.iter().zip(wb).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert!(b.final_loss < a.final_loss);
    assert_eq!(n2.theta, n3.theta);
    assert_eq!(b.inverse, c.inverse);
    // Every weight grew from its initial value of one.
    assert!(a.state.weights.iter().flatten().all(|&w| w >= 1.0));
}

#[test]
fn training_fits_an_exponential_decay() {
    // Pure physics with an initial value: y₀ = exp(−k x) with k fixed.
    struct Decay;
    impl Physics for Decay {
        fn input_dims(&self) -> usize {
            1
        }
        fn outputs(&self) -> usize {
            1
        }
        fn residual_derivatives(&self) -> (Vec<usize>, Vec<usize>) {
            (vec![0], vec![])
        }
        fn residual<S: Scalar>(&self, _x: &[S], y: &[Jet<S>], _p: &[S]) -> Vec<S> {
            vec![y[0].d1(0) + y[0].value.scale(1.5)]
        }
    }
    let cfg = NetworkConfig::uniform(2, 10, 1);
    let mut net = MultiFidelityNet::init(
        &cfg,
        InputScaler::new(vec![0.0], vec![1.0]).unwrap(),
        OutputScaler::identity(),
        1,
        4,
    )
    .unwrap();
    let pts: Vec<Vec<f64>> = (0..32).map(|i| vec![i as f64 / 31.0]).collect();
    let terms = vec![
        LossTerm::residual("r", Fidelity::High, pts),
        LossTerm::values("ic", TermKind::Boundary, Fidelity::High, vec![0], vec![vec![0.0]], vec![vec![1.0]]),
    ];
    let sched = Schedule {
        adam_iters: 1000,
        lbfgs_iters: 300,
        ..Schedule::default()
    };
    train(&mut net, &Decay, &terms, &[], &sched, 0).unwrap();
    for x in [0.0, 0.3, 0.8, 1.0] {
        let y = net.forward_hf(&[x]).unwrap()[0];
        assert!((y - (-1.5 * x).exp()).abs() < 1e-3, "x={x}: {y}");
    }
}

#[test]
fn inverse_parameter_is_recovered() {
    // y = exp(−k x) observed at a few points; k unknown.
    struct Decay;
    impl Physics for Decay {
        fn input_dims(&self) -> usize {
            1
        }
        fn outputs(&self) -> usize {
            1
        }
        fn residual_derivatives(&self) -> (Vec<usize>, Vec<usize>) {
            (vec![0], vec![])
        }
        fn residual<S: Scalar>(&self, _x: &[S], y: &[Jet<S>], p: &[S]) -> Vec<S> {
            vec![y[0].d1(0) + p[0].clone() * y[0].value.clone()]
        }
    }
    let cfg = NetworkConfig::uniform(2, 10, 1);
    let mut net = MultiFidelityNet::init(
        &cfg,
        InputScaler::new(vec![0.0], vec![1.0]).unwrap(),
        OutputScaler::identity(),
        1,
        5,
    )
    .unwrap();
    let obs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
    let vals: Vec<Vec<f64>> = obs.iter().map(|x| vec![(-0.8 * x[0]).exp()]).collect();
    let terms = vec![
        LossTerm::residual("r", Fidelity::High, (0..40).map(|i| vec![i as f64 / 39.0]).collect()),
        LossTerm::values("d", TermKind::Labeled, Fidelity::High, vec![0], obs, vals),
    ];
    let inv = vec![InverseParam {
        name: "k".into(),
        init: 0.3,
        scaling: Some(ParamScaling { lo: 0.0, hi: 2.0 }),
    }];
    let sched = Schedule {
        adam_iters: 1500,
        lbfgs_iters: 300,
        ..Schedule::default()
    };
    let out = train(&mut net, &Decay, &terms, &inv, &sched, 0).unwrap();
    assert!((out.inverse[0] - 0.8).abs() < 1e-3, "{:?}", out.inverse);
}

#[test]
fn history_csv_has_expected_columns() {
    let terms = term_set(3, 40);
    let mut net = tiny_net(4, 2, 2);
    let sched = Schedule {
        adam_iters: 5,
        lbfgs_iters: 3,
        log_every: 1,
        ..Schedule::default()
    };
    let out = train(&mut net, &Toy, &terms, &inverse(), &sched, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    mfpinn::training::write_history_csv(&path, &terms, &out.history).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "iteration,phase,total_loss,hf_residual,hf_bc,lf_data,hf_neumann,eta");
    assert!(text.lines().any(|l| l.contains(",lbfgs,")));
}

proptest! {
    #[test]
    fn weights_never_decrease(errors in prop::collection::vec(prop::collection::vec(0.0f64..5.0, 4), 1..30)) {
        let mut w = vec![1.0; 4];
        for e in &errors {
            let before = w.clone();
            update_sa_weights(&mut w, e, 0.1, SaRule::Unnormalized);
            for i in 0..4 {
                prop_assert!(w[i] >= before[i] && w[i] > 0.0);
            }
        }
    }

    #[test]
    fn ascent_step_does_not_decrease_weighted_loss(
        w0 in prop::collection::vec(0.1f64..3.0, 5),
        e in prop::collection::vec(0.0f64..2.0, 5),
        normalized in any::<bool>(),
    ) {
        let loss = |w: &[f64]| w.iter().zip(&e).map(|(w, e)| w * w * e).sum::<f64>() / 5.0;
        let mut w = w0.clone();
        let rule = if normalized { SaRule::Normalized } else { SaRule::Unnormalized };
        update_sa_weights(&mut w, &e, 0.1, rule);
        prop_assert!(loss(&w) >= loss(&w0));
    }
}
