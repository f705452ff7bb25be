use std::f64::consts::PI;

use dhpm_core::dhpm::{inject_known_dynamics, Dynamics, FeatureConfig, Normalizer};
use dhpm_core::grid::SnapshotGrid;
use dhpm_core::nn::{Activation, MlpParams};
use dhpm_core::pinn::{solve_learned, Boundary, PinnError, PinnSolution, SolveData, SolveDomain, SolveSpec};
use ndarray::Array2;

fn domain() -> SolveDomain {
    SolveDomain {
        t: [0.0, 1.0],
        x: [-1.0, 1.0],
        y: None,
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Grid of `f(t, x)` on `[0, 1] × [-1, 1]`.
fn field(nt: usize, nx: usize, f: impl Fn(f64, f64) -> f64) -> SnapshotGrid {
    let (ts, xs) = (axis(0.0, 1.0, nt), axis(-1.0, 1.0, nx));
    let u = Array2::from_shape_fn((nt, nx), |(i, j)| f(ts[i], xs[j]));
    SnapshotGrid::new_1d(ts, xs, vec!["u".into()], vec![u]).unwrap()
}

fn constant_solution(values: &[f64]) -> PinnSolution {
    let nets = values
        .iter()
        .map(|&v| {
            let mut net = MlpParams::zeros(&[2, 3, 1], Activation::Tanh).unwrap();
            let mut flat = net.flatten();
            *flat.last_mut().unwrap() = v;
            net.set_flat(&flat).unwrap();
            net
        })
        .collect();
    PinnSolution {
        nets,
        channels: ["u", "v"][..values.len()].iter().map(|s| s.to_string()).collect(),
        domain: domain(),
        normalizer: Normalizer::new(vec![0.0, -1.0], vec![1.0, 1.0]),
        log: vec![],
    }
}

fn small_spec(boundary: Boundary) -> SolveSpec {
    let mut s = SolveSpec {
        domain: domain(),
        boundary,
        hidden: vec![16, 16],
        adam_iters: 300,
        lbfgs_iters: 600,
        seed: 3,
        ..SolveSpec::default()
    };
    s.collocation.interior = 400;
    s.collocation.initial = 64;
    s.collocation.boundary = 64;
    s
}

fn rel_l2(p: &SnapshotGrid, q: &SnapshotGrid) -> f64 {
    let (a, b) = (p.channel(0), q.channel(0));
    ((a - b).iter().map(|v| v * v).sum::<f64>() / b.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

#[test]
fn grid_evaluation_has_requested_shape_and_magnitude() {
    let sol = constant_solution(&[3.0, -4.0]);
    let ts = [0.0, 0.5, 1.0];
    let xs = [-1.0, 0.0, 0.25, 1.0];
    let g = sol.evaluate_on_grid(&ts, &xs, None, Some(("u", "v"))).unwrap();
    assert_eq!(g.shape(), (3, 4, 1));
    assert_eq!(g.channels(), ["u", "v", "abs"]);
    assert!(g.channel(0).iter().all(|&v| v == 3.0));
    assert!(g.channel(2).iter().all(|&v| v == 5.0));
}

#[test]
fn points_outside_the_domain_are_rejected() {
    let sol = constant_solution(&[1.0]);
    assert!(matches!(
        sol.evaluate_on_grid(&[0.0, 1.5], &[0.0], None, None),
        Err(PinnError::Domain(_))
    ));
    assert!(matches!(
        sol.evaluate_on_grid(&[0.0], &[-1.2], None, None),
        Err(PinnError::Domain(_))
    ));
    assert!(matches!(
        sol.evaluate_on_grid(&[0.0], &[0.0], Some(&[0.0]), None),
        Err(PinnError::Domain(_))
    ));
}

#[test]
fn configuration_errors() {
    let cfg = FeatureConfig::scalar_1d(2);
    let dy = inject_known_dynamics("heat", &cfg).unwrap();
    let dr: Vec<&dyn Dynamics> = dy.iter().map(|d| d as &dyn Dynamics).collect();
    let truth = field(5, 9, |t, x| (-t).exp() * x.sin());
    let data = SolveData::initial_from(&truth, &cfg.channels).unwrap();

    let config_err = |r: Result<PinnSolution, PinnError>| matches!(r, Err(PinnError::Config(_)));
    assert!(config_err(solve_learned(&small_spec(Boundary::Dirichlet), &cfg, &dr, &data)));
    for order in [0, 5] {
        assert!(config_err(solve_learned(&small_spec(Boundary::Periodic { order }), &cfg, &dr, &data)));
    }
    let mut s = small_spec(Boundary::default());
    s.domain.t = [1.0, 1.0];
    assert!(config_err(solve_learned(&s, &cfg, &dr, &data)));
    assert!(config_err(solve_learned(&small_spec(Boundary::default()), &cfg, &[], &data)));
    let ns = FeatureConfig {
        aux_channels: vec!["a".into()],
        ..cfg.clone()
    };
    let dz = inject_known_dynamics("zero", &ns).unwrap();
    let dzr: Vec<&dyn Dynamics> = dz.iter().map(|d| d as &dyn Dynamics).collect();
    assert!(config_err(solve_learned(&small_spec(Boundary::default()), &ns, &dzr, &data)));
}

#[test]
fn zero_dynamics_keep_the_initial_profile() {
    let cfg = FeatureConfig::scalar_1d(2);
    let dy = inject_known_dynamics("zero", &cfg).unwrap();
    let dr: Vec<&dyn Dynamics> = dy.iter().map(|d| d as &dyn Dynamics).collect();
    let truth = field(11, 41, |_, x| (PI * x).sin());
    let data = SolveData::initial_from(&truth, &cfg.channels).unwrap();
    let mut s = small_spec(Boundary::Periodic { order: 2 });
    s.lbfgs_iters = 2000;
    let sol = solve_learned(&s, &cfg, &dr, &data).unwrap();
    let g = sol.evaluate_on_grid(truth.times(), truth.xs(), None, None).unwrap();
    let e = rel_l2(&g, &truth);
    assert!(e < 1e-3, "relative error {e}");
    // the log keeps the best objective monotone
    assert!(sol.log.windows(2).all(|w| w[1].best <= w[0].best));
    assert!(sol.log.last().unwrap().best < sol.log[0].loss * 1e-3);
}

#[test]
fn heat_with_dirichlet_faces_matches_the_analytic_solution() {
    let cfg = FeatureConfig::scalar_1d(2);
    let dy = inject_known_dynamics("heat", &cfg).unwrap();
    let dr: Vec<&dyn Dynamics> = dy.iter().map(|d| d as &dyn Dynamics).collect();
    let truth = field(21, 41, |t, x| (-t).exp() * (x + 0.3).sin());
    let data = SolveData::initial_from(&truth, &cfg.channels)
        .unwrap()
        .with_faces(&truth, &cfg.channels, &domain())
        .unwrap();
    let (pts, vals) = data.faces.as_ref().unwrap();
    assert_eq!(pts.nrows(), 2 * 21);
    assert!(pts.column(1).iter().all(|&x| x.abs() == 1.0));
    assert_eq!(vals[[0, 0]], (-1.0f64 + 0.3).sin());

    let sol = solve_learned(&small_spec(Boundary::Dirichlet), &cfg, &dr, &data).unwrap();
    let g = sol.evaluate_on_grid(truth.times(), truth.xs(), None, None).unwrap();
    let e = rel_l2(&g, &truth);
    assert!(e < 1e-2, "relative error {e}");
}

#[test]
fn solves_are_deterministic() {
    let cfg = FeatureConfig::scalar_1d(1);
    let dy = inject_known_dynamics("zero", &cfg).unwrap();
    let dr: Vec<&dyn Dynamics> = dy.iter().map(|d| d as &dyn Dynamics).collect();
    let truth = field(3, 9, |_, x| x * x);
    let data = SolveData::initial_from(&truth, &cfg.channels).unwrap();
    let mut s = small_spec(Boundary::Periodic { order: 1 });
    s.adam_iters = 20;
    s.lbfgs_iters = 20;
    let a = solve_learned(&s, &cfg, &dr, &data).unwrap();
    let b = solve_learned(&s, &cfg, &dr, &data).unwrap();
    assert_eq!(a.nets, b.nets);
}
