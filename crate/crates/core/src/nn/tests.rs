use super::*;
use ndarray::{arr1, arr2, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite-difference weights for the `order`-th derivative on offsets `-m..=m`,
/// from the moment conditions Σ w_j j^p = p! δ(p, order).
fn fd_weights(order: usize, m: i32) -> Vec<f64> {
    let n = (2 * m + 1) as usize;
    let offsets: Vec<f64> = (-m..=m).map(|j| j as f64).collect();
    let mut a = vec![vec![0.0; n + 1]; n];
    for p in 0..n {
        for j in 0..n {
            a[p][j] = offsets[j].powi(p as i32);
        }
        a[p][n] = if p == order { (1..=order).map(|k| k as f64).product() } else { 0.0 };
    }
    // Gauss-Jordan with partial pivoting
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..n).map(|j| a[j][n] / a[j][j]).collect()
}

fn fd_derivative(f: impl Fn(f64) -> f64, x0: f64, order: usize, h: f64) -> f64 {
    let m = 4;
    let w = fd_weights(order, m);
    let mut acc = 0.0;
    for (j, wj) in (-m..=m).zip(&w) {
        acc += wj * f(x0 + j as f64 * h);
    }
    acc / h.powi(order as i32)
}

fn rel_err(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(floor)
}

#[test]
fn fd_weights_reproduce_textbook_stencil() {
    let w = fd_weights(2, 1);
    assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] + 2.0).abs() < 1e-14 && (w[2] - 1.0).abs() < 1e-14);
}

#[test]
fn init_rejects_bad_widths() {
    assert!(matches!(MlpParams::init(&[], Activation::Tanh, 0), Err(NnError::InvalidArchitecture(_))));
    assert!(matches!(MlpParams::init(&[3], Activation::Tanh, 0), Err(NnError::InvalidArchitecture(_))));
    assert!(matches!(MlpParams::init(&[2, 0, 1], Activation::Tanh, 0), Err(NnError::InvalidArchitecture(_))));
}

#[test]
fn init_builds_burgers_u_network() {
    let p = MlpParams::init(&[2, 50, 50, 50, 50, 1], Activation::Tanh, 0).unwrap();
    assert_eq!(p.weights().len(), 5);
    assert_eq!(p.weights()[0].dim(), (50, 2));
    assert_eq!(p.weights()[4].dim(), (1, 50));
    assert!(p.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    assert_eq!(p.n_params(), 2 * 50 + 50 + 3 * (50 * 50 + 50) + 50 + 1);
}

#[test]
fn affine_init_maps_zero_to_zero() {
    for seed in 0..5 {
        let p = MlpParams::init(&[1, 1], Activation::Tanh, seed).unwrap();
        assert_eq!(p.forward(&[0.0]).unwrap(), vec![0.0]);
    }
}

#[test]
fn glorot_variance_over_reseeds() {
    // hidden layer of [2, 8, 1]: target variance 2 / (2 + 8)
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0.0;
    for seed in 0..1000u64 {
        let p = MlpParams::init(&[2, 8, 1], Activation::Tanh, seed.wrapping_mul(7919).wrapping_add(7)).unwrap();
        for &w in p.weights()[0].iter() {
            sum += w;
            sum_sq += w * w;
            count += 1.0;
        }
    }
    let mean = sum / count;
    let var = sum_sq / count - mean * mean;
    let target = 2.0 / 10.0;
    assert!((var - target).abs() < 0.2 * target, "variance {var}");
}

#[test]
fn zero_network_outputs_zero() {
    let p = MlpParams::zeros(&[2, 7, 7, 1], Activation::Tanh).unwrap();
    assert_eq!(p.forward(&[0.3, -1.2]).unwrap(), vec![0.0]);
}

#[test]
fn affine_network_is_exact() {
    let p = MlpParams::from_parts(vec![arr2(&[[2.5]])], vec![arr1(&[-0.75])], Activation::Tanh).unwrap();
    for &x in &[-3.0, 0.0, 0.125, 7.0] {
        assert_eq!(p.forward(&[x]).unwrap()[0], 2.5 * x + -0.75);
    }
}

#[test]
fn forward_rejects_wrong_input_dim() {
    let p = MlpParams::init(&[2, 3, 1], Activation::Tanh, 1).unwrap();
    assert!(matches!(p.forward(&[1.0]), Err(NnError::Shape { expected: 2, got: 1 })));
}

/// Independent evaluation of a network from its raw matrices.
fn reference_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let n = p.weights().len();
    for k in 0..n {
        let w = &p.weights()[k];
        let b = &p.biases()[k];
        let mut z = vec![0.0; w.nrows()];
        for j in 0..w.nrows() {
            let mut s = 0.0;
            for i in 0..w.ncols() {
                s += w[[j, i]] * a[i];
            }
            z[j] = s + b[j];
        }
        if k + 1 < n {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        a = z;
    }
    a
}

#[test]
fn forward_matches_reference_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = MlpParams::init(&[2, 5, 1], Activation::Tanh, 3).unwrap();
    let flat: Vec<f64> = (0..p.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    p.set_flat(&flat).unwrap();
    let pts: Vec<[f64; 2]> = (0..50).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
    let batch = Array2::from_shape_fn((50, 2), |(r, c)| pts[r][c]);
    let out = p.forward_batch(&batch).unwrap();
    for (r, x) in pts.iter().enumerate() {
        let want = reference_forward(&p, x)[0];
        let got = p.forward(x).unwrap()[0];
        assert!(rel_err(got, want, 1e-300) < 1e-12);
        assert!(rel_err(out[[r, 0]], want, 1e-300) < 1e-12);
    }
}

#[test]
fn affine_jet_derivatives() {
    let p = MlpParams::from_parts(vec![arr2(&[[0.7, -1.3]])], vec![arr1(&[0.2])], Activation::Tanh).unwrap();
    let jet = p.jet(&[0.4, 2.0], &JetRequest::space_time_1d(4)).unwrap();
    assert_eq!(jet.d_t, vec![0.7]);
    assert_eq!(jet.spatial[0], vec![-1.3]);
    for k in 1..4 {
        assert_eq!(jet.spatial[k], vec![0.0]);
        assert_eq!(jet.spatial[k][0].to_bits(), 0.0f64.to_bits());
    }
    assert_eq!(jet.spatial.len(), 4);
}

fn single_neuron() -> MlpParams {
    // u(t, x) = tanh(x)
    MlpParams::from_parts(
        vec![arr2(&[[0.0, 1.0]]), arr2(&[[1.0]])],
        vec![arr1(&[0.0]), arr1(&[0.0])],
        Activation::Tanh,
    )
    .unwrap()
}

#[test]
fn single_neuron_jet_at_origin() {
    let jet = single_neuron().jet(&[0.0, 0.0], &JetRequest::space_time_1d(3)).unwrap();
    assert_eq!(jet.spatial[0][0], 1.0);
    assert_eq!(jet.spatial[1][0], 0.0);
    assert_eq!(jet.spatial[2][0], -2.0);
}

#[test]
fn jet_rejects_unsupported_orders() {
    let p = MlpParams::init(&[2, 4, 1], Activation::Tanh, 0).unwrap();
    assert!(matches!(p.jet(&[0.0, 0.0], &JetRequest::space_time_1d(5)), Err(NnError::UnsupportedOrder(5))));
    let relu = MlpParams::init(&[2, 4, 1], Activation::Relu, 0).unwrap();
    assert!(matches!(
        relu.jet(&[0.0, 0.0], &JetRequest::space_time_1d(2)),
        Err(NnError::Capability { order: 2, .. })
    ));
    assert!(relu.jet(&[0.1, 0.2], &JetRequest::space_time_1d(1)).is_ok());
}

fn random_net(widths: &[usize], seed: u64) -> MlpParams {
    MlpParams::init(widths, Activation::Tanh, seed).unwrap()
}

#[test]
fn jets_match_finite_differences_1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let p = random_net(&[2, 20, 20, 1], seed);
        for _ in 0..3 {
            let t = rng.random_range(-1.0..1.0);
            let x = rng.random_range(-1.0..1.0);
            let jet = p.jet(&[t, x], &JetRequest::space_time_1d(4)).unwrap();
            let fx = |xx: f64| p.forward(&[t, xx]).unwrap()[0];
            let ft = |tt: f64| p.forward(&[tt, x]).unwrap()[0];
            assert!(rel_err(jet.value[0], p.forward(&[t, x]).unwrap()[0], 1e-300) < 1e-14);
            assert!(rel_err(jet.d_t[0], fd_derivative(ft, t, 1, 1e-2), 1e-3) < 1e-4);
            for k in 1..=4 {
                let (h, tol) = if k <= 2 { (1e-2, 1e-4) } else { (2e-2, 1e-3) };
                let fd = fd_derivative(fx, x, k, h);
                let e = rel_err(jet.spatial[k - 1][0], fd, 1e-3);
                assert!(e < tol, "order {k}: jet {} fd {fd}", jet.spatial[k - 1][0]);
            }
        }
    }
}

#[test]
fn jets_match_finite_differences_2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let req = JetRequest {
        time: true,
        x_order: 2,
        y_order: 2,
        mixed_xy: true,
    };
    for seed in 0..5 {
        let p = random_net(&[3, 16, 16, 1], seed);
        let (t, x, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let jet = p.jet(&[t, x, y], &req).unwrap();
        let f = |a: f64, b: f64| p.forward(&[t, a, b]).unwrap()[0];
        let fy = |b: f64| f(x, b);
        assert!(rel_err(jet.spatial_y[0][0], fd_derivative(fy, y, 1, 1e-2), 1e-3) < 1e-4);
        assert!(rel_err(jet.spatial_y[1][0], fd_derivative(fy, y, 2, 1e-2), 1e-3) < 1e-4);
        // mixed: d/dy of a central x-difference
        let dx = |b: f64| fd_derivative(|a| f(a, b), x, 1, 1e-2);
        let mixed = fd_derivative(dx, y, 1, 1e-2);
        assert!(rel_err(jet.mixed_xy.as_ref().unwrap()[0], mixed, 1e-3) < 1e-4);
    }
}

#[test]
fn scaled_tangents_apply_chain_rule() {
    // u(s(x)) with s = 0.25 x: d^k/dx^k = 0.25^k u^(k)
    let p = random_net(&[2, 8, 1], 4);
    let plain = p.jet(&[0.1, 0.3], &JetRequest::space_time_1d(4)).unwrap();
    let scaled = p
        .jet_with_tangents(&[0.1, 0.3], &JetRequest::space_time_1d(4), &InputTangents::diagonal(&[2.0, 0.25]))
        .unwrap();
    assert!(rel_err(scaled.d_t[0], 2.0 * plain.d_t[0], 1e-12) < 1e-13);
    for k in 1..=4 {
        let want = 0.25f64.powi(k as i32) * plain.spatial[k - 1][0];
        assert!(rel_err(scaled.spatial[k - 1][0], want, 1e-12) < 1e-12);
    }
}

/// Loss over a batch using every jet slot through fourth order.
fn derivative_loss(out: &JetBatch, targets: &[f64]) -> (f64, JetBatch) {
    let rows = out.rows();
    let g = |c| out.get(c).unwrap();
    let (u, ut, u1, u2, u3, u4) = (
        g(Component::Value),
        g(Component::T),
        g(Component::X1),
        g(Component::X2),
        g(Component::X3),
        g(Component::X4),
    );
    let mut adj = JetBatch::zeros(rows, 1, &JetRequest::space_time_1d(4));
    let mut loss = 0.0;
    for r in 0..rows {
        let res = ut[[r, 0]] + u[[r, 0]] * u1[[r, 0]] - 0.1 * u2[[r, 0]] + 0.5 * u3[[r, 0]] + 0.2 * u4[[r, 0]];
        let d = u[[r, 0]] - targets[r];
        loss += res * res + d * d;
        let gr = 2.0 * res;
        adj.get_mut(Component::Value).unwrap()[[r, 0]] = gr * u1[[r, 0]] + 2.0 * d;
        adj.get_mut(Component::T).unwrap()[[r, 0]] = gr;
        adj.get_mut(Component::X1).unwrap()[[r, 0]] = gr * u[[r, 0]];
        adj.get_mut(Component::X2).unwrap()[[r, 0]] = -0.1 * gr;
        adj.get_mut(Component::X3).unwrap()[[r, 0]] = 0.5 * gr;
        adj.get_mut(Component::X4).unwrap()[[r, 0]] = 0.2 * gr;
    }
    (loss, adj)
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pts = Array2::from_shape_fn((10, 2), |_| rng.random_range(-1.0..1.0));
    let targets: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let req = JetRequest::space_time_1d(4);
    let seed_jet = |p: &Array2<f64>| JetBatch::seed(p.clone(), &req, &InputTangents::identity(2));
    let p = random_net(&[2, 6, 5, 1], 2);
    let grad = param_gradient(&p, seed_jet(&pts), |out| derivative_loss(out, &targets)).unwrap();
    let base = p.flatten();
    let eval = |theta: &[f64]| {
        let mut q = p.clone();
        q.set_flat(theta).unwrap();
        let tape = q.tape(seed_jet(&pts)).unwrap();
        derivative_loss(tape.output(), &targets).0
    };
    let gmax = grad.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-4;
    for i in 0..base.len() {
        let at = |s: f64| {
            let mut th = base.clone();
            th[i] += s * h;
            eval(&th)
        };
        let fd = (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h);
        let e = rel_err(grad.values[i], fd, 1e-4 * gmax);
        assert!(e < 1e-5, "param {i}: {} vs {fd}", grad.values[i]);
    }
}

#[test]
fn zero_network_has_zero_gradient_for_squared_output() {
    let p = MlpParams::zeros(&[2, 4, 1], Activation::Tanh).unwrap();
    let pts = arr2(&[[0.3, -0.2]]);
    let grad = param_gradient(&p, JetBatch::values(pts), |out| {
        let u = out.value()[[0, 0]];
        let mut adj = JetBatch::zeros(1, 1, &JetRequest::value_only());
        adj.get_mut(Component::Value).unwrap()[[0, 0]] = 2.0 * u;
        (u * u, adj)
    })
    .unwrap();
    assert_eq!(grad.loss, 0.0);
    assert!(grad.values.iter().all(|&g| g == 0.0));
}

#[test]
fn squared_slope_gradient_of_single_neuron() {
    // L = (u_x(0))^2, u = w2 tanh(a x + b): dL/da = 2 tanh'(0) (tanh'(0) + 0) = 2,
    // dL/db = 2 tanh'(0) tanh''(0) = 0, dL/dw2 = 2 tanh'(0)^2 = 2.
    let p = single_neuron();
    let req = JetRequest::space_time_1d(1);
    let input = JetBatch::seed(arr2(&[[0.0, 0.0]]), &req, &InputTangents::identity(2));
    let grad = param_gradient(&p, input, |out| {
        let ux = out.get(Component::X1).unwrap()[[0, 0]];
        let mut adj = JetBatch::zeros(1, 1, &req);
        adj.get_mut(Component::X1).unwrap()[[0, 0]] = 2.0 * ux;
        (ux * ux, adj)
    })
    .unwrap();
    // layout: W1 = [w_t, a], b1, W2 = [w2], b2
    assert_eq!(grad.values, vec![0.0, 2.0, 0.0, 2.0, 0.0]);
}

#[test]
fn non_finite_forward_reports_point() {
    let mut p = random_net(&[2, 3, 1], 0);
    let mut flat = p.flatten();
    let n = flat.len();
    flat[n - 1] = f64::NAN;
    p.set_flat(&flat).unwrap();
    let err = param_gradient(&p, JetBatch::values(arr2(&[[0.5, 0.25]])), |out| {
        (out.value()[[0, 0]], JetBatch::zeros(1, 1, &JetRequest::value_only()))
    })
    .unwrap_err();
    match err {
        NnError::NonFinite { row, point } => {
            assert_eq!(row, 0);
            assert_eq!(point, vec![0.5, 0.25]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let p = MlpParams::init(&[2, 9, 3, 2], Activation::Sin, 42).unwrap();
    let mut buf = Vec::new();
    write_mlp(&p, &mut buf).unwrap();
    let q = read_mlp(buf.as_slice()).unwrap();
    assert_eq!(q.widths(), p.widths());
    assert_eq!(q.activation(), Activation::Sin);
    assert_eq!(q.seed(), 42);
    let (a, b) = (p.flatten(), q.flatten());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #[test]
    fn init_is_deterministic(seed in any::<u64>(), hidden in 1usize..12) {
        let a = MlpParams::init(&[2, hidden, 1], Activation::Tanh, seed).unwrap();
        let b = MlpParams::init(&[2, hidden, 1], Activation::Tanh, seed).unwrap();
        prop_assert!(a.flatten().iter().zip(b.flatten().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn checkpoint_preserves_arbitrary_floats(vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 9)) {
        let mut p = MlpParams::zeros(&[2, 2, 1], Activation::Tanh).unwrap();
        p.set_flat(&vals).unwrap();
        let mut buf = Vec::new();
        write_mlp(&p, &mut buf).unwrap();
        let q = read_mlp(buf.as_slice()).unwrap();
        prop_assert!(p.flatten().iter().zip(q.flatten().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn jet_value_agrees_with_forward(seed in 0u64..1000, t in -2.0f64..2.0, x in -2.0f64..2.0) {
        let p = MlpParams::init(&[2, 7, 7, 1], Activation::Tanh, seed).unwrap();
        let jet = p.jet(&[t, x], &JetRequest::space_time_1d(4)).unwrap();
        let f = p.forward(&[t, x]).unwrap()[0];
        prop_assert!((jet.value[0] - f).abs() <= 1e-14 * f.abs().max(1e-12));
    }
}
