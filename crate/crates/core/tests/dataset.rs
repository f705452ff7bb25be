use dhpm_core::dataset::{subsample, Region, SampleRequest, Window};
use dhpm_core::grid::SnapshotGrid;
use ndarray::Array2;
use proptest::prelude::*;

fn wave_grid(nt: usize, nx: usize) -> SnapshotGrid {
    let times: Vec<f64> = (0..nt).map(|i| i as f64 * 0.05).collect();
    let xs: Vec<f64> = (0..nx).map(|i| -8.0 + 16.0 * i as f64 / nx as f64).collect();
    let u = Array2::from_shape_fn((nt, nx), |(i, j)| (-0.1 * times[i]).exp() * (0.4 * xs[j]).sin() + 0.3);
    SnapshotGrid::new_1d(times, xs, vec!["u".into()], vec![u]).unwrap()
}

#[test]
fn noise_std_matches_requested_fraction() {
    let g = wave_grid(400, 512);
    let region = Region::times(Window::new(0.0, 19.0));
    let nodes = region.nodes(&g);
    let n = 100_000;
    let ds = subsample(
        &g,
        &SampleRequest {
            region,
            n,
            noise_pct: 0.05,
            seed: 11,
            aux_channels: vec![],
        },
    )
    .unwrap();

    // independent regional std over the node list
    let vals: Vec<f64> = nodes.iter().map(|&(t, x, _)| g.channel(0)[[t, x, 0]]).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
    assert!((ds.meta.regional_std[0] - std).abs() <= 1e-12 * std);

    let dt = g.times()[1] - g.times()[0];
    let x0 = g.xs()[0];
    let dx = g.xs()[1] - g.xs()[0];
    let resid: Vec<f64> = (0..n)
        .map(|i| {
            let ti = (ds.times[i] / dt).round() as usize;
            let xi = ((ds.xs[i] - x0) / dx).round() as usize;
            ds.values[[i, 0]] - g.channel(0)[[ti, xi, 0]]
        })
        .collect();
    let m = resid.iter().sum::<f64>() / n as f64;
    let s = (resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let target = 0.05 * std;
    assert!((s / target - 1.0).abs() < 0.02, "noise std {s} vs {target}");
    assert!(m.abs() < 5.0 * target / (n as f64).sqrt(), "noise mean {m}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn subsample_is_deterministic(seed in any::<u64>(), n in 1usize..300, pct in 0.0f64..0.1) {
        let g = wave_grid(30, 16);
        let req = SampleRequest { region: Region::ALL, n, noise_pct: pct, seed, aux_channels: vec![] };
        let a = subsample(&g, &req).unwrap();
        let b = subsample(&g, &req).unwrap();
        prop_assert_eq!(a.times.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.times.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
