use dhpm_core::grid::SnapshotGrid;
use dhpm_core::metrics::{export_plot_grid, relative_l2, ChannelView, PlotFormat, TimeRegion};
use ndarray::Array3;
use proptest::prelude::*;

fn two_channel(nt: usize, nx: usize, u: &[f64], v: &[f64]) -> SnapshotGrid {
    let times = (0..nt).map(|i| 0.25 * i as f64).collect();
    let xs = (0..nx).map(|i| -1.0 + 0.1 * i as f64).collect();
    let a = Array3::from_shape_vec((nt, nx, 1), u.to_vec()).unwrap();
    let b = Array3::from_shape_vec((nt, nx, 1), v.to_vec()).unwrap();
    SnapshotGrid::new(times, xs, None, vec!["u".into(), "v".into()], vec![a, b]).unwrap()
}

fn pair() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(nt, nx)| {
        let n = nt * nx;
        let vals = || proptest::collection::vec(-10.0f64..10.0, n);
        (Just(nt), Just(nx), vals(), vals(), vals(), vals())
    })
}

/// Straightforward reimplementation over explicit loops.
fn oracle(p: &SnapshotGrid, q: &SnapshotGrid, keep: impl Fn(f64) -> bool) -> f64 {
    let (nt, nx, _) = q.shape();
    let (mut num, mut den) = (0.0, 0.0);
    for c in 0..q.channels().len() {
        for i in 0..nt {
            if !keep(q.times()[i]) {
                continue;
            }
            for j in 0..nx {
                let d = p.channel(c)[[i, j, 0]] - q.channel(c)[[i, j, 0]];
                num += d * d;
                den += q.channel(c)[[i, j, 0]].powi(2);
            }
        }
    }
    (num / den).sqrt()
}

fn norm_sq(g: &SnapshotGrid) -> f64 {
    (0..g.channels().len()).map(|c| g.channel(c).iter().map(|v| v * v).sum::<f64>()).sum()
}

proptest! {
    #[test]
    fn matches_loop_oracle((nt, nx, pu, pv, qu, qv) in pair()) {
        let (p, q) = (two_channel(nt, nx, &pu, &pv), two_channel(nt, nx, &qu, &qv));
        prop_assume!(norm_sq(&q) > 1e-6);
        let e = relative_l2(&p, &q, TimeRegion::All, &ChannelView::All).unwrap();
        let o = oracle(&p, &q, |_| true);
        prop_assert!((e - o).abs() <= 1e-12 * o.max(1e-300), "{e} vs {o}");
    }

    #[test]
    fn scale_covariant((nt, nx, pu, pv, qu, qv) in pair(), alpha in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3]) {
        let (p, q) = (two_channel(nt, nx, &pu, &pv), two_channel(nt, nx, &qu, &qv));
        prop_assume!(norm_sq(&q) > 1e-6);
        let scale = |v: &[f64]| v.iter().map(|x| alpha * x).collect::<Vec<_>>();
        let (ps, qs) = (two_channel(nt, nx, &scale(&pu), &scale(&pv)), two_channel(nt, nx, &scale(&qu), &scale(&qv)));
        let a = relative_l2(&p, &q, TimeRegion::All, &ChannelView::All).unwrap();
        let b = relative_l2(&ps, &qs, TimeRegion::All, &ChannelView::All).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a.max(1e-300) * 4.0 + 1e-300, "{a} vs {b}");
    }

    #[test]
    fn triangle_bound((nt, nx, pu, pv, qu, qv) in pair(), ru in proptest::collection::vec(-10.0f64..10.0, 36), rv in proptest::collection::vec(-10.0f64..10.0, 36)) {
        let n = nt * nx;
        let (p, q, r) = (two_channel(nt, nx, &pu, &pv), two_channel(nt, nx, &qu, &qv), two_channel(nt, nx, &ru[..n], &rv[..n]));
        let qn = norm_sq(&q).sqrt();
        prop_assume!(qn > 1e-3);
        let e = relative_l2(&p, &q, TimeRegion::All, &ChannelView::All).unwrap();
        let d = |a: &SnapshotGrid, b: &SnapshotGrid| {
            (0..2).map(|c| (a.channel(c) - b.channel(c)).iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
        };
        prop_assert!(e <= (d(&p, &r) + d(&r, &q)) / qn * (1.0 + 1e-12));
    }

    #[test]
    fn split_partitions_the_time_axis(nt in 1usize..40, split in -1.0f64..12.0) {
        let times: Vec<f64> = (0..nt).map(|i| 0.25 * i as f64).collect();
        let train = TimeRegion::Until(split).indices(&times);
        let test = TimeRegion::After(split).indices(&times);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, TimeRegion::All.indices(&times));
        prop_assert!(train.iter().all(|i| !test.contains(i)));
    }

    #[test]
    fn split_errors_recombine((nt, nx, pu, pv, qu, qv) in pair(), split in 0.0f64..1.5) {
        let (p, q) = (two_channel(nt, nx, &pu, &pv), two_channel(nt, nx, &qu, &qv));
        prop_assume!(norm_sq(&q) > 1e-6);
        let o_train = oracle(&p, &q, |t| t <= split);
        let o_test = oracle(&p, &q, |t| t > split);
        if o_train.is_finite() {
            let e = relative_l2(&p, &q, TimeRegion::Until(split), &ChannelView::All).unwrap();
            prop_assert!((e - o_train).abs() <= 1e-12 * o_train.max(1e-300));
        }
        if o_test.is_finite() {
            let e = relative_l2(&p, &q, TimeRegion::After(split), &ChannelView::All).unwrap();
            prop_assert!((e - o_test).abs() <= 1e-12 * o_test.max(1e-300));
        }
    }
}

#[test]
fn csv_export_has_one_row_per_node_and_magnitude_column() {
    let g = two_channel(2, 2, &[3.0, 1.0, 0.0, -2.0], &[4.0, 1.0, 0.5, 0.0]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plot.csv");
    export_plot_grid(&g, &path, PlotFormat::Csv, Some(("u", "v"))).unwrap();
    let mut r = csv::Reader::from_path(&path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["t", "x", "u", "v", "abs"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let f = |k: usize| row[k].parse::<f64>().unwrap();
        assert_eq!(f(4), (f(2) * f(2) + f(3) * f(3)).sqrt());
    }
}

#[test]
fn exports_round_trip() {
    let u: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
    let v: Vec<f64> = (0..12).map(|i| (i as f64 * 1.1).cos() * 1e-7).collect();
    let g = two_channel(3, 4, &u, &v);
    let dir = tempfile::tempdir().unwrap();

    let bin = dir.path().join("g.bin");
    export_plot_grid(&g, &bin, PlotFormat::Binary, None).unwrap();
    assert_eq!(SnapshotGrid::load(&bin).unwrap(), g);

    let csv_path = dir.path().join("g.csv");
    export_plot_grid(&g, &csv_path, PlotFormat::Csv, None).unwrap();
    let back = SnapshotGrid::read_csv(std::fs::File::open(&csv_path).unwrap()).unwrap();
    for c in 0..2 {
        for (a, b) in back.channel(c).iter().zip(g.channel(c)) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
    }
}

#[test]
fn unwritable_path_is_an_io_error() {
    let g = two_channel(1, 1, &[1.0], &[1.0]);
    let err = export_plot_grid(&g, std::path::Path::new("/nonexistent/dir/g.csv"), PlotFormat::Csv, None);
    assert!(matches!(err, Err(dhpm_core::metrics::MetricsError::Io(_))));
}
