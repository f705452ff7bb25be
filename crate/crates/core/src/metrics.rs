//! Relative L2 errors over time regions, error reports and plot exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{fmt_f64, GridError, SnapshotGrid};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("grids are not aligned: {0}")]
    Alignment(String),
    #[error("truth has zero norm over the region")]
    Degenerate,
    #[error("report: {0}")]
    Format(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Set of snapshot times an error is computed over. `Until(s)` and `After(s)`
/// partition the time axis: `t <= s` and `t > s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "split", rename_all = "snake_case")]
pub enum TimeRegion {
    All,
    Until(f64),
    After(f64),
}

impl TimeRegion {
    pub fn contains(&self, t: f64) -> bool {
        match *self {
            TimeRegion::All => true,
            TimeRegion::Until(s) => t <= s,
            TimeRegion::After(s) => t > s,
        }
    }

    /// Indices of the times inside the region.
    pub fn indices(&self, times: &[f64]) -> Vec<usize> {
        (0..times.len()).filter(|&i| self.contains(times[i])).collect()
    }
}

/// Which values the error is taken over.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelView {
    /// Every channel of the truth grid, flattened together.
    All,
    Named { channel: String },
    /// `sqrt(a² + b²)` of two channels.
    Magnitude { re: String, im: String },
}

impl ChannelView {
    pub fn named(c: &str) -> Self {
        ChannelView::Named { channel: c.into() }
    }

    pub fn magnitude(re: &str, im: &str) -> Self {
        ChannelView::Magnitude {
            re: re.into(),
            im: im.into(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ChannelView::All => "all".into(),
            ChannelView::Named { channel } => channel.clone(),
            ChannelView::Magnitude { re, im } => format!("|{re},{im}|"),
        }
    }

    fn values(&self, g: &SnapshotGrid, channels: &[String]) -> Result<Vec<Array3<f64>>, GridError> {
        Ok(match self {
            ChannelView::All => channels
                .iter()
                .map(|c| g.channel_by_name(c).cloned())
                .collect::<Result<_, _>>()?,
            ChannelView::Named { channel } => vec![g.channel_by_name(channel)?.clone()],
            ChannelView::Magnitude { re, im } => {
                let (a, b) = (g.channel_by_name(re)?, g.channel_by_name(im)?);
                vec![ndarray::Zip::from(a).and(b).map_collect(|u, v| (u * u + v * v).sqrt())]
            }
        })
    }
}

fn same_axis(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-12 * p.abs().max(q.abs()).max(1.0))
}

fn check_aligned(pred: &SnapshotGrid, truth: &SnapshotGrid) -> Result<(), MetricsError> {
    let axes = [
        ("t", same_axis(pred.times(), truth.times())),
        ("x", same_axis(pred.xs(), truth.xs())),
        (
            "y",
            match (pred.ys(), truth.ys()) {
                (None, None) => true,
                (Some(a), Some(b)) => same_axis(a, b),
                _ => false,
            },
        ),
    ];
    match axes.iter().find(|(_, ok)| !ok) {
        Some((name, _)) => Err(MetricsError::Alignment(format!("{name} axes differ"))),
        None => Ok(()),
    }
}

/// `‖pred − truth‖₂ / ‖truth‖₂` over every node of the region, all viewed values flattened.
pub fn relative_l2(
    pred: &SnapshotGrid,
    truth: &SnapshotGrid,
    region: TimeRegion,
    view: &ChannelView,
) -> Result<f64, MetricsError> {
    check_aligned(pred, truth)?;
    let channels = truth.channels().to_vec();
    let (p, q) = (view.values(pred, &channels)?, view.values(truth, &channels)?);
    let rows = region.indices(truth.times());
    let (mut num, mut den) = (0.0, 0.0);
    for (p, q) in p.iter().zip(&q) {
        for &ti in &rows {
            let (pr, qr) = (p.index_axis(ndarray::Axis(0), ti), q.index_axis(ndarray::Axis(0), ti));
            ndarray::Zip::from(&pr).and(&qr).for_each(|a, b| {
                num += (a - b) * (a - b);
                den += b * b;
            });
        }
    }
    if !(den > 0.0) {
        return Err(MetricsError::Degenerate);
    }
    let e = (num / den).sqrt();
    if !e.is_finite() {
        return Err(MetricsError::Alignment("prediction has non-finite values".into()));
    }
    Ok(e)
}

/// Errors of a prediction over the full window and its train / test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub view: String,
    pub relative_l2_full: f64,
    /// Equal to the full error when there is no split.
    pub relative_l2_train_region: f64,
    /// `None` when there is no split or no snapshot after it.
    pub relative_l2_test_region: Option<f64>,
    pub split: Option<f64>,
    pub t_range: [f64; 2],
    pub prediction: String,
    pub truth: String,
}

impl ErrorReport {
    pub fn evaluate(
        pred: &SnapshotGrid,
        truth: &SnapshotGrid,
        split: Option<f64>,
        view: &ChannelView,
    ) -> Result<Self, MetricsError> {
        let full = relative_l2(pred, truth, TimeRegion::All, view)?;
        let (train, test) = match split {
            None => (full, None),
            Some(s) => {
                let test = if TimeRegion::After(s).indices(truth.times()).is_empty() {
                    None
                } else {
                    Some(relative_l2(pred, truth, TimeRegion::After(s), view)?)
                };
                (relative_l2(pred, truth, TimeRegion::Until(s), view)?, test)
            }
        };
        let ts = truth.times();
        Ok(ErrorReport {
            view: view.label(),
            relative_l2_full: full,
            relative_l2_train_region: train,
            relative_l2_test_region: test,
            split,
            t_range: [ts[0], ts[ts.len() - 1]],
            prediction: pred.content_id(),
            truth: truth.content_id(),
        })
    }

    /// One `key=value` per line, keys in a fixed order.
    pub fn to_kv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), fmt_f64);
        let mut s = String::new();
        let _ = writeln!(s, "view={}", self.view);
        let _ = writeln!(s, "relative_l2_full={}", fmt_f64(self.relative_l2_full));
        let _ = writeln!(s, "relative_l2_train_region={}", fmt_f64(self.relative_l2_train_region));
        let _ = writeln!(s, "relative_l2_test_region={}", opt(self.relative_l2_test_region));
        let _ = writeln!(s, "split={}", opt(self.split));
        let _ = writeln!(s, "t_start={}", fmt_f64(self.t_range[0]));
        let _ = writeln!(s, "t_end={}", fmt_f64(self.t_range[1]));
        let _ = writeln!(s, "prediction={}", self.prediction);
        let _ = writeln!(s, "truth={}", self.truth);
        s
    }

    pub fn from_kv(text: &str) -> Result<Self, MetricsError> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once('=').ok_or_else(|| MetricsError::Format(format!("line {l:?}"))))
            .collect::<Result<_, _>>()?;
        let get = |k: &str| map.get(k).copied().ok_or_else(|| MetricsError::Format(format!("missing {k}")));
        let num = |k: &str| -> Result<f64, MetricsError> {
            get(k)?.parse().map_err(|_| MetricsError::Format(format!("bad number for {k}")))
        };
        let opt = |k: &str| -> Result<Option<f64>, MetricsError> {
            match get(k)? {
                "none" => Ok(None),
                _ => num(k).map(Some),
            }
        };
        Ok(ErrorReport {
            view: get("view")?.into(),
            relative_l2_full: num("relative_l2_full")?,
            relative_l2_train_region: num("relative_l2_train_region")?,
            relative_l2_test_region: opt("relative_l2_test_region")?,
            split: opt("split")?,
            t_range: [num("t_start")?, num("t_end")?],
            prediction: get("prediction")?.into(),
            truth: get("truth")?.into(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_kv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlotFormat {
    #[default]
    Csv,
    Binary,
}

/// Writes a grid for external plotting. `magnitude` adds an `abs` column (CSV only).
pub fn export_plot_grid(
    grid: &SnapshotGrid,
    path: &Path,
    format: PlotFormat,
    magnitude: Option<(&str, &str)>,
) -> Result<(), MetricsError> {
    let file = BufWriter::new(std::fs::File::create(path)?);
    match format {
        PlotFormat::Csv => grid.write_csv(file, magnitude)?,
        PlotFormat::Binary => grid.write_binary(file)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<f64>, nt: usize, nx: usize) -> SnapshotGrid {
        let times = (0..nt).map(|i| i as f64).collect();
        let xs = (0..nx).map(|i| i as f64 * 0.5).collect();
        let a = Array3::from_shape_vec((nt, nx, 1), values).unwrap();
        SnapshotGrid::new(times, xs, None, vec!["u".into()], vec![a]).unwrap()
    }

    #[test]
    fn identity_and_scaling() {
        let q = grid(vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0], 3, 2);
        let p = grid(q.channel(0).iter().map(|v| 1.1 * v).collect(), 3, 2);
        assert_eq!(relative_l2(&q, &q, TimeRegion::All, &ChannelView::All).unwrap(), 0.0);
        let e = relative_l2(&p, &q, TimeRegion::All, &ChannelView::All).unwrap();
        assert!((e - 0.1).abs() < 1e-14, "{e}");
    }

    #[test]
    fn misaligned_and_degenerate() {
        let q = grid(vec![0.0, 0.0, 1.0, 1.0], 2, 2);
        let other = grid(vec![0.0; 6], 3, 2);
        assert!(matches!(
            relative_l2(&other, &q, TimeRegion::All, &ChannelView::All),
            Err(MetricsError::Alignment(_))
        ));
        assert!(matches!(
            relative_l2(&q, &q, TimeRegion::Until(0.5), &ChannelView::All),
            Err(MetricsError::Degenerate)
        ));
        assert!(matches!(
            relative_l2(&q, &q, TimeRegion::All, &ChannelView::named("w")),
            Err(MetricsError::Grid(GridError::UnknownChannel(_)))
        ));
    }

    #[test]
    fn magnitude_view() {
        let two = |u: Vec<f64>, v: Vec<f64>| {
            let a = Array3::from_shape_vec((1, 2, 1), u).unwrap();
            let b = Array3::from_shape_vec((1, 2, 1), v).unwrap();
            SnapshotGrid::new(vec![0.0], vec![0.0, 1.0], None, vec!["u".into(), "v".into()], vec![a, b]).unwrap()
        };
        let q = two(vec![3.0, 0.0], vec![4.0, 1.0]);
        // same moduli, different phases
        let p = two(vec![4.0, 1.0], vec![3.0, 0.0]);
        let view = ChannelView::magnitude("u", "v");
        assert_eq!(relative_l2(&p, &q, TimeRegion::All, &view).unwrap(), 0.0);
        assert!(relative_l2(&p, &q, TimeRegion::All, &ChannelView::All).unwrap() > 0.1);
    }

    #[test]
    fn report_round_trip() {
        let q = grid((1..=8).map(f64::from).collect(), 4, 2);
        let p = grid((1..=8).map(|v| f64::from(v) * 1.01 + 0.1).collect(), 4, 2);
        let r = ErrorReport::evaluate(&p, &q, Some(1.5), &ChannelView::All).unwrap();
        assert!(r.relative_l2_test_region.is_some());
        assert_eq!(ErrorReport::from_kv(&r.to_kv()).unwrap(), r);
        let none = ErrorReport::evaluate(&p, &q, None, &ChannelView::All).unwrap();
        assert_eq!(none.relative_l2_train_region, none.relative_l2_full);
        assert_eq!(ErrorReport::from_kv(&none.to_kv()).unwrap(), none);
    }
}
