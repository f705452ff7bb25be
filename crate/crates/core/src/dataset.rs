//! Scattered observations drawn from a snapshot grid.
//!
//! On disk a dataset is a CSV file with header `t,x[,y],<channels>...,<aux>...`
//! and a JSON sidecar (`<stem>.meta.json`) holding the sampling metadata.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{fmt_f64, SnapshotGrid};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("requested {requested} points but the region holds {available}")]
    TooMany { requested: usize, available: usize },
    #[error("sampling region {0} contains no grid nodes")]
    EmptyRegion(String),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Closed interval `[lo, hi]`; `None` bounds are unlimited.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Window {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Window {
    pub const ALL: Window = Window { lo: None, hi: None };

    pub fn new(lo: f64, hi: f64) -> Self {
        Window {
            lo: Some(lo),
            hi: Some(hi),
        }
    }

    pub fn up_to(hi: f64) -> Self {
        Window { lo: None, hi: Some(hi) }
    }

    /// Membership with a relative slack of 1e-9 so that `0.05 * 134` is inside `[0, 6.7]`.
    pub fn contains(&self, v: f64) -> bool {
        let slack = |b: f64| 1e-9 * b.abs().max(1.0);
        self.lo.is_none_or(|lo| v >= lo - slack(lo)) && self.hi.is_none_or(|hi| v <= hi + slack(hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Region {
    #[serde(default)]
    pub t: Window,
    #[serde(default)]
    pub x: Window,
    #[serde(default)]
    pub y: Window,
}

impl Region {
    pub const ALL: Region = Region {
        t: Window::ALL,
        x: Window::ALL,
        y: Window::ALL,
    };

    pub fn times(t: Window) -> Self {
        Region { t, ..Region::ALL }
    }

    /// Grid nodes inside the region as `(ti, xi, yi)`, in grid order.
    pub fn nodes(&self, grid: &SnapshotGrid) -> Vec<(usize, usize, usize)> {
        let ys = grid.ys();
        let (nt, nx, ny) = grid.shape();
        let mut out = Vec::new();
        for ti in (0..nt).filter(|&i| self.t.contains(grid.times()[i])) {
            for xi in (0..nx).filter(|&i| self.x.contains(grid.xs()[i])) {
                for yi in 0..ny {
                    if ys.is_none_or(|ys| self.y.contains(ys[yi])) {
                        out.push((ti, xi, yi));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    #[serde(default)]
    pub region: Region,
    pub n: usize,
    /// Noise standard deviation as a fraction of the regional per-channel std.
    #[serde(default)]
    pub noise_pct: f64,
    pub seed: u64,
    /// Grid channels passed through as observed inputs instead of modeled fields.
    #[serde(default)]
    pub aux_channels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub region: Region,
    pub noise_pct: f64,
    pub seed: u64,
    pub source_grid: String,
    /// Population std of each modeled channel over the region, before noise.
    pub regional_std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Option<Vec<f64>>,
    pub channels: Vec<String>,
    /// `(n, channels)`
    pub values: Array2<f64>,
    pub aux_channels: Vec<String>,
    /// `(n, aux_channels)`
    pub aux: Array2<f64>,
    pub meta: DatasetMeta,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    dims: usize,
    n: usize,
    channels: Vec<String>,
    aux_channels: Vec<String>,
    #[serde(flatten)]
    meta: DatasetMeta,
}

const FORMAT: &str = "dhpm-dataset";

impl Dataset {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn spatial_dims(&self) -> usize {
        if self.ys.is_some() {
            2
        } else {
            1
        }
    }

    /// `(t, x[, y])` of point `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        let mut p = vec![self.times[i], self.xs[i]];
        if let Some(ys) = &self.ys {
            p.push(ys[i]);
        }
        p
    }

    pub fn aux_row(&self, i: usize) -> Vec<f64> {
        self.aux.row(i).to_vec()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SamplingError> {
        let fmt_err = |e: csv::Error| SamplingError::Format(e.to_string());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "x".to_string()];
        if self.ys.is_some() {
            header.push("y".into());
        }
        header.extend(self.channels.iter().cloned());
        header.extend(self.aux_channels.iter().cloned());
        out.write_record(&header).map_err(fmt_err)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.point(i).into_iter().map(fmt_f64).collect();
            row.extend(self.values.row(i).iter().map(|&v| fmt_f64(v)));
            row.extend(self.aux.row(i).iter().map(|&v| fmt_f64(v)));
            out.write_record(&row).map_err(fmt_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
        csv_path.with_file_name(format!("{stem}.meta.json"))
    }

    pub fn save(&self, csv_path: &Path) -> Result<(), SamplingError> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(csv_path)?))?;
        let side = Sidecar {
            format: FORMAT.into(),
            version: 1,
            dims: self.spatial_dims(),
            n: self.len(),
            channels: self.channels.clone(),
            aux_channels: self.aux_channels.clone(),
            meta: self.meta.clone(),
        };
        let text = serde_json::to_string_pretty(&side).map_err(|e| SamplingError::Format(e.to_string()))?;
        std::fs::write(Self::sidecar_path(csv_path), text + "\n")?;
        Ok(())
    }

    pub fn load(csv_path: &Path) -> Result<Self, SamplingError> {
        let text = std::fs::read_to_string(Self::sidecar_path(csv_path))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| SamplingError::Format(e.to_string()))?;
        if side.format != FORMAT {
            return Err(SamplingError::Format(format!("unexpected format {}", side.format)));
        }
        let f = std::fs::File::open(csv_path)?;
        let ds = Self::read_csv(std::io::BufReader::new(f), side.dims, &side.channels, &side.aux_channels, side.meta)?;
        if ds.len() != side.n {
            return Err(SamplingError::Format(format!(
                "sidecar promises {} points, csv holds {}",
                side.n,
                ds.len()
            )));
        }
        Ok(ds)
    }

    fn read_csv<R: Read>(
        r: R,
        dims: usize,
        channels: &[String],
        aux_channels: &[String],
        meta: DatasetMeta,
    ) -> Result<Self, SamplingError> {
        let fmt_err = |e: csv::Error| SamplingError::Format(e.to_string());
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers().map_err(fmt_err)?.iter().map(str::to_string).collect();
        let mut want = vec!["t".to_string(), "x".to_string()];
        if dims == 2 {
            want.push("y".into());
        }
        want.extend(channels.iter().cloned());
        want.extend(aux_channels.iter().cloned());
        if header != want {
            return Err(SamplingError::Format(format!("header {header:?}, expected {want:?}")));
        }
        let (nc, na) = (channels.len(), aux_channels.len());
        let (mut times, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
        let (mut vals, mut aux) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(fmt_err)?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| SamplingError::Format(format!("record {i}: {e}")))?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(SamplingError::Format(format!("record {i}: non-finite value")));
            }
            times.push(row[0]);
            xs.push(row[1]);
            if dims == 2 {
                ys.push(row[2]);
            }
            vals.extend_from_slice(&row[1 + dims..1 + dims + nc]);
            aux.extend_from_slice(&row[1 + dims + nc..]);
        }
        let n = times.len();
        Ok(Dataset {
            times,
            xs,
            ys: (dims == 2).then_some(ys),
            channels: channels.to_vec(),
            values: Array2::from_shape_vec((n, nc), vals).expect("row width checked"),
            aux_channels: aux_channels.to_vec(),
            aux: Array2::from_shape_vec((n, na), aux).expect("row width checked"),
            meta,
        })
    }
}

/// Draws `req.n` distinct grid nodes uniformly from `req.region` and adds
/// Gaussian noise with std `noise_pct × regional std` to each modeled channel.
pub fn subsample(grid: &SnapshotGrid, req: &SampleRequest) -> Result<Dataset, SamplingError> {
    if !(req.noise_pct >= 0.0) || !req.noise_pct.is_finite() {
        return Err(SamplingError::Invalid(format!("noise_pct {}", req.noise_pct)));
    }
    if req.n == 0 {
        return Err(SamplingError::Invalid("n must be positive".into()));
    }
    let mut aux_idx = Vec::new();
    for name in &req.aux_channels {
        aux_idx.push(
            grid.channel_index(name)
                .map_err(|_| SamplingError::UnknownChannel(name.clone()))?,
        );
    }
    let model_idx: Vec<usize> = (0..grid.channels().len()).filter(|i| !aux_idx.contains(i)).collect();
    if model_idx.is_empty() {
        return Err(SamplingError::Invalid("every channel is auxiliary".into()));
    }

    let nodes = req.region.nodes(grid);
    if nodes.is_empty() {
        return Err(SamplingError::EmptyRegion(format!("{:?}", req.region)));
    }
    if req.n > nodes.len() {
        return Err(SamplingError::TooMany {
            requested: req.n,
            available: nodes.len(),
        });
    }

    let regional_std: Vec<f64> = model_idx
        .iter()
        .map(|&c| {
            let a = grid.channel(c);
            let m = nodes.len() as f64;
            let mean = nodes.iter().map(|&n| a[n]).sum::<f64>() / m;
            (nodes.iter().map(|&n| (a[n] - mean).powi(2)).sum::<f64>() / m).sqrt()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let picks = sample(&mut rng, nodes.len(), req.n).into_vec();
    let normals: Vec<Normal<f64>> = regional_std
        .iter()
        .map(|s| Normal::new(0.0, req.noise_pct * s).expect("finite non-negative std"))
        .collect();

    let ys_axis = grid.ys();
    let (mut times, mut xs, mut ys) = (Vec::with_capacity(req.n), Vec::with_capacity(req.n), Vec::new());
    let mut values = Array2::zeros((req.n, model_idx.len()));
    let mut aux = Array2::zeros((req.n, aux_idx.len()));
    for (i, &p) in picks.iter().enumerate() {
        let node = nodes[p];
        times.push(grid.times()[node.0]);
        xs.push(grid.xs()[node.1]);
        if let Some(ya) = ys_axis {
            ys.push(ya[node.2]);
        }
        for (k, &c) in model_idx.iter().enumerate() {
            let clean = grid.channel(c)[node];
            values[[i, k]] = if req.noise_pct > 0.0 {
                clean + normals[k].sample(&mut rng)
            } else {
                clean
            };
        }
        for (k, &c) in aux_idx.iter().enumerate() {
            aux[[i, k]] = grid.channel(c)[node];
        }
    }

    Ok(Dataset {
        times,
        xs,
        ys: ys_axis.map(|_| ys),
        channels: model_idx.iter().map(|&c| grid.channels()[c].clone()).collect(),
        values,
        aux_channels: req.aux_channels.clone(),
        aux,
        meta: DatasetMeta {
            region: req.region,
            noise_pct: req.noise_pct,
            seed: req.seed,
            source_grid: grid.content_id(),
            regional_std,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn ramp_grid(nt: usize, nx: usize) -> SnapshotGrid {
        let times: Vec<f64> = (0..nt).map(|i| i as f64 * 0.05).collect();
        let xs: Vec<f64> = (0..nx).map(|i| -1.0 + 2.0 * i as f64 / nx as f64).collect();
        let u = Array2::from_shape_fn((nt, nx), |(i, j)| times[i] + (3.0 * xs[j]).sin());
        SnapshotGrid::new_1d(times, xs, vec!["u".into()], vec![u]).unwrap()
    }

    fn req(n: usize, noise_pct: f64, seed: u64) -> SampleRequest {
        SampleRequest {
            region: Region::ALL,
            n,
            noise_pct,
            seed,
            aux_channels: vec![],
        }
    }

    #[test]
    fn clean_samples_are_grid_values() {
        let g = ramp_grid(20, 16);
        let ds = subsample(&g, &req(100, 0.0, 1)).unwrap();
        for i in 0..ds.len() {
            let ti = g.times().iter().position(|&t| t == ds.times[i]).unwrap();
            let xi = g.xs().iter().position(|&x| x == ds.xs[i]).unwrap();
            assert_eq!(ds.values[[i, 0]], g.channel(0)[[ti, xi, 0]]);
        }
    }

    #[test]
    fn samples_are_distinct_and_inside_region() {
        let g = ramp_grid(201, 32);
        let mut r = req(500, 0.0, 3);
        r.region = Region::times(Window::new(0.0, 6.7));
        let ds = subsample(&g, &r).unwrap();
        let mut seen: Vec<(u64, u64)> = (0..ds.len()).map(|i| (ds.times[i].to_bits(), ds.xs[i].to_bits())).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 500);
        assert!(ds.times.iter().all(|&t| t <= 6.7 + 1e-9));
        // 0.05 * 134 rounds above 6.7 but is still a node of the window
        assert_eq!(Region::times(Window::new(0.0, 6.7)).nodes(&g).len(), 135 * 32);
    }

    #[test]
    fn too_many_points_is_an_error() {
        let g = ramp_grid(4, 4);
        assert!(matches!(
            subsample(&g, &req(17, 0.0, 0)),
            Err(SamplingError::TooMany { requested: 17, available: 16 })
        ));
        let mut r = req(1, 0.0, 0);
        r.region = Region::times(Window::new(5.0, 6.0));
        assert!(matches!(subsample(&g, &r), Err(SamplingError::EmptyRegion(_))));
    }

    #[test]
    fn aux_channels_are_noise_free() {
        let g = ramp_grid(10, 8);
        let w = g.channel(0).mapv(|v| 2.0 * v);
        let g = g.with_channel("w", w).unwrap();
        let mut r = req(40, 0.5, 9);
        r.aux_channels = vec!["u".into()];
        let ds = subsample(&g, &r).unwrap();
        assert_eq!(ds.channels, vec!["w".to_string()]);
        for i in 0..ds.len() {
            let ti = g.times().iter().position(|&t| t == ds.times[i]).unwrap();
            let xi = g.xs().iter().position(|&x| x == ds.xs[i]).unwrap();
            assert_eq!(ds.aux[[i, 0]], g.channel(0)[[ti, xi, 0]]);
        }
    }

    #[test]
    fn csv_and_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let nt = 3;
        let vals = Array3::from_shape_fn((nt, 4, 2), |(a, b, c)| (a * 8 + b * 2 + c) as f64 * 0.1 + 1e-7);
        let g = SnapshotGrid::new(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 1.0, 2.0, 3.0],
            Some(vec![-1.0, 1.0]),
            vec!["w".into(), "u".into()],
            vec![vals.clone(), vals.mapv(|v| -v)],
        )
        .unwrap();
        let mut r = req(10, 0.02, 5);
        r.aux_channels = vec!["u".into()];
        let ds = subsample(&g, &r).unwrap();
        let path = dir.path().join("train.csv");
        ds.save(&path).unwrap();
        assert!(dir.path().join("train.meta.json").exists());
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
    }
}
