//! Physics-informed solution of a learned (black-box) PDE `u_t = N(...)`.
//!
//! A fresh network per channel is fitted to the initial profile, the boundary
//! conditions and the residual `u_t - N(features)` at interior collocation
//! points. Each term is a mean of squares; the three are summed with unit weights.
//! The solver only sees the initial snapshot, boundary data and (for aux-driven
//! dynamics) the auxiliary fields.

use std::cell::Cell;
use std::rc::Rc;
use std::time::Instant;

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dhpm::{
    add_column, assemble_features, scatter_feature_adjoint, u_tapes, DhpmError, Dynamics, FeatureConfig, Normalizer,
};
use crate::grid::{GridError, SnapshotGrid};
use crate::nn::{Activation, Component, JetBatch, JetRequest, JetTape, MlpParams};
use crate::optim::{Adam, AdamConfig, Lbfgs, LbfgsConfig, Objective};

#[derive(Debug, Error)]
pub enum PinnError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0} lies outside the solve domain")]
    Domain(String),
    #[error("solve diverged at iteration {iteration}; best checkpoint kept")]
    Diverged {
        iteration: usize,
        checkpoint: Box<PinnSolution>,
    },
    #[error(transparent)]
    Dhpm(#[from] DhpmError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl From<crate::nn::NnError> for PinnError {
    fn from(e: crate::nn::NnError) -> Self {
        PinnError::Dhpm(e.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    /// Match the value and the first `order - 1` x-derivatives at the two ends.
    Periodic { order: usize },
    /// Values on the box faces from boundary data.
    Dirichlet,
}

impl Default for Boundary {
    fn default() -> Self {
        Boundary::Periodic { order: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collocation {
    pub interior: usize,
    pub initial: usize,
    pub boundary: usize,
}

impl Default for Collocation {
    fn default() -> Self {
        Collocation {
            interior: 20_000,
            initial: 500,
            boundary: 500,
        }
    }
}

/// Space-time box `[t0, t1] × [x0, x1] (× [y0, y1])`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDomain {
    pub t: [f64; 2],
    pub x: [f64; 2],
    #[serde(default)]
    pub y: Option<[f64; 2]>,
}

impl SolveDomain {
    pub fn dims(&self) -> usize {
        if self.y.is_some() {
            2
        } else {
            1
        }
    }

    fn normalizer(&self) -> Normalizer {
        let mut lo = vec![self.t[0], self.x[0]];
        let mut hi = vec![self.t[1], self.x[1]];
        if let Some(y) = self.y {
            lo.push(y[0]);
            hi.push(y[1]);
        }
        Normalizer::new(lo, hi)
    }

    fn contains(iv: [f64; 2], v: f64) -> bool {
        let slack = 1e-9 * (iv[1] - iv[0]).abs().max(1.0);
        v >= iv[0] - slack && v <= iv[1] + slack
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveSpec {
    pub domain: SolveDomain,
    pub boundary: Boundary,
    pub collocation: Collocation,
    /// Hidden widths of each solution network.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub adam_iters: usize,
    pub lbfgs_iters: usize,
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for SolveSpec {
    fn default() -> Self {
        SolveSpec {
            domain: SolveDomain {
                t: [0.0, 1.0],
                x: [-1.0, 1.0],
                y: None,
            },
            boundary: Boundary::default(),
            collocation: Collocation::default(),
            hidden: vec![50, 50, 50, 50],
            activation: Activation::Tanh,
            adam_iters: 2000,
            lbfgs_iters: 2000,
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            seed: 0,
            log_every: 10,
        }
    }
}

/// Everything the solver is allowed to read about the true solution.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveData {
    /// Single-snapshot grid with the modeled channels at the initial time.
    pub initial: SnapshotGrid,
    /// Face nodes `(t, x[, y])` with the modeled channel values there (Dirichlet only).
    pub faces: Option<(Array2<f64>, Array2<f64>)>,
    /// Auxiliary fields over the domain, channels named as in the feature config.
    pub aux: Option<SnapshotGrid>,
}

impl SolveData {
    /// The initial snapshot of `grid` (modeled channels only).
    pub fn initial_from(grid: &SnapshotGrid, channels: &[String]) -> Result<Self, PinnError> {
        Ok(SolveData {
            initial: snapshot(grid, channels, 0)?,
            faces: None,
            aux: None,
        })
    }

    /// Copies the nodes of `grid` lying on the spatial faces of `domain` as Dirichlet data.
    pub fn with_faces(mut self, grid: &SnapshotGrid, channels: &[String], domain: &SolveDomain) -> Result<Self, PinnError> {
        let idx = channels
            .iter()
            .map(|c| grid.channel_index(c))
            .collect::<Result<Vec<_>, _>>()?;
        let inside = |iv: [f64; 2], axis: &[f64]| -> Vec<usize> {
            (0..axis.len()).filter(|&i| SolveDomain::contains(iv, axis[i])).collect()
        };
        let ts = inside(domain.t, grid.times());
        let xs = inside(domain.x, grid.xs());
        let ys: Vec<usize> = match (domain.y, grid.ys()) {
            (Some(iv), Some(ya)) => inside(iv, ya),
            _ => vec![0],
        };
        if ts.is_empty() || xs.is_empty() || ys.is_empty() {
            return Err(PinnError::Config("grid does not cover the solve domain".into()));
        }
        let (x_lo, x_hi) = (xs[0], *xs.last().unwrap());
        let (y_lo, y_hi) = (ys[0], *ys.last().unwrap());
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        for &ti in &ts {
            for &xi in &xs {
                for &yi in &ys {
                    let on_face = xi == x_lo || xi == x_hi || (grid.ys().is_some() && (yi == y_lo || yi == y_hi));
                    if !on_face {
                        continue;
                    }
                    pts.push(grid.times()[ti]);
                    pts.push(grid.xs()[xi]);
                    if let Some(ya) = grid.ys() {
                        pts.push(ya[yi]);
                    }
                    for &c in &idx {
                        vals.push(grid.channel(c)[[ti, xi, yi]]);
                    }
                }
            }
        }
        let dim = 1 + grid.spatial_dims();
        let n = pts.len() / dim;
        self.faces = Some((
            Array2::from_shape_vec((n, dim), pts).unwrap(),
            Array2::from_shape_vec((n, idx.len()), vals).unwrap(),
        ));
        Ok(self)
    }

    pub fn with_aux(mut self, grid: &SnapshotGrid, aux_channels: &[String]) -> Result<Self, PinnError> {
        let names: Vec<&str> = aux_channels.iter().map(String::as_str).collect();
        self.aux = Some(grid.select(&names)?);
        Ok(self)
    }
}

fn snapshot(grid: &SnapshotGrid, channels: &[String], ti: usize) -> Result<SnapshotGrid, PinnError> {
    let values = channels
        .iter()
        .map(|c| {
            let a = grid.channel_by_name(c)?;
            Ok(a.slice(s![ti..ti + 1, .., ..]).to_owned())
        })
        .collect::<Result<Vec<Array3<f64>>, GridError>>()?;
    Ok(SnapshotGrid::new(
        vec![grid.times()[ti]],
        grid.xs().to_vec(),
        grid.ys().map(<[f64]>::to_vec),
        channels.to_vec(),
        values,
    )?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveLogEntry {
    pub iteration: usize,
    pub initial: f64,
    pub boundary: f64,
    pub residual: f64,
    pub loss: f64,
    pub best: f64,
    pub wall_seconds: f64,
}

/// Trained solution networks, evaluable anywhere in the solve domain.
#[derive(Clone, Debug, PartialEq)]
pub struct PinnSolution {
    pub nets: Vec<MlpParams>,
    pub channels: Vec<String>,
    pub domain: SolveDomain,
    pub normalizer: Normalizer,
    pub log: Vec<SolveLogEntry>,
}

impl PinnSolution {
    /// Values at physical points, shape `(n, channels)`.
    pub fn evaluate(&self, points: &Array2<f64>) -> Result<Array2<f64>, PinnError> {
        let inputs = self.normalizer.apply(points);
        let mut out = Array2::zeros((points.nrows(), self.nets.len()));
        for (c, net) in self.nets.iter().enumerate() {
            out.column_mut(c).assign(&net.forward_batch(&inputs)?.column(0));
        }
        Ok(out)
    }

    /// Dense grid of network values on the given axes. `magnitude` adds a channel
    /// `abs = sqrt(a² + b²)` of two named channels.
    pub fn evaluate_on_grid(
        &self,
        times: &[f64],
        xs: &[f64],
        ys: Option<&[f64]>,
        magnitude: Option<(&str, &str)>,
    ) -> Result<SnapshotGrid, PinnError> {
        let d = &self.domain;
        let check = |iv: [f64; 2], axis: &[f64], name: &str| -> Result<(), PinnError> {
            match axis.iter().find(|&&v| !SolveDomain::contains(iv, v)) {
                Some(v) => Err(PinnError::Domain(format!("{name} = {v}"))),
                None => Ok(()),
            }
        };
        check(d.t, times, "t")?;
        check(d.x, xs, "x")?;
        match (d.y, ys) {
            (Some(iv), Some(ys)) => check(iv, ys, "y")?,
            (None, None) => {}
            _ => return Err(PinnError::Domain("spatial dimension of the axes".into())),
        }
        let ny = ys.map_or(1, <[f64]>::len);
        let (nt, nx) = (times.len(), xs.len());
        let dim = 1 + d.dims();
        let mut pts = Array2::zeros((nt * nx * ny, dim));
        for ti in 0..nt {
            for xi in 0..nx {
                for yi in 0..ny {
                    let r = (ti * nx + xi) * ny + yi;
                    pts[[r, 0]] = times[ti];
                    pts[[r, 1]] = xs[xi];
                    if let Some(ys) = ys {
                        pts[[r, 2]] = ys[yi];
                    }
                }
            }
        }
        let vals = self.evaluate(&pts)?;
        if let Some(r) = (0..vals.nrows()).find(|&r| vals.row(r).iter().any(|v| !v.is_finite())) {
            return Err(PinnError::Dhpm(DhpmError::Numeric {
                point: pts.row(r).to_vec(),
            }));
        }
        let values: Vec<Array3<f64>> = (0..self.nets.len())
            .map(|c| vals.column(c).to_owned().into_shape_with_order((nt, nx, ny)).unwrap())
            .collect();
        let mut grid = SnapshotGrid::new(
            times.to_vec(),
            xs.to_vec(),
            ys.map(<[f64]>::to_vec),
            self.channels.clone(),
            values,
        )?;
        if let Some((a, b)) = magnitude {
            let (a, b) = (grid.channel_by_name(a)?.clone(), grid.channel_by_name(b)?.clone());
            let abs = ndarray::Zip::from(&a).and(&b).map_collect(|u, v| (u * u + v * v).sqrt());
            grid = grid.with_channel("abs", abs)?;
        }
        Ok(grid)
    }

    pub fn write_log(&self, path: &std::path::Path) -> Result<(), PinnError> {
        let err = |e: csv::Error| PinnError::Dhpm(DhpmError::Format(e.to_string()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for e in &self.log {
            w.serialize(e).map_err(err)?;
        }
        w.flush().map_err(|e| PinnError::Dhpm(DhpmError::Io(e)))?;
        Ok(())
    }
}

/// Collocation sets in physical coordinates.
struct Points {
    interior: Array2<f64>,
    interior_aux: Array2<f64>,
    initial: Array2<f64>,
    initial_values: Array2<f64>,
    /// Periodic: rows `[0, m)` sit on the left end, rows `[m, 2m)` on the right.
    boundary: Array2<f64>,
    boundary_values: Array2<f64>,
}

fn sample_points(spec: &SolveSpec, cfg: &FeatureConfig, data: &SolveData, rng: &mut ChaCha8Rng) -> Result<Points, PinnError> {
    let d = &spec.domain;
    let dim = 1 + d.dims();
    let col = &spec.collocation;
    let c_count = cfg.channels.len();

    let (interior, interior_aux) = match &data.aux {
        None => {
            let mut p = Array2::zeros((col.interior, dim));
            for mut row in p.rows_mut() {
                row[0] = rng.random_range(d.t[0]..=d.t[1]);
                row[1] = rng.random_range(d.x[0]..=d.x[1]);
                if let Some(y) = d.y {
                    row[2] = rng.random_range(y[0]..=y[1]);
                }
            }
            (p, Array2::zeros((col.interior, 0)))
        }
        Some(aux) => {
            // aux fields are known on their grid nodes only
            let nodes: Vec<(usize, usize, usize)> = {
                let (nt, nx, ny) = aux.shape();
                let mut v = Vec::new();
                for ti in (0..nt).filter(|&i| SolveDomain::contains(d.t, aux.times()[i])) {
                    for xi in (0..nx).filter(|&i| SolveDomain::contains(d.x, aux.xs()[i])) {
                        for yi in 0..ny {
                            if d.y.is_none_or(|iv| aux.ys().is_some_and(|ys| SolveDomain::contains(iv, ys[yi]))) {
                                v.push((ti, xi, yi));
                            }
                        }
                    }
                }
                v
            };
            if nodes.is_empty() {
                return Err(PinnError::Config("aux grid has no nodes in the solve domain".into()));
            }
            let picks = rand::seq::index::sample(rng, nodes.len(), col.interior.min(nodes.len())).into_vec();
            let mut p = Array2::zeros((picks.len(), dim));
            let mut a = Array2::zeros((picks.len(), aux.channels().len()));
            for (r, &k) in picks.iter().enumerate() {
                let (ti, xi, yi) = nodes[k];
                p[[r, 0]] = aux.times()[ti];
                p[[r, 1]] = aux.xs()[xi];
                if let Some(ys) = aux.ys() {
                    p[[r, 2]] = ys[yi];
                }
                for ch in 0..aux.channels().len() {
                    a[[r, ch]] = aux.channel(ch)[[ti, xi, yi]];
                }
            }
            (p, a)
        }
    };

    let ini = &data.initial;
    if ini.times().len() != 1 || ini.channels() != cfg.channels.as_slice() {
        return Err(PinnError::Config(format!(
            "initial data must be one snapshot of {:?}",
            cfg.channels
        )));
    }
    let (_, nx, ny) = ini.shape();
    let mut ic_nodes: Vec<(usize, usize)> = Vec::new();
    for xi in (0..nx).filter(|&i| SolveDomain::contains(d.x, ini.xs()[i])) {
        for yi in 0..ny {
            if d.y.is_none_or(|iv| ini.ys().is_some_and(|ys| SolveDomain::contains(iv, ys[yi]))) {
                ic_nodes.push((xi, yi));
            }
        }
    }
    if ic_nodes.is_empty() {
        return Err(PinnError::Config("initial snapshot has no nodes in the domain".into()));
    }
    let chosen: Vec<usize> = if col.initial >= ic_nodes.len() {
        (0..ic_nodes.len()).collect()
    } else {
        let mut v = rand::seq::index::sample(rng, ic_nodes.len(), col.initial).into_vec();
        v.sort_unstable();
        v
    };
    let mut initial = Array2::zeros((chosen.len(), dim));
    let mut initial_values = Array2::zeros((chosen.len(), c_count));
    for (r, &k) in chosen.iter().enumerate() {
        let (xi, yi) = ic_nodes[k];
        initial[[r, 0]] = d.t[0];
        initial[[r, 1]] = ini.xs()[xi];
        if let Some(ys) = ini.ys() {
            initial[[r, 2]] = ys[yi];
        }
        for c in 0..c_count {
            initial_values[[r, c]] = ini.channel(c)[[0, xi, yi]];
        }
    }

    let (boundary, boundary_values) = match spec.boundary {
        Boundary::Periodic { .. } => {
            let m = col.boundary;
            let mut p = Array2::zeros((2 * m, dim));
            for j in 0..m {
                let t = rng.random_range(d.t[0]..=d.t[1]);
                p[[j, 0]] = t;
                p[[j, 1]] = d.x[0];
                p[[m + j, 0]] = t;
                p[[m + j, 1]] = d.x[1];
            }
            (p, Array2::zeros((0, c_count)))
        }
        Boundary::Dirichlet => {
            let (pts, vals) = data
                .faces
                .as_ref()
                .ok_or_else(|| PinnError::Config("Dirichlet boundary needs face data".into()))?;
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(PinnError::Config("boundary data must be finite".into()));
            }
            let picks: Vec<usize> = if col.boundary >= pts.nrows() {
                (0..pts.nrows()).collect()
            } else {
                let mut v = rand::seq::index::sample(rng, pts.nrows(), col.boundary).into_vec();
                v.sort_unstable();
                v
            };
            (pts.select(Axis(0), &picks), vals.select(Axis(0), &picks))
        }
    };

    Ok(Points {
        interior,
        interior_aux,
        initial,
        initial_values,
        boundary,
        boundary_values,
    })
}

#[derive(Clone, Copy, Debug, Default)]
struct Terms {
    initial: f64,
    boundary: f64,
    residual: f64,
}

impl Terms {
    fn total(&self) -> f64 {
        self.initial + self.boundary + self.residual
    }
}

struct SolveObjective<'a> {
    nets: Vec<MlpParams>,
    cfg: &'a FeatureConfig,
    dynamics: &'a [&'a dyn Dynamics],
    normalizer: Normalizer,
    boundary: Boundary,
    pts: Points,
    inputs_interior: Array2<f64>,
    inputs_initial: Array2<f64>,
    inputs_boundary: Array2<f64>,
    last: Rc<Cell<Terms>>,
}

fn mean_sq(a: ndarray::ArrayView1<'_, f64>) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64
    }
}

impl SolveObjective<'_> {
    fn set(&mut self, x: &[f64]) -> Result<(), PinnError> {
        let mut off = 0;
        for net in &mut self.nets {
            let k = net.n_params();
            net.set_flat(&x[off..off + k])?;
            off += k;
        }
        Ok(())
    }

    fn loss_grad(&mut self, x: &[f64], grad: &mut [f64]) -> Result<Terms, PinnError> {
        self.set(x)?;
        let c_count = self.nets.len();
        let tangents = self.normalizer.tangents();
        let mut terms = Terms::default();
        let mut grads: Vec<Vec<f64>> = self.nets.iter().map(|n| vec![0.0; n.n_params()]).collect();
        let accumulate = |grads: &mut Vec<Vec<f64>>, c: usize, g: Vec<f64>| {
            grads[c].iter_mut().zip(g).for_each(|(a, b)| *a += b);
        };

        // residual at interior points
        let n_int = self.pts.interior.nrows();
        let tapes = u_tapes(&self.nets, &self.normalizer, self.cfg, &self.pts.interior, &self.inputs_interior)?;
        let jets: Vec<&JetBatch> = tapes.iter().map(JetTape::output).collect();
        let feats = assemble_features(self.cfg, &self.pts.interior, &self.pts.interior_aux, &jets);
        let mut d_feats = Array2::<f64>::zeros(feats.dim());
        let mut adjoints: Vec<JetBatch> = (0..c_count).map(|_| JetBatch::empty(n_int, 1)).collect();
        let scale = 2.0 / n_int.max(1) as f64;
        for (c, dynamics) in self.dynamics.iter().enumerate() {
            let e = dynamics.evaluate(&feats)?;
            let f: Array1<f64> = &jets[c].get(Component::T).unwrap().column(0) - &e.values;
            terms.residual += mean_sq(f.view());
            let (df, _) = e.pullback(&f.mapv(|v| -scale * v));
            d_feats += &df;
            add_column(&mut adjoints[c], Component::T, f.mapv(|v| scale * v).view());
        }
        scatter_feature_adjoint(self.cfg, &d_feats, &mut adjoints);
        for (c, tape) in tapes.iter().enumerate() {
            let (g, _) = tape.backward(&self.nets[c], &adjoints[c], false);
            accumulate(&mut grads, c, g);
        }

        // initial profile
        let n_ic = self.pts.initial.nrows();
        for c in 0..c_count {
            let tape = self.nets[c].tape(JetBatch::values(self.inputs_initial.clone()))?;
            let r = &tape.output().value().column(0) - &self.pts.initial_values.column(c);
            terms.initial += mean_sq(r.view());
            let mut adj = JetBatch::empty(n_ic, 1);
            adj.set(Component::Value, r.mapv(|v| 2.0 / n_ic as f64 * v).insert_axis(Axis(1)));
            let (g, _) = tape.backward(&self.nets[c], &adj, false);
            accumulate(&mut grads, c, g);
        }

        // boundary
        match self.boundary {
            Boundary::Periodic { order } => {
                let rows = self.pts.boundary.nrows();
                let m = rows / 2;
                let request = JetRequest {
                    time: false,
                    x_order: order - 1,
                    y_order: 0,
                    mixed_xy: false,
                };
                for c in 0..c_count {
                    let tape = self.nets[c].tape(JetBatch::seed(self.inputs_boundary.clone(), &request, &tangents))?;
                    let mut adj = JetBatch::empty(rows, 1);
                    for k in 0..order {
                        let comp = if k == 0 { Component::Value } else { Component::x(k).unwrap() };
                        let v = tape.output().get(comp).unwrap().column(0).to_owned();
                        let diff = &v.slice(s![..m]) - &v.slice(s![m..]);
                        terms.boundary += mean_sq(diff.view());
                        let g = diff.mapv(|d| 2.0 / m as f64 * d);
                        let mut col = Array1::zeros(rows);
                        col.slice_mut(s![..m]).assign(&g);
                        col.slice_mut(s![m..]).assign(&g.mapv(|v| -v));
                        add_column(&mut adj, comp, col.view());
                    }
                    let (g, _) = tape.backward(&self.nets[c], &adj, false);
                    accumulate(&mut grads, c, g);
                }
            }
            Boundary::Dirichlet => {
                let rows = self.pts.boundary.nrows();
                for c in 0..c_count {
                    let tape = self.nets[c].tape(JetBatch::values(self.inputs_boundary.clone()))?;
                    let r = &tape.output().value().column(0) - &self.pts.boundary_values.column(c);
                    terms.boundary += mean_sq(r.view());
                    let mut adj = JetBatch::empty(rows, 1);
                    adj.set(Component::Value, r.mapv(|v| 2.0 / rows as f64 * v).insert_axis(Axis(1)));
                    let (g, _) = tape.backward(&self.nets[c], &adj, false);
                    accumulate(&mut grads, c, g);
                }
            }
        }

        if !terms.total().is_finite() {
            return Err(PinnError::Dhpm(DhpmError::Numeric {
                point: self.pts.interior.row(0).to_vec(),
            }));
        }
        let mut off = 0;
        for g in grads {
            grad[off..off + g.len()].copy_from_slice(&g);
            off += g.len();
        }
        self.last.set(terms);
        Ok(terms)
    }
}

impl Objective for SolveObjective<'_> {
    type Error = PinnError;

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, PinnError> {
        match self.loss_grad(x, grad) {
            Ok(t) => Ok(t.total()),
            Err(PinnError::Dhpm(DhpmError::Numeric { .. })) => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                Ok(f64::INFINITY)
            }
            Err(e) => Err(e),
        }
    }
}

fn validate(spec: &SolveSpec, cfg: &FeatureConfig, dynamics: &[&dyn Dynamics], data: &SolveData) -> Result<(), PinnError> {
    cfg.validate()?;
    let bad = |m: String| Err(PinnError::Config(m));
    if cfg.dims != spec.domain.dims() {
        return bad(format!("feature layout is {}D, domain is {}D", cfg.dims, spec.domain.dims()));
    }
    if dynamics.len() != cfg.channels.len() {
        return bad(format!("{} dynamics for {} channels", dynamics.len(), cfg.channels.len()));
    }
    if let Some(d) = dynamics.iter().find(|d| d.input_dim() != cfg.len()) {
        return bad(format!("dynamics take {} inputs, layout has {} features", d.input_dim(), cfg.len()));
    }
    let c = &spec.collocation;
    if c.interior == 0 || c.initial == 0 || c.boundary == 0 {
        return bad("collocation counts must be positive".into());
    }
    let d = &spec.domain;
    let bad_iv = |iv: [f64; 2]| !(iv[1] > iv[0]) || !iv[0].is_finite() || !iv[1].is_finite();
    if bad_iv(d.t) || bad_iv(d.x) || d.y.is_some_and(bad_iv) {
        return bad(format!("empty solve domain {d:?}"));
    }
    match spec.boundary {
        Boundary::Periodic { order } => {
            if !(1..=JetRequest::MAX_X_ORDER).contains(&order) {
                return bad(format!("periodic order must be in 1..=4, got {order}"));
            }
            if d.y.is_some() {
                return bad("periodic boundaries are one-dimensional only".into());
            }
        }
        Boundary::Dirichlet => {
            if data.faces.is_none() {
                return bad("Dirichlet boundary without boundary data".into());
            }
        }
    }
    match (&data.aux, cfg.aux_channels.is_empty()) {
        (None, false) => return bad(format!("dynamics read aux channels {:?} but none were given", cfg.aux_channels)),
        (Some(a), _) if a.channels() != cfg.aux_channels.as_slice() => {
            return bad(format!("aux grid carries {:?}, layout wants {:?}", a.channels(), cfg.aux_channels))
        }
        _ => {}
    }
    if spec.hidden.contains(&0) {
        return bad("hidden widths must be positive".into());
    }
    Ok(())
}

/// Fits solution networks to the learned dynamics under the given initial and boundary data.
pub fn solve_learned(
    spec: &SolveSpec,
    cfg: &FeatureConfig,
    dynamics: &[&dyn Dynamics],
    data: &SolveData,
) -> Result<PinnSolution, PinnError> {
    validate(spec, cfg, dynamics, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pts = sample_points(spec, cfg, data, &mut rng)?;
    let normalizer = spec.domain.normalizer();
    let in_dim = 1 + spec.domain.dims();
    let mut widths = vec![in_dim];
    widths.extend_from_slice(&spec.hidden);
    widths.push(1);
    let nets = (0..cfg.channels.len())
        .map(|c| MlpParams::init(&widths, spec.activation, spec.seed + 7919 * (c as u64 + 1)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut obj = SolveObjective {
        inputs_interior: normalizer.apply(&pts.interior),
        inputs_initial: normalizer.apply(&pts.initial),
        inputs_boundary: normalizer.apply(&pts.boundary),
        nets,
        cfg,
        dynamics,
        normalizer: normalizer.clone(),
        boundary: spec.boundary,
        pts,
        last: Rc::new(Cell::new(Terms::default())),
    };
    let start = Instant::now();
    let mut log: Vec<SolveLogEntry> = Vec::new();
    let entry = |it: usize, t: Terms, best: f64, start: &Instant| SolveLogEntry {
        iteration: it,
        initial: t.initial,
        boundary: t.boundary,
        residual: t.residual,
        loss: t.total(),
        best,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let solution = |nets: Vec<MlpParams>, log: Vec<SolveLogEntry>| PinnSolution {
        nets,
        channels: cfg.channels.clone(),
        domain: spec.domain,
        normalizer: normalizer.clone(),
        log,
    };

    let mut x: Vec<f64> = obj.nets.iter().flat_map(MlpParams::flatten).collect();
    let mut grad = vec![0.0; x.len()];
    let first = obj.loss_grad(&x, &mut grad)?;
    let mut best = first.total();
    let mut best_x = x.clone();
    log.push(entry(0, first, best, &start));
    let every = spec.log_every.max(1);
    let mut iteration = 0;

    let diverged = |iteration: usize, obj: &mut SolveObjective, best_x: &[f64], log: Vec<SolveLogEntry>| {
        let _ = obj.set(best_x);
        PinnError::Diverged {
            iteration,
            checkpoint: Box::new(solution(obj.nets.clone(), log)),
        }
    };

    if spec.adam_iters > 0 {
        let mut adam = Adam::new(spec.adam, x.len());
        for k in 0..spec.adam_iters {
            if k > 0 {
                let t = match obj.loss_grad(&x, &mut grad) {
                    Ok(t) => t,
                    Err(PinnError::Dhpm(DhpmError::Numeric { .. })) => {
                        return Err(diverged(iteration, &mut obj, &best_x, log));
                    }
                    Err(e) => return Err(e),
                };
                if t.total() < best {
                    best = t.total();
                    best_x.copy_from_slice(&x);
                }
                if k % every == 0 {
                    log.push(entry(iteration, t, best, &start));
                }
            }
            adam.update(&mut x, &grad, spec.adam.lr_at(k, spec.adam_iters));
            iteration += 1;
        }
        match obj.loss_grad(&x, &mut grad) {
            Ok(t) => {
                if t.total() < best {
                    best = t.total();
                    best_x.copy_from_slice(&x);
                }
                log.push(entry(iteration, t, best, &start));
            }
            Err(PinnError::Dhpm(DhpmError::Numeric { .. })) => {}
            Err(e) => return Err(e),
        }
        x.copy_from_slice(&best_x);
    }

    if spec.lbfgs_iters > 0 {
        let mut lbfgs = Lbfgs::new(spec.lbfgs);
        let last = obj.last.clone();
        let base = iteration;
        let (f, _) = lbfgs.minimize(&mut obj, &mut x, spec.lbfgs_iters, |k, f, _| {
            best = best.min(f);
            iteration = base + k + 1;
            if (k + 1) % every == 0 || k + 1 == spec.lbfgs_iters {
                log.push(SolveLogEntry {
                    loss: f,
                    ..entry(iteration, last.get(), best, &start)
                });
            }
        })?;
        if f.is_finite() && f <= best {
            best_x.copy_from_slice(&x);
        }
    }
    obj.set(&best_x)?;
    Ok(solution(obj.nets, log))
}
