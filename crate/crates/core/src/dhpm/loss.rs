//! Residual and sum-of-squared-errors loss with parameter gradients.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{DhpmError, DhpmModel, Dynamics, FeatureConfig, FeatureSource, Normalizer};
use crate::dataset::Dataset;
use crate::nn::{Component, JetBatch, JetTape, MlpParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub data: f64,
    pub residual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            data: 1.0,
            residual: 1.0,
        }
    }
}

/// Unweighted data and residual sums and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub residual: f64,
    pub total: f64,
}

/// Feature matrix from physical points, aux values and the u-network output jets.
pub(crate) fn assemble_features(
    cfg: &FeatureConfig,
    raw: &Array2<f64>,
    aux: &Array2<f64>,
    jets: &[&JetBatch],
) -> Array2<f64> {
    let sources = cfg.sources();
    let mut f = Array2::zeros((raw.nrows(), sources.len()));
    for (j, src) in sources.into_iter().enumerate() {
        let mut col = f.column_mut(j);
        match src {
            FeatureSource::Time => col.assign(&raw.column(0)),
            FeatureSource::Space(a) => col.assign(&raw.column(1 + a)),
            FeatureSource::Aux(k) => col.assign(&aux.column(k)),
            FeatureSource::Field { channel, component } => {
                let jet = jets[channel].get(component).expect("jet request covers the menu");
                col.assign(&jet.column(0));
            }
        }
    }
    f
}

/// Adds the field columns of a feature cotangent onto the per-channel output adjoints.
pub(crate) fn scatter_feature_adjoint(cfg: &FeatureConfig, d_features: &Array2<f64>, adjoints: &mut [JetBatch]) {
    for (j, src) in cfg.sources().into_iter().enumerate() {
        if let FeatureSource::Field { channel, component } = src {
            add_column(&mut adjoints[channel], component, d_features.column(j));
        }
    }
}

pub(crate) fn add_column(b: &mut JetBatch, c: Component, v: ndarray::ArrayView1<'_, f64>) {
    if b.get(c).is_none() {
        b.set(c, Array2::zeros((b.rows(), 1)));
    }
    let col = b.get_mut(c).unwrap();
    col.column_mut(0).zip_mut_with(&v, |a, &b| *a += b);
}

/// Observation points of a dataset prepared for a model.
pub(crate) struct Batch {
    pub raw: Array2<f64>,
    pub inputs: Array2<f64>,
    pub obs: Array2<f64>,
    pub aux: Array2<f64>,
}

impl Batch {
    pub fn new(model: &DhpmModel, ds: &Dataset) -> Result<Self, DhpmError> {
        let cfg = &model.features;
        if ds.is_empty() {
            return Err(DhpmError::Config("dataset is empty".into()));
        }
        if ds.channels != cfg.channels || ds.aux_channels != cfg.aux_channels || ds.spatial_dims() != cfg.dims {
            return Err(DhpmError::Config(format!(
                "dataset channels {:?} / aux {:?} ({}D) do not match the feature config {:?} / {:?} ({}D)",
                ds.channels,
                ds.aux_channels,
                ds.spatial_dims(),
                cfg.channels,
                cfg.aux_channels,
                cfg.dims
            )));
        }
        let dim = 1 + cfg.dims;
        let raw = Array2::from_shape_fn((ds.len(), dim), |(i, k)| ds.point(i)[k]);
        Ok(Batch {
            inputs: model.normalizer.apply(&raw),
            raw,
            obs: ds.values.clone(),
            aux: ds.aux.clone(),
        })
    }
}

pub(crate) fn u_tapes(
    u_nets: &[MlpParams],
    normalizer: &Normalizer,
    cfg: &FeatureConfig,
    raw: &Array2<f64>,
    inputs: &Array2<f64>,
) -> Result<Vec<JetTape>, DhpmError> {
    let request = cfg.jet_request();
    let tangents = normalizer.tangents();
    u_nets
        .iter()
        .map(|net| {
            let tape = net.tape(JetBatch::seed(inputs.clone(), &request, &tangents))?;
            if let Some(row) = tape.first_non_finite() {
                return Err(DhpmError::Numeric {
                    point: raw.row(row).to_vec(),
                });
            }
            Ok(tape)
        })
        .collect()
}

/// Residual `f_c = ∂u_c/∂t - N_c(features)` at physical points, shape `(n, channels)`.
pub fn residual_with(
    u_nets: &[MlpParams],
    dynamics: &[&dyn Dynamics],
    cfg: &FeatureConfig,
    normalizer: &Normalizer,
    points: &Array2<f64>,
    aux: &Array2<f64>,
) -> Result<Array2<f64>, DhpmError> {
    cfg.validate()?;
    if u_nets.len() != cfg.channels.len() || dynamics.len() != cfg.channels.len() {
        return Err(DhpmError::Config("one u network and one dynamics per channel".into()));
    }
    if let Some(d) = dynamics.iter().find(|d| d.input_dim() != cfg.len()) {
        return Err(DhpmError::Config(format!(
            "dynamics take {} features, layout has {}",
            d.input_dim(),
            cfg.len()
        )));
    }
    if aux.ncols() != cfg.aux_channels.len() || aux.nrows() != points.nrows() {
        return Err(DhpmError::Config("aux values do not match the points".into()));
    }
    let tapes = u_tapes(u_nets, normalizer, cfg, points, &normalizer.apply(points))?;
    let jets: Vec<&JetBatch> = tapes.iter().map(JetTape::output).collect();
    let feats = assemble_features(cfg, points, aux, &jets);
    let mut f = Array2::zeros((points.nrows(), cfg.channels.len()));
    for (c, dynamics) in dynamics.iter().enumerate() {
        let n = dynamics.evaluate(&feats)?;
        let ut = jets[c].get(Component::T).unwrap().column(0).to_owned();
        f.column_mut(c).assign(&(ut - &n.values));
    }
    Ok(f)
}

/// Residual of a model at one physical point.
pub fn residual(model: &DhpmModel, point: &[f64], aux: &[f64]) -> Result<Vec<f64>, DhpmError> {
    let points = Array2::from_shape_vec((1, point.len()), point.to_vec())
        .map_err(|e| DhpmError::Config(e.to_string()))?;
    let aux = Array2::from_shape_vec((1, aux.len()), aux.to_vec()).map_err(|e| DhpmError::Config(e.to_string()))?;
    let dyns: Vec<&dyn Dynamics> = model.n_nets.iter().map(|n| n as &dyn Dynamics).collect();
    if point.len() != model.normalizer.dim() {
        return Err(DhpmError::Config(format!("point {point:?} has the wrong dimension")));
    }
    let f = residual_with(&model.u_nets, &dyns, &model.features, &model.normalizer, &points, &aux)?;
    Ok(f.row(0).to_vec())
}

/// Sum of squared errors on a dataset, terms reported separately.
pub fn sse_loss(model: &DhpmModel, ds: &Dataset) -> Result<LossBreakdown, DhpmError> {
    model.validate()?;
    let batch = Batch::new(model, ds)?;
    Ok(evaluate(model, &batch, LossWeights::default(), GradMask::NONE)?.0)
}

/// Weighted loss and its gradient in [`DhpmModel::flatten`] order.
pub fn loss_gradient(model: &DhpmModel, ds: &Dataset, w: LossWeights) -> Result<(LossBreakdown, Vec<f64>), DhpmError> {
    model.validate()?;
    let batch = Batch::new(model, ds)?;
    evaluate(model, &batch, w, GradMask::ALL)
}

/// Which parameter blocks receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct GradMask {
    pub u: bool,
    pub n: bool,
}

impl GradMask {
    pub const NONE: GradMask = GradMask { u: false, n: false };
    pub const ALL: GradMask = GradMask { u: true, n: true };
}

/// Sum of squares in a fixed order: channel-major over rows.
fn sum_sq(a: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for c in 0..a.ncols() {
        for v in a.column(c) {
            s += v * v;
        }
    }
    s
}

fn breakdown(data: f64, residual: f64, w: LossWeights) -> LossBreakdown {
    LossBreakdown {
        data,
        residual,
        total: w.data * data + w.residual * residual,
    }
}

/// Loss and flat gradient (u networks first; masked blocks are zero).
pub(crate) fn evaluate(
    model: &DhpmModel,
    batch: &Batch,
    w: LossWeights,
    mask: GradMask,
) -> Result<(LossBreakdown, Vec<f64>), DhpmError> {
    let cfg = &model.features;
    let tapes = u_tapes(&model.u_nets, &model.normalizer, cfg, &batch.raw, &batch.inputs)?;
    let jets: Vec<&JetBatch> = tapes.iter().map(JetTape::output).collect();
    let feats = assemble_features(cfg, &batch.raw, &batch.aux, &jets);
    let c_count = cfg.channels.len();
    let n = batch.raw.nrows();

    let mut data_res = Array2::zeros((n, c_count));
    let mut f = Array2::zeros((n, c_count));
    let mut evals = Vec::with_capacity(c_count);
    for c in 0..c_count {
        let u = jets[c].value().column(0);
        data_res.column_mut(c).assign(&(&u - &batch.obs.column(c)));
        let e = model.n_nets[c].evaluate(&feats)?;
        let ut = jets[c].get(Component::T).unwrap().column(0);
        f.column_mut(c).assign(&(&ut - &e.values));
        evals.push(e);
    }
    let loss = breakdown(sum_sq(&data_res), sum_sq(&f), w);
    if !loss.total.is_finite() {
        return Err(DhpmError::Numeric {
            point: batch.raw.row(0).to_vec(),
        });
    }
    let mut grad = vec![0.0; model.n_params()];
    if mask == GradMask::NONE {
        return Ok((loss, grad));
    }

    let mut d_feats = Array2::<f64>::zeros(feats.dim());
    let mut n_grads = Vec::with_capacity(c_count);
    for (c, e) in evals.iter().enumerate() {
        let cot: Array1<f64> = f.column(c).mapv(|v| -2.0 * w.residual * v);
        let (df, g) = e.pullback(&cot);
        if mask.u {
            d_feats += &df;
        }
        n_grads.push(g.expect("network dynamics"));
    }
    let mut off = 0;
    if mask.u {
        let mut adjoints: Vec<JetBatch> = (0..c_count).map(|_| JetBatch::empty(n, 1)).collect();
        for (c, adj) in adjoints.iter_mut().enumerate() {
            adj.set(Component::Value, data_res.column(c).mapv(|v| 2.0 * w.data * v).insert_axis(ndarray::Axis(1)));
            adj.set(Component::T, f.column(c).mapv(|v| 2.0 * w.residual * v).insert_axis(ndarray::Axis(1)));
        }
        scatter_feature_adjoint(cfg, &d_feats, &mut adjoints);
        for (c, tape) in tapes.iter().enumerate() {
            let (g, _) = tape.backward(&model.u_nets[c], &adjoints[c], false);
            grad[off..off + g.len()].copy_from_slice(&g);
            off += g.len();
        }
    } else {
        off = model.n_u_params();
    }
    if mask.n {
        for g in n_grads {
            grad[off..off + g.len()].copy_from_slice(&g);
            off += g.len();
        }
    }
    Ok((loss, grad))
}

/// Features and time derivatives of frozen u networks, for fitting `N` alone.
pub(crate) struct FrozenU {
    feats: Array2<f64>,
    u_t: Array2<f64>,
    data: f64,
    raw: Array2<f64>,
}

impl FrozenU {
    pub fn new(model: &DhpmModel, batch: &Batch) -> Result<Self, DhpmError> {
        let cfg = &model.features;
        let tapes = u_tapes(&model.u_nets, &model.normalizer, cfg, &batch.raw, &batch.inputs)?;
        let jets: Vec<&JetBatch> = tapes.iter().map(JetTape::output).collect();
        let feats = assemble_features(cfg, &batch.raw, &batch.aux, &jets);
        let n = batch.raw.nrows();
        let mut u_t = Array2::zeros((n, jets.len()));
        let mut data_res = Array2::zeros((n, jets.len()));
        for (c, j) in jets.iter().enumerate() {
            u_t.column_mut(c).assign(&j.get(Component::T).unwrap().column(0));
            data_res.column_mut(c).assign(&(&j.value().column(0) - &batch.obs.column(c)));
        }
        Ok(FrozenU {
            feats,
            u_t,
            data: sum_sq(&data_res),
            raw: batch.raw.clone(),
        })
    }

    /// Loss with the u networks held fixed; the gradient covers the N block only.
    pub fn evaluate(&self, model: &DhpmModel, w: LossWeights) -> Result<(LossBreakdown, Vec<f64>), DhpmError> {
        let mut f = self.u_t.clone();
        let mut evals = Vec::new();
        for (c, net) in model.n_nets.iter().enumerate() {
            let e = net.evaluate(&self.feats)?;
            f.column_mut(c).zip_mut_with(&e.values, |a, &b| *a -= b);
            evals.push(e);
        }
        let loss = breakdown(self.data, sum_sq(&f), w);
        if !loss.total.is_finite() {
            return Err(DhpmError::Numeric {
                point: self.raw.row(0).to_vec(),
            });
        }
        let mut grad = vec![0.0; model.n_params()];
        let mut off = model.n_u_params();
        for (c, e) in evals.iter().enumerate() {
            let cot = f.column(c).mapv(|v| -2.0 * w.residual * v);
            let (_, g) = e.pullback(&cot);
            let g = g.expect("network dynamics");
            grad[off..off + g.len()].copy_from_slice(&g);
            off += g.len();
        }
        Ok((loss, grad))
    }
}
