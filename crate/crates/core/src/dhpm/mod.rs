//! Deep hidden physics models: a solution network `u` per channel and a
//! dynamics network `N` per channel equation, coupled through the residual
//! `f = u_t - N(features)` and trained on the sum of squared errors
//! `Σ |u - u_obs|² + |f|²` at the observation points.

mod checkpoint;
mod dynamics;
mod features;
mod loss;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::nn::{InputTangents, MlpParams, NnError};

pub use dynamics::{inject_known_dynamics, Dynamics, DynamicsEval, KnownDynamics};
pub use features::{build_features, FeatureConfig, FeatureSource, Partial};
pub use loss::{loss_gradient, residual, residual_with, sse_loss, LossBreakdown, LossWeights};
pub use train::{train, LogEntry, OptimizerKind, Schedule, TrainConfig, TrainStatus, TrainedDhpm};

pub(crate) use loss::{add_column, assemble_features, scatter_feature_adjoint, u_tapes};

#[derive(Debug, Error)]
pub enum DhpmError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("non-finite value at point {point:?}")]
    Numeric { point: Vec<f64> },
    #[error("training diverged at iteration {iteration}; best checkpoint kept")]
    Diverged {
        iteration: usize,
        checkpoint: Box<TrainedDhpm>,
    },
    #[error(transparent)]
    Nn(NnError),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<NnError> for DhpmError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { point, .. } => DhpmError::Numeric { point },
            NnError::Io(e) => DhpmError::Io(e),
            other => DhpmError::Nn(other),
        }
    }
}

/// Affine map of each input coordinate `(t, x[, y])` onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Normalizer { lo, hi }
    }

    pub fn identity(dim: usize) -> Self {
        Normalizer {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    /// Bounding box of the dataset's points.
    pub fn from_dataset(ds: &Dataset) -> Self {
        let dim = 1 + ds.spatial_dims();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for i in 0..ds.len() {
            for (k, v) in ds.point(i).into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        Normalizer { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if h > l { 2.0 / (h - l) } else { 1.0 })
            .collect()
    }

    pub fn tangents(&self) -> InputTangents {
        InputTangents::diagonal(&self.scales())
    }

    /// Normalized copies of the rows of `points`.
    pub fn apply(&self, points: &Array2<f64>) -> Array2<f64> {
        let scales = self.scales();
        let mut out = points.clone();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                let mid = 0.5 * (self.lo[k] + self.hi[k]);
                *v = (*v - mid) * scales[k];
            }
        }
        out
    }
}

/// Networks plus everything needed to evaluate them on physical coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct DhpmModel {
    pub u_nets: Vec<MlpParams>,
    pub n_nets: Vec<MlpParams>,
    pub features: FeatureConfig,
    pub normalizer: Normalizer,
}

impl DhpmModel {
    /// Fresh networks with hidden widths `u_hidden` / `n_hidden`. Network `k` of each
    /// kind is seeded with `seed + k` (u) and `seed + 1000 + k` (N).
    pub fn init(
        features: FeatureConfig,
        normalizer: Normalizer,
        u_hidden: &[usize],
        n_hidden: &[usize],
        activation: crate::nn::Activation,
        seed: u64,
    ) -> Result<Self, DhpmError> {
        features.validate()?;
        let in_dim = 1 + features.dims;
        if normalizer.dim() != in_dim {
            return Err(DhpmError::Config(format!(
                "normalizer has {} coordinates, expected {in_dim}",
                normalizer.dim()
            )));
        }
        let widths = |first: usize, hidden: &[usize]| {
            let mut w = vec![first];
            w.extend_from_slice(hidden);
            w.push(1);
            w
        };
        let c = features.channels.len();
        let u_nets = (0..c)
            .map(|k| MlpParams::init(&widths(in_dim, u_hidden), activation, seed + k as u64))
            .collect::<Result<Vec<_>, _>>()?;
        let n_nets = (0..c)
            .map(|k| MlpParams::init(&widths(features.len(), n_hidden), activation, seed + 1000 + k as u64))
            .collect::<Result<Vec<_>, _>>()?;
        let model = DhpmModel {
            u_nets,
            n_nets,
            features,
            normalizer,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), DhpmError> {
        self.features.validate()?;
        let c = self.features.channels.len();
        if self.u_nets.len() != c || self.n_nets.len() != c {
            return Err(DhpmError::Config(format!(
                "{c} channels need {c} u and N networks, got {} and {}",
                self.u_nets.len(),
                self.n_nets.len()
            )));
        }
        let in_dim = 1 + self.features.dims;
        for u in &self.u_nets {
            if u.input_dim() != in_dim || u.output_dim() != 1 {
                return Err(DhpmError::Config(format!("u network widths {:?}", u.widths())));
            }
        }
        for n in &self.n_nets {
            if n.input_dim() != self.features.len() || n.output_dim() != 1 {
                return Err(DhpmError::Config(format!(
                    "N network widths {:?} do not take {} features",
                    n.widths(),
                    self.features.len()
                )));
            }
        }
        if self.normalizer.dim() != in_dim {
            return Err(DhpmError::Config("normalizer dimension".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.u_nets.iter().chain(&self.n_nets).map(MlpParams::n_params).sum()
    }

    pub fn n_u_params(&self) -> usize {
        self.u_nets.iter().map(MlpParams::n_params).sum()
    }

    /// All parameters, u networks first.
    pub fn flatten(&self) -> Vec<f64> {
        self.u_nets.iter().chain(&self.n_nets).flat_map(|n| n.flatten()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), DhpmError> {
        let mut off = 0;
        for net in self.u_nets.iter_mut().chain(self.n_nets.iter_mut()) {
            let k = net.n_params();
            net.set_flat(&flat[off..off + k])?;
            off += k;
        }
        Ok(())
    }

    /// Values of every u network at physical points `(t, x[, y])`, shape `(n, channels)`.
    pub fn predict(&self, points: &Array2<f64>) -> Result<Array2<f64>, DhpmError> {
        let inputs = self.normalizer.apply(points);
        let mut out = Array2::zeros((points.nrows(), self.u_nets.len()));
        for (c, net) in self.u_nets.iter().enumerate() {
            out.column_mut(c).assign(&net.forward_batch(&inputs)?.column(0));
        }
        Ok(out)
    }
}
