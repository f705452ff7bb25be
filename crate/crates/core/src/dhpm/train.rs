//! Training schedules for the coupled u / N networks.

use std::cell::Cell;
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::loss::{evaluate, Batch, FrozenU, GradMask};
use super::{DhpmError, DhpmModel, FeatureConfig, LossBreakdown, LossWeights, Normalizer};
use crate::dataset::Dataset;
use crate::nn::Activation;
use crate::optim::{Adam, AdamConfig, Lbfgs, LbfgsConfig, LbfgsStatus, Objective};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Both networks on the full loss.
    #[default]
    Joint,
    /// u on the data term, then N on the residual term with u frozen, then
    /// (if `finetune`) both jointly.
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Lbfgs,
    #[default]
    AdamThenLbfgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub optimizer: OptimizerKind,
    /// Adam steps per phase.
    pub adam_iters: usize,
    /// L-BFGS steps per phase.
    pub lbfgs_iters: usize,
    pub finetune: bool,
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    pub weights: LossWeights,
    pub activation: Activation,
    pub seed: u64,
    pub log_every: usize,
    /// Adam steps without a relative improvement of `tolerance` before stopping; 0 disables.
    pub patience: usize,
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: Schedule::Joint,
            optimizer: OptimizerKind::AdamThenLbfgs,
            adam_iters: 1000,
            lbfgs_iters: 1000,
            finetune: true,
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            weights: LossWeights::default(),
            activation: Activation::Tanh,
            seed: 0,
            log_every: 10,
            patience: 0,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Budget,
    ConvergedEarly,
    Stalled,
    GradientTolerance,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub phase: String,
    pub iteration: usize,
    pub data: f64,
    pub residual: f64,
    /// Objective of the phase (weighted).
    pub loss: f64,
    /// Lowest phase objective seen so far in the phase.
    pub best: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedDhpm {
    pub model: DhpmModel,
    pub log: Vec<LogEntry>,
    pub status: TrainStatus,
    /// Content id of the grid the training data came from.
    pub provenance: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Joint,
    U,
    N,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Joint => "joint",
            Phase::U => "u",
            Phase::N => "n",
        }
    }
}

struct PhaseObjective<'a> {
    model: DhpmModel,
    batch: &'a Batch,
    frozen: Option<FrozenU>,
    phase: Phase,
    weights: LossWeights,
    range: (usize, usize),
    full: Vec<f64>,
    last: Rc<Cell<Option<LossBreakdown>>>,
}

impl<'a> PhaseObjective<'a> {
    fn new(model: &DhpmModel, batch: &'a Batch, phase: Phase, w: LossWeights) -> Result<Self, DhpmError> {
        let nu = model.n_u_params();
        let (range, weights, frozen) = match phase {
            Phase::Joint => ((0, model.n_params()), w, None),
            Phase::U => ((0, nu), LossWeights { data: w.data, residual: 0.0 }, None),
            Phase::N => (
                (nu, model.n_params()),
                LossWeights { data: 0.0, residual: w.residual },
                Some(FrozenU::new(model, batch)?),
            ),
        };
        Ok(PhaseObjective {
            model: model.clone(),
            batch,
            frozen,
            phase,
            weights,
            range,
            full: model.flatten(),
            last: Rc::new(Cell::new(None)),
        })
    }

    fn active(&self) -> Vec<f64> {
        self.full[self.range.0..self.range.1].to_vec()
    }

    fn set(&mut self, x: &[f64]) -> Result<(), DhpmError> {
        self.full[self.range.0..self.range.1].copy_from_slice(x);
        self.model.set_flat(&self.full)
    }

    fn loss_grad(&mut self, x: &[f64], grad: &mut [f64]) -> Result<LossBreakdown, DhpmError> {
        self.set(x)?;
        let (loss, g) = match (&self.frozen, self.phase) {
            (Some(fz), _) => fz.evaluate(&self.model, self.weights)?,
            (None, Phase::U) => evaluate(&self.model, self.batch, self.weights, GradMask { u: true, n: false })?,
            (None, _) => evaluate(&self.model, self.batch, self.weights, GradMask::ALL)?,
        };
        grad.copy_from_slice(&g[self.range.0..self.range.1]);
        self.last.set(Some(loss));
        Ok(loss)
    }
}

impl Objective for PhaseObjective<'_> {
    type Error = DhpmError;

    /// Non-finite trial points read as `+inf` so the line search backs off.
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, DhpmError> {
        match self.loss_grad(x, grad) {
            Ok(l) => Ok(l.total),
            Err(DhpmError::Numeric { .. }) => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                Ok(f64::INFINITY)
            }
            Err(e) => Err(e),
        }
    }
}

struct Recorder {
    start: Instant,
    log: Vec<LogEntry>,
    iteration: usize,
}

impl Recorder {
    fn push(&mut self, phase: Phase, l: LossBreakdown, best: f64) {
        self.log.push(LogEntry {
            phase: phase.name().into(),
            iteration: self.iteration,
            data: l.data,
            residual: l.residual,
            loss: l.total,
            best,
            wall_seconds: self.start.elapsed().as_secs_f64(),
        });
    }
}

/// Outcome of one phase: best parameters reached and why it stopped.
fn run_phase(
    model: &mut DhpmModel,
    batch: &Batch,
    phase: Phase,
    tc: &TrainConfig,
    rec: &mut Recorder,
) -> Result<TrainStatus, DhpmError> {
    let mut obj = PhaseObjective::new(model, batch, phase, tc.weights)?;
    let mut x = obj.active();
    let mut grad = vec![0.0; x.len()];
    let diverged = |iteration: usize, obj: &PhaseObjective, best_x: &[f64]| -> DhpmError {
        let mut m = obj.model.clone();
        let mut full = obj.full.clone();
        full[obj.range.0..obj.range.1].copy_from_slice(best_x);
        if m.set_flat(&full).is_err() {
            m = obj.model.clone();
        }
        DhpmError::Diverged {
            iteration,
            checkpoint: Box::new(TrainedDhpm {
                model: m,
                log: Vec::new(),
                status: TrainStatus::Budget,
                provenance: String::new(),
            }),
        }
    };

    let initial = match obj.loss_grad(&x, &mut grad) {
        Ok(l) => l,
        Err(DhpmError::Numeric { .. }) => return Err(diverged(rec.iteration, &obj, &x)),
        Err(e) => return Err(e),
    };
    let mut best = initial.total;
    let mut best_x = x.clone();
    if rec.log.is_empty() {
        rec.push(phase, initial, best);
    }
    let mut status = TrainStatus::Budget;

    let use_adam = matches!(tc.optimizer, OptimizerKind::Adam | OptimizerKind::AdamThenLbfgs);
    let use_lbfgs = matches!(tc.optimizer, OptimizerKind::Lbfgs | OptimizerKind::AdamThenLbfgs);

    if use_adam && tc.adam_iters > 0 {
        let mut adam = Adam::new(tc.adam, x.len());
        let mut last_gain = 0usize;
        for k in 0..tc.adam_iters {
            if k > 0 {
                let current = match obj.loss_grad(&x, &mut grad) {
                    Ok(l) if l.total.is_finite() => l,
                    Ok(_) | Err(DhpmError::Numeric { .. }) => return Err(diverged(rec.iteration, &obj, &best_x)),
                    Err(e) => return Err(e),
                };
                if current.total < best {
                    if current.total < best * (1.0 - tc.tolerance) {
                        last_gain = k;
                    }
                    best = current.total;
                    best_x.copy_from_slice(&x);
                }
                if k % tc.log_every.max(1) == 0 {
                    rec.push(phase, current, best);
                }
                if tc.patience > 0 && k - last_gain > tc.patience {
                    status = TrainStatus::ConvergedEarly;
                    break;
                }
            }
            adam.update(&mut x, &grad, tc.adam.lr_at(k, tc.adam_iters));
            rec.iteration += 1;
        }
        if status == TrainStatus::Budget {
            let l = match obj.loss_grad(&x, &mut grad) {
                Ok(l) => l,
                Err(DhpmError::Numeric { .. }) => return Err(diverged(rec.iteration, &obj, &best_x)),
                Err(e) => return Err(e),
            };
            if !l.total.is_finite() {
                return Err(diverged(rec.iteration, &obj, &best_x));
            }
            if l.total < best {
                best = l.total;
                best_x.copy_from_slice(&x);
            }
            rec.push(phase, l, best);
        }
        x.copy_from_slice(&best_x);
    }

    if use_lbfgs && tc.lbfgs_iters > 0 {
        let mut lbfgs = Lbfgs::new(tc.lbfgs);
        let last = obj.last.clone();
        let log_every = tc.log_every.max(1);
        let mut best_seen = best;
        let (f, st) = lbfgs.minimize(&mut obj, &mut x, tc.lbfgs_iters, |k, f, _| {
            rec.iteration += 1;
            best_seen = best_seen.min(f);
            if (k + 1) % log_every == 0 || k + 1 == tc.lbfgs_iters {
                if let Some(l) = last.get() {
                    rec.push(phase, l, best_seen);
                }
            }
        })?;
        if !f.is_finite() {
            return Err(diverged(rec.iteration, &obj, &best_x));
        }
        if f <= best {
            best_x.copy_from_slice(&x);
        }
        status = match st {
            LbfgsStatus::Budget => status,
            LbfgsStatus::Stalled => TrainStatus::Stalled,
            LbfgsStatus::GradientTolerance => TrainStatus::GradientTolerance,
            LbfgsStatus::LineSearchFailed => TrainStatus::LineSearchFailed,
        };
    }

    obj.set(&best_x)?;
    *model = obj.model;
    Ok(status)
}

fn check_arch(widths: &[usize], first: usize, what: &str) -> Result<(), DhpmError> {
    if widths.len() < 2 || widths[0] != first || *widths.last().unwrap() != 1 {
        return Err(DhpmError::Config(format!(
            "{what} widths {widths:?} must start with {first} and end with 1"
        )));
    }
    Ok(())
}

/// Builds fresh networks for `ds` and trains them.
pub fn train(
    ds: &Dataset,
    u_widths: &[usize],
    n_widths: &[usize],
    cfg: FeatureConfig,
    tc: &TrainConfig,
) -> Result<TrainedDhpm, DhpmError> {
    cfg.validate()?;
    check_arch(u_widths, 1 + cfg.dims, "u network")?;
    check_arch(n_widths, cfg.len(), "N network")?;
    let model = DhpmModel::init(
        cfg,
        Normalizer::from_dataset(ds),
        &u_widths[1..u_widths.len() - 1],
        &n_widths[1..n_widths.len() - 1],
        tc.activation,
        tc.seed,
    )?;
    train_model(model, ds, tc)
}

/// Trains an existing model in place of fresh initialization.
pub fn train_model(mut model: DhpmModel, ds: &Dataset, tc: &TrainConfig) -> Result<TrainedDhpm, DhpmError> {
    model.validate()?;
    if tc.tolerance < 0.0 || !tc.tolerance.is_finite() {
        return Err(DhpmError::Config(format!("tolerance {}", tc.tolerance)));
    }
    let batch = Batch::new(&model, ds)?;
    let mut rec = Recorder {
        start: Instant::now(),
        log: Vec::new(),
        iteration: 0,
    };
    let full_loss = |m: &DhpmModel| evaluate(m, &batch, tc.weights, GradMask::NONE).map(|(l, _)| l.total);
    let initial_model = model.clone();
    let initial = full_loss(&model)?;

    let phases: Vec<Phase> = match tc.schedule {
        Schedule::Joint => vec![Phase::Joint],
        Schedule::Sequential if tc.finetune => vec![Phase::U, Phase::N, Phase::Joint],
        Schedule::Sequential => vec![Phase::U, Phase::N],
    };
    let mut status = TrainStatus::Budget;
    for phase in phases {
        status = match run_phase(&mut model, &batch, phase, tc, &mut rec) {
            Ok(s) => s,
            Err(DhpmError::Diverged { iteration, mut checkpoint }) => {
                checkpoint.log = rec.log;
                checkpoint.provenance = ds.meta.source_grid.clone();
                return Err(DhpmError::Diverged { iteration, checkpoint });
            }
            Err(e) => return Err(e),
        };
    }
    // never hand back something worse than the starting point
    let final_loss = full_loss(&model).unwrap_or(f64::INFINITY);
    if !(final_loss <= initial) {
        model = initial_model;
    }
    Ok(TrainedDhpm {
        model,
        log: rec.log,
        status,
        provenance: ds.meta.source_grid.clone(),
    })
}
