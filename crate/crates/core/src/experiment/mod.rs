//! End-to-end experiments: generate ground truth, subsample, train, solve the
//! learned equation and evaluate, with every artifact written to a run directory.

mod config;
mod pipeline;
mod study;

use thiserror::Error;

use crate::dataset::SamplingError;
use crate::dhpm::DhpmError;
use crate::grid::GridError;
use crate::metrics::MetricsError;
use crate::pinn::PinnError;
use crate::spectral::SpectralError;

pub use config::{
    load_preset, merge, parse_toml, preset_names, preset_source, resolve, CrossGen, EvalConfig, Experiment,
    ModelConfig, Sampling, Scale, SolveConfig, StudyConfig,
};
pub use pipeline::{
    crop, evaluate, fit, generate, generate_crossgen, initial_loss, run_pipeline, sample, solution_grid, solve,
    solve_domain,
    PipelineOutcome, RunManifest, RunPaths,
};
pub use study::{cell_dir, cells, run_study, Study, StudyCell, StudyTable};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Dhpm(#[from] DhpmError),
    #[error(transparent)]
    Pinn(#[from] PinnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ExperimentError>,
    },
}

/// Coarse failure class, mapped to process exit codes by the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Io,
}

impl ExperimentError {
    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        match self {
            ExperimentError::Config(_) => Config,
            ExperimentError::Stage { source, .. } => source.class(),
            ExperimentError::Io(_) => Io,
            ExperimentError::Spectral(e) => match e {
                SpectralError::Invalid(_) => Config,
                SpectralError::Grid(g) => grid_class(g),
                _ => Numeric,
            },
            ExperimentError::Sampling(e) => match e {
                SamplingError::Io(_) | SamplingError::Format(_) => Io,
                _ => Config,
            },
            ExperimentError::Dhpm(e) => dhpm_class(e),
            ExperimentError::Pinn(e) => match e {
                PinnError::Config(_) | PinnError::Domain(_) => Config,
                PinnError::Diverged { .. } => Numeric,
                PinnError::Dhpm(d) => dhpm_class(d),
                PinnError::Grid(g) => grid_class(g),
            },
            ExperimentError::Metrics(e) => match e {
                MetricsError::Alignment(_) | MetricsError::Degenerate => Numeric,
                MetricsError::Grid(g) => grid_class(g),
                MetricsError::Format(_) | MetricsError::Io(_) => Io,
            },
            ExperimentError::Grid(g) => grid_class(g),
        }
    }

    pub(crate) fn at(stage: &'static str) -> impl FnOnce(ExperimentError) -> ExperimentError {
        move |e| match e {
            e @ ExperimentError::Stage { .. } => e,
            e => ExperimentError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

fn dhpm_class(e: &DhpmError) -> ErrorClass {
    match e {
        DhpmError::Nn(crate::nn::NnError::Checkpoint(_)) => ErrorClass::Io,
        DhpmError::Config(_) | DhpmError::Nn(_) => ErrorClass::Config,
        DhpmError::Numeric { .. } | DhpmError::Diverged { .. } => ErrorClass::Numeric,
        DhpmError::Format(_) | DhpmError::Io(_) => ErrorClass::Io,
    }
}

fn grid_class(e: &GridError) -> ErrorClass {
    match e {
        GridError::UnknownChannel(_) | GridError::Shape(_) => ErrorClass::Config,
        GridError::NonFinite { .. } => ErrorClass::Numeric,
        _ => ErrorClass::Io,
    }
}
