//! Declarative experiment configuration.
//!
//! An experiment file is TOML. A table `[desk]` holds overrides merged over
//! the rest of the file when the desk scale is selected; further override
//! files and command-line flags are merged in the same way.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::dataset::Region;
use crate::dhpm::{FeatureConfig, TrainConfig};
use crate::metrics::ChannelView;
use crate::nn::Activation;
use crate::optim::{AdamConfig, LbfgsConfig};
use crate::pinn::{Boundary, Collocation, SolveDomain};
use crate::spectral::{InitialCondition, ProblemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Paper,
    #[default]
    Desk,
}

impl std::str::FromStr for Scale {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            _ => Err(ExperimentError::Config(format!("unknown scale {s:?} (paper or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    #[serde(default)]
    pub region: Region,
    pub n: usize,
    #[serde(default)]
    pub noise_pct: f64,
    #[serde(default)]
    pub aux_channels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub u_hidden: Vec<usize>,
    pub n_hidden: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    /// Name of a built-in exact right-hand side used in place of the learned networks.
    #[serde(default)]
    pub exact: Option<String>,
    /// Defaults to the simulated period in x and the truth grid's time span.
    #[serde(default)]
    pub domain: Option<SolveDomain>,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub collocation: Collocation,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub adam_iters: usize,
    pub lbfgs_iters: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub lbfgs: LbfgsConfig,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_log_every() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// End of the training portion; errors are reported before and after it.
    #[serde(default)]
    pub split: Option<f64>,
    /// The first view is the headline report.
    #[serde(default = "default_views")]
    pub views: Vec<ChannelView>,
}

fn default_views() -> Vec<ChannelView> {
    vec![ChannelView::All]
}

/// A second initial condition for testing a learned model on unseen data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossGen {
    pub initial_condition: InitialCondition,
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub save_every: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_noise")]
    pub noise_levels: Vec<f64>,
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
}

fn default_noise() -> Vec<f64> {
    vec![0.0, 0.01, 0.02, 0.05]
}

fn default_orders() -> Vec<usize> {
    vec![1, 2, 3, 4]
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            noise_levels: default_noise(),
            orders: default_orders(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Simulated ground truth; exclusive with `ingest`.
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    /// Grid file holding externally produced ground truth.
    #[serde(default)]
    pub ingest: Option<PathBuf>,
    pub sampling: Sampling,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub solve: SolveConfig,
    #[serde(default = "default_eval")]
    pub evaluate: EvalConfig,
    #[serde(default)]
    pub crossgen: Option<CrossGen>,
    #[serde(default)]
    pub study: StudyConfig,
}

fn default_eval() -> EvalConfig {
    EvalConfig {
        split: None,
        views: default_views(),
    }
}

const PRESETS: &[(&str, &str)] = &[
    ("burgers", include_str!("../../presets/burgers.toml")),
    ("burgers-gaussian", include_str!("../../presets/burgers-gaussian.toml")),
    ("kdv", include_str!("../../presets/kdv.toml")),
    ("kdv-soliton", include_str!("../../presets/kdv-soliton.toml")),
    ("ks", include_str!("../../presets/ks.toml")),
    ("nls", include_str!("../../presets/nls.toml")),
    ("heat-test", include_str!("../../presets/heat-test.toml")),
    ("navier-stokes", include_str!("../../presets/navier-stokes.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Raw TOML of a shipped preset.
pub fn preset_source(name: &str) -> Result<&'static str, ExperimentError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| ExperimentError::Config(format!("unknown preset {name:?}; known: {:?}", preset_names())))
}

/// Recursively merges `over` into `base`; tables merge key by key, everything else is replaced.
pub fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn parse_toml(text: &str) -> Result<toml::Value, ExperimentError> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| ExperimentError::Config(e.to_string()))
}

/// Layered configuration: a base document, the scale overrides inside it, then
/// any number of override documents in order.
pub fn resolve(base: &str, scale: Scale, overrides: &[toml::Value]) -> Result<Experiment, ExperimentError> {
    let mut doc = parse_toml(base)?;
    let desk = doc.as_table_mut().and_then(|t| t.remove("desk"));
    if let (Scale::Desk, Some(d)) = (scale, desk) {
        merge(&mut doc, d);
    }
    for o in overrides {
        let mut o = o.clone();
        let desk = o.as_table_mut().and_then(|t| t.remove("desk"));
        merge(&mut doc, o);
        if let (Scale::Desk, Some(d)) = (scale, desk) {
            merge(&mut doc, d);
        }
    }
    let exp: Experiment = doc.try_into().map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
    exp.validate()?;
    Ok(exp)
}

pub fn load_preset(name: &str, scale: Scale) -> Result<Experiment, ExperimentError> {
    resolve(preset_source(name)?, scale, &[])
}

impl Experiment {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        match (&self.problem, &self.ingest) {
            (Some(p), None) => {
                p.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
            }
            (None, Some(_)) => {}
            _ => return bad("exactly one of `problem` and `ingest` must be given".into()),
        }
        self.features.validate()?;
        if self.sampling.aux_channels != self.features.aux_channels {
            return bad(format!(
                "sampled aux channels {:?} differ from the feature aux channels {:?}",
                self.sampling.aux_channels, self.features.aux_channels
            ));
        }
        if self.model.u_hidden.is_empty() || self.model.n_hidden.is_empty() || self.solve.hidden.is_empty() {
            return bad("every network needs at least one hidden layer".into());
        }
        if self.evaluate.views.is_empty() {
            return bad("evaluate.views is empty".into());
        }
        if let Some(name) = &self.solve.exact {
            crate::dhpm::inject_known_dynamics(name, &self.features)?;
        }
        Ok(())
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment serializes")
    }

    /// SHA-256 of the canonical TOML.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One seed drives sampling, training and solving.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }
}
