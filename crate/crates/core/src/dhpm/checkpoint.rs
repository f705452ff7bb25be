//! Trained-model bundles: a directory holding `manifest.json`, one network
//! file per u / N network and `training_log.csv`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DhpmError, DhpmModel, FeatureConfig, LogEntry, Normalizer, TrainStatus, TrainedDhpm};
use crate::grid::GridError;
use crate::nn::{load_mlp, save_mlp};

const FORMAT: &str = "dhpm-model";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    features: FeatureConfig,
    normalizer: Normalizer,
    status: TrainStatus,
    provenance: String,
    u_nets: Vec<String>,
    n_nets: Vec<String>,
    log: String,
}

fn fmt_err(e: impl ToString) -> DhpmError {
    DhpmError::Format(e.to_string())
}

impl TrainedDhpm {
    pub fn save(&self, dir: &Path) -> Result<(), DhpmError> {
        std::fs::create_dir_all(dir)?;
        let m = &self.model;
        let mut u_files = Vec::new();
        for (k, net) in m.u_nets.iter().enumerate() {
            let name = format!("u_{k}.json");
            save_mlp(net, &dir.join(&name))?;
            u_files.push(name);
        }
        let mut n_files = Vec::new();
        for (k, net) in m.n_nets.iter().enumerate() {
            let name = format!("n_{k}.json");
            save_mlp(net, &dir.join(&name))?;
            n_files.push(name);
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: 1,
            features: m.features.clone(),
            normalizer: m.normalizer.clone(),
            status: self.status,
            provenance: self.provenance.clone(),
            u_nets: u_files,
            n_nets: n_files,
            log: "training_log.csv".into(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(fmt_err)?;
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        write_log(&self.log, &dir.join("training_log.csv"))
    }

    pub fn load(dir: &Path) -> Result<Self, DhpmError> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(fmt_err)?;
        if manifest.format != FORMAT || manifest.version != 1 {
            return Err(DhpmError::Format(format!(
                "unsupported bundle {} v{}",
                manifest.format, manifest.version
            )));
        }
        let load = |names: &[String]| {
            names
                .iter()
                .map(|n| load_mlp(&dir.join(n)))
                .collect::<Result<Vec<_>, _>>()
        };
        let model = DhpmModel {
            u_nets: load(&manifest.u_nets)?,
            n_nets: load(&manifest.n_nets)?,
            features: manifest.features,
            normalizer: manifest.normalizer,
        };
        model.validate()?;
        Ok(TrainedDhpm {
            model,
            log: read_log(&dir.join(&manifest.log))?,
            status: manifest.status,
            provenance: manifest.provenance,
        })
    }
}

pub fn write_log(log: &[LogEntry], path: &Path) -> Result<(), DhpmError> {
    let mut w = csv::Writer::from_path(path).map_err(fmt_err)?;
    for e in log {
        w.serialize(e).map_err(fmt_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, DhpmError> {
    let mut r = csv::Reader::from_path(path).map_err(fmt_err)?;
    r.deserialize().collect::<Result<Vec<LogEntry>, _>>().map_err(fmt_err)
}

impl From<GridError> for DhpmError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Io(e) => DhpmError::Io(e),
            other => DhpmError::Format(other.to_string()),
        }
    }
}
