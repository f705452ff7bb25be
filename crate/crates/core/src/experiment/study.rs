//! Parameter studies: one pipeline run per cell, summarized in a one-row table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{run_pipeline, PipelineOutcome};
use super::{Experiment, ExperimentError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Observation noise levels.
    Noise,
    /// Highest spatial derivative fed to N.
    Order,
    /// Explicit t / x dependence of N, tested on the second initial condition.
    Txdep,
    /// Learned model solved from the second initial condition.
    Crossgen,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Noise => "noise",
            Study::Order => "order",
            Study::Txdep => "txdep",
            Study::Crossgen => "crossgen",
        }
    }
}

impl std::str::FromStr for Study {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Study::Noise, Study::Order, Study::Txdep, Study::Crossgen]
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown study {s:?} (noise, order, txdep, crossgen)")))
    }
}

/// One column of a study table. `error` is the full-window relative L2 error
/// of the headline view; `failure` holds the message of a failed cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub label: String,
    pub error: Option<f64>,
    pub failure: Option<String>,
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub study: Study,
    pub experiment: String,
    pub cells: Vec<StudyCell>,
}

fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (1, r) if r != 11 => "st",
        (2, r) if r != 12 => "nd",
        (3, r) if r != 13 => "rd",
        _ => "th",
    };
    format!("{n}{suffix} order")
}

fn noise_label(level: f64) -> String {
    if level == 0.0 {
        "Clean data".into()
    } else {
        format!("{}% noise", level * 100.0)
    }
}

fn cell_text(c: &StudyCell) -> String {
    match (c.error, &c.failure) {
        (Some(e), _) => format!("{e:.2e}"),
        (None, Some(_)) => "failed".into(),
        (None, None) => "-".into(),
    }
}

impl StudyTable {
    pub fn value(&self, label: &str) -> Option<f64> {
        self.cells.iter().find(|c| c.label == label).and_then(|c| c.error)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| | {} |", self.cells.iter().map(|c| c.label.as_str()).collect::<Vec<_>>().join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.cells.len()));
        let _ = writeln!(
            s,
            "| Relative L2 error | {} |",
            self.cells.iter().map(cell_text).collect::<Vec<_>>().join(" | ")
        );
        for c in self.cells.iter().filter(|c| c.failure.is_some()) {
            let _ = writeln!(s, "\n{}: {}", c.label, c.failure.as_deref().unwrap_or_default());
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["label", "relative_l2", "failure"]);
        for c in &self.cells {
            let e = c.error.map(crate::grid::fmt_f64).unwrap_or_default();
            let _ = w.write_record([c.label.as_str(), e.as_str(), c.failure.as_deref().unwrap_or("")]);
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }

    pub fn save(&self, dir: &Path) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir)?;
        let name = self.study.name();
        std::fs::write(dir.join(format!("study_{name}.md")), self.to_markdown())?;
        std::fs::write(dir.join(format!("study_{name}.csv")), self.to_csv())?;
        Ok(())
    }
}

/// The experiments of each cell: label, configuration, solved from the second initial condition.
pub fn cells(study: Study, base: &Experiment) -> Vec<(String, Experiment, bool)> {
    match study {
        Study::Noise => base
            .study
            .noise_levels
            .iter()
            .map(|&lvl| {
                let mut e = base.clone();
                e.sampling.noise_pct = lvl;
                (noise_label(lvl), e, false)
            })
            .collect(),
        Study::Order => base
            .study
            .orders
            .iter()
            .map(|&o| {
                let mut e = base.clone();
                e.features.spatial_order = o;
                (ordinal(o), e, false)
            })
            .collect(),
        Study::Txdep => [
            ("N(u, u_x, u_xx)", false, false),
            ("N(x, u, u_x, u_xx)", false, true),
            ("N(t, u, u_x, u_xx)", true, false),
            ("N(t, x, u, u_x, u_xx)", true, true),
        ]
        .into_iter()
        .map(|(label, t, x)| {
            let mut e = base.clone();
            e.features.include_t = t;
            e.features.include_x = x;
            (label.to_string(), e, true)
        })
        .collect(),
        Study::Crossgen => vec![("cross-IC".into(), base.clone(), true)],
    }
}

/// Directory of a cell: keyed by configuration so studies sharing a cell can reuse it.
pub fn cell_dir(out_dir: &Path, exp: &Experiment, crossgen: bool) -> PathBuf {
    let hash = exp.hash();
    let suffix = if crossgen { "-crossgen" } else { "" };
    out_dir.join("cells").join(format!("{}{suffix}", &hash[..16]))
}

/// Runs every cell of `study`. A failing cell is recorded and the study goes on.
/// With `resume`, cells whose directory already holds an outcome for the same
/// configuration are read back instead of rerun.
pub fn run_study(study: Study, base: &Experiment, out_dir: &Path, resume: bool) -> Result<StudyTable, ExperimentError> {
    if matches!(study, Study::Txdep | Study::Crossgen) && (base.crossgen.is_none() || base.problem.is_none()) {
        return Err(ExperimentError::Config(format!(
            "the {} study needs a simulated problem with a [crossgen] table",
            study.name()
        )));
    }
    let mut out = Vec::new();
    for (label, exp, crossgen) in cells(study, base) {
        let dir = cell_dir(out_dir, &exp, crossgen);
        let cached = resume
            .then(|| PipelineOutcome::load(&dir.join("outcome.json")).ok())
            .flatten()
            .filter(|o| o.config_hash == exp.hash());
        let result = match cached {
            Some(o) => Ok(o),
            None => exp.validate().and_then(|_| run_pipeline(&exp, &dir, crossgen)),
        };
        out.push(match result {
            Ok(o) => StudyCell {
                label,
                error: Some(o.headline().relative_l2_full),
                failure: None,
                dir,
            },
            Err(e) => StudyCell {
                label,
                error: None,
                failure: Some(e.to_string()),
                dir,
            },
        });
    }
    let table = StudyTable {
        study,
        experiment: base.name.clone(),
        cells: out,
    };
    table.save(out_dir)?;
    Ok(table)
}
