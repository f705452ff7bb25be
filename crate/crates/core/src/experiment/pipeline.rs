//! Pipeline stages and the run directory layout.
//!
//! | artifact              | stage     |
//! |-----------------------|-----------|
//! | `config.toml`         | every run |
//! | `truth.grid`          | generate  |
//! | `dataset.csv` (+ `dataset.meta.json`) | subsample |
//! | `model/`              | train     |
//! | `solution.grid`, `solve_log.csv` | solve |
//! | `report.txt`, `report_<k>.txt`, `solution.csv`, `truth.csv` | evaluate |
//! | `outcome.json`        | pipeline  |
//! | `manifest_<command>.json` | every command |
//!
//! Everything except the logs and manifests is byte-identical across reruns
//! with the same configuration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use super::{Experiment, ExperimentError};
use crate::dataset::{subsample, Dataset, SampleRequest};
use crate::dhpm::{
    inject_known_dynamics, sse_loss, train, DhpmModel, Dynamics, KnownDynamics, Normalizer, TrainStatus, TrainedDhpm,
};
use crate::grid::SnapshotGrid;
use crate::metrics::{export_plot_grid, ChannelView, ErrorReport, PlotFormat};
use crate::pinn::{solve_learned, Boundary, PinnSolution, SolveData, SolveDomain, SolveSpec};
use crate::spectral::simulate;

type Result<T> = std::result::Result<T, ExperimentError>;

/// File names inside a run directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunPaths { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
    pub fn truth(&self) -> PathBuf {
        self.dir.join("truth.grid")
    }
    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.csv")
    }
    pub fn model(&self) -> PathBuf {
        self.dir.join("model")
    }
    pub fn solution(&self) -> PathBuf {
        self.dir.join("solution.grid")
    }
    pub fn solve_log(&self) -> PathBuf {
        self.dir.join("solve_log.csv")
    }
    /// Report for the `k`-th evaluation view; the first one is `report.txt`.
    pub fn report(&self, k: usize) -> PathBuf {
        if k == 0 {
            self.dir.join("report.txt")
        } else {
            self.dir.join(format!("report_{k}.txt"))
        }
    }
    pub fn outcome(&self) -> PathBuf {
        self.dir.join("outcome.json")
    }
    pub fn manifest(&self, command: &str) -> PathBuf {
        self.dir.join(format!("manifest_{command}.json"))
    }
}

/// Reproducibility record written next to the artifacts of a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub experiment: String,
    /// SHA-256 of the resolved configuration (`config.toml`).
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, exp: &Experiment) -> Self {
        RunManifest {
            command: command.into(),
            experiment: exp.name.clone(),
            config_hash: exp.hash(),
            seed: exp.seed,
            inputs: vec![],
            outputs: vec![],
            wall_seconds: 0.0,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ExperimentError::Config(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }
}

/// Ground truth: a spectral simulation or an ingested grid.
pub fn generate(exp: &Experiment) -> Result<SnapshotGrid> {
    match (&exp.problem, &exp.ingest) {
        (Some(p), _) => Ok(simulate(p)?),
        (None, Some(path)) => Ok(SnapshotGrid::load(path)?),
        (None, None) => Err(ExperimentError::Config("no problem or ingest source".into())),
    }
}

/// Ground truth for the cross-generalization test: the same problem from the second initial condition.
pub fn generate_crossgen(exp: &Experiment) -> Result<SnapshotGrid> {
    let (Some(problem), Some(cg)) = (&exp.problem, &exp.crossgen) else {
        return Err(ExperimentError::Config(
            "cross-generalization needs a simulated problem and a [crossgen] table".into(),
        ));
    };
    let mut p = problem.clone();
    p.initial_condition = cg.initial_condition.clone();
    if let Some(t) = cg.t_final {
        p.t_final = t;
    }
    if let Some(s) = cg.save_every {
        p.save_every = s;
    }
    Ok(simulate(&p)?)
}

pub fn sample(exp: &Experiment, truth: &SnapshotGrid) -> Result<Dataset> {
    let s = &exp.sampling;
    Ok(subsample(
        truth,
        &SampleRequest {
            region: s.region,
            n: s.n,
            noise_pct: s.noise_pct,
            seed: exp.seed,
            aux_channels: s.aux_channels.clone(),
        },
    )?)
}

fn widths(first: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![first];
    w.extend_from_slice(hidden);
    w.push(1);
    w
}

pub fn fit(exp: &Experiment, ds: &Dataset) -> Result<TrainedDhpm> {
    let f = &exp.features;
    let mut tc = exp.train.clone();
    tc.seed = exp.seed;
    Ok(train(
        ds,
        &widths(1 + f.dims, &exp.model.u_hidden),
        &widths(f.len(), &exp.model.n_hidden),
        f.clone(),
        &tc,
    )?)
}

/// Unweighted loss of the freshly initialized networks on `ds`.
pub fn initial_loss(exp: &Experiment, ds: &Dataset) -> Result<f64> {
    let model = DhpmModel::init(
        exp.features.clone(),
        Normalizer::from_dataset(ds),
        &exp.model.u_hidden,
        &exp.model.n_hidden,
        exp.train.activation,
        exp.seed,
    )?;
    Ok(sse_loss(&model, ds)?.total)
}

/// Solve box: the configured one, else the simulated period in x (the full extent
/// of an ingested grid) over the truth's time span.
pub fn solve_domain(exp: &Experiment, truth: &SnapshotGrid) -> SolveDomain {
    if let Some(d) = exp.solve.domain {
        return d;
    }
    let span = |a: &[f64]| [a[0], a[a.len() - 1]];
    SolveDomain {
        t: span(truth.times()),
        x: exp.problem.as_ref().map_or_else(|| span(truth.xs()), |p| p.domain),
        y: truth.ys().map(span),
    }
}

/// Part of `grid` inside `domain`.
pub fn crop(grid: &SnapshotGrid, domain: &SolveDomain) -> Result<SnapshotGrid> {
    let inside = |iv: [f64; 2], axis: &[f64]| -> Result<(usize, usize)> {
        let slack = 1e-9 * (iv[1] - iv[0]).abs().max(1.0);
        let idx: Vec<usize> = (0..axis.len())
            .filter(|&i| axis[i] >= iv[0] - slack && axis[i] <= iv[1] + slack)
            .collect();
        match (idx.first(), idx.last()) {
            (Some(&a), Some(&b)) => Ok((a, b + 1)),
            _ => Err(ExperimentError::Config(format!("no grid nodes inside {iv:?}"))),
        }
    };
    let (t0, t1) = inside(domain.t, grid.times())?;
    let (x0, x1) = inside(domain.x, grid.xs())?;
    let (y0, y1, ys) = match (domain.y, grid.ys()) {
        (Some(iv), Some(ys)) => {
            let (a, b) = inside(iv, ys)?;
            (a, b, Some(ys[a..b].to_vec()))
        }
        (None, None) => (0, 1, None),
        _ => return Err(ExperimentError::Config("solve domain and grid differ in dimension".into())),
    };
    let values: Vec<Array3<f64>> = (0..grid.channels().len())
        .map(|c| grid.channel(c).slice(s![t0..t1, x0..x1, y0..y1]).to_owned())
        .collect();
    Ok(SnapshotGrid::new(
        grid.times()[t0..t1].to_vec(),
        grid.xs()[x0..x1].to_vec(),
        ys,
        grid.channels().to_vec(),
        values,
    )?)
}

/// Solves the learned equation (or the configured exact one) from the truth's
/// initial snapshot, boundary faces and aux fields.
pub fn solve(exp: &Experiment, model: Option<&TrainedDhpm>, truth: &SnapshotGrid) -> Result<PinnSolution> {
    let sc = &exp.solve;
    let (cfg, exact): (_, Option<Vec<KnownDynamics>>) = match (&sc.exact, model) {
        (Some(name), _) => (exp.features.clone(), Some(inject_known_dynamics(name, &exp.features)?)),
        (None, Some(m)) => (m.model.features.clone(), None),
        (None, None) => return Err(ExperimentError::Config("a learned solve needs a trained model".into())),
    };
    let dynamics: Vec<&dyn Dynamics> = match (&exact, model) {
        (Some(e), _) => e.iter().map(|d| d as &dyn Dynamics).collect(),
        (None, Some(m)) => m.model.n_nets.iter().map(|n| n as &dyn Dynamics).collect(),
        (None, None) => unreachable!(),
    };
    let domain = solve_domain(exp, truth);
    let shifted = crop(truth, &domain)?;
    if (shifted.times()[0] - domain.t[0]).abs() > 1e-9 * domain.t[0].abs().max(1.0) {
        return Err(ExperimentError::Config(format!("no snapshot at the solve start t = {}", domain.t[0])));
    }
    let mut data = SolveData::initial_from(&shifted, &cfg.channels)?;
    if sc.boundary == Boundary::Dirichlet {
        data = data.with_faces(&shifted, &cfg.channels, &domain)?;
    }
    if !cfg.aux_channels.is_empty() {
        data = data.with_aux(&shifted, &cfg.aux_channels)?;
    }
    let spec = SolveSpec {
        domain,
        boundary: sc.boundary,
        collocation: sc.collocation,
        hidden: sc.hidden.clone(),
        activation: sc.activation,
        adam_iters: sc.adam_iters,
        lbfgs_iters: sc.lbfgs_iters,
        adam: sc.adam,
        lbfgs: sc.lbfgs,
        seed: exp.seed,
        log_every: sc.log_every,
    };
    Ok(solve_learned(&spec, &cfg, &dynamics, &data)?)
}

/// Errors of `solution` against the truth on the truth's nodes inside the solve domain,
/// one report per configured view. `split` overrides the configured split.
pub fn evaluate(
    exp: &Experiment,
    solution: &SnapshotGrid,
    truth: &SnapshotGrid,
    split: Option<Option<f64>>,
) -> Result<Vec<ErrorReport>> {
    let split = split.unwrap_or(exp.evaluate.split);
    exp.evaluate
        .views
        .iter()
        .map(|v| Ok(ErrorReport::evaluate(solution, truth, split, v)?))
        .collect()
}

fn magnitude_of(views: &[ChannelView]) -> Option<(&str, &str)> {
    views.iter().find_map(|v| match v {
        ChannelView::Magnitude { re, im } => Some((re.as_str(), im.as_str())),
        _ => None,
    })
}

/// Evaluates a solution on the truth nodes inside its domain.
pub fn solution_grid(sol: &PinnSolution, truth: &SnapshotGrid) -> Result<(SnapshotGrid, SnapshotGrid)> {
    let region = crop(truth, &sol.domain)?;
    let grid = sol.evaluate_on_grid(region.times(), region.xs(), region.ys(), None)?;
    Ok((grid, region))
}

/// Summary of a full pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub experiment: String,
    pub config_hash: String,
    pub reports: Vec<ErrorReport>,
    /// Unweighted data + residual loss before and after training (`None` for exact solves).
    pub loss_initial: Option<f64>,
    pub loss_final: Option<f64>,
    pub train_status: Option<TrainStatus>,
}

impl PipelineOutcome {
    pub fn headline(&self) -> &ErrorReport {
        &self.reports[0]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ExperimentError::Config(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn write_reports(paths: &RunPaths, reports: &[ErrorReport]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (k, r) in reports.iter().enumerate() {
        let p = paths.report(k);
        r.save(&p)?;
        out.push(p);
    }
    Ok(out)
}

fn rel(paths: &RunPaths, p: &Path) -> String {
    p.strip_prefix(&paths.dir).unwrap_or(p).display().to_string()
}

/// generate → subsample → train → solve → evaluate, writing every artifact under `dir`.
/// The cross-generalization truth replaces the training truth for solving and
/// evaluation when `crossgen` is set.
pub fn run_pipeline(exp: &Experiment, dir: &Path, crossgen: bool) -> Result<PipelineOutcome> {
    let start = Instant::now();
    let paths = RunPaths::new(dir);
    std::fs::create_dir_all(dir)?;
    std::fs::write(paths.config(), exp.to_toml())?;
    let mut outputs = vec![paths.config()];

    let truth = generate(exp).map_err(ExperimentError::at("generate"))?;
    truth.save(&paths.truth()).map_err(|e| ExperimentError::at("generate")(e.into()))?;
    outputs.push(paths.truth());

    let ds = sample(exp, &truth).map_err(ExperimentError::at("subsample"))?;
    ds.save(&paths.dataset()).map_err(|e| ExperimentError::at("subsample")(e.into()))?;
    outputs.push(paths.dataset());

    let (trained, loss_initial, loss_final) = if exp.solve.exact.is_some() {
        (None, None, None)
    } else {
        let stage = ExperimentError::at("train");
        let run = || -> Result<(TrainedDhpm, f64, f64)> {
            let l0 = initial_loss(exp, &ds)?;
            let t = fit(exp, &ds)?;
            let l1 = sse_loss(&t.model, &ds)?.total;
            t.save(&paths.model())?;
            Ok((t, l0, l1))
        };
        let (t, l0, l1) = run().map_err(stage)?;
        outputs.push(paths.model());
        (Some(t), Some(l0), Some(l1))
    };

    let (test_truth, split) = if crossgen {
        let g = generate_crossgen(exp).map_err(ExperimentError::at("generate"))?;
        let p = dir.join("crossgen_truth.grid");
        g.save(&p).map_err(|e| ExperimentError::at("generate")(e.into()))?;
        outputs.push(p);
        (g, Some(None))
    } else {
        (truth, None)
    };

    let stage = ExperimentError::at("solve");
    let sol = solve(exp, trained.as_ref(), &test_truth).map_err(stage)?;
    let (grid, region) = solution_grid(&sol, &test_truth).map_err(ExperimentError::at("solve"))?;
    grid.save(&paths.solution()).map_err(|e| ExperimentError::at("solve")(e.into()))?;
    sol.write_log(&paths.solve_log()).map_err(|e| ExperimentError::at("solve")(e.into()))?;
    outputs.extend([paths.solution(), paths.solve_log()]);

    let stage = ExperimentError::at("evaluate");
    let reports = evaluate(exp, &grid, &region, split).map_err(stage)?;
    let run = || -> Result<Vec<PathBuf>> {
        let mut out = write_reports(&paths, &reports)?;
        let mag = magnitude_of(&exp.evaluate.views);
        for (name, g) in [("solution.csv", &grid), ("truth.csv", &region)] {
            export_plot_grid(g, &dir.join(name), PlotFormat::Csv, mag)?;
            out.push(dir.join(name));
        }
        Ok(out)
    };
    outputs.extend(run().map_err(ExperimentError::at("evaluate"))?);

    let outcome = PipelineOutcome {
        experiment: exp.name.clone(),
        config_hash: exp.hash(),
        reports,
        loss_initial,
        loss_final,
        train_status: trained.as_ref().map(|t| t.status),
    };
    outcome.save(&paths.outcome())?;
    outputs.push(paths.outcome());

    let mut m = RunManifest::new("pipeline", exp);
    m.inputs = exp.ingest.iter().map(|p| p.display().to_string()).collect();
    m.outputs = outputs.iter().map(|p| rel(&paths, p)).collect();
    m.wall_seconds = start.elapsed().as_secs_f64();
    m.write(&paths.manifest("pipeline"))?;
    Ok(outcome)
}
