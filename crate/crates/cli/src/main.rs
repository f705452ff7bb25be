//! `dhpm`: generate data, subsample, train, solve, evaluate and run studies.
//!
//! Every command resolves one experiment (a shipped preset or a TOML file,
//! the scale table, then `--config` overrides and `--seed`) and works inside
//! `<out-dir>/<experiment>-<scale>`. Stage commands read what the previous
//! stage left there.
//!
//! Exit codes: 0 success, 2 configuration, 3 numerical failure, 4 I/O.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dhpm_core::dataset::Dataset;
use dhpm_core::dhpm::TrainedDhpm;
use dhpm_core::experiment::{
    evaluate, fit, generate, initial_loss, parse_toml, preset_source, resolve, run_pipeline, run_study, sample, solve,
    solution_grid, ErrorClass, Experiment, ExperimentError, RunManifest, RunPaths, Scale, Study,
};
use dhpm_core::grid::SnapshotGrid;
use dhpm_core::metrics::{export_plot_grid, ChannelView, PlotFormat};

#[derive(Parser)]
#[command(name = "dhpm", version, about = "Discover hidden PDE dynamics from scattered data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Shipped preset name or path to a TOML experiment file.
    preset: String,
    /// Scale profile: `desk` (reduced budgets) or `paper`.
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// Override file merged over the preset; repeatable, applied in order.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Seed for sampling, training and solving.
    #[arg(long)]
    seed: Option<u64>,
    /// Root for run directories.
    #[arg(long, env = "DHPM_OUT_DIR", default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate (or ingest) the ground-truth grid.
    Generate(Common),
    /// Draw the scattered training set from the ground truth.
    Subsample(Common),
    /// Fit the u- and N-networks to the training set.
    Train(Common),
    /// Solve the learned (or configured exact) equation.
    Solve(Common),
    /// Compare the solution to the ground truth.
    Evaluate(Common),
    /// Run a parameter study: noise, order, txdep or crossgen.
    Study {
        study: Study,
        #[command(flatten)]
        common: Common,
        /// Reuse finished cells.
        #[arg(long)]
        resume: bool,
    },
    /// All stages in one go.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Solve and evaluate from the second initial condition.
        #[arg(long)]
        crossgen: bool,
    },
}

type Result<T> = std::result::Result<T, ExperimentError>;

impl Common {
    fn experiment(&self) -> Result<Experiment> {
        let base = match preset_source(&self.preset) {
            Ok(src) => src.to_string(),
            Err(e) => {
                let p = Path::new(&self.preset);
                if !p.is_file() {
                    return Err(e);
                }
                std::fs::read_to_string(p)?
            }
        };
        let overrides = self
            .configs
            .iter()
            .map(|p| parse_toml(&std::fs::read_to_string(p)?))
            .collect::<Result<Vec<_>>>()?;
        let exp = resolve(&base, self.scale, &overrides)?;
        Ok(match self.seed {
            Some(s) => exp.with_seed(s),
            None => exp,
        })
    }

    fn run_dir(&self, exp: &Experiment) -> PathBuf {
        let scale = match self.scale {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        };
        self.out_dir.join(format!("{}-{scale}", exp.name))
    }
}

/// Bookkeeping shared by the stage commands.
struct Stage {
    paths: RunPaths,
    manifest: RunManifest,
    start: Instant,
}

impl Stage {
    fn open(command: &str, exp: &Experiment, dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        let paths = RunPaths::new(dir);
        std::fs::write(paths.config(), exp.to_toml())?;
        let mut manifest = RunManifest::new(command, exp);
        manifest.outputs.push(paths.config().display().to_string());
        Ok(Stage {
            paths,
            manifest,
            start: Instant::now(),
        })
    }

    fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.display().to_string());
    }

    fn output(&mut self, p: &Path) {
        self.manifest.outputs.push(p.display().to_string());
    }

    fn close(mut self) -> Result<()> {
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
        self.manifest.write(&self.paths.manifest(&self.manifest.command))
    }
}

fn require(p: PathBuf, made_by: &str) -> Result<PathBuf> {
    if p.exists() {
        Ok(p)
    } else {
        Err(ExperimentError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is missing; run `{made_by}` first", p.display()),
        )))
    }
}

fn load_truth(st: &mut Stage) -> Result<SnapshotGrid> {
    let p = require(st.paths.truth(), "generate")?;
    st.input(&p);
    Ok(SnapshotGrid::load(&p)?)
}

fn cmd_generate(c: &Common) -> Result<()> {
    let exp = c.experiment()?;
    let mut st = Stage::open("generate", &exp, c.run_dir(&exp))?;
    if let Some(p) = &exp.ingest {
        st.input(p);
    }
    let truth = generate(&exp)?;
    truth.save(&st.paths.truth())?;
    st.output(&st.paths.truth());
    println!(
        "{}: {} snapshots x {} nodes -> {}",
        exp.name,
        truth.times().len(),
        truth.xs().len() * truth.ys().map_or(1, |y| y.len()),
        st.paths.truth().display()
    );
    st.close()
}

fn cmd_subsample(c: &Common) -> Result<()> {
    let exp = c.experiment()?;
    let mut st = Stage::open("subsample", &exp, c.run_dir(&exp))?;
    let truth = load_truth(&mut st)?;
    let ds = sample(&exp, &truth)?;
    ds.save(&st.paths.dataset())?;
    st.output(&st.paths.dataset());
    println!("{} points -> {}", ds.len(), st.paths.dataset().display());
    st.close()
}

fn cmd_train(c: &Common) -> Result<()> {
    let exp = c.experiment()?;
    let mut st = Stage::open("train", &exp, c.run_dir(&exp))?;
    let p = require(st.paths.dataset(), "subsample")?;
    st.input(&p);
    let ds = Dataset::load(&p)?;
    let l0 = initial_loss(&exp, &ds)?;
    let t = fit(&exp, &ds)?;
    t.save(&st.paths.model())?;
    st.output(&st.paths.model());
    let last = t.log.last().map_or(f64::NAN, |e| e.loss);
    println!("loss {l0:.3e} -> {last:.3e} ({:?})", t.status);
    st.close()
}

fn cmd_solve(c: &Common) -> Result<()> {
    let exp = c.experiment()?;
    let mut st = Stage::open("solve", &exp, c.run_dir(&exp))?;
    let truth = load_truth(&mut st)?;
    let model = match exp.solve.exact {
        Some(_) => None,
        None => {
            let p = require(st.paths.model(), "train")?;
            st.input(&p);
            Some(TrainedDhpm::load(&p)?)
        }
    };
    let sol = solve(&exp, model.as_ref(), &truth)?;
    let (grid, _) = solution_grid(&sol, &truth)?;
    grid.save(&st.paths.solution())?;
    sol.write_log(&st.paths.solve_log())?;
    st.output(&st.paths.solution());
    st.output(&st.paths.solve_log());
    println!("solution -> {}", st.paths.solution().display());
    st.close()
}

fn cmd_evaluate(c: &Common) -> Result<()> {
    let exp = c.experiment()?;
    let mut st = Stage::open("evaluate", &exp, c.run_dir(&exp))?;
    let truth = load_truth(&mut st)?;
    let p = require(st.paths.solution(), "solve")?;
    st.input(&p);
    let sol = SnapshotGrid::load(&p)?;
    let domain = dhpm_core::pinn::SolveDomain {
        t: [sol.times()[0], sol.times()[sol.times().len() - 1]],
        x: [sol.xs()[0], sol.xs()[sol.xs().len() - 1]],
        y: sol.ys().map(|y| [y[0], y[y.len() - 1]]),
    };
    let region = dhpm_core::experiment::crop(&truth, &domain)?;
    let reports = evaluate(&exp, &sol, &region, None)?;
    for (k, r) in reports.iter().enumerate() {
        r.save(&st.paths.report(k))?;
        st.output(&st.paths.report(k));
        print!("{}", r.to_kv());
    }
    let mag = exp.evaluate.views.iter().find_map(|v| match v {
        ChannelView::Magnitude { re, im } => Some((re.as_str(), im.as_str())),
        _ => None,
    });
    let dir = st.paths.dir.clone();
    for (name, g) in [("solution.csv", &sol), ("truth.csv", &region)] {
        export_plot_grid(g, &dir.join(name), PlotFormat::Csv, mag)?;
        st.output(&dir.join(name));
    }
    st.close()
}

fn cmd_study(study: Study, c: &Common, resume: bool) -> Result<()> {
    let exp = c.experiment()?;
    let dir = c.run_dir(&exp).join(format!("study_{}", study.name()));
    let start = Instant::now();
    let table = run_study(study, &exp, &dir, resume)?;
    print!("{}", table.to_markdown());
    let mut m = RunManifest::new("study", &exp);
    m.outputs = vec![
        dir.join(format!("study_{}.md", study.name())).display().to_string(),
        dir.join(format!("study_{}.csv", study.name())).display().to_string(),
    ];
    m.outputs.extend(table.cells.iter().map(|c| c.dir.display().to_string()));
    m.wall_seconds = start.elapsed().as_secs_f64();
    m.write(&dir.join(format!("manifest_study_{}.json", study.name())))
}

fn cmd_pipeline(c: &Common, crossgen: bool) -> Result<()> {
    let exp = c.experiment()?;
    let dir = c.run_dir(&exp);
    let dir = if crossgen { dir.join("crossgen") } else { dir };
    let out = run_pipeline(&exp, &dir, crossgen)?;
    for r in &out.reports {
        print!("{}", r.to_kv());
    }
    if let (Some(a), Some(b)) = (out.loss_initial, out.loss_final) {
        println!("loss {a:.3e} -> {b:.3e}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => cmd_generate(c),
        Command::Subsample(c) => cmd_subsample(c),
        Command::Train(c) => cmd_train(c),
        Command::Solve(c) => cmd_solve(c),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::Study { study, common, resume } => cmd_study(*study, common, *resume),
        Command::Pipeline { common, crossgen } => cmd_pipeline(common, *crossgen),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numeric => 3,
                ErrorClass::Io => 4,
            })
        }
    }
}
