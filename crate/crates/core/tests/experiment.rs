use std::path::Path;

use dhpm_core::experiment::{
    cells, load_preset, parse_toml, preset_names, preset_source, resolve, run_pipeline, run_study, ErrorClass,
    Experiment, ExperimentError, Scale, Study,
};
use dhpm_core::metrics::ErrorReport;

fn tiny_heat() -> Experiment {
    let over = parse_toml(
        r#"
        [sampling]
        n = 60
        [model]
        u_hidden = [6]
        n_hidden = [4]
        [train]
        adam_iters = 20
        lbfgs_iters = 20
        [solve]
        hidden = [6]
        adam_iters = 20
        lbfgs_iters = 20
        collocation = { interior = 50, initial = 16, boundary = 8 }
        "#,
    )
    .unwrap();
    resolve(preset_source("heat-test").unwrap(), Scale::Desk, &[over]).unwrap()
}

fn files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn every_preset_resolves_at_both_scales() {
    for name in preset_names() {
        for scale in [Scale::Paper, Scale::Desk] {
            let e = load_preset(name, scale).unwrap_or_else(|e| panic!("{name} {scale:?}: {e}"));
            assert_eq!(e.name, name);
            // the canonical text resolves to the same experiment
            assert_eq!(resolve(&e.to_toml(), scale, &[]).unwrap(), e);
        }
    }
}

#[test]
fn shipped_benchmark_settings() {
    let b = load_preset("burgers", Scale::Paper).unwrap();
    let p = b.problem.as_ref().unwrap();
    assert_eq!((p.domain, p.modes, p.t_final, p.save_every), ([-8.0, 8.0], 256, 10.0, 0.05));
    assert_eq!(p.validate().unwrap().1, 201);
    assert_eq!(b.sampling.n, 10000);
    assert_eq!(b.sampling.region.t.hi, Some(6.7));
    assert_eq!(b.model.u_hidden, vec![50; 4]);
    assert_eq!(b.model.n_hidden, vec![100; 2]);
    assert_eq!(b.evaluate.split, Some(6.7));

    let desk = load_preset("burgers", Scale::Desk).unwrap();
    assert_eq!(desk.sampling.n, 2000);
    assert_eq!(desk.model.u_hidden, vec![20; 3]);
    assert_eq!(desk.model.n_hidden, vec![64; 2]);
    // unchanged by the desk table
    assert_eq!(desk.problem, b.problem);

    let kdv = load_preset("kdv", Scale::Paper).unwrap();
    assert_eq!(kdv.problem.as_ref().unwrap().validate().unwrap().1, 201);
    assert_eq!(kdv.evaluate.split, Some(26.8));
    let ks = load_preset("ks", Scale::Paper).unwrap();
    assert_eq!(ks.problem.as_ref().unwrap().validate().unwrap().1, 251);
    let nls = load_preset("nls", Scale::Paper).unwrap();
    assert_eq!(nls.problem.as_ref().unwrap().validate().unwrap().1, 501);
    assert_eq!(nls.features.channels, ["u", "v"]);
    let ns = load_preset("navier-stokes", Scale::Paper).unwrap();
    assert_eq!(ns.features.len(), 5);
    assert_eq!(ns.sampling.n, 50000);
}

#[test]
fn overrides_and_hashes() {
    let a = load_preset("burgers", Scale::Desk).unwrap();
    let over = parse_toml("seed = 7\n[sampling]\nnoise_pct = 0.02\n").unwrap();
    let b = resolve(preset_source("burgers").unwrap(), Scale::Desk, &[over]).unwrap();
    assert_eq!(b.seed, 7);
    assert_eq!(b.sampling.noise_pct, 0.02);
    assert_eq!(b.sampling.n, a.sampling.n);
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash(), load_preset("burgers", Scale::Desk).unwrap().hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn invalid_configurations_are_config_errors() {
    let cases = [
        "name = \"x\"",
        "[sampling]\nbogus = 1",
        "[features]\nspatial_order = 9",
        "[solve]\nexact = \"nope\"",
        "ingest = \"somewhere.grid\"",
    ];
    for text in cases {
        let over = parse_toml(text).unwrap();
        let err = resolve(preset_source("burgers").unwrap(), Scale::Desk, &[over]);
        if text.starts_with("name") {
            assert!(err.is_ok());
            continue;
        }
        let err = err.expect_err(text);
        assert_eq!(err.class(), ErrorClass::Config, "{text}: {err}");
    }
    assert!(load_preset("no-such-preset", Scale::Desk).is_err());
}

#[test]
fn pipeline_writes_every_artifact_and_reruns_identically() {
    let exp = tiny_heat();
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let out = run_pipeline(&exp, &a, false).unwrap();
    run_pipeline(&exp, &b, false).unwrap();

    let r = out.headline();
    assert!(r.relative_l2_full.is_finite());
    assert_eq!(ErrorReport::load(&a.join("report.txt")).unwrap(), *r);
    assert!(out.loss_final.unwrap() <= out.loss_initial.unwrap());

    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    for (pa, pb) in fa.iter().zip(&fb) {
        let name = pa.file_name().unwrap().to_str().unwrap();
        if name.ends_with("log.csv") || name.starts_with("manifest") {
            continue;
        }
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap(), "{name} differs");
    }
    for needed in ["config.toml", "truth.grid", "dataset.csv", "dataset.meta.json", "solution.grid", "outcome.json"] {
        assert!(a.join(needed).exists(), "{needed}");
    }
    assert!(a.join("model").join("manifest.json").exists());
}

#[test]
fn exact_dynamics_skip_training() {
    let mut exp = tiny_heat();
    exp.solve.exact = Some("heat".into());
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&exp, dir.path(), false).unwrap();
    assert!(out.loss_initial.is_none() && out.train_status.is_none());
    assert!(!dir.path().join("model").exists());
}

#[test]
fn zero_budget_study_gives_finite_initial_errors() {
    let mut exp = tiny_heat();
    exp.train.adam_iters = 0;
    exp.train.lbfgs_iters = 0;
    exp.solve.adam_iters = 0;
    exp.solve.lbfgs_iters = 0;
    exp.study.noise_levels = vec![0.0, 0.05];
    let dir = tempfile::tempdir().unwrap();
    let t = run_study(Study::Noise, &exp, dir.path(), false).unwrap();
    assert_eq!(t.cells.len(), 2);
    assert!(t.cells.iter().all(|c| c.error.is_some_and(f64::is_finite)), "{t:?}");
    assert!(dir.path().join("study_noise.md").exists());
    assert!(t.to_markdown().contains("Clean data | 5% noise"));

    // a resumed run reads the finished cells back
    let again = run_study(Study::Noise, &exp, dir.path(), true).unwrap();
    assert_eq!(again.cells, t.cells);
}

#[test]
fn failing_cells_are_recorded() {
    let mut exp = tiny_heat();
    exp.study.orders = vec![2, 7];
    exp.train.adam_iters = 0;
    exp.train.lbfgs_iters = 0;
    exp.solve.adam_iters = 0;
    exp.solve.lbfgs_iters = 0;
    let dir = tempfile::tempdir().unwrap();
    let t = run_study(Study::Order, &exp, dir.path(), false).unwrap();
    assert!(t.cells[0].error.is_some());
    assert!(t.cells[1].error.is_none() && t.cells[1].failure.is_some());
    assert!(t.to_markdown().contains("failed"));
}

#[test]
fn study_cells_follow_the_tables() {
    let b = load_preset("burgers", Scale::Paper).unwrap();
    let labels = |s| cells(s, &b).into_iter().map(|c| c.0).collect::<Vec<_>>();
    assert_eq!(labels(Study::Noise), ["Clean data", "1% noise", "2% noise", "5% noise"]);
    assert_eq!(labels(Study::Order), ["1st order", "2nd order", "3rd order", "4th order"]);
    assert_eq!(labels(Study::Txdep).len(), 4);
    let heat = tiny_heat();
    assert!(matches!(
        run_study(Study::Crossgen, &heat, Path::new("/nonexistent"), false),
        Err(ExperimentError::Config(_))
    ));
}
