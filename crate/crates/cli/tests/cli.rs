use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
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
"#;

fn dhpm(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dhpm"))
        .args(args)
        .current_dir(dir)
        .env_remove("DHPM_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dhpm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const DATA: [&str; 7] = [
    "config.toml",
    "truth.grid",
    "dataset.csv",
    "model/manifest.json",
    "solution.grid",
    "report.txt",
    "solution.csv",
];

#[test]
fn stage_commands_match_the_pipeline_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    for cmd in ["generate", "subsample", "train", "solve", "evaluate"] {
        ok(d, &[cmd, "heat-test", "--config", "tiny.toml", "--out-dir", "a"]);
    }
    let report = ok(d, &["pipeline", "heat-test", "--config", "tiny.toml", "--out-dir", "b"]);
    assert!(report.contains("relative_l2_full="));
    ok(d, &["pipeline", "heat-test", "--config", "tiny.toml", "--out-dir", "c"]);

    let (a, b, c) = (d.join("a/heat-test-desk"), d.join("b/heat-test-desk"), d.join("c/heat-test-desk"));
    for f in DATA {
        let fb = std::fs::read(b.join(f)).unwrap();
        assert_eq!(std::fs::read(a.join(f)).unwrap(), fb, "{f}");
        assert_eq!(std::fs::read(c.join(f)).unwrap(), fb, "{f}");
    }
    for cmd in ["generate", "subsample", "train", "solve", "evaluate"] {
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(a.join(format!("manifest_{cmd}.json"))).unwrap()).unwrap();
        assert_eq!(m["command"], cmd);
        assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
        for o in m["outputs"].as_array().unwrap() {
            assert!(d.join(o.as_str().unwrap()).exists(), "{o}");
        }
    }
}

#[test]
fn seed_flag_changes_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for (root, seed) in [("s1", "1"), ("s2", "2")] {
        ok(d, &["generate", "heat-test", "--out-dir", root]);
        ok(d, &["subsample", "heat-test", "--out-dir", root, "--seed", seed]);
    }
    let read = |r: &str| std::fs::read(d.join(r).join("heat-test-desk/dataset.csv")).unwrap();
    assert_ne!(read("s1"), read("s2"));
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dhpm"))
        .args(["generate", "heat-test"])
        .current_dir(tmp.path())
        .env("DHPM_OUT_DIR", "envroot")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("envroot/heat-test-desk/truth.grid").exists());
}

#[test]
fn exit_codes_by_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = |args: &[&str]| dhpm(d, args).status.code();
    assert_eq!(code(&["generate", "no-such-preset"]), Some(2));
    assert_eq!(code(&["study", "bogus", "heat-test"]), Some(2));
    std::fs::write(d.join("bad.toml"), "[sampling]\nunknown_key = 1\n").unwrap();
    assert_eq!(code(&["generate", "heat-test", "--config", "bad.toml"]), Some(2));
    // later stages need the artifacts of earlier ones
    assert_eq!(code(&["train", "heat-test"]), Some(4));
    assert_eq!(code(&["generate", "navier-stokes"]), Some(4));
    let err = String::from_utf8(dhpm(d, &["solve", "heat-test"]).stderr).unwrap();
    assert!(err.contains("run `generate` first"), "{err}");
}

#[test]
fn zero_budget_study_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let zero = "[train]\nadam_iters = 0\nlbfgs_iters = 0\n[solve]\nadam_iters = 0\nlbfgs_iters = 0\n[study]\nnoise_levels = [0.0, 0.02]\n";
    std::fs::write(d.join("zero.toml"), zero).unwrap();
    let table = ok(d, &["study", "noise", "heat-test", "--config", "zero.toml", "--out-dir", "o"]);
    assert!(table.contains("| | Clean data | 2% noise |"), "{table}");
    assert!(!table.contains("failed"));
    assert!(d.join("o/heat-test-desk/study_noise/study_noise.csv").exists());
}
