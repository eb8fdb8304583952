//! Command-line behavior: exit codes and output files.

use std::path::Path;
use std::process::{Command, Output};

use molmix::evaluation::{read_records, ScenarioConfig, CSV_HEADER};

const EXE: &str = env!("CARGO_BIN_EXE_molmix");

fn molmix(args: &[&str], runs: &Path) -> Output {
    Command::new(EXE)
        .args(args)
        .arg("--runs-dir")
        .arg(runs)
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let mut cfg = ScenarioConfig::preset("h-full").unwrap();
    cfg.name = "small".into();
    cfg.eval.n_list = vec![6];
    cfg.eval.trials = 2000;
    cfg.eval.scatter_samples = 200;
    cfg.train.epochs = 10;
    let path = dir.join("small.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn malformed_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\n[train]\nepochs = \"many\"\n").unwrap();
    let out = molmix(&["train", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn missing_weights_exit_with_3_and_name_the_fix() {
    let dir = tempfile::tempdir().unwrap();
    let out = molmix(&["evaluate", "--scenario", "full-csi", "--n", "4"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("full-csi") && err.contains("train"), "{err}");
}

#[test]
fn unknown_scenario_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = molmix(&["train", "--scenario", "nowhere"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn gradcheck_passes() {
    let out = Command::new(EXE).args(["gradcheck", "--seed", "3"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

#[test]
fn train_then_export_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let runs = dir.path().join("runs");
    let ok = |args: &[&str]| {
        let mut all = args.to_vec();
        all.extend(["--config", &config, "--seed", "2"]);
        let out = molmix(&all, &runs);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    ok(&["train"]);
    let run = runs.join("small/2");
    for f in ["config.toml", "weights-n6.json", "train-report-n6.json"] {
        assert!(run.join(f).exists(), "{f}");
    }

    ok(&["sweep-snr"]);
    let text = std::fs::read_to_string(run.join("sweep-snr.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    let records = read_records(text.as_bytes()).unwrap();
    // AE and MDA+AML at every ν of the default grid.
    assert_eq!(records.len(), 22);
    assert!(records.iter().all(|r| r.trials == 2000 && r.seed == 2));

    ok(&["export-alphabet"]);
    let alphabet = std::fs::read_to_string(run.join("alphabet-n6-user1.csv")).unwrap();
    assert_eq!(alphabet.lines().count(), 7);

    ok(&["export-scatter"]);
    let scatter: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("scatter-n6.json")).unwrap()).unwrap();
    assert_eq!(scatter.as_array().unwrap().len(), 6 * 3);
}
