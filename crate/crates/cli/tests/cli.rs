use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn chaoscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chaoscope"))
        .args(args)
        .env("CHAOSCOPE_THREADS", "2")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    let out = dir.join("out");
    let text = format!("schema_version = 1\noutput_dir = \"{}\"\n{body}", out.display());
    std::fs::write(&path, text).unwrap();
    path
}

const SWEEP: &str = r#"
[model]
seed = 0

[probe]
kind = "sweep"
directions = ["v1", "v64", "e1", "rand3", "rand4"]
eps = { min = 1e-14, max = 1e-1, n = 40 }
"#;

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sweep_writes_200_rows_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.toml", SWEEP);
    let first = chaoscope(&["run", cfg.to_str().unwrap(), "--plot"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let csv = dir.path().join("out/sweep.csv");
    let bytes = std::fs::read(&csv).unwrap();
    assert_eq!(String::from_utf8_lossy(&bytes).lines().count(), 201);
    assert!(dir.path().join("out/sweep.manifest.json").exists());
    assert!(dir.path().join("out/sweep.svg").exists());

    let clash = chaoscope(&["run", cfg.to_str().unwrap()]);
    assert_eq!(clash.status.code(), Some(1));
    assert!(stderr(&clash).contains("refusing to overwrite"));

    let again = chaoscope(&["run", cfg.to_str().unwrap(), "--overwrite"]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(std::fs::read(&csv).unwrap(), bytes);

    let svg = dir.path().join("replot.svg");
    let plot = chaoscope(&["plot", csv.to_str().unwrap(), "--kind", "eps_sweep", "--out", svg.to_str().unwrap()]);
    assert!(plot.status.success(), "{}", stderr(&plot));
    assert_eq!(std::fs::read(&svg).unwrap(), std::fs::read(dir.path().join("out/sweep.svg")).unwrap());
    let wrong = chaoscope(&["plot", csv.to_str().unwrap(), "--kind", "convergence", "--out", "x.svg"]);
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn missing_seed_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[model]\nd_model = 64\n[probe]\nkind = \"sweep\"\n");
    let o = chaoscope(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.seed"), "{}", stderr(&o));
    let typo = write_config(dir.path(), "typo.toml", "[model]\nseed = 1\nd_modle = 3\n[probe]\nkind = \"sweep\"\n");
    let o = chaoscope(&["run", typo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("typo.toml:"), "{}", stderr(&o));
}

#[test]
fn precision_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let body = "[model]\nseed = 0\n[probe]\nkind = \"layer_gain\"\ndirections = [\"v1\"]\n";
    let cfg = write_config(dir.path(), "lg.toml", body);
    let o = chaoscope(&["--precision", "fp64", "run", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(dir.path().join("out/layer_gain.manifest.json")).unwrap();
    assert!(manifest.contains("\"precision\": \"fp64\""), "{manifest}");
    assert_eq!(chaoscope(&["--precision", "fp16", "run", "x"]).status.code(), Some(1));
}

#[test]
fn spectrum_subcommand_writes_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SWEEP);
    let o = chaoscope(&["spectrum", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/spectrum.csv")).unwrap();
    assert_eq!(csv.lines().count(), 65);
    assert!(std::fs::read_dir(dir.path().join("out/cache")).unwrap().count() == 1);
}

#[test]
fn unreachable_tie_exits_with_budget_code() {
    let dir = tempfile::tempdir().unwrap();
    let body = "[model]\nseed = 0\n[probe]\nkind = \"decision_map\"\nnear_tie = { tolerance = 1e-12, max_doublings = 0 }\n";
    let cfg = write_config(dir.path(), "dm.toml", body);
    let o = chaoscope(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("no near-tie"));
}

#[test]
fn overflowing_point_is_a_numerical_abort() {
    let dir = tempfile::tempdir().unwrap();
    let body = "[model]\nseed = 0\n[point]\nscale = 1e38\n[probe]\nkind = \"sweep\"\n";
    let cfg = write_config(dir.path(), "nan.toml", body);
    let o = chaoscope(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn help_and_unknown_demo() {
    assert!(chaoscope(&["--help"]).status.success());
    assert_eq!(chaoscope(&["demo", "tornado"]).status.code(), Some(1));
}
