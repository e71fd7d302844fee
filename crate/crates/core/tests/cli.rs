use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{TimeZone, Utc};
use tempfile::TempDir;

use gridflex::config::{DataPaths, ScenarioConfig, Strategy};
use gridflex::market::{write_hourly_csv_file, HourlySeries};
use gridflex::synth;

fn gridflex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridflex"))
        .args(args)
        .env_remove("GRIDFLEX_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Small scenario with every input written to CSV under `dir`.
fn write_scenario(dir: &Path, days: usize, intensity_days: usize) -> PathBuf {
    let start = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    write_hourly_csv_file(&synth::spot_prices(start, days, 1).0, &dir.join("spot.csv")).unwrap();
    write_hourly_csv_file(&synth::baseload(start, days, 10, 2).0, &dir.join("baseload.csv")).unwrap();
    write_hourly_csv_file(
        &synth::carbon_intensity(start, intensity_days, 3).0,
        &dir.join("intensity.csv"),
    )
    .unwrap();
    let cfg = ScenarioConfig {
        seed: 7,
        span_days: days as u32,
        num_households: 10,
        transformer_capacity_kw: 40.0,
        strategy: Strategy::BaselineRtp,
        data: DataPaths {
            spot: Some("spot.csv".into()),
            baseload: Some("baseload.csv".into()),
            intensity: Some("intensity.csv".into()),
            ..DataPaths::default()
        },
        ..ScenarioConfig::default()
    };
    let path = dir.join("scenario.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(gridflex(&["--help"]).status.code(), Some(0));
    assert_eq!(gridflex(&["--version"]).status.code(), Some(0));
    assert!(stdout(&gridflex(&["run", "--help"])).contains("--config"));
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(gridflex(&["run"]).status.code(), Some(1));
    assert_eq!(gridflex(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gridflex(&["payback", "--annual-compensation", "abc"]).status.code(), Some(1));
}

#[test]
fn invalid_config_exits_one() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "span_days = 0\n").unwrap();
    let o = gridflex(&["validate", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    std::fs::write(&path, "no_such_key = 3\n").unwrap();
    assert_eq!(gridflex(&["validate", "--config", s(&path)]).status.code(), Some(1));
}

#[test]
fn missing_spot_file_exits_two_and_names_it() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), 2, 2);
    std::fs::remove_file(tmp.path().join("spot.csv")).unwrap();
    let o = gridflex(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("spot.csv"), "{}", stderr(&o));
}

#[test]
fn validate_reports_short_series() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), 3, 2);
    let o = gridflex(&["validate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("intensity") && e.contains("1.00 days short"), "{e}");
}

#[test]
fn validate_accepts_complete_data() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), 3, 3);
    let o = gridflex(&["validate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("ok"));
}

#[test]
fn gapped_csv_exits_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), 2, 2);
    let spot = tmp.path().join("spot.csv");
    let text = std::fs::read_to_string(&spot).unwrap();
    let kept: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 5).map(|(_, l)| l).collect();
    std::fs::write(&spot, kept.join("\n")).unwrap();
    let o = gridflex(&["validate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("spot"), "{}", stderr(&o));
}

#[test]
fn oversized_charger_is_clamped_with_warning() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = write_scenario(tmp.path(), 2, 2);
    std::fs::write(
        tmp.path().join("fleet.toml"),
        "[[ev]]\nid = 1\nbattery_kwh = 80.0\nmax_power_kw = 22.0\n",
    )
    .unwrap();
    let mut cfg = ScenarioConfig::load(&cfg_path).unwrap();
    cfg.data.fleet = Some("fleet.toml".into());
    cfg.ev_adoption = 0.1;
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let o = gridflex(&["run", "--config", s(&cfg_path), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("clamped"), "{}", stderr(&o));
}

#[test]
fn run_then_compare_identical_dirs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), 2, 2);
    let out = tmp.path().join("out");
    let o = gridflex(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["load.csv", "sessions.csv", "compensation.csv", "kpi.csv", "events.log", "manifest.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let o = gridflex(&["compare", "--baseline", s(&out), "--aggregated", s(&out), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("compare.csv")).unwrap();
    let diff = csv.lines().last().unwrap();
    assert!(diff.starts_with("difference_pct,"));
    assert!(diff.split(',').skip(1).all(|c| c == "0%" || c == "n/a"), "{diff}");
}

#[test]
fn compare_rejects_different_spans() {
    let tmp = TempDir::new().unwrap();
    let short = tmp.path().join("short");
    let long = tmp.path().join("long");
    std::fs::create_dir_all(&short).unwrap();
    std::fs::create_dir_all(&long).unwrap();
    let c1 = write_scenario(&short, 2, 2);
    let c2 = write_scenario(&long, 3, 3);
    assert_eq!(gridflex(&["run", "--config", s(&c1), "--out", s(&short.join("out"))]).status.code(), Some(0));
    assert_eq!(gridflex(&["run", "--config", s(&c2), "--out", s(&long.join("out"))]).status.code(), Some(0));
    let o = gridflex(&[
        "compare",
        "--baseline",
        s(&short.join("out")),
        "--aggregated",
        s(&long.join("out")),
        "--out",
        s(tmp.path()),
    ]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("span"), "{}", stderr(&o));
}

#[test]
fn rerun_warns_when_input_changes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), 2, 2);
    let out = tmp.path().join("out");
    assert_eq!(gridflex(&["run", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(0));
    let start = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let other = HourlySeries::new(start, vec![0.5; 48]).unwrap();
    write_hourly_csv_file(&other, &tmp.path().join("spot.csv")).unwrap();
    let o = gridflex(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("spot data changed"), "{}", stderr(&o));
}

#[test]
fn output_root_defaults_to_env_var() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), 2, 2);
    let root = tmp.path().join("root");
    let o = Command::new(env!("CARGO_BIN_EXE_gridflex"))
        .args(["run", "--config", s(&cfg), "--strategy", "aggregated"])
        .env("GRIDFLEX_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(root.join("scenario").join("kpi.csv").exists());
}

#[test]
fn payback_defaults_and_not_applicable() {
    let o = gridflex(&["payback", "--annual-compensation", "6020"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("19.24") && text.contains("112.92"), "{text}");
    let o = gridflex(&["payback", "--annual-compensation", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not applicable"));
}
