//! End-to-end runs of the `waterflood` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use waterflood::crm::{CrmParameters, FitConfig};
use waterflood::evolution::{EvoConfig, LearnerFamily, SearchSpace};
use waterflood::ingest::write_production_csv;
use waterflood::learners::LearnerSpec;
use waterflood::pipeline::Pipeline;
use waterflood::protocol::{read_evolution_log_csv, read_forecasts_csv, read_metrics_csv, RunConfig};
use waterflood::synthetic;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waterflood")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_field(dir: &Path, days: usize) -> PathBuf {
    let field = synthetic::two_by_two(days, 5).field;
    let path = dir.join("field.csv");
    fs::write(&path, write_production_csv(&field.to_history())).unwrap();
    path
}

fn small_config(dir: &Path, input: &Path) -> PathBuf {
    let c = RunConfig {
        input_csv: input.to_path_buf(),
        forecast_len_days: 10,
        iterations: 2,
        window_lens: vec![40, 60],
        fit: FitConfig {
            restarts: 1,
            ..FitConfig::default()
        },
        ml_lag_window: 7,
        ml_learner: LearnerSpec::Ridge { lambda: 1.0 },
        evo: EvoConfig {
            population_size: 4,
            generations: 2,
            tournament_size: 2,
            elitism_count: 1,
            validation_len: 10,
            search_space: SearchSpace {
                learners: vec![LearnerFamily::Ridge, LearnerFamily::KNearest],
                lag_range: (7, 14),
                ..SearchSpace::default()
            },
            ..EvoConfig::default()
        },
        output_dir: dir.join("out"),
        ..RunConfig::default()
    };
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path
}

fn setup(days: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let input = write_field(dir.path(), days);
    let config = small_config(dir.path(), &input);
    (dir, config)
}

#[test]
fn fit_crm_writes_parseable_outputs() {
    let (dir, config) = setup(200);
    let out = run(&["fit-crm", "--config", config.to_str().unwrap(), "--intervals", "--forecast-len", "15"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let params = fs::read_to_string(dir.path().join("out/crm_params.json")).unwrap();
    let params = CrmParameters::from_json(&params).unwrap();
    assert_eq!((params.n_producers(), params.n_injectors()), (2, 2));
    let rows = read_forecasts_csv(&fs::read_to_string(dir.path().join("out/crm_forecast.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 15);
    assert!(rows.iter().all(|r| r.lower_m3 <= r.point_m3 && r.point_m3 <= r.upper_m3));
}

#[test]
fn flags_override_config_file() {
    let (dir, config) = setup(200);
    let other = dir.path().join("elsewhere");
    let out = run(&[
        "forecast",
        "--config",
        config.to_str().unwrap(),
        "--target-well",
        "P2",
        "--forecast-len",
        "5",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_forecasts_csv(&fs::read_to_string(other.join("forecasts.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.well_id == "P2"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn evolve_writes_log_and_loadable_pipeline() {
    let (dir, config) = setup(200);
    let out = run(&["evolve", "--config", config.to_str().unwrap(), "--target-well", "P1", "--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = read_evolution_log_csv(&fs::read_to_string(dir.path().join("out/evolution_log.csv")).unwrap()).unwrap();
    assert_eq!(log.len(), 3);
    assert!(log.windows(2).all(|w| w[1].best_rmse <= w[0].best_rmse));
    let best = Pipeline::from_json(&fs::read_to_string(dir.path().join("out/best_pipeline.json")).unwrap()).unwrap();
    assert_eq!(best.target_well, "P1");
    assert!(waterflood::pipeline::validate(&best).is_empty());

    let pipeline = dir.path().join("out/best_pipeline.json");
    let out = run(&["forecast", "--config", config.to_str().unwrap(), "--pipeline", pipeline.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evaluate_is_deterministic_across_runs() {
    let (dir, config) = setup(200);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let target = dir.path().join(name);
        let out = run(&["evaluate", "--config", config.to_str().unwrap(), "--out", target.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((
            fs::read(target.join("metrics.csv")).unwrap(),
            fs::read(target.join("forecasts.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let metrics = read_metrics_csv(std::str::from_utf8(&outputs[0].0).unwrap()).unwrap();
    assert_eq!(metrics.len(), 6);
}

#[test]
fn garbled_csv_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    let header = waterflood::ingest::CSV_HEADER.join(",");
    fs::write(&input, format!("{header}\n2020-01-01,P1,PRODUCER,not-a-number,0,0,,,\n")).unwrap();
    let config = small_config(dir.path(), &input);
    let out = run(&["fit-crm", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_input_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = run(&["fit-crm", "--input", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn oversized_backtest_exits_5() {
    let (dir, config) = setup(200);
    let out = run(&["evaluate", "--config", config.to_str().unwrap(), "--iterations", "30"]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn configuration_errors_exit_4() {
    let (dir, config) = setup(200);
    let mut c: serde_json::Value = serde_json::from_str(&fs::read_to_string(&config).unwrap()).unwrap();
    c["window_lens"] = serde_json::json!([60]);
    fs::write(&config, c.to_string()).unwrap();
    let out = run(&["fit-crm", "--config", config.to_str().unwrap(), "--intervals"]);
    assert_eq!(code(&out), 4);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"input_csv": "x.csv", "no_such_field": 1}"#).unwrap();
    assert_eq!(code(&run(&["evaluate", "--config", bad.to_str().unwrap()])), 4);
    assert_eq!(code(&run(&["evaluate", "--iterations", "lots"])), 4);
    assert_eq!(code(&run(&["--help"])), 0);
}
