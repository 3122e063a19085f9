use super::*;
use crate::crm::CrmError;
use crate::evolution::{LearnerFamily, SearchSpace};
use crate::synthetic;

fn small_config() -> RunConfig {
    RunConfig {
        input_csv: "unused.csv".into(),
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
            generations: 1,
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
        ..RunConfig::default()
    }
}

#[test]
fn config_json_defaults_and_unknown_fields() {
    let c = RunConfig::from_json(r#"{"input_csv": "a.csv", "iterations": 2}"#).unwrap();
    assert_eq!(c.iterations, 2);
    assert_eq!(c.forecast_len_days, 100);
    assert_eq!(c.input_csv, PathBuf::from("a.csv"));
    let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(back, c);
    let e = RunConfig::from_json(r#"{"iteration": 2}"#).unwrap_err();
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn config_validation_uses_exit_code_4() {
    let mut c = small_config();
    assert!(c.validate().is_ok());
    c.iterations = 0;
    assert_eq!(c.validate().unwrap_err().exit_code(), 4);
    let c = RunConfig::default();
    assert_eq!(c.validate().unwrap_err().exit_code(), 4, "empty input path");
}

#[test]
fn error_exit_codes() {
    let crm = |e: CrmError| ProtocolError::from(e).exit_code();
    assert_eq!(crm(CrmError::OptimizerDiverged { iteration: 3, value: f64::NAN }), 3);
    assert_eq!(crm(CrmError::NeedAtLeastTwoMembers(1)), 4);
    assert_eq!(crm(CrmError::InvalidWindow("too long".into())), 5);
    assert_eq!(
        ProtocolError::from(IngestError::MalformedRow {
            line: 3,
            reason: "bad".into()
        })
        .exit_code(),
        2
    );
    let node = PipelineError::Node {
        node: "lag".into(),
        source: NodeError::Features(FeatureError::SeriesTooShort {
            len: 3,
            window: 7,
            horizon: 2,
        }),
    };
    let e = ProtocolError::from(node);
    assert_eq!(e.exit_code(), 5);
    assert!(e.to_string().contains("node lag"));
}

#[test]
fn csv_outputs_round_trip() {
    let rows = vec![
        ForecastRow {
            date: synthetic::start_date(),
            well_id: "P1".into(),
            method: "crm".into(),
            point_m3: 101.25,
            lower_m3: 99.5,
            upper_m3: 103.0,
        },
        ForecastRow {
            date: synthetic::start_date() + Duration::days(1),
            well_id: "P1".into(),
            method: "crm".into(),
            point_m3: 1.0 / 3.0,
            lower_m3: 0.0,
            upper_m3: 1.0,
        },
    ];
    let text = forecasts_csv(&rows);
    assert!(text.starts_with("date,well_id,method,point_m3,lower_m3,upper_m3\n2008-01-01,P1,crm,"));
    assert_eq!(read_forecasts_csv(&text).unwrap(), rows);
    assert!(read_forecasts_csv(&forecasts_csv(&[])).unwrap().is_empty());

    let metrics = vec![
        MetricsRow {
            well_id: "P1".into(),
            method: "crm".into(),
            rmse_m3: Some(12.5),
            dtw_scaled: Some(0.75),
            reason: String::new(),
        },
        MetricsRow {
            well_id: "P1".into(),
            method: "hybrid".into(),
            rmse_m3: None,
            dtw_scaled: None,
            reason: "insufficient data: short, really".into(),
        },
    ];
    let text = metrics_csv(&metrics);
    assert!(text.contains("P1,hybrid,NA,NA,"));
    assert_eq!(read_metrics_csv(&text).unwrap(), metrics);

    let log = vec![GenerationStats {
        generation: 0,
        best_rmse: 3.5,
        mean_rmse: f64::INFINITY,
        best_pipeline_id: "abc123".into(),
    }];
    let text = evolution_log_csv(&log);
    assert!(text.starts_with("generation,best_rmse,mean_rmse,best_pipeline_id\n"));
    assert_eq!(read_evolution_log_csv(&text).unwrap(), log);
}

#[test]
fn atomic_write_leaves_only_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested");
    let path = write_atomic(&out, "a.csv", b"x,y\n").unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "x,y\n");
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("a.csv")]);
}

#[test]
fn fit_crm_intervals_need_two_windows() {
    let field = synthetic::two_by_two(200, 1).field;
    let mut c = small_config();
    c.intervals = true;
    c.window_lens = vec![60];
    let e = fit_crm(&c, &field).unwrap_err();
    assert_eq!(e.exit_code(), 4);

    c.window_lens = vec![40, 60];
    let out = fit_crm(&c, &field).unwrap();
    assert_eq!(out.forecast.len(), 2 * 10);
    assert!(out.forecast.iter().all(|r| r.lower_m3 <= r.point_m3 && r.point_m3 <= r.upper_m3));
    assert_eq!(out.forecast[0].date, *field.dates.last().unwrap() + Duration::days(1));
    crate::crm::CrmParameters::from_json(&out.params_json).unwrap();
}

#[test]
fn evaluate_checks_history_length() {
    let field = synthetic::two_by_two(70, 1).field;
    let e = evaluate_methods(&small_config(), &field).unwrap_err();
    assert_eq!(e.exit_code(), 5);
}

#[test]
fn evaluate_produces_three_methods_per_producer() {
    let field = synthetic::generate(&synthetic::SyntheticFieldSpec {
        n_producers: 2,
        n_injectors: 2,
        days: 200,
        seed: 3,
        ..Default::default()
    })
    .field;
    let c = small_config();
    let out = evaluate_methods(&c, &field).unwrap();
    assert_eq!(out.metrics.len(), 6);
    for (r, m) in out.metrics.iter().zip(METHODS.iter().cycle()) {
        assert_eq!(&r.method, m);
        assert!(r.rmse_m3.is_some(), "{r:?}");
    }
    assert_eq!(out.forecasts.len(), 2 * 3 * 2 * 10);
    assert_eq!(out.forecasts[0].date, field.dates[180]);
    assert_eq!(out.hybrids.len(), 4);

    let again = evaluate_methods(&c, &field).unwrap();
    assert_eq!(metrics_csv(&out.metrics), metrics_csv(&again.metrics));
    assert_eq!(forecasts_csv(&out.forecasts), forecasts_csv(&again.forecasts));
}

#[test]
fn forecast_uses_pipeline_horizon_and_target() {
    let field = synthetic::two_by_two(200, 2).field;
    let c = small_config();
    let rows = forecast(&c, &field, None).unwrap();
    assert_eq!(rows.len(), 20);
    let p = crate::pipeline::ml_chain("P2", LagSpec::new(7, 10), LearnerSpec::Naive, false);
    let rows = forecast(&c, &field, Some(&p)).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.well_id == "P2" && r.point_m3 == *field.oil[1].last().unwrap()));
    let p = crate::pipeline::ml_chain("P2", LagSpec::new(7, 5), LearnerSpec::Naive, false);
    assert_eq!(forecast(&c, &field, Some(&p)).unwrap_err().exit_code(), 4);
}
