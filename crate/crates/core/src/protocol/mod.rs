//! The backtesting commands: CRM fitting, pipeline forecasting, structural
//! search and the block-wise comparison of CRM, ML and hybrid forecasts.
//!
//! Every command computes its results in memory first and only then writes
//! its output files, each through a temporary file and a rename, so a failing
//! run leaves no partial output behind.

pub mod cli;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crm::{ensemble_ahead, forecast_ahead, CrmError, FitConfig};
use crate::evolution::{evolve, EvoConfig, EvolutionError, GenerationStats};
use crate::features::{FeatureError, LagSpec};
use crate::ingest::{parse_production_csv, resample_daily, FieldData, GapPolicy, IngestError};
use crate::learners::{LearnerError, LearnerSpec};
use crate::metrics::{self, IntervalForecast};
use crate::pipeline::{
    evaluate_with, hybrid_template, ml_chain, CrmCache, CrmNodeConfig, EvalContext, NodeError, Pipeline, PipelineError,
};

/// Failure of a command, carrying its process exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("input error: {0}")]
    Input(String),
    #[error("optimizer error: {0}")]
    Optimizer(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl ProtocolError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ProtocolError::Input(_) | ProtocolError::Output(_) => 2,
            ProtocolError::Optimizer(_) => 3,
            ProtocolError::Config(_) => 4,
            ProtocolError::InsufficientData(_) => 5,
        }
    }
}

impl From<IngestError> for ProtocolError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::TestTooLong { .. } => ProtocolError::InsufficientData(e.to_string()),
            IngestError::EmptyTestSpan => ProtocolError::Config(e.to_string()),
            _ => ProtocolError::Input(e.to_string()),
        }
    }
}

impl From<CrmError> for ProtocolError {
    fn from(e: CrmError) -> Self {
        let m = e.to_string();
        match e {
            CrmError::OptimizerDiverged { .. } | CrmError::InvalidParameters(_) | CrmError::LengthMismatch(_) => {
                ProtocolError::Optimizer(m)
            }
            CrmError::InvalidWindow(_) => ProtocolError::InsufficientData(m),
            CrmError::WindowTooShort { .. } | CrmError::NeedAtLeastTwoMembers(_) | CrmError::InvalidConfig(_) => {
                ProtocolError::Config(m)
            }
        }
    }
}

impl From<FeatureError> for ProtocolError {
    fn from(e: FeatureError) -> Self {
        let m = e.to_string();
        match e {
            FeatureError::SeriesTooShort { .. } | FeatureError::EmptyDataset => ProtocolError::InsufficientData(m),
            _ => ProtocolError::Config(m),
        }
    }
}

impl From<LearnerError> for ProtocolError {
    fn from(e: LearnerError) -> Self {
        let m = e.to_string();
        match e {
            LearnerError::NotEnoughSamples { .. } => ProtocolError::InsufficientData(m),
            LearnerError::SingularSystem => ProtocolError::Optimizer(m),
            _ => ProtocolError::Config(m),
        }
    }
}

impl From<PipelineError> for ProtocolError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Node { node, source } => {
                let inner: ProtocolError = match source {
                    NodeError::Crm(e) => e.into(),
                    NodeError::Features(e) => e.into(),
                    NodeError::Learner(e) => e.into(),
                    NodeError::Other(m) => ProtocolError::Optimizer(m),
                };
                inner.map_message(|m| format!("node {node}: {m}"))
            }
            other => ProtocolError::Config(other.to_string()),
        }
    }
}

impl From<EvolutionError> for ProtocolError {
    fn from(e: EvolutionError) -> Self {
        let m = e.to_string();
        match e {
            EvolutionError::InsufficientData { .. } => ProtocolError::InsufficientData(m),
            EvolutionError::AllIndividualsFailed => ProtocolError::Optimizer(m),
            _ => ProtocolError::Config(m),
        }
    }
}

impl ProtocolError {
    fn map_message(self, f: impl FnOnce(String) -> String) -> Self {
        match self {
            ProtocolError::Input(m) => ProtocolError::Input(f(m)),
            ProtocolError::Optimizer(m) => ProtocolError::Optimizer(f(m)),
            ProtocolError::Config(m) => ProtocolError::Config(f(m)),
            ProtocolError::InsufficientData(m) => ProtocolError::InsufficientData(f(m)),
            ProtocolError::Output(m) => ProtocolError::Output(f(m)),
        }
    }
}

/// Settings shared by all commands, read from one JSON document. Missing
/// fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_csv: PathBuf,
    /// Producers to forecast; empty means every producer.
    pub target_wells: Vec<String>,
    pub forecast_len_days: usize,
    /// Number of consecutive forecast blocks in `evaluate`.
    pub iterations: usize,
    /// CRM history-matching window lengths, one ensemble member each.
    pub window_lens: Vec<usize>,
    pub fit: FitConfig,
    pub evo: EvoConfig,
    /// Lag window of the fixed ML baseline and the default forecast pipeline.
    pub ml_lag_window: usize,
    pub ml_learner: LearnerSpec,
    pub gap_policy: GapPolicy,
    pub output_dir: PathBuf,
    /// Seeds the CRM restarts, the evolutionary search and the forest.
    pub seed: u64,
    /// `fit-crm`: emit ensemble intervals over `window_lens`.
    pub intervals: bool,
    /// `forecast`: pipeline JSON to evaluate instead of the default hybrid.
    pub pipeline: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input_csv: PathBuf::new(),
            target_wells: Vec::new(),
            forecast_len_days: 100,
            iterations: 4,
            window_lens: vec![60, 90, 120],
            fit: FitConfig::default(),
            evo: EvoConfig::default(),
            ml_lag_window: 30,
            ml_learner: LearnerSpec::RandomForest {
                n_trees: 100,
                max_depth: 12,
                min_samples_leaf: 2,
                bootstrap: true,
                feature_subsample_fraction: 1.0 / 3.0,
                seed: 0,
            },
            gap_policy: GapPolicy::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            intervals: false,
            pipeline: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(s).map_err(|e| ProtocolError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        let text = fs::read_to_string(path).map_err(|e| ProtocolError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: &str| Err(ProtocolError::Config(m.to_string()));
        if self.input_csv.as_os_str().is_empty() {
            return bad("input_csv is empty");
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output_dir is empty");
        }
        if self.forecast_len_days == 0 {
            return bad("forecast_len_days must be >= 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.window_lens.is_empty() || self.window_lens.contains(&0) {
            return bad("window_lens must be non-empty and positive");
        }
        if self.ml_lag_window == 0 {
            return bad("ml_lag_window must be >= 1");
        }
        self.fit.validate()?;
        self.ml_learner.validate()?;
        self.evolution_config().validate()?;
        Ok(())
    }

    fn crm_node(&self) -> CrmNodeConfig {
        CrmNodeConfig {
            window_lens: self.window_lens.clone(),
            fit: self.fit_config(),
        }
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            seed: self.seed,
            ..self.fit.clone()
        }
    }

    /// Search settings with the run seed, the run's CRM settings and a
    /// validation tail at least one forecast long.
    pub fn evolution_config(&self) -> EvoConfig {
        EvoConfig {
            seed: self.seed,
            validation_len: self.evo.validation_len.max(self.forecast_len_days),
            crm: self.crm_node(),
            ..self.evo.clone()
        }
    }

    fn ml_spec(&self) -> LearnerSpec {
        match self.ml_learner.clone() {
            LearnerSpec::RandomForest {
                n_trees,
                max_depth,
                min_samples_leaf,
                bootstrap,
                feature_subsample_fraction,
                ..
            } => LearnerSpec::RandomForest {
                n_trees,
                max_depth,
                min_samples_leaf,
                bootstrap,
                feature_subsample_fraction,
                seed: self.seed,
            },
            other => other,
        }
    }

    fn targets(&self, field: &FieldData) -> Result<Vec<String>, ProtocolError> {
        if self.target_wells.is_empty() {
            return Ok(field.producers.clone());
        }
        for w in &self.target_wells {
            if field.producer_index(w).is_none() {
                return Err(ProtocolError::Config(format!("target well {w} is not a producer in the input")));
            }
        }
        Ok(self.target_wells.clone())
    }
}

/// Reads, resamples and densifies the production CSV.
pub fn load_field(path: &Path, gap_policy: GapPolicy) -> Result<FieldData, ProtocolError> {
    let mut text = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut text))
        .map_err(|e| ProtocolError::Input(format!("{}: {e}", path.display())))?;
    let history = parse_production_csv(text.as_slice())?;
    let daily = resample_daily(&history, gap_policy)?;
    let field = FieldData::from_history(&daily)?;
    if field.is_empty() {
        return Err(ProtocolError::InsufficientData("the input holds no observations".into()));
    }
    if field.producers.is_empty() || field.injectors.is_empty() {
        return Err(ProtocolError::Input("the input needs at least one producer and one injector".into()));
    }
    Ok(field)
}

/// One row of `forecasts.csv` / `crm_forecast.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub date: NaiveDate,
    pub well_id: String,
    pub method: String,
    pub point_m3: f64,
    pub lower_m3: f64,
    pub upper_m3: f64,
}

/// One row of `metrics.csv`; failed methods have no values and a reason.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub well_id: String,
    pub method: String,
    pub rmse_m3: Option<f64>,
    pub dtw_scaled: Option<f64>,
    pub reason: String,
}

pub const METHODS: [&str; 3] = ["crm", "ml", "hybrid"];

/// Reporting scale of DTW in `metrics.csv`.
pub const DTW_SCALE: f64 = 1e3;

fn forecast_rows(well: &str, method: &str, first_date: NaiveDate, f: &IntervalForecast) -> Vec<ForecastRow> {
    (0..f.len())
        .map(|k| ForecastRow {
            date: first_date + Duration::days(k as i64),
            well_id: well.to_string(),
            method: method.to_string(),
            point_m3: f.points[k],
            lower_m3: f.lower[k],
            upper_m3: f.upper[k],
        })
        .collect()
}

fn next_day(field: &FieldData) -> NaiveDate {
    *field.dates.last().expect("non-empty field") + Duration::days(1)
}

pub fn forecasts_csv(rows: &[ForecastRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    if rows.is_empty() {
        w.write_record(["date", "well_id", "method", "point_m3", "lower_m3", "upper_m3"])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

pub fn read_forecasts_csv(text: &str) -> Result<Vec<ForecastRow>, ProtocolError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ProtocolError::Input(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["well_id", "method", "rmse_m3", "dtw_scaled", "reason"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([&r.well_id, &r.method, &opt(r.rmse_m3), &opt(r.dtw_scaled), &r.reason])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, ProtocolError> {
    let parse = |s: &str| -> Result<Option<f64>, ProtocolError> {
        if s == "NA" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| ProtocolError::Input(format!("{s:?}: {e}")))
        }
    };
    let mut out = Vec::new();
    for rec in csv::Reader::from_reader(text.as_bytes()).records() {
        let rec = rec.map_err(|e| ProtocolError::Input(e.to_string()))?;
        if rec.len() != 5 {
            return Err(ProtocolError::Input(format!("metrics row with {} fields", rec.len())));
        }
        out.push(MetricsRow {
            well_id: rec[0].to_string(),
            method: rec[1].to_string(),
            rmse_m3: parse(&rec[2])?,
            dtw_scaled: parse(&rec[3])?,
            reason: rec[4].to_string(),
        });
    }
    Ok(out)
}

pub fn evolution_log_csv(log: &[GenerationStats]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in log {
        w.serialize(s).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

pub fn read_evolution_log_csv(text: &str) -> Result<Vec<GenerationStats>, ProtocolError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ProtocolError::Input(e.to_string()))
}

/// Output of `fit-crm`.
#[derive(Debug, Clone)]
pub struct FitCrmOutput {
    pub params_json: String,
    pub forecast: Vec<ForecastRow>,
}

/// Fits the CRM on the last `window_lens[0]` days and forecasts
/// `forecast_len_days` past the record, holding the last injection rates.
/// With `intervals`, the forecast is the ensemble over all window lengths.
pub fn fit_crm(config: &RunConfig, field: &FieldData) -> Result<FitCrmOutput, ProtocolError> {
    if config.intervals && config.window_lens.len() < 2 {
        return Err(CrmError::NeedAtLeastTwoMembers(config.window_lens.len()).into());
    }
    let targets = config.targets(field)?;
    let fit = config.fit_config();
    let h = config.forecast_len_days;
    let (params, tail) = forecast_ahead(field, config.window_lens[0], h, None, &fit)?;
    let intervals: Vec<IntervalForecast> = if config.intervals {
        ensemble_ahead(field, &config.window_lens, h, None, &fit)?.intervals
    } else {
        tail.into_iter().map(IntervalForecast::point_only).collect()
    };
    let start = next_day(field);
    let forecast = targets
        .iter()
        .flat_map(|w| {
            let j = field.producer_index(w).expect("checked");
            forecast_rows(w, "crm", start, &intervals[j])
        })
        .collect();
    Ok(FitCrmOutput {
        params_json: params.to_json(),
        forecast,
    })
}

/// Evaluates `pipeline` (or the default hybrid template) for every target
/// well, `forecast_len_days` past the record.
pub fn forecast(config: &RunConfig, field: &FieldData, pipeline: Option<&Pipeline>) -> Result<Vec<ForecastRow>, ProtocolError> {
    let h = config.forecast_len_days;
    let targets = match (pipeline, config.target_wells.is_empty()) {
        (Some(p), true) => vec![p.target_well.clone()],
        _ => config.targets(field)?,
    };
    if let Some(p) = pipeline {
        if p.horizon_days != h {
            return Err(ProtocolError::Config(format!(
                "pipeline horizon {} differs from forecast_len_days {h}",
                p.horizon_days
            )));
        }
    }
    let cache = Arc::new(CrmCache::new());
    let ctx = EvalContext {
        future_injections: None,
        crm_cache: Some(cache),
    };
    let start = next_day(field);
    let per_well: Vec<Result<Vec<ForecastRow>, ProtocolError>> = targets
        .par_iter()
        .map(|w| {
            let p = match pipeline {
                Some(p) => Pipeline {
                    target_well: w.clone(),
                    ..p.clone()
                },
                None => hybrid_template(w, LagSpec::new(config.ml_lag_window, h), config.ml_spec(), config.crm_node()),
            };
            let out = evaluate_with(&p, field, &ctx)?;
            Ok(forecast_rows(w, "pipeline", start, &out.forecast))
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_well {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Output of `evolve`.
#[derive(Debug, Clone)]
pub struct EvolveOutput {
    pub log: Vec<GenerationStats>,
    pub best: Pipeline,
    pub best_fitness: f64,
}

/// Searches a pipeline for the single target well (or the first producer)
/// on the whole record.
pub fn evolve_pipeline(config: &RunConfig, field: &FieldData) -> Result<EvolveOutput, ProtocolError> {
    let targets = config.targets(field)?;
    if config.target_wells.len() > 1 {
        return Err(ProtocolError::Config("evolve takes a single target well".into()));
    }
    let well = &targets[0];
    let out = evolve(&config.evolution_config(), field, well, config.forecast_len_days, None)?;
    Ok(EvolveOutput {
        log: out.log,
        best_fitness: out.best.fitness.unwrap_or(f64::INFINITY),
        best: out.best.pipeline,
    })
}

/// Output of `evaluate`.
#[derive(Debug, Clone)]
pub struct EvaluateOutput {
    pub metrics: Vec<MetricsRow>,
    pub forecasts: Vec<ForecastRow>,
    /// Evolved pipeline per (well, block).
    pub hybrids: Vec<(String, usize, Pipeline)>,
}

struct Block {
    start: usize,
    end: usize,
}

fn summarize(well: &str, method: &str, field: &FieldData, blocks: &[Block], results: &[Result<IntervalForecast, ProtocolError>]) -> MetricsRow {
    let j = field.producer_index(well).expect("checked");
    let mut rmse = 0.0;
    let mut dtw = 0.0;
    for (b, r) in blocks.iter().zip(results) {
        match r {
            Ok(f) => {
                let actual = &field.oil[j][b.start..b.end];
                rmse += metrics::rmse(&f.points, actual).expect("equal non-empty lengths");
                dtw += metrics::dtw(&f.points, actual).expect("non-empty");
            }
            Err(e) => {
                return MetricsRow {
                    well_id: well.to_string(),
                    method: method.to_string(),
                    rmse_m3: None,
                    dtw_scaled: None,
                    reason: e.to_string(),
                }
            }
        }
    }
    let k = blocks.len() as f64;
    MetricsRow {
        well_id: well.to_string(),
        method: method.to_string(),
        rmse_m3: Some(rmse / k),
        dtw_scaled: Some(dtw / k / DTW_SCALE),
        reason: String::new(),
    }
}

/// The block protocol: the last `iterations × forecast_len_days` days are cut
/// into consecutive blocks; before each block every method is fit on all
/// preceding data and forecasts the block, given its observed injections.
/// Metrics are per-block RMSE and DTW averaged over the blocks.
pub fn evaluate_methods(config: &RunConfig, field: &FieldData) -> Result<EvaluateOutput, ProtocolError> {
    let targets = config.targets(field)?;
    let n = field.len();
    let h = config.forecast_len_days;
    let span = config.iterations * h;
    let min_train = *config.window_lens.iter().max().expect("validated");
    if n < span + min_train {
        return Err(ProtocolError::InsufficientData(format!(
            "{n} days cannot hold {} blocks of {h} days after a {min_train}-day training window",
            config.iterations
        )));
    }
    let blocks: Vec<Block> = (0..config.iterations)
        .map(|b| {
            let start = n - span + b * h;
            Block { start, end: start + h }
        })
        .collect();
    let fit = config.fit_config();
    let crm: Vec<Result<Vec<IntervalForecast>, ProtocolError>> = blocks
        .par_iter()
        .map(|b| {
            let hist = field.prefix(b.start);
            let future = field.injection_span(b.start..b.end);
            Ok(ensemble_ahead(&hist, &config.window_lens, h, Some(&future), &fit)?.intervals)
        })
        .collect();

    let cache = Arc::new(CrmCache::new());
    let evo = config.evolution_config();
    let ml = config.ml_spec();
    type WellResult = (Vec<MetricsRow>, Vec<ForecastRow>, Vec<(String, usize, Pipeline)>);
    let per_well: Vec<WellResult> = targets
        .par_iter()
        .map(|well| {
            let j = field.producer_index(well).expect("checked");
            let mut results: Vec<Vec<Result<IntervalForecast, ProtocolError>>> = vec![Vec::new(); 3];
            let mut hybrids = Vec::new();
            for (bi, b) in blocks.iter().enumerate() {
                let hist = field.prefix(b.start);
                let ctx = EvalContext {
                    future_injections: Some(field.injection_span(b.start..b.end)),
                    crm_cache: Some(cache.clone()),
                };
                results[0].push(crm[bi].as_ref().map(|f| f[j].clone()).map_err(Clone::clone));
                let ml_pipe = ml_chain(well, LagSpec::new(config.ml_lag_window, h), ml.clone(), false);
                results[1].push(
                    evaluate_with(&ml_pipe, &hist, &ctx)
                        .map(|o| o.forecast)
                        .map_err(ProtocolError::from),
                );
                let hybrid = evolve(&evo, &hist, well, h, Some(cache.clone()))
                    .map_err(ProtocolError::from)
                    .and_then(|r| {
                        let out = evaluate_with(&r.best.pipeline, &hist, &ctx)?;
                        hybrids.push((well.clone(), bi, r.best.pipeline));
                        Ok(out.forecast)
                    });
                results[2].push(hybrid);
            }
            let mut metrics_rows = Vec::new();
            let mut rows = Vec::new();
            for (m, method) in METHODS.iter().enumerate() {
                metrics_rows.push(summarize(well, method, field, &blocks, &results[m]));
                if results[m].iter().all(Result::is_ok) {
                    for (b, r) in blocks.iter().zip(&results[m]) {
                        rows.extend(forecast_rows(well, method, field.dates[b.start], r.as_ref().unwrap()));
                    }
                }
            }
            (metrics_rows, rows, hybrids)
        })
        .collect();

    let mut out = EvaluateOutput {
        metrics: Vec::new(),
        forecasts: Vec::new(),
        hybrids: Vec::new(),
    };
    for (m, f, p) in per_well {
        out.metrics.extend(m);
        out.forecasts.extend(f);
        out.hybrids.extend(p);
    }
    if out.metrics.iter().all(|r| r.rmse_m3.is_none()) {
        let first = crm.into_iter().find_map(Result::err);
        return Err(first.unwrap_or_else(|| ProtocolError::Optimizer(out.metrics[0].reason.clone())));
    }
    Ok(out)
}

/// Writes `contents` to `dir/name` through a temporary file in `dir`.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, ProtocolError> {
    let out = |e: std::io::Error| ProtocolError::Output(format!("{}: {e}", dir.join(name).display()));
    fs::create_dir_all(dir).map_err(out)?;
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let dest = dir.join(name);
    fs::write(&tmp, contents).map_err(out)?;
    fs::rename(&tmp, &dest).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        out(e)
    })?;
    Ok(dest)
}

fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>, ProtocolError> {
    files.iter().map(|(name, text)| write_atomic(dir, name, text.as_bytes())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    FitCrm,
    Forecast,
    Evolve,
    Evaluate,
}

/// Runs a command end to end and returns the files written.
pub fn run(command: Command, config: &RunConfig) -> Result<Vec<PathBuf>, ProtocolError> {
    config.validate()?;
    let pipeline = match (&config.pipeline, command) {
        (Some(path), Command::Forecast) => {
            let text = fs::read_to_string(path).map_err(|e| ProtocolError::Config(format!("{}: {e}", path.display())))?;
            Some(Pipeline::from_json(&text)?)
        }
        _ => None,
    };
    let field = load_field(&config.input_csv, config.gap_policy)?;
    let dir = &config.output_dir;
    match command {
        Command::FitCrm => {
            let out = fit_crm(config, &field)?;
            write_all(dir, &[("crm_params.json", out.params_json), ("crm_forecast.csv", forecasts_csv(&out.forecast))])
        }
        Command::Forecast => {
            let rows = forecast(config, &field, pipeline.as_ref())?;
            write_all(dir, &[("forecasts.csv", forecasts_csv(&rows))])
        }
        Command::Evolve => {
            let out = evolve_pipeline(config, &field)?;
            write_all(dir, &[("evolution_log.csv", evolution_log_csv(&out.log)), ("best_pipeline.json", out.best.to_json())])
        }
        Command::Evaluate => {
            let out = evaluate_methods(config, &field)?;
            write_all(dir, &[("metrics.csv", metrics_csv(&out.metrics)), ("forecasts.csv", forecasts_csv(&out.forecasts))])
        }
    }
}

#[cfg(test)]
mod tests;
