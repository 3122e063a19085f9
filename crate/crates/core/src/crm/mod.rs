//! Capacitance-resistance model with one (gain, time constant) pair per
//! injector-producer couple.
//!
//! Each pair carries its own rate `q_ij`, updated daily as
//!
//! ```text
//! q_ij(k) = q_ij(k-1)·e^(-1/τ_ij) + (1 - e^(-1/τ_ij))·[f_ij·I_i(k) - J_ij·τ_ij·(P_j(k) - P_j(k-1))]
//! ```
//!
//! and a producer's rate is the sum over its pairs. The productivity term is
//! used only when both `J` and bottom-hole pressures are available.

mod fit;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FieldData;
use crate::metrics::{self, IntervalForecast};

pub use fit::fit_window;

/// Slack allowed on the per-injector gain sum when validating parameters.
pub const GAIN_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrmError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("window of {len} days is shorter than the minimum {min}")]
    WindowTooShort { len: usize, min: usize },
    #[error("optimizer diverged at iteration {iteration} (objective {value})")]
    OptimizerDiverged { iteration: usize, value: f64 },
    #[error("ensemble needs at least two members, got {0}")]
    NeedAtLeastTwoMembers(usize),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
}

/// Fitted CRM parameters, indexed `[injector][producer]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmParameters {
    pub injectors: Vec<String>,
    pub producers: Vec<String>,
    pub gains: Vec<Vec<f64>>,
    pub taus: Vec<Vec<f64>>,
    pub productivity: Option<Vec<Vec<f64>>>,
    pub initial_rates: Vec<Vec<f64>>,
}

impl CrmParameters {
    pub fn n_injectors(&self) -> usize {
        self.injectors.len()
    }

    pub fn n_producers(&self) -> usize {
        self.producers.len()
    }

    pub fn validate(&self) -> Result<(), CrmError> {
        let (ni, np) = (self.n_injectors(), self.n_producers());
        let bad = |m: &str| CrmError::InvalidParameters(m.to_string());
        let shape_ok = |m: &Vec<Vec<f64>>| m.len() == ni && m.iter().all(|r| r.len() == np);
        if !shape_ok(&self.gains) || !shape_ok(&self.taus) || !shape_ok(&self.initial_rates) {
            return Err(bad("matrix shape does not match injectors x producers"));
        }
        if let Some(j) = &self.productivity {
            if !shape_ok(j) {
                return Err(bad("productivity shape does not match injectors x producers"));
            }
            if j.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(bad("productivity must be finite and >= 0"));
            }
        }
        for (i, row) in self.gains.iter().enumerate() {
            if row.iter().any(|f| !(0.0..=1.0).contains(f)) {
                return Err(CrmError::InvalidParameters(format!("gain of injector {i} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + GAIN_SUM_TOL {
                return Err(CrmError::InvalidParameters(format!("gains of injector {i} sum to {sum} > 1")));
            }
        }
        if self.taus.iter().flatten().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(bad("time constants must be finite and > 0"));
        }
        if self.initial_rates.iter().flatten().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(bad("initial rates must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, CrmError> {
        let p: CrmParameters =
            serde_json::from_str(s).map_err(|e| CrmError::InvalidParameters(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Replaces the initial pair rates by splitting each producer's rate equally
    /// over the injectors.
    pub(crate) fn with_initial_split(mut self, producer_rates: &[f64]) -> Self {
        self.initial_rates = initial_split(producer_rates, self.n_injectors());
        self
    }
}

pub(crate) fn initial_split(producer_rates: &[f64], n_injectors: usize) -> Vec<Vec<f64>> {
    let share = 1.0 / n_injectors.max(1) as f64;
    (0..n_injectors)
        .map(|_| producer_rates.iter().map(|q| q.max(0.0) * share).collect())
        .collect()
}

/// Forward simulation over `horizon` days.
///
/// `injections[i][k]` drives step `k + 1`; the returned `out[j][k]` is the rate
/// of producer `j` after that step. When given, `pressures[j]` must hold
/// `horizon + 1` values, the first being the pressure at the initial state.
pub fn simulate(
    params: &CrmParameters,
    injections: &[Vec<f64>],
    pressures: Option<&[Vec<f64>]>,
    horizon: usize,
) -> Result<Vec<Vec<f64>>, CrmError> {
    params.validate()?;
    let (ni, np) = (params.n_injectors(), params.n_producers());
    if injections.len() != ni {
        return Err(CrmError::LengthMismatch(format!(
            "{} injection series for {ni} injectors",
            injections.len()
        )));
    }
    if let Some(s) = injections.iter().find(|s| s.len() < horizon) {
        return Err(CrmError::LengthMismatch(format!(
            "injection series of {} days for a {horizon}-day horizon",
            s.len()
        )));
    }
    if let Some(p) = pressures {
        if p.len() != np || p.iter().any(|s| s.len() < horizon + 1) {
            return Err(CrmError::LengthMismatch(format!(
                "pressure input must hold {np} series of at least {} values",
                horizon + 1
            )));
        }
    }
    let out = simulate_unchecked(params, injections, pressures, horizon);
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CrmError::InvalidParameters("simulation produced non-finite rates".into()));
    }
    Ok(out)
}

pub(crate) fn simulate_unchecked(
    params: &CrmParameters,
    injections: &[Vec<f64>],
    pressures: Option<&[Vec<f64>]>,
    horizon: usize,
) -> Vec<Vec<f64>> {
    let (ni, np) = (params.n_injectors(), params.n_producers());
    let mut out = vec![vec![0.0; horizon]; np];
    let bhp = params.productivity.as_ref().zip(pressures);
    for j in 0..np {
        for i in 0..ni {
            let tau = params.taus[i][j];
            let decay = (-1.0 / tau).exp();
            let gain = params.gains[i][j];
            let mut q = params.initial_rates[i][j];
            let inj = &injections[i];
            for k in 0..horizon {
                let mut drive = gain * inj[k];
                if let Some((jm, p)) = bhp {
                    drive -= jm[i][j] * tau * (p[j][k + 1] - p[j][k]);
                }
                q = q * decay + (1.0 - decay) * drive;
                out[j][k] += q;
            }
        }
    }
    out
}

/// Index range of a history-matching window plus the span predicted after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchWindow {
    pub train_start: usize,
    pub train_end: usize,
    pub predict_end: usize,
}

impl MatchWindow {
    pub fn train(train_start: usize, train_end: usize) -> Self {
        MatchWindow {
            train_start,
            train_end,
            predict_end: train_end,
        }
    }

    pub fn train_len(&self) -> usize {
        self.train_end.saturating_sub(self.train_start)
    }

    fn check(&self, n: usize) -> Result<(), CrmError> {
        if !(self.train_start < self.train_end && self.train_end <= self.predict_end) {
            return Err(CrmError::InvalidWindow(format!("{self:?} is not ordered")));
        }
        if self.predict_end > n {
            return Err(CrmError::InvalidWindow(format!("{self:?} exceeds {n} days of history")));
        }
        Ok(())
    }
}

/// History-matching settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub min_window_days: usize,
    pub optimizer_max_iters: usize,
    pub convergence_tol: f64,
    pub finite_diff_step: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Bounds on the time constants, in days.
    pub tau_bounds: (f64, f64),
    /// Upper bound on productivity indices, m³/(day·bar).
    pub productivity_max: f64,
    /// Fit the productivity term when every producer has pressure data.
    pub use_bhp: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            min_window_days: 30,
            optimizer_max_iters: 200,
            convergence_tol: 1e-10,
            finite_diff_step: 1e-7,
            restarts: 4,
            seed: 0,
            tau_bounds: (0.5, 365.0),
            productivity_max: 50.0,
            use_bhp: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), CrmError> {
        let bad = |m: &str| Err(CrmError::InvalidConfig(m.to_string()));
        if self.min_window_days == 0 || self.optimizer_max_iters == 0 || self.restarts == 0 {
            return bad("counts must be > 0");
        }
        if !(self.convergence_tol > 0.0 && self.finite_diff_step > 0.0) {
            return bad("tolerances must be > 0");
        }
        let (lo, hi) = self.tau_bounds;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad("tau bounds must satisfy 0 < lo < hi");
        }
        if !(self.productivity_max >= 0.0 && self.productivity_max.is_finite()) {
            return bad("productivity_max must be finite and >= 0");
        }
        Ok(())
    }
}

/// Pressure input for a simulation starting at day `start` and running `len`
/// days: the reference value is the pressure on the day before `start`.
pub(crate) fn pressure_span(field: &FieldData, start: usize, len: usize) -> Option<Vec<Vec<f64>>> {
    field.pressure.as_ref().map(|p| {
        p.iter()
            .map(|s| {
                let reference = s[start.saturating_sub(1)];
                std::iter::once(reference)
                    .chain((start..start + len).map(|k| s[k.min(s.len() - 1)]))
                    .collect()
            })
            .collect()
    })
}

/// Simulates from `start` for `len` days using observed injections, continued
/// by `future` injections beyond the end of the record.
pub(crate) fn simulate_span(
    params: &CrmParameters,
    field: &FieldData,
    start: usize,
    len: usize,
    future: Option<&[Vec<f64>]>,
) -> Vec<Vec<f64>> {
    let n = field.len();
    let injections: Vec<Vec<f64>> = (0..field.injectors.len())
        .map(|i| {
            (start..start + len)
                .map(|k| {
                    if k < n {
                        field.injection[i][k]
                    } else {
                        let fut = future.map(|f| &f[i]);
                        match fut {
                            Some(f) if k - n < f.len() => f[k - n],
                            _ => field.injection[i][n - 1],
                        }
                    }
                })
                .collect()
        })
        .collect();
    let pressures = pressure_span(field, start, len);
    simulate_unchecked(params, &injections, pressures.as_deref(), len)
}

/// Root of the summed squared per-producer RMSE between simulation and
/// observed oil rates over `[train_start, train_end)`.
pub fn objective(params: &CrmParameters, field: &FieldData, window: &MatchWindow) -> Result<f64, CrmError> {
    window.check(field.len())?;
    params.validate()?;
    if params.producers != field.producers || params.injectors != field.injectors {
        return Err(CrmError::LengthMismatch("parameter wells differ from the field".into()));
    }
    let len = window.train_len();
    let sim = simulate_span(params, field, window.train_start, len, None);
    let mut total = 0.0;
    for (j, s) in sim.iter().enumerate() {
        let obs = &field.oil[j][window.train_start..window.train_end];
        let r = metrics::rmse(s, obs).map_err(|e| CrmError::InvalidWindow(e.to_string()))?;
        total += r * r;
    }
    Ok(total.sqrt())
}

/// Back-to-back windowed predictions: the fit on each training window predicts
/// the next `predict_len` days, and the training window then advances by
/// `predict_len` so the predicted spans tile `[train_window_len, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedForecast {
    pub producers: Vec<String>,
    /// First day index covered by `rates`.
    pub start: usize,
    pub windows: Vec<MatchWindow>,
    pub params: Vec<CrmParameters>,
    /// `rates[j][k]` is the prediction for producer `j` on day `start + k`.
    pub rates: Vec<Vec<f64>>,
}

pub fn windowed_forecast(
    field: &FieldData,
    train_window_len: usize,
    predict_len: usize,
    config: &FitConfig,
) -> Result<WindowedForecast, CrmError> {
    let n = field.len();
    if predict_len == 0 {
        return Err(CrmError::InvalidWindow("predict_len must be > 0".into()));
    }
    if train_window_len == 0 || n < train_window_len + predict_len {
        return Err(CrmError::InvalidWindow(format!(
            "{n} days cannot hold a {train_window_len}-day window plus {predict_len} predicted days"
        )));
    }
    let mut windows = Vec::new();
    let mut start = 0;
    while start + train_window_len < n {
        let train_end = start + train_window_len;
        windows.push(MatchWindow {
            train_start: start,
            train_end,
            predict_end: (train_end + predict_len).min(n),
        });
        start += predict_len;
    }

    let np = field.producers.len();
    let mut rates = vec![Vec::with_capacity(n - train_window_len); np];
    let mut params_out: Vec<CrmParameters> = Vec::with_capacity(windows.len());
    for w in &windows {
        let init = params_out.last().map(|p| {
            let start_rates: Vec<f64> = field.oil.iter().map(|s| s[w.train_start]).collect();
            p.clone().with_initial_split(&start_rates)
        });
        let params = fit_window(field, w, config, init.as_ref())?;
        let sim = simulate_span(&params, field, w.train_start, w.predict_end - w.train_start, None);
        for j in 0..np {
            rates[j].extend_from_slice(&sim[j][w.train_len()..]);
        }
        params_out.push(params);
    }
    Ok(WindowedForecast {
        producers: field.producers.clone(),
        start: train_window_len,
        windows,
        params: params_out,
        rates,
    })
}

/// Per-producer interval forecast starting at day index `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub producers: Vec<String>,
    pub start: usize,
    pub intervals: Vec<IntervalForecast>,
}

impl Forecast {
    pub fn len(&self) -> usize {
        self.intervals.first().map_or(0, IntervalForecast::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn for_producer(&self, well: &str) -> Option<&IntervalForecast> {
        self.producers.iter().position(|p| p == well).map(|j| &self.intervals[j])
    }
}

pub const INTERVAL_LEVEL: f64 = 0.95;

/// Combines aligned member trajectories (`members[m][j][k]`) into a point
/// forecast with Student-t intervals.
pub(crate) fn combine_members(producers: &[String], start: usize, members: &[Vec<Vec<f64>>]) -> Forecast {
    let np = producers.len();
    let len = members.first().and_then(|m| m.first()).map_or(0, Vec::len);
    let intervals = (0..np)
        .map(|j| {
            let mut iv = IntervalForecast {
                points: Vec::with_capacity(len),
                lower: Vec::with_capacity(len),
                upper: Vec::with_capacity(len),
                level: if members.len() >= 2 { INTERVAL_LEVEL } else { 0.0 },
            };
            let mut column = Vec::with_capacity(members.len());
            for k in 0..len {
                column.clear();
                column.extend(members.iter().map(|m| m[j][k]));
                let (mean, _) = metrics::mean_and_sample_std(&column);
                let (lo, hi) = metrics::t_interval(&column, INTERVAL_LEVEL).unwrap_or((mean, mean));
                iv.points.push(mean);
                iv.lower.push(lo.min(mean));
                iv.upper.push(hi.max(mean));
            }
            iv
        })
        .collect();
    Forecast {
        producers: producers.to_vec(),
        start,
        intervals,
    }
}

/// Runs [`windowed_forecast`] once per window length and summarizes the members
/// over the span they all cover.
pub fn ensemble_forecast(
    field: &FieldData,
    window_lens: &[usize],
    predict_len: usize,
    config: &FitConfig,
) -> Result<Forecast, CrmError> {
    if window_lens.len() < 2 {
        return Err(CrmError::NeedAtLeastTwoMembers(window_lens.len()));
    }
    if let Some(&l) = window_lens.iter().find(|&&l| l < config.min_window_days) {
        return Err(CrmError::WindowTooShort {
            len: l,
            min: config.min_window_days,
        });
    }
    let members: Vec<WindowedForecast> = window_lens
        .par_iter()
        .map(|&l| windowed_forecast(field, l, predict_len, config))
        .collect::<Result<_, _>>()?;
    let start = *window_lens.iter().max().unwrap();
    let aligned: Vec<Vec<Vec<f64>>> = members
        .iter()
        .map(|m| m.rates.iter().map(|r| r[start - m.start..].to_vec()).collect())
        .collect();
    Ok(combine_members(&field.producers, start, &aligned))
}

/// Fits on the last `window_len` days and simulates `horizon` days past the end
/// of the record. Missing future injections hold the last observed rate.
pub fn forecast_ahead(
    field: &FieldData,
    window_len: usize,
    horizon: usize,
    future_injections: Option<&[Vec<f64>]>,
    config: &FitConfig,
) -> Result<(CrmParameters, Vec<Vec<f64>>), CrmError> {
    let n = field.len();
    if window_len > n {
        return Err(CrmError::InvalidWindow(format!("{window_len}-day window in {n} days")));
    }
    let w = MatchWindow::train(n - window_len, n);
    let params = fit_window(field, &w, config, None)?;
    let sim = simulate_span(&params, field, w.train_start, window_len + horizon, future_injections);
    let tail = sim.into_iter().map(|s| s[window_len..].to_vec()).collect();
    Ok((params, tail))
}

/// Ensemble of [`forecast_ahead`] over several window lengths. A single member
/// yields a degenerate interval.
pub fn ensemble_ahead(
    field: &FieldData,
    window_lens: &[usize],
    horizon: usize,
    future_injections: Option<&[Vec<f64>]>,
    config: &FitConfig,
) -> Result<Forecast, CrmError> {
    if window_lens.is_empty() {
        return Err(CrmError::NeedAtLeastTwoMembers(0));
    }
    let members: Vec<Vec<Vec<f64>>> = window_lens
        .par_iter()
        .map(|&l| forecast_ahead(field, l, horizon, future_injections, config).map(|(_, s)| s))
        .collect::<Result<_, _>>()?;
    Ok(combine_members(&field.producers, field.len(), &members))
}

/// CRM predictions indexed by forecast origin, used as exogenous learner
/// features. The prediction for origin `t` comes from a fit whose training
/// window ends at or before `t`, so it never sees oil rates from day `t` on.
#[derive(Debug, Clone, PartialEq)]
pub struct CrmTrace {
    pub producers: Vec<String>,
    pub horizon: usize,
    /// Earliest origin with a prediction.
    pub first_origin: usize,
    /// `by_origin[t - first_origin][j]`: `horizon` predicted rates of producer
    /// `j` starting at day `t`. The last entry is the origin at the end of the
    /// record (a true forecast).
    pub by_origin: Vec<Vec<Vec<f64>>>,
    /// Forecast past the end of the record, with member intervals.
    pub ahead: Forecast,
}

impl CrmTrace {
    pub fn at(&self, origin: usize, producer: usize) -> Option<&[f64]> {
        origin
            .checked_sub(self.first_origin)
            .and_then(|k| self.by_origin.get(k))
            .map(|v| v[producer].as_slice())
    }
}

fn member_trace(
    field: &FieldData,
    window_len: usize,
    stride: usize,
    horizon: usize,
    future_injections: Option<&[Vec<f64>]>,
    config: &FitConfig,
) -> Result<(usize, Vec<Vec<Vec<f64>>>), CrmError> {
    let n = field.len();
    if window_len > n || window_len == 0 {
        return Err(CrmError::InvalidWindow(format!("{window_len}-day window in {n} days")));
    }
    let mut ends: Vec<usize> = (0..)
        .map(|k| n as i64 - (k * stride) as i64)
        .take_while(|&e| e >= window_len as i64)
        .map(|e| e as usize)
        .collect();
    ends.reverse();
    let first_origin = ends[0];
    let np = field.producers.len();
    let mut by_origin = Vec::with_capacity(n + 1 - first_origin);
    let mut prev: Option<CrmParameters> = None;
    for (idx, &end) in ends.iter().enumerate() {
        let w = MatchWindow::train(end - window_len, end);
        let init = prev.as_ref().map(|p| {
            let start_rates: Vec<f64> = field.oil.iter().map(|s| s[w.train_start]).collect();
            p.clone().with_initial_split(&start_rates)
        });
        let params = fit_window(field, &w, config, init.as_ref())?;
        let last_origin = ends.get(idx + 1).map_or(n, |&e| e - 1);
        let sim_end = last_origin + horizon;
        let sim = simulate_span(&params, field, w.train_start, sim_end - w.train_start, future_injections);
        for t in end..=last_origin {
            let off = t - w.train_start;
            by_origin.push((0..np).map(|j| sim[j][off..off + horizon].to_vec()).collect());
        }
        prev = Some(params);
    }
    Ok((first_origin, by_origin))
}

/// Builds the origin-indexed CRM trace, refitting every `stride` days counted
/// back from the end of the record, averaged over `window_lens`.
pub fn crm_trace(
    field: &FieldData,
    window_lens: &[usize],
    stride: usize,
    horizon: usize,
    future_injections: Option<&[Vec<f64>]>,
    config: &FitConfig,
) -> Result<CrmTrace, CrmError> {
    if window_lens.is_empty() {
        return Err(CrmError::NeedAtLeastTwoMembers(0));
    }
    if stride == 0 || horizon == 0 {
        return Err(CrmError::InvalidWindow("stride and horizon must be > 0".into()));
    }
    let members: Vec<(usize, Vec<Vec<Vec<f64>>>)> = window_lens
        .par_iter()
        .map(|&l| member_trace(field, l, stride, horizon, future_injections, config))
        .collect::<Result<_, _>>()?;
    let n = field.len();
    let first_origin = members.iter().map(|m| m.0).max().unwrap();
    let np = field.producers.len();
    let mut by_origin = Vec::with_capacity(n + 1 - first_origin);
    for t in first_origin..=n {
        let mean: Vec<Vec<f64>> = (0..np)
            .map(|j| {
                (0..horizon)
                    .map(|h| {
                        members.iter().map(|(f0, m)| m[t - f0][j][h]).sum::<f64>() / members.len() as f64
                    })
                    .collect()
            })
            .collect();
        by_origin.push(mean);
    }
    let last: Vec<Vec<Vec<f64>>> = members.iter().map(|(f0, m)| m[n - f0].clone()).collect();
    let ahead = combine_members(&field.producers, n, &last);
    Ok(CrmTrace {
        producers: field.producers.clone(),
        horizon,
        first_origin,
        by_origin,
        ahead,
    })
}
