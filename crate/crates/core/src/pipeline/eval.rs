use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{topological_order, validate, EnsembleMethod, NodeError, NodeKind, Pipeline, PipelineError};
use crate::crm::{crm_trace, CrmError, CrmTrace};
use crate::features::{attach_exogenous, column_scaling, feature_row, lagged_transform, standardize, LaggedDataset, Scaling};
use crate::ingest::FieldData;
use crate::learners;
use crate::metrics::IntervalForecast;

/// Forecast of the target well for the `horizon_days` after the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineForecast {
    pub target_well: String,
    pub dates: Vec<NaiveDate>,
    pub forecast: IntervalForecast,
}

type CrmSlot = Arc<OnceLock<Result<Arc<CrmTrace>, CrmError>>>;

/// Memoized CRM traces keyed by node settings and input data, shared by
/// concurrent evaluations.
#[derive(Debug, Default)]
pub struct CrmCache {
    slots: Mutex<HashMap<String, CrmSlot>>,
}

impl CrmCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.slots.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slot(&self, key: String) -> CrmSlot {
        self.slots.lock().unwrap().entry(key).or_default().clone()
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalContext {
    /// Injection rates past the end of the record, `[injector][day]`. Without
    /// them the CRM holds the last observed rates.
    pub future_injections: Option<Vec<Vec<f64>>>,
    pub crm_cache: Option<Arc<CrmCache>>,
}

#[derive(Debug, Clone)]
struct DatasetValue {
    train: LaggedDataset,
    /// Feature row at the end of the record.
    query: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Value {
    History,
    Dataset(Arc<DatasetValue>),
    Trace(Arc<CrmTrace>),
    Forecast(Arc<IntervalForecast>),
}

fn data_digest(field: &FieldData, future: Option<&[Vec<f64>]>) -> String {
    let mut h = Sha256::new();
    let mut put = |rows: &[Vec<f64>]| {
        h.update((rows.len() as u64).to_le_bytes());
        for r in rows {
            h.update((r.len() as u64).to_le_bytes());
            for v in r {
                h.update(v.to_bits().to_le_bytes());
            }
        }
    };
    put(&field.oil);
    put(&field.injection);
    put(field.pressure.as_deref().unwrap_or(&[]));
    put(future.unwrap_or(&[]));
    h.update(field.producers.join(",").as_bytes());
    h.update(field.injectors.join(",").as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Scales the query row and composes with any earlier scaling so that
/// `scaling` always maps raw features to the stored ones.
fn standardize_value(input: &DatasetValue) -> Result<DatasetValue, NodeError> {
    let (mut train, s) = standardize(&input.train)?;
    let query = s.apply(&input.query);
    if let Some(prev) = &input.train.scaling {
        train.scaling = Some(Scaling {
            mean: prev.mean.iter().zip(&prev.scale).zip(&s.mean).map(|((m1, s1), m2)| m1 + s1 * m2).collect(),
            scale: prev.scale.iter().zip(&s.scale).map(|(s1, s2)| s1 * s2).collect(),
        });
    }
    Ok(DatasetValue { train, query })
}

/// Appends each trace as exogenous columns, keeping only samples whose origin
/// the traces cover.
fn with_traces(input: &DatasetValue, traces: &[(&str, &CrmTrace)], target: usize, n: usize) -> Result<DatasetValue, NodeError> {
    let first = traces.iter().map(|(_, t)| t.first_origin).max().unwrap_or(0);
    let keep: Vec<usize> = (0..input.train.rows()).filter(|&r| input.train.origins[r] >= first).collect();
    let mut train = input.train.select_rows(&keep);
    let mut query = input.query.clone();
    for (name, trace) in traces {
        let mut values: Vec<Vec<f64>> = train
            .origins
            .iter()
            .map(|&t| trace.at(t, target).expect("origin covered").to_vec())
            .collect();
        let mut q = trace
            .at(n, target)
            .ok_or_else(|| NodeError::Other(format!("trace {name} does not reach the end of the record")))?
            .to_vec();
        let scaled = train.scaling.is_some() && !values.is_empty();
        let s = if scaled {
            let s = column_scaling(&values)?;
            values = values.iter().map(|v| s.apply(v)).collect();
            q = s.apply(&q);
            Some(s)
        } else {
            None
        };
        let width = q.len();
        train = attach_exogenous(&train, name, &values)?;
        if let (Some(s), Some(ts)) = (s, train.scaling.as_mut()) {
            let at = ts.mean.len() - width;
            ts.mean[at..].copy_from_slice(&s.mean);
            ts.scale[at..].copy_from_slice(&s.scale);
        }
        query.extend(q);
    }
    Ok(DatasetValue { train, query })
}

fn combine(method: EnsembleMethod, members: &[&IntervalForecast]) -> IntervalForecast {
    let len = members[0].len();
    let mut out = IntervalForecast {
        points: Vec::with_capacity(len),
        lower: Vec::with_capacity(len),
        upper: Vec::with_capacity(len),
        level: members.iter().map(|m| m.level).fold(f64::INFINITY, f64::min),
    };
    let mut column = Vec::with_capacity(members.len());
    for k in 0..len {
        column.clear();
        column.extend(members.iter().map(|m| m.points[k]));
        let point = match method {
            EnsembleMethod::Mean => column.iter().sum::<f64>() / column.len() as f64,
            EnsembleMethod::Median => {
                column.sort_by(f64::total_cmp);
                let m = column.len();
                if m % 2 == 1 {
                    column[m / 2]
                } else {
                    0.5 * (column[m / 2 - 1] + column[m / 2])
                }
            }
        };
        let lo = members.iter().map(|m| m.lower[k]).fold(point, f64::min);
        let hi = members.iter().map(|m| m.upper[k]).fold(point, f64::max);
        out.points.push(point);
        out.lower.push(lo);
        out.upper.push(hi);
    }
    out
}

pub fn evaluate(pipeline: &Pipeline, field: &FieldData) -> Result<PipelineForecast, PipelineError> {
    evaluate_with(pipeline, field, &EvalContext::default())
}

/// Validates the graph, then computes every node in topological order and
/// returns the output node's forecast for the target well.
pub fn evaluate_with(pipeline: &Pipeline, field: &FieldData, ctx: &EvalContext) -> Result<PipelineForecast, PipelineError> {
    let violations = validate(pipeline);
    if !violations.is_empty() {
        return Err(PipelineError::ValidationFailed(violations));
    }
    let target_well = &pipeline.target_well;
    let target = field
        .producer_index(target_well)
        .ok_or_else(|| PipelineError::UnknownTargetWell(target_well.clone()))?;
    let n = field.len();
    let horizon = pipeline.horizon_days;
    let future = ctx.future_injections.as_deref();
    let order = topological_order(pipeline).expect("validated");
    let mut digest: Option<String> = None;
    let mut values: HashMap<&str, Value> = HashMap::new();

    for idx in order {
        let node = &pipeline.nodes[idx];
        let fail = |source: NodeError| PipelineError::Node {
            node: node.id.clone(),
            source,
        };
        let input = |k: usize| values[node.inputs[k].as_str()].clone();
        let value = match &node.kind {
            NodeKind::HistorySource => Value::History,
            NodeKind::LagTransform(spec) => {
                let train = lagged_transform(field, target_well, spec).map_err(|e| fail(e.into()))?;
                let query = feature_row(field, target_well, spec, n).map_err(|e| fail(e.into()))?;
                Value::Dataset(Arc::new(DatasetValue { train, query }))
            }
            NodeKind::Standardize => match input(0) {
                Value::Dataset(d) => Value::Dataset(Arc::new(standardize_value(&d).map_err(fail)?)),
                _ => unreachable!("validated"),
            },
            NodeKind::Crm(cfg) => {
                let run = || crm_trace(field, &cfg.window_lens, horizon, horizon, future, &cfg.fit).map(Arc::new);
                let result = match &ctx.crm_cache {
                    Some(cache) => {
                        let d = digest.get_or_insert_with(|| data_digest(field, future));
                        let key = format!("{}|{n}|{horizon}|{d}", serde_json::to_string(cfg).unwrap());
                        cache.slot(key).get_or_init(run).clone()
                    }
                    None => run(),
                };
                Value::Trace(result.map_err(|e| fail(e.into()))?)
            }
            NodeKind::Learner(spec) => {
                let data = match input(0) {
                    Value::Dataset(d) => d,
                    _ => unreachable!("validated"),
                };
                let traces: Vec<(&str, Arc<CrmTrace>)> = node.inputs[1..]
                    .iter()
                    .map(|id| match &values[id.as_str()] {
                        Value::Trace(t) => (id.as_str(), t.clone()),
                        _ => unreachable!("validated"),
                    })
                    .collect();
                let data = if traces.is_empty() {
                    data
                } else {
                    let refs: Vec<(&str, &CrmTrace)> = traces.iter().map(|(id, t)| (*id, t.as_ref())).collect();
                    Arc::new(with_traces(&data, &refs, target, n).map_err(fail)?)
                };
                let model = learners::train(spec, &data.train).map_err(|e| fail(e.into()))?;
                let mut out = learners::predict(&model, std::slice::from_ref(&data.query)).map_err(|e| fail(e.into()))?;
                Value::Forecast(Arc::new(IntervalForecast::point_only(out.pop().expect("one row"))))
            }
            NodeKind::Ensemble { method } => {
                let members: Vec<Arc<IntervalForecast>> = (0..node.inputs.len())
                    .map(|k| match input(k) {
                        Value::Forecast(f) => f,
                        Value::Trace(t) => Arc::new(t.ahead.intervals[target].clone()),
                        _ => unreachable!("validated"),
                    })
                    .collect();
                let refs: Vec<&IntervalForecast> = members.iter().map(Arc::as_ref).collect();
                Value::Forecast(Arc::new(combine(*method, &refs)))
            }
        };
        values.insert(node.id.as_str(), value);
    }

    let forecast = match &values[pipeline.output.as_str()] {
        Value::Forecast(f) => f.as_ref().clone(),
        Value::Trace(t) => t.ahead.intervals[target].clone(),
        _ => unreachable!("validated"),
    };
    let last = field.dates.last().copied().unwrap_or_else(|| NaiveDate::from_ymd_opt(1970, 1, 1).unwrap());
    Ok(PipelineForecast {
        target_well: target_well.clone(),
        dates: (1..=forecast.len() as i64).map(|d| last + Duration::days(d)).collect(),
        forecast,
    })
}
