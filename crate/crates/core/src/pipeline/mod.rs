//! Composite forecasting models as directed acyclic graphs.
//!
//! Nodes pass four kinds of values along their edges:
//!
//! | node            | inputs                              | output    |
//! |-----------------|-------------------------------------|-----------|
//! | `history_source`| none                                | history   |
//! | `lag_transform` | history                             | dataset   |
//! | `standardize`   | dataset                             | dataset   |
//! | `crm`           | history                             | trace     |
//! | `learner`       | dataset, then zero or more traces   | forecast  |
//! | `ensemble`      | two or more traces or forecasts     | forecast  |
//!
//! A trace is the CRM prediction indexed by forecast origin; a learner uses it
//! as exogenous columns. The output node must yield a trace or a forecast.

mod eval;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crm::{CrmError, FitConfig};
use crate::features::{FeatureError, LagSpec};
use crate::learners::{LearnerError, LearnerSpec};

pub use eval::{evaluate, evaluate_with, CrmCache, EvalContext, PipelineForecast};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMethod {
    Mean,
    Median,
}

/// CRM settings of a pipeline node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmNodeConfig {
    pub window_lens: Vec<usize>,
    #[serde(default)]
    pub fit: FitConfig,
}

impl Default for CrmNodeConfig {
    fn default() -> Self {
        CrmNodeConfig {
            window_lens: vec![60, 90, 120],
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum NodeKind {
    HistorySource,
    LagTransform(LagSpec),
    Standardize,
    Crm(CrmNodeConfig),
    Learner(LearnerSpec),
    Ensemble { method: EnsembleMethod },
}

impl NodeKind {
    pub(crate) fn label(&self) -> &'static str {
        match self {
            NodeKind::HistorySource => "history_source",
            NodeKind::LagTransform(_) => "lag_transform",
            NodeKind::Standardize => "standardize",
            NodeKind::Crm(_) => "crm",
            NodeKind::Learner(_) => "learner",
            NodeKind::Ensemble { .. } => "ensemble",
        }
    }

    /// Type of the value the node produces.
    pub fn output_type(&self) -> DataType {
        match self {
            NodeKind::HistorySource => DataType::History,
            NodeKind::LagTransform(_) | NodeKind::Standardize => DataType::Dataset,
            NodeKind::Crm(_) => DataType::Trace,
            NodeKind::Learner(_) | NodeKind::Ensemble { .. } => DataType::Forecast,
        }
    }

    /// Learner and ensemble nodes form the model stage; the rest is
    /// preprocessing.
    pub fn is_model_stage(&self) -> bool {
        matches!(self, NodeKind::Learner(_) | NodeKind::Ensemble { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineNode {
    pub id: String,
    #[serde(flatten)]
    pub kind: NodeKind,
    #[serde(default)]
    pub inputs: Vec<String>,
}

impl PipelineNode {
    pub fn new(id: impl Into<String>, kind: NodeKind, inputs: &[&str]) -> Self {
        PipelineNode {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub nodes: Vec<PipelineNode>,
    pub output: String,
    pub target_well: String,
    pub horizon_days: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataType {
    History,
    Dataset,
    Trace,
    Forecast,
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A structural problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    DuplicateId(String),
    UnknownInput { node: String, input: String },
    CycleDetected(Vec<String>),
    TypeMismatch { node: String, input: String, expected: String, found: DataType },
    Arity { node: String, expected: String, found: usize },
    SourceCount(usize),
    MissingOutput(String),
    OutputNotForecast(String),
    Unreachable(String),
    HorizonMismatch { node: String, lag_horizon: usize, horizon: usize },
    InvalidParams { node: String, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodeError {
    #[error(transparent)]
    Crm(#[from] CrmError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("pipeline failed validation: {0:?}")]
    ValidationFailed(Vec<Violation>),
    #[error("node {node}: {source}")]
    Node { node: String, source: NodeError },
    #[error("target well {0} is not a producer in the history")]
    UnknownTargetWell(String),
    #[error("invalid pipeline document: {0}")]
    Json(String),
}

impl Pipeline {
    pub fn node(&self, id: &str) -> Option<&PipelineNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(s).map_err(|e| PipelineError::Json(e.to_string()))
    }

    /// Number of edges feeding CRM traces into learners.
    pub fn exogenous_edges(&self) -> usize {
        let crm: BTreeSet<&str> = self
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Crm(_)))
            .map(|n| n.id.as_str())
            .collect();
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Learner(_)))
            .map(|n| n.inputs.iter().skip(1).filter(|i| crm.contains(i.as_str())).count())
            .sum()
    }

    /// Short content hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(serde_json::to_vec(self).expect("pipeline serializes"));
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Returns an id starting with `prefix` that no node uses yet.
    pub(crate) fn fresh_id(&self, prefix: &str) -> String {
        (1..)
            .map(|k| format!("{prefix}{k}"))
            .find(|id| self.node(id).is_none())
            .expect("unbounded search")
    }

    /// Ids of the nodes whose output reaches the output node.
    pub(crate) fn reachable(&self) -> BTreeSet<String> {
        let by_id: HashMap<&str, &PipelineNode> = self.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.output.clone()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id.clone()) {
                continue;
            }
            if let Some(n) = by_id.get(id.as_str()) {
                stack.extend(n.inputs.iter().cloned());
            }
        }
        seen.retain(|id| by_id.contains_key(id.as_str()));
        seen
    }
}

/// Same output, target, horizon and node set (by id, kind and inputs),
/// ignoring node order.
pub fn structurally_equal(a: &Pipeline, b: &Pipeline) -> bool {
    let map = |p: &Pipeline| -> BTreeMap<String, (String, Vec<String>)> {
        p.nodes
            .iter()
            .map(|n| (n.id.clone(), (serde_json::to_string(&n.kind).unwrap(), n.inputs.clone())))
            .collect()
    };
    a.output == b.output
        && a.target_well == b.target_well
        && a.horizon_days == b.horizon_days
        && a.nodes.len() == b.nodes.len()
        && map(a) == map(b)
}

/// Topological order of the nodes (Kahn's algorithm, ties by node order), or
/// the ids left on a cycle.
pub(crate) fn topological_order(p: &Pipeline) -> Result<Vec<usize>, Vec<String>> {
    let index: HashMap<&str, usize> = p.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut indegree = vec![0usize; p.nodes.len()];
    let mut children = vec![Vec::new(); p.nodes.len()];
    for (i, n) in p.nodes.iter().enumerate() {
        for input in &n.inputs {
            if let Some(&j) = index.get(input.as_str()) {
                indegree[i] += 1;
                children[j].push(i);
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..p.nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(p.nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() == p.nodes.len() {
        Ok(order)
    } else {
        Err((0..p.nodes.len())
            .filter(|&i| indegree[i] > 0)
            .map(|i| p.nodes[i].id.clone())
            .collect())
    }
}

/// Lists every structural violation; an empty list means [`evaluate`] can run.
pub fn validate(pipeline: &Pipeline) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for n in &pipeline.nodes {
        if !ids.insert(n.id.as_str()) {
            out.push(Violation::DuplicateId(n.id.clone()));
        }
    }
    let by_id: HashMap<&str, &PipelineNode> = pipeline.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    for n in &pipeline.nodes {
        for i in &n.inputs {
            if !by_id.contains_key(i.as_str()) {
                out.push(Violation::UnknownInput {
                    node: n.id.clone(),
                    input: i.clone(),
                });
            }
        }
    }
    let sources = pipeline
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::HistorySource)
        .count();
    if sources != 1 {
        out.push(Violation::SourceCount(sources));
    }
    if !by_id.contains_key(pipeline.output.as_str()) {
        out.push(Violation::MissingOutput(pipeline.output.clone()));
    }
    let order = match topological_order(pipeline) {
        Ok(o) => o,
        Err(cycle) => {
            out.push(Violation::CycleDetected(cycle));
            return out;
        }
    };

    // type inference in topological order
    let mut types: HashMap<&str, DataType> = HashMap::new();
    for &idx in &order {
        let n = &pipeline.nodes[idx];
        let input_types: Vec<Option<DataType>> =
            n.inputs.iter().map(|i| types.get(i.as_str()).copied()).collect();
        let mut expect = |pos: usize, allowed: &[DataType]| {
            if let Some(Some(t)) = input_types.get(pos) {
                if !allowed.contains(t) {
                    out.push(Violation::TypeMismatch {
                        node: n.id.clone(),
                        input: n.inputs[pos].clone(),
                        expected: allowed.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("|"),
                        found: *t,
                    });
                }
            }
        };
        let arity = |ok: bool, expected: &str, out: &mut Vec<Violation>| {
            if !ok {
                out.push(Violation::Arity {
                    node: n.id.clone(),
                    expected: expected.to_string(),
                    found: n.inputs.len(),
                });
            }
        };
        match &n.kind {
            NodeKind::HistorySource => {
                arity(n.inputs.is_empty(), "0", &mut out);
            }
            NodeKind::LagTransform(spec) => {
                expect(0, &[DataType::History]);
                arity(n.inputs.len() == 1, "1", &mut out);
                if let Err(e) = spec.validate() {
                    out.push(Violation::InvalidParams {
                        node: n.id.clone(),
                        reason: e.to_string(),
                    });
                }
                if spec.horizon != pipeline.horizon_days {
                    out.push(Violation::HorizonMismatch {
                        node: n.id.clone(),
                        lag_horizon: spec.horizon,
                        horizon: pipeline.horizon_days,
                    });
                }
            }
            NodeKind::Standardize => {
                expect(0, &[DataType::Dataset]);
                arity(n.inputs.len() == 1, "1", &mut out);
            }
            NodeKind::Crm(cfg) => {
                expect(0, &[DataType::History]);
                arity(n.inputs.len() == 1, "1", &mut out);
                if cfg.window_lens.is_empty() || cfg.window_lens.contains(&0) {
                    out.push(Violation::InvalidParams {
                        node: n.id.clone(),
                        reason: "window_lens must be non-empty and positive".into(),
                    });
                }
                if let Err(e) = cfg.fit.validate() {
                    out.push(Violation::InvalidParams {
                        node: n.id.clone(),
                        reason: e.to_string(),
                    });
                }
            }
            NodeKind::Learner(spec) => {
                expect(0, &[DataType::Dataset]);
                for pos in 1..n.inputs.len() {
                    expect(pos, &[DataType::Trace]);
                }
                arity(!n.inputs.is_empty(), ">=1", &mut out);
                if let Err(e) = spec.validate() {
                    out.push(Violation::InvalidParams {
                        node: n.id.clone(),
                        reason: e.to_string(),
                    });
                }
            }
            NodeKind::Ensemble { .. } => {
                for pos in 0..n.inputs.len() {
                    expect(pos, &[DataType::Trace, DataType::Forecast]);
                }
                arity(n.inputs.len() >= 2, ">=2", &mut out);
            }
        }
        types.insert(n.id.as_str(), n.kind.output_type());
    }
    if let Some(t) = types.get(pipeline.output.as_str()) {
        if !matches!(t, DataType::Trace | DataType::Forecast) {
            out.push(Violation::OutputNotForecast(pipeline.output.clone()));
        }
    }
    let reachable = pipeline.reachable();
    for n in &pipeline.nodes {
        if !reachable.contains(&n.id) {
            out.push(Violation::Unreachable(n.id.clone()));
        }
    }
    out
}

/// `history → lag → standardize` and `history → crm`, both feeding one
/// learner whose forecast is the output.
pub fn hybrid_template(target_well: &str, lag: LagSpec, learner: LearnerSpec, crm: CrmNodeConfig) -> Pipeline {
    Pipeline {
        nodes: vec![
            PipelineNode::new("source", NodeKind::HistorySource, &[]),
            PipelineNode::new("lag", NodeKind::LagTransform(lag), &["source"]),
            PipelineNode::new("std", NodeKind::Standardize, &["lag"]),
            PipelineNode::new("crm", NodeKind::Crm(crm), &["source"]),
            PipelineNode::new("learner", NodeKind::Learner(learner), &["std", "crm"]),
        ],
        output: "learner".into(),
        target_well: target_well.into(),
        horizon_days: lag.horizon,
    }
}

/// `history → lag [→ standardize] → learner`.
pub fn ml_chain(target_well: &str, lag: LagSpec, learner: LearnerSpec, standardize: bool) -> Pipeline {
    let mut nodes = vec![
        PipelineNode::new("source", NodeKind::HistorySource, &[]),
        PipelineNode::new("lag", NodeKind::LagTransform(lag), &["source"]),
    ];
    let feed = if standardize {
        nodes.push(PipelineNode::new("std", NodeKind::Standardize, &["lag"]));
        "std"
    } else {
        "lag"
    };
    nodes.push(PipelineNode::new("learner", NodeKind::Learner(learner), &[feed]));
    Pipeline {
        nodes,
        output: "learner".into(),
        target_well: target_well.into(),
        horizon_days: lag.horizon,
    }
}

/// `history → crm`, forecasting with the CRM alone.
pub fn crm_chain(target_well: &str, horizon: usize, crm: CrmNodeConfig) -> Pipeline {
    Pipeline {
        nodes: vec![
            PipelineNode::new("source", NodeKind::HistorySource, &[]),
            PipelineNode::new("crm", NodeKind::Crm(crm), &["source"]),
        ],
        output: "crm".into(),
        target_well: target_well.into(),
        horizon_days: horizon,
    }
}
