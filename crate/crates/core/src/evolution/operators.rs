use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_distr::StandardNormal;

use super::{stream_rng, EvoConfig, EvolutionError, LearnerFamily, SearchSpace};
use crate::features::LagSpec;
use crate::learners::LearnerSpec;
use crate::pipeline::{
    crm_chain, hybrid_template, topological_order, ml_chain, validate, DataType, EnsembleMethod, NodeKind, Pipeline, PipelineNode,
};

const MAX_RETRIES: usize = 10;

fn draw_usize(rng: &mut impl Rng, r: (usize, usize)) -> usize {
    rng.gen_range(r.0..=r.1)
}

fn draw_f64(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    if r.0 < r.1 {
        rng.gen_range(r.0..=r.1)
    } else {
        r.0
    }
}

fn draw_lambda(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    draw_f64(rng, (r.0.ln(), r.1.ln())).exp()
}

fn learner_of(family: LearnerFamily, space: &SearchSpace, rng: &mut impl Rng) -> LearnerSpec {
    match family {
        LearnerFamily::Naive => LearnerSpec::Naive,
        LearnerFamily::Linear => LearnerSpec::Linear,
        LearnerFamily::Ridge => LearnerSpec::Ridge {
            lambda: draw_lambda(rng, space.lambda_range),
        },
        LearnerFamily::KNearest => LearnerSpec::KNearest {
            k: draw_usize(rng, space.k_range),
        },
        LearnerFamily::DecisionTree => LearnerSpec::DecisionTree {
            max_depth: draw_usize(rng, space.depth_range),
            min_samples_leaf: draw_usize(rng, space.min_samples_leaf_range),
        },
        LearnerFamily::RandomForest => LearnerSpec::RandomForest {
            n_trees: draw_usize(rng, space.n_trees_range),
            max_depth: draw_usize(rng, space.depth_range),
            min_samples_leaf: draw_usize(rng, space.min_samples_leaf_range),
            bootstrap: true,
            feature_subsample_fraction: draw_f64(rng, space.feature_fraction_range),
            seed: rng.gen(),
        },
    }
}

fn family(spec: &LearnerSpec) -> LearnerFamily {
    match spec {
        LearnerSpec::Naive => LearnerFamily::Naive,
        LearnerSpec::Linear => LearnerFamily::Linear,
        LearnerSpec::Ridge { .. } => LearnerFamily::Ridge,
        LearnerSpec::KNearest { .. } => LearnerFamily::KNearest,
        LearnerSpec::DecisionTree { .. } => LearnerFamily::DecisionTree,
        LearnerSpec::RandomForest { .. } => LearnerFamily::RandomForest,
    }
}

/// A learner of a uniformly drawn family with hyperparameters drawn from the
/// search space.
pub fn random_learner(space: &SearchSpace, rng: &mut impl Rng) -> LearnerSpec {
    let f = space.learners[rng.gen_range(0..space.learners.len())];
    learner_of(f, space, rng)
}

/// A lag spec with a uniformly drawn window; one in four uses the target's own
/// lags only.
pub fn random_lag(space: &SearchSpace, horizon: usize, rng: &mut impl Rng) -> LagSpec {
    LagSpec {
        target_only: rng.gen_bool(0.25),
        ..LagSpec::new(draw_usize(rng, space.lag_range), horizon)
    }
}

/// Hybrid templates and ML chains alternate, with a single CRM-only chain at
/// index 2.
pub fn init_population(config: &EvoConfig, target_well: &str, horizon: usize) -> Vec<Pipeline> {
    let mut rng = stream_rng(config.seed, 0, u64::MAX - 1);
    let space = &config.search_space;
    (0..config.population_size)
        .map(|i| {
            if i == 2 {
                return crm_chain(target_well, horizon, config.crm.clone());
            }
            let lag = random_lag(space, horizon, &mut rng);
            let learner = random_learner(space, &mut rng);
            if i % 2 == 0 {
                hybrid_template(target_well, lag, learner, config.crm.clone())
            } else {
                let standardize = rng.gen_bool(0.5);
                ml_chain(target_well, lag, learner, standardize)
            }
        })
        .collect()
}

fn ids_of<'a>(p: &'a Pipeline, pred: impl Fn(&NodeKind) -> bool + 'a) -> Vec<usize> {
    p.nodes.iter().enumerate().filter(|(_, n)| pred(&n.kind)).map(|(i, _)| i).collect()
}

fn replace_learner(p: &Pipeline, space: &SearchSpace, rng: &mut impl Rng) -> Option<Pipeline> {
    let learners = ids_of(p, |k| matches!(k, NodeKind::Learner(_)));
    if learners.is_empty() {
        return None;
    }
    let at = learners[rng.gen_range(0..learners.len())];
    let NodeKind::Learner(current) = &p.nodes[at].kind else { unreachable!() };
    let others: Vec<LearnerFamily> = space.learners.iter().copied().filter(|&f| f != family(current)).collect();
    let f = if others.is_empty() {
        family(current)
    } else {
        others[rng.gen_range(0..others.len())]
    };
    let mut out = p.clone();
    out.nodes[at].kind = NodeKind::Learner(learner_of(f, space, rng));
    Some(out)
}

fn step(rng: &mut impl Rng, v: usize, r: (usize, usize), max_step: usize) -> usize {
    let d = rng.gen_range(1..=max_step.max(1)) as i64;
    let d = if rng.gen_bool(0.5) { d } else { -d };
    (v as i64 + d).clamp(r.0 as i64, r.1 as i64) as usize
}

fn perturb(spec: &LearnerSpec, space: &SearchSpace, rng: &mut impl Rng) -> Option<LearnerSpec> {
    let out = match spec.clone() {
        LearnerSpec::Naive | LearnerSpec::Linear => return None,
        LearnerSpec::Ridge { lambda } => {
            let z: f64 = rng.sample(StandardNormal);
            LearnerSpec::Ridge {
                lambda: (lambda * z.exp()).clamp(space.lambda_range.0, space.lambda_range.1),
            }
        }
        LearnerSpec::KNearest { k } => LearnerSpec::KNearest {
            k: step(rng, k, space.k_range, 3),
        },
        LearnerSpec::DecisionTree {
            max_depth,
            min_samples_leaf,
        } => {
            if rng.gen_bool(0.5) {
                LearnerSpec::DecisionTree {
                    max_depth: step(rng, max_depth, space.depth_range, 2),
                    min_samples_leaf,
                }
            } else {
                LearnerSpec::DecisionTree {
                    max_depth,
                    min_samples_leaf: step(rng, min_samples_leaf, space.min_samples_leaf_range, 2),
                }
            }
        }
        LearnerSpec::RandomForest {
            mut n_trees,
            mut max_depth,
            mut min_samples_leaf,
            bootstrap,
            mut feature_subsample_fraction,
            seed,
        } => {
            match rng.gen_range(0..4) {
                0 => n_trees = step(rng, n_trees, space.n_trees_range, 30),
                1 => max_depth = step(rng, max_depth, space.depth_range, 2),
                2 => min_samples_leaf = step(rng, min_samples_leaf, space.min_samples_leaf_range, 2),
                _ => {
                    let z: f64 = rng.sample(StandardNormal);
                    let (lo, hi) = space.feature_fraction_range;
                    feature_subsample_fraction = (feature_subsample_fraction + 0.1 * z).clamp(lo, hi);
                }
            }
            LearnerSpec::RandomForest {
                n_trees,
                max_depth,
                min_samples_leaf,
                bootstrap,
                feature_subsample_fraction,
                seed,
            }
        }
    };
    (out != *spec).then_some(out)
}

fn perturb_hyperparameter(p: &Pipeline, space: &SearchSpace, rng: &mut impl Rng) -> Option<Pipeline> {
    let learners = ids_of(p, |k| matches!(k, NodeKind::Learner(_)));
    if learners.is_empty() {
        return None;
    }
    let at = learners[rng.gen_range(0..learners.len())];
    let NodeKind::Learner(spec) = &p.nodes[at].kind else { unreachable!() };
    let new = perturb(spec, space, rng)?;
    let mut out = p.clone();
    out.nodes[at].kind = NodeKind::Learner(new);
    Some(out)
}

fn change_lag(p: &Pipeline, space: &SearchSpace, rng: &mut impl Rng) -> Option<Pipeline> {
    let lags = ids_of(p, |k| matches!(k, NodeKind::LagTransform(_)));
    if lags.is_empty() {
        return None;
    }
    let at = lags[rng.gen_range(0..lags.len())];
    let NodeKind::LagTransform(spec) = &p.nodes[at].kind else { unreachable!() };
    let mut new = *spec;
    match rng.gen_range(0..4) {
        0 => new.target_only = !new.target_only,
        1 => new.window = draw_usize(rng, space.lag_range),
        _ => new.window = step(rng, new.window, space.lag_range, (new.window / 4).max(2)),
    }
    if new == *spec {
        return None;
    }
    let mut out = p.clone();
    out.nodes[at].kind = NodeKind::LagTransform(new);
    Some(out)
}

fn source_id(p: &Pipeline) -> String {
    p.nodes
        .iter()
        .find(|n| n.kind == NodeKind::HistorySource)
        .map(|n| n.id.clone())
        .expect("valid pipeline has a source")
}

fn add_node(p: &mut Pipeline, prefix: &str, kind: NodeKind, inputs: Vec<String>) -> String {
    let id = p.fresh_id(prefix);
    p.nodes.push(PipelineNode {
        id: id.clone(),
        kind,
        inputs,
    });
    id
}

/// Adds a second learner next to the current output and combines both in an
/// ensemble (or joins an existing output ensemble).
fn add_ensemble(p: &Pipeline, config: &EvoConfig, rng: &mut impl Rng) -> Option<Pipeline> {
    let space = &config.search_space;
    let mut out = p.clone();
    let datasets: Vec<String> = out
        .nodes
        .iter()
        .filter(|n| n.kind.output_type() == DataType::Dataset)
        .map(|n| n.id.clone())
        .collect();
    let dataset = if datasets.is_empty() {
        let src = source_id(&out);
        let lag = random_lag(space, out.horizon_days, rng);
        add_node(&mut out, "lag", NodeKind::LagTransform(lag), vec![src])
    } else {
        datasets[rng.gen_range(0..datasets.len())].clone()
    };
    let mut inputs = vec![dataset];
    if rng.gen_bool(0.5) {
        let crm = out
            .nodes
            .iter()
            .find(|n| matches!(n.kind, NodeKind::Crm(_)))
            .map(|n| n.id.clone());
        let crm = crm.unwrap_or_else(|| {
            let src = source_id(&out);
            add_node(&mut out, "crm", NodeKind::Crm(config.crm.clone()), vec![src])
        });
        inputs.push(crm);
    }
    let learner = add_node(&mut out, "learner", NodeKind::Learner(random_learner(space, rng)), inputs);
    let output = out.output.clone();
    let at = out.nodes.iter().position(|n| n.id == output).expect("valid output");
    if matches!(out.nodes[at].kind, NodeKind::Ensemble { .. }) {
        out.nodes[at].inputs.push(learner);
    } else {
        let method = if rng.gen_bool(0.5) {
            EnsembleMethod::Mean
        } else {
            EnsembleMethod::Median
        };
        out.output = add_node(&mut out, "ens", NodeKind::Ensemble { method }, vec![output, learner]);
    }
    (out.nodes.len() <= config.max_nodes).then_some(out)
}

enum Removal {
    Standardize(usize),
    Edge(usize, usize),
}

/// Removes a standardize node, an exogenous edge or an ensemble member.
fn drop_optional(p: &Pipeline, rng: &mut impl Rng) -> Option<Pipeline> {
    let mut options = Vec::new();
    for (i, n) in p.nodes.iter().enumerate() {
        match n.kind {
            NodeKind::Standardize => options.push(Removal::Standardize(i)),
            NodeKind::Learner(_) => options.extend((1..n.inputs.len()).map(|k| Removal::Edge(i, k))),
            NodeKind::Ensemble { .. } if n.inputs.len() >= 2 => {
                options.extend((0..n.inputs.len()).map(|k| Removal::Edge(i, k)))
            }
            _ => {}
        }
    }
    if options.is_empty() {
        return None;
    }
    let mut out = p.clone();
    match options.swap_remove(rng.gen_range(0..options.len())) {
        Removal::Standardize(i) => {
            let removed = out.nodes.remove(i);
            let feed = removed.inputs[0].clone();
            rewire(&mut out, &removed.id, &feed);
        }
        Removal::Edge(i, k) => {
            out.nodes[i].inputs.remove(k);
        }
    }
    Some(out)
}

fn rewire(p: &mut Pipeline, from: &str, to: &str) {
    for n in &mut p.nodes {
        for i in &mut n.inputs {
            if i == from {
                *i = to.to_string();
            }
        }
    }
    if p.output == from {
        p.output = to.to_string();
    }
}

/// With probability `mutation_rate`, applies one of five operators drawn
/// uniformly (replace learner, perturb a hyperparameter, change the lag spec,
/// add an ensemble stage, drop an optional node). Draws that do not apply or
/// give an invalid graph are retried a bounded number of times; the input is
/// returned unchanged if all fail.
pub fn mutate(p: &Pipeline, config: &EvoConfig, rng: &mut impl Rng) -> Pipeline {
    if !rng.gen_bool(config.mutation_rate) {
        return p.clone();
    }
    let space = &config.search_space;
    for _ in 0..MAX_RETRIES {
        let candidate = match rng.gen_range(0..5) {
            0 => replace_learner(p, space, rng),
            1 => perturb_hyperparameter(p, space, rng),
            2 => change_lag(p, space, rng),
            3 => add_ensemble(p, config, rng),
            _ => drop_optional(p, rng),
        };
        if let Some(c) = candidate.map(|c| regularize(&c)) {
            if c.nodes.len() <= config.max_nodes && validate(&c).is_empty() {
                return c;
            }
        }
    }
    p.clone()
}

/// Removes nodes that do not reach the output, collapses single-input
/// ensembles and drops repeated inputs of ensembles and exogenous edges, until
/// nothing changes.
pub fn regularize(p: &Pipeline) -> Pipeline {
    let mut out = p.clone();
    loop {
        let before = out.clone();
        for n in &mut out.nodes {
            let keep_from = match n.kind {
                NodeKind::Ensemble { .. } => 0,
                NodeKind::Learner(_) => 1,
                _ => continue,
            };
            let mut seen = BTreeSet::new();
            let mut k = 0;
            n.inputs.retain(|id| {
                k += 1;
                k <= keep_from || seen.insert(id.clone())
            });
        }
        if let Some(i) = out
            .nodes
            .iter()
            .position(|n| matches!(n.kind, NodeKind::Ensemble { .. }) && n.inputs.len() == 1)
        {
            let ens = out.nodes.remove(i);
            rewire(&mut out, &ens.id, &ens.inputs[0]);
        }
        let reachable = out.reachable();
        out.nodes.retain(|n| reachable.contains(&n.id));
        if out == before {
            return out;
        }
    }
}

/// Nodes of `p` that `id` depends on (itself included), in topological order.
fn ancestors(p: &Pipeline, id: &str) -> Vec<PipelineNode> {
    let by_id: HashMap<&str, &PipelineNode> = p.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    let mut seen = BTreeSet::new();
    let mut stack = vec![id.to_string()];
    while let Some(x) = stack.pop() {
        if seen.insert(x.clone()) {
            if let Some(n) = by_id.get(x.as_str()) {
                stack.extend(n.inputs.iter().cloned());
            }
        }
    }
    let order = topological_order(p).expect("valid parent");
    order.into_iter().map(|i| &p.nodes[i]).filter(|n| seen.contains(&n.id)).cloned().collect()
}

struct Graft<'a> {
    child: Pipeline,
    pre: &'a Pipeline,
    model: &'a Pipeline,
    imported: HashMap<String, String>,
}

impl Graft<'_> {
    /// Node of the child standing in for preprocessing node `id` of the model
    /// parent; `None` for an exogenous edge the child cannot serve.
    fn resolve(&mut self, id: &str, exogenous: bool) -> Option<String> {
        if let Some(x) = self.imported.get(id) {
            return Some(x.clone());
        }
        let node = self.model.node(id).expect("valid parent");
        let ty = node.kind.output_type();
        if self.child.node(id).is_some_and(|c| c.kind.output_type() == ty) {
            return Some(id.to_string());
        }
        let local = match ty {
            DataType::History => Some(source_id(&self.child)),
            DataType::Dataset => self.dataset_head(),
            DataType::Trace => self
                .child
                .nodes
                .iter()
                .find(|n| n.kind.output_type() == DataType::Trace)
                .map(|n| n.id.clone()),
            DataType::Forecast => unreachable!("model stage nodes are not resolved"),
        };
        if local.is_some() || exogenous {
            return local;
        }
        // import the model parent's chain for this node
        let src = source_id(&self.child);
        for n in ancestors(self.model, id) {
            if n.kind == NodeKind::HistorySource {
                self.imported.insert(n.id.clone(), src.clone());
                continue;
            }
            let new_id = if self.child.node(&n.id).is_some() {
                self.child.fresh_id(n.kind.label())
            } else {
                n.id.clone()
            };
            let inputs = n.inputs.iter().map(|i| self.imported[i].clone()).collect();
            self.child.nodes.push(PipelineNode {
                id: new_id.clone(),
                kind: n.kind.clone(),
                inputs,
            });
            self.imported.insert(n.id.clone(), new_id);
        }
        Some(self.imported[id].clone())
    }

    /// The dataset feeding the preprocessing parent's first learner, or the
    /// last dataset node.
    fn dataset_head(&self) -> Option<String> {
        let from_learner = self
            .pre
            .nodes
            .iter()
            .find(|n| matches!(n.kind, NodeKind::Learner(_)))
            .map(|n| n.inputs[0].clone())
            .filter(|id| self.child.node(id).is_some());
        from_learner.or_else(|| {
            self.child
                .nodes
                .iter()
                .rev()
                .find(|n| n.kind.output_type() == DataType::Dataset)
                .map(|n| n.id.clone())
        })
    }
}

/// Child with the preprocessing stage (source, lag, standardize, CRM) of one
/// parent and the learner/ensemble stage of the other, the roles drawn at
/// random. Inputs are matched by id and type; exogenous edges the child cannot
/// serve are dropped and missing dataset chains are imported.
pub fn crossover(a: &Pipeline, b: &Pipeline, config: &EvoConfig, rng: &mut impl Rng) -> Result<Pipeline, EvolutionError> {
    if a.target_well != b.target_well || a.horizon_days != b.horizon_days {
        return Err(EvolutionError::IncompatibleParents);
    }
    let (pre, model) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
    let mut g = Graft {
        child: Pipeline {
            nodes: pre.nodes.iter().filter(|n| !n.kind.is_model_stage()).cloned().collect(),
            output: String::new(),
            target_well: pre.target_well.clone(),
            horizon_days: pre.horizon_days,
        },
        pre,
        model,
        imported: HashMap::new(),
    };
    let stage: Vec<&PipelineNode> = model.nodes.iter().filter(|n| n.kind.is_model_stage()).collect();
    let mut rename: HashMap<String, String> = HashMap::new();
    let mut taken: BTreeSet<String> = g.child.nodes.iter().map(|n| n.id.clone()).collect();
    for n in &stage {
        let mut id = n.id.clone();
        let mut k = 1;
        while taken.contains(&id) {
            id = format!("{}{k}", n.kind.label());
            k += 1;
        }
        taken.insert(id.clone());
        rename.insert(n.id.clone(), id);
    }
    let mut grafted = Vec::with_capacity(stage.len());
    for n in &stage {
        let is_learner = matches!(n.kind, NodeKind::Learner(_));
        let mut inputs = Vec::with_capacity(n.inputs.len());
        for (pos, i) in n.inputs.iter().enumerate() {
            if let Some(r) = rename.get(i) {
                inputs.push(r.clone());
            } else if let Some(r) = g.resolve(i, is_learner && pos > 0) {
                inputs.push(r);
            }
        }
        grafted.push(PipelineNode {
            id: rename[&n.id].clone(),
            kind: n.kind.clone(),
            inputs,
        });
    }
    let output = match rename.get(&model.output) {
        Some(r) => r.clone(),
        None => g.resolve(&model.output, false).expect("non-exogenous resolution succeeds"),
    };
    let mut child = g.child;
    child.nodes.extend(grafted);
    child.output = output;
    let child = regularize(&child);
    if validate(&child).is_empty() && child.nodes.len() <= config.max_nodes.max(pre.nodes.len()) {
        Ok(child)
    } else {
        Ok(pre.clone())
    }
}
