//! Evolutionary structural search over pipelines.
//!
//! A generation evaluates every individual on a held-out validation tail,
//! keeps the `elitism_count` best unchanged, and fills the rest of the
//! population with children of tournament-selected parents. Random draws come
//! from ChaCha streams keyed by (generation, individual), so results do not
//! depend on thread scheduling.

mod operators;

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FieldData;
use crate::pipeline::{evaluate_with, CrmCache, CrmNodeConfig, EvalContext, Pipeline};

pub use operators::{crossover, init_population, mutate, random_learner, random_lag, regularize};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error("invalid evolution config: {0}")]
    InvalidConfig(String),
    #[error("parents differ in target well or horizon")]
    IncompatibleParents,
    #[error("individual {0} has no fitness")]
    MissingFitness(usize),
    #[error("history has {len} days, evolution needs at least {needed}")]
    InsufficientData { len: usize, needed: usize },
    #[error("target well {0} is not a producer in the history")]
    UnknownTargetWell(String),
    #[error("every individual of the initial population failed to evaluate")]
    AllIndividualsFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerFamily {
    Naive,
    Linear,
    Ridge,
    KNearest,
    DecisionTree,
    RandomForest,
}

/// Ranges that random learners and lag specs are drawn from. Integer ranges
/// are inclusive; lambda is drawn log-uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learners: Vec<LearnerFamily>,
    pub lambda_range: (f64, f64),
    pub k_range: (usize, usize),
    pub depth_range: (usize, usize),
    pub n_trees_range: (usize, usize),
    pub min_samples_leaf_range: (usize, usize),
    pub feature_fraction_range: (f64, f64),
    pub lag_range: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learners: vec![
                LearnerFamily::Linear,
                LearnerFamily::Ridge,
                LearnerFamily::KNearest,
                LearnerFamily::DecisionTree,
                LearnerFamily::RandomForest,
            ],
            lambda_range: (1e-4, 1e2),
            k_range: (1, 20),
            depth_range: (2, 16),
            n_trees_range: (10, 200),
            min_samples_leaf_range: (1, 10),
            feature_fraction_range: (0.2, 1.0),
            lag_range: (7, 120),
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: &str| Err(EvolutionError::InvalidConfig(m.to_string()));
        let ordered = |r: (usize, usize)| r.0 <= r.1;
        if self.learners.is_empty() {
            return bad("search_space.learners is empty");
        }
        if !(self.lambda_range.0 > 0.0 && self.lambda_range.0 <= self.lambda_range.1) {
            return bad("lambda_range must be positive and ordered");
        }
        if !(self.feature_fraction_range.0 > 0.0
            && self.feature_fraction_range.0 <= self.feature_fraction_range.1
            && self.feature_fraction_range.1 <= 1.0)
        {
            return bad("feature_fraction_range must lie in (0, 1] and be ordered");
        }
        let ranges = [
            ("k_range", self.k_range),
            ("depth_range", self.depth_range),
            ("n_trees_range", self.n_trees_range),
            ("min_samples_leaf_range", self.min_samples_leaf_range),
            ("lag_range", self.lag_range),
        ];
        for (name, r) in ranges {
            if r.0 == 0 || !ordered(r) {
                return Err(EvolutionError::InvalidConfig(format!("{name} must be positive and ordered")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvoConfig {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub tournament_size: usize,
    pub elitism_count: usize,
    /// Days at the end of the training range held out for fitness.
    pub validation_len: usize,
    pub seed: u64,
    pub max_nodes: usize,
    pub search_space: SearchSpace,
    /// Settings of every CRM node the search creates.
    pub crm: CrmNodeConfig,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population_size: 20,
            generations: 10,
            mutation_rate: 0.8,
            crossover_rate: 0.5,
            tournament_size: 3,
            elitism_count: 2,
            validation_len: 100,
            seed: 0,
            max_nodes: 12,
            search_space: SearchSpace::default(),
            crm: CrmNodeConfig::default(),
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: &str| Err(EvolutionError::InvalidConfig(m.to_string()));
        if self.population_size < 2 {
            return bad("population_size must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("mutation_rate and crossover_rate must lie in [0, 1]");
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return bad("tournament_size must lie in [1, population_size]");
        }
        if self.elitism_count == 0 || self.elitism_count >= self.population_size {
            return bad("elitism_count must lie in [1, population_size)");
        }
        if self.max_nodes < 5 {
            return bad("max_nodes must be >= 5 to hold the hybrid template");
        }
        if self.crm.window_lens.is_empty() {
            return bad("crm.window_lens is empty");
        }
        self.search_space.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub pipeline: Pipeline,
    /// Validation RMSE in m³/day; `+inf` when evaluation failed.
    pub fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_rmse: f64,
    /// Mean over individuals with finite fitness.
    pub mean_rmse: f64,
    pub best_pipeline_id: String,
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub best: Individual,
    pub log: Vec<GenerationStats>,
    pub population: Vec<Individual>,
}

const MIN_TRAIN_ROWS: usize = 10;

/// Deterministic generator for stream `stream` of generation `generation`.
pub(crate) fn stream_rng(seed: u64, generation: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ generation.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

fn fitness_of(ind: &Individual) -> f64 {
    ind.fitness.unwrap_or(f64::INFINITY)
}

/// Tournament selection without replacement: each parent is the fittest of
/// `tournament_size` distinct individuals, ties going to the lower index.
/// Returns `population_size - elitism_count` parent indices.
pub fn select(population: &[Individual], config: &EvoConfig, rng: &mut impl Rng) -> Result<Vec<usize>, EvolutionError> {
    if let Some(i) = population.iter().position(|ind| ind.fitness.is_none()) {
        return Err(EvolutionError::MissingFitness(i));
    }
    let n = population.len();
    let size = config.tournament_size.clamp(1, n.max(1));
    let count = config.population_size.saturating_sub(config.elitism_count);
    Ok((0..count)
        .map(|_| {
            let mut draw = sample(rng, n, size).into_vec();
            draw.sort_unstable();
            let mut best = draw[0];
            for &i in &draw[1..] {
                if fitness_of(&population[i]) < fitness_of(&population[best]) {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Indices sorted best first, ties by index.
fn ranking(population: &[Individual]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| fitness_of(&population[a]).total_cmp(&fitness_of(&population[b])).then(a.cmp(&b)));
    order
}

/// Pooled RMSE of the pipeline over the last `validation_len` days, forecast
/// in consecutive horizon-long blocks, each from all data before it and with
/// the observed injections of the block.
pub fn validation_rmse(
    pipeline: &Pipeline,
    field: &FieldData,
    validation_len: usize,
    cache: Option<&Arc<CrmCache>>,
) -> Result<f64, crate::pipeline::PipelineError> {
    let n = field.len();
    let h = pipeline.horizon_days;
    let target = field
        .producer_index(&pipeline.target_well)
        .ok_or_else(|| crate::pipeline::PipelineError::UnknownTargetWell(pipeline.target_well.clone()))?;
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut start = n.saturating_sub(validation_len);
    while start < n {
        let end = (start + h).min(n);
        let ctx = EvalContext {
            future_injections: Some(field.injection_span(start..end)),
            crm_cache: cache.cloned(),
        };
        let out = evaluate_with(pipeline, &field.prefix(start), &ctx)?;
        for (f, o) in out.forecast.points.iter().zip(&field.oil[target][start..end]) {
            sq += (f - o) * (f - o);
        }
        count += end - start;
        start = end;
    }
    Ok((sq / count.max(1) as f64).sqrt())
}

struct Evaluator<'a> {
    field: &'a FieldData,
    validation_len: usize,
    cache: Arc<CrmCache>,
    memo: HashMap<String, f64>,
}

impl Evaluator<'_> {
    /// Fills in missing fitness values; failures and non-finite RMSE become
    /// `+inf`.
    fn score(&mut self, population: &mut [Individual]) {
        let todo: Vec<(usize, String)> = population
            .iter()
            .enumerate()
            .filter(|(_, ind)| ind.fitness.is_none())
            .map(|(i, ind)| (i, serde_json::to_string(&ind.pipeline).expect("pipeline serializes")))
            .filter(|(_, key)| !self.memo.contains_key(key))
            .collect();
        let mut unique: Vec<(usize, String)> = Vec::new();
        for (i, key) in todo {
            if !unique.iter().any(|(_, k)| *k == key) {
                unique.push((i, key));
            }
        }
        let scores: Vec<f64> = unique
            .par_iter()
            .map(|(i, _)| {
                validation_rmse(&population[*i].pipeline, self.field, self.validation_len, Some(&self.cache))
                    .ok()
                    .filter(|v| v.is_finite())
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        for ((_, key), s) in unique.into_iter().zip(scores) {
            self.memo.insert(key, s);
        }
        for ind in population.iter_mut().filter(|ind| ind.fitness.is_none()) {
            let key = serde_json::to_string(&ind.pipeline).expect("pipeline serializes");
            ind.fitness = Some(self.memo[&key]);
        }
    }
}

fn stats(generation: usize, population: &[Individual]) -> GenerationStats {
    let best = &population[ranking(population)[0]];
    let finite: Vec<f64> = population
        .iter()
        .filter_map(|i| i.fitness)
        .filter(|f| f.is_finite())
        .collect();
    GenerationStats {
        generation,
        best_rmse: best.fitness.unwrap_or(f64::INFINITY),
        mean_rmse: if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
        best_pipeline_id: best.pipeline.fingerprint(),
    }
}

/// Runs the search on `field` and returns the best individual with a
/// per-generation log (one row for the initial population plus one per
/// generation).
pub fn evolve(
    config: &EvoConfig,
    field: &FieldData,
    target_well: &str,
    horizon: usize,
    cache: Option<Arc<CrmCache>>,
) -> Result<EvolutionResult, EvolutionError> {
    config.validate()?;
    if horizon == 0 {
        return Err(EvolutionError::InvalidConfig("horizon must be >= 1".into()));
    }
    if config.validation_len < horizon {
        return Err(EvolutionError::InvalidConfig(format!(
            "validation_len {} is shorter than the horizon {horizon}",
            config.validation_len
        )));
    }
    if field.producer_index(target_well).is_none() {
        return Err(EvolutionError::UnknownTargetWell(target_well.to_string()));
    }
    let n = field.len();
    let needed = config.search_space.lag_range.0 + horizon + config.validation_len;
    if n < needed {
        return Err(EvolutionError::InsufficientData { len: n, needed });
    }
    // lag windows must leave some training samples before the validation tail
    let mut config = config.clone();
    let lag_cap = (n - config.validation_len - horizon + 1).saturating_sub(MIN_TRAIN_ROWS);
    let lag = &mut config.search_space.lag_range;
    lag.1 = lag.1.min(lag_cap).max(lag.0);

    let mut eval = Evaluator {
        field,
        validation_len: config.validation_len,
        cache: cache.unwrap_or_default(),
        memo: HashMap::new(),
    };
    let mut population: Vec<Individual> = init_population(&config, target_well, horizon)
        .into_iter()
        .map(|pipeline| Individual { pipeline, fitness: None })
        .collect();
    eval.score(&mut population);
    if population.iter().all(|i| i.fitness == Some(f64::INFINITY)) {
        return Err(EvolutionError::AllIndividualsFailed);
    }
    let mut log = vec![stats(0, &population)];

    for g in 1..=config.generations {
        let gen = g as u64;
        let order = ranking(&population);
        let elites: Vec<Individual> = order[..config.elitism_count].iter().map(|&i| population[i].clone()).collect();
        let parents = select(&population, &config, &mut stream_rng(config.seed, gen, u64::MAX))?;
        let m = parents.len();
        let mut offspring: Vec<Individual> = (0..m)
            .map(|i| {
                let mut rng = stream_rng(config.seed, gen, i as u64);
                let a = &population[parents[i]].pipeline;
                let child = if rng.gen_bool(config.crossover_rate) {
                    let b = &population[parents[(i + 1) % m]].pipeline;
                    crossover(a, b, &config, &mut rng).unwrap_or_else(|_| a.clone())
                } else {
                    a.clone()
                };
                let child = regularize(&mutate(&child, &config, &mut rng));
                Individual {
                    pipeline: child,
                    fitness: None,
                }
            })
            .collect();
        eval.score(&mut offspring);
        population = elites;
        population.extend(offspring);
        log.push(stats(g, &population));
    }
    let best = population[ranking(&population)[0]].clone();
    Ok(EvolutionResult { best, log, population })
}

#[cfg(test)]
mod tests;
