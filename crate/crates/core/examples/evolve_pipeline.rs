//! Evolves a forecasting pipeline for one producer and prints the per-generation
//! log and the winning graph.

use std::sync::Arc;

use waterflood::evolution::{evolve, EvoConfig, LearnerFamily, SearchSpace};
use waterflood::pipeline::{CrmCache, CrmNodeConfig};
use waterflood::synthetic::{self, SyntheticFieldSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let field = synthetic::generate(&SyntheticFieldSpec {
        n_producers: 3,
        n_injectors: 2,
        days: 400,
        noise: 0.02,
        ..Default::default()
    })
    .field;
    let config = EvoConfig {
        population_size: 10,
        generations: 6,
        validation_len: 60,
        seed: 7,
        search_space: SearchSpace {
            learners: vec![LearnerFamily::Ridge, LearnerFamily::KNearest, LearnerFamily::DecisionTree],
            lag_range: (7, 40),
            ..SearchSpace::default()
        },
        crm: CrmNodeConfig {
            window_lens: vec![60, 90],
            ..CrmNodeConfig::default()
        },
        ..EvoConfig::default()
    };
    let cache = Arc::new(CrmCache::new());
    let result = evolve(&config, &field, "P2", 30, Some(cache.clone()))?;
    println!("generation  best_rmse  mean_rmse  best");
    for g in &result.log {
        println!("{:>10}  {:>9.3}  {:>9.3}  {}", g.generation, g.best_rmse, g.mean_rmse, g.best_pipeline_id);
    }
    println!("{} CRM traces cached", cache.len());
    println!("\nbest pipeline:\n{}", result.best.pipeline.to_json());
    Ok(())
}
