use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::crm::FitConfig;
use crate::features::LagSpec;
use crate::learners::LearnerSpec;
use crate::pipeline::{hybrid_template, ml_chain, structurally_equal, validate, NodeKind, PipelineNode};
use crate::synthetic;

fn small_config(seed: u64) -> EvoConfig {
    EvoConfig {
        population_size: 6,
        generations: 3,
        tournament_size: 2,
        elitism_count: 1,
        validation_len: 20,
        seed,
        search_space: SearchSpace {
            learners: vec![LearnerFamily::Ridge, LearnerFamily::KNearest, LearnerFamily::DecisionTree],
            lag_range: (7, 20),
            ..SearchSpace::default()
        },
        crm: CrmNodeConfig {
            window_lens: vec![60, 90],
            fit: FitConfig {
                restarts: 1,
                ..FitConfig::default()
            },
        },
        ..EvoConfig::default()
    }
}

fn mutants(count: usize, seed: u64) -> Vec<Pipeline> {
    let config = EvoConfig {
        mutation_rate: 1.0,
        ..EvoConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = init_population(&config, "P1", 10);
    let mut out = Vec::new();
    for i in 0..count {
        let parent = pool[i % pool.len()].clone();
        let child = mutate(&parent, &config, &mut rng);
        pool.push(child.clone());
        out.push(child);
    }
    out
}

#[test]
fn config_validation() {
    assert!(EvoConfig::default().validate().is_ok());
    let bad = [
        EvoConfig {
            population_size: 1,
            ..EvoConfig::default()
        },
        EvoConfig {
            elitism_count: 20,
            ..EvoConfig::default()
        },
        EvoConfig {
            elitism_count: 0,
            ..EvoConfig::default()
        },
        EvoConfig {
            tournament_size: 21,
            ..EvoConfig::default()
        },
        EvoConfig {
            mutation_rate: 1.5,
            ..EvoConfig::default()
        },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(EvolutionError::InvalidConfig(_))), "{c:?}");
    }
    let json = serde_json::to_string(&EvoConfig::default()).unwrap();
    let back: EvoConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, EvoConfig::default());
    let partial: EvoConfig = serde_json::from_str(r#"{"population_size": 4}"#).unwrap();
    assert_eq!(partial.population_size, 4);
    assert_eq!(partial.generations, EvoConfig::default().generations);
}

#[test]
fn init_population_is_valid_and_deterministic() {
    let config = EvoConfig {
        population_size: 2,
        ..EvoConfig::default()
    };
    let pop = init_population(&config, "P1", 10);
    assert_eq!(pop.len(), 2);
    assert!(pop.iter().all(|p| validate(p).is_empty()));
    assert_eq!(pop, init_population(&config, "P1", 10));

    for seed in 0..100 {
        let config = EvoConfig {
            population_size: 10,
            seed,
            ..EvoConfig::default()
        };
        let pop = init_population(&config, "P1", 10);
        assert_eq!(pop.len(), 10);
        for p in &pop {
            assert!(validate(p).is_empty(), "{p:?}");
            assert!(p.nodes.len() <= config.max_nodes);
        }
        let kinds = |pred: fn(&Pipeline) -> bool| pop.iter().filter(|p| pred(p)).count();
        assert!(kinds(|p| p.exogenous_edges() == 1) >= 1);
        assert_eq!(kinds(|p| p.nodes.len() == 2), 1);
    }
}

#[test]
fn zero_rate_mutation_is_identity() {
    let config = EvoConfig {
        mutation_rate: 0.0,
        ..EvoConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in init_population(&config, "P1", 10) {
        assert!(structurally_equal(&mutate(&p, &config, &mut rng), &p));
    }
}

#[test]
fn mutants_validate_and_respect_node_budget() {
    let max_nodes = EvoConfig::default().max_nodes;
    let all = mutants(100, 7);
    for m in &all {
        assert!(validate(m).is_empty(), "{m:?}");
        assert!(m.nodes.len() <= max_nodes);
    }
    let same = all.iter().zip(mutants(100, 7).iter()).filter(|(a, b)| a == b).count();
    assert_eq!(same, 100, "seeded mutation is reproducible");
    assert!(all.iter().any(|m| m.nodes.iter().any(|n| matches!(n.kind, NodeKind::Ensemble { .. }))));
}

#[test]
fn regularize_removes_dangling_nodes_and_single_ensembles() {
    let p = hybrid_template("P1", LagSpec::new(14, 10), LearnerSpec::Linear, CrmNodeConfig::default());
    assert_eq!(regularize(&p), p);

    let mut q = p.clone();
    q.nodes.push(PipelineNode::new("extra", NodeKind::Standardize, &["lag"]));
    assert_eq!(regularize(&q), p);

    let mut q = p.clone();
    q.nodes.push(PipelineNode::new(
        "ens",
        NodeKind::Ensemble {
            method: crate::pipeline::EnsembleMethod::Mean,
        },
        &["learner"],
    ));
    q.output = "ens".into();
    assert!(structurally_equal(&regularize(&q), &p));

    let mut q = p.clone();
    q.nodes[4].inputs = vec!["std".into(), "crm".into(), "crm".into()];
    assert_eq!(regularize(&q), p);
}

#[test]
fn regularize_is_idempotent_on_mutants() {
    for (i, m) in mutants(100, 11).into_iter().enumerate() {
        // add clutter for regularize to clean up
        let mut m = m;
        let src = m.nodes.iter().find(|n| n.kind == NodeKind::HistorySource).unwrap().id.clone();
        if i % 2 == 0 {
            m.nodes.push(PipelineNode::new("dangling", NodeKind::LagTransform(LagSpec::new(7, 10)), &[&src]));
        }
        let once = regularize(&m);
        let twice = regularize(&once);
        assert_eq!(once, twice);
        assert!(validate(&once).is_empty());
    }
}

#[test]
fn self_crossover_is_identity() {
    let config = EvoConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in init_population(&config, "P1", 10).iter().chain(mutants(30, 5).iter()) {
        let child = crossover(p, p, &config, &mut rng).unwrap();
        assert!(structurally_equal(&child, p), "{p:?}\n{child:?}");
    }
}

#[test]
fn crossover_rejects_incompatible_parents() {
    let config = EvoConfig::default();
    let a = ml_chain("P1", LagSpec::new(7, 10), LearnerSpec::Naive, false);
    let b = ml_chain("P1", LagSpec::new(7, 5), LearnerSpec::Naive, false);
    let c = ml_chain("P2", LagSpec::new(7, 10), LearnerSpec::Naive, false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(crossover(&a, &b, &config, &mut rng), Err(EvolutionError::IncompatibleParents));
    assert_eq!(crossover(&a, &c, &config, &mut rng), Err(EvolutionError::IncompatibleParents));
}

#[test]
fn hybrid_by_ml_crossover_has_one_learner_stage() {
    let config = EvoConfig::default();
    let hybrid = hybrid_template("P1", LagSpec::new(14, 10), LearnerSpec::Ridge { lambda: 1.0 }, CrmNodeConfig::default());
    let ml = ml_chain("P1", LagSpec::new(30, 10), LearnerSpec::KNearest { k: 5 }, false);
    let crm_only = crate::pipeline::crm_chain("P1", 10, CrmNodeConfig::default());
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (a, b) in [(&hybrid, &ml), (&ml, &hybrid), (&ml, &crm_only), (&crm_only, &hybrid)] {
            let child = crossover(a, b, &config, &mut rng).unwrap();
            assert!(validate(&child).is_empty(), "{child:?}");
            let learners = child.nodes.iter().filter(|n| n.kind.is_model_stage()).count();
            assert!(learners <= 1);
        }
        let child = crossover(&hybrid, &ml, &config, &mut rng).unwrap();
        let learners = child.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Learner(_))).count();
        assert_eq!(learners, 1);
    }
}

fn scored(fitness: &[f64]) -> Vec<Individual> {
    let p = ml_chain("P1", LagSpec::new(7, 5), LearnerSpec::Naive, false);
    fitness
        .iter()
        .map(|&f| Individual {
            pipeline: p.clone(),
            fitness: Some(f),
        })
        .collect()
}

#[test]
fn selection_contracts() {
    let pop = scored(&[5.0, 3.0, 9.0, 3.0, 7.0]);
    let config = EvoConfig {
        population_size: 5,
        tournament_size: 5,
        elitism_count: 1,
        ..EvoConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(select(&pop, &config, &mut rng).unwrap(), vec![1; 4]);

    let config = EvoConfig {
        tournament_size: 2,
        ..config
    };
    let a = select(&pop, &config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = select(&pop, &config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    assert!(!a.contains(&2), "the worst individual never wins a 2-tournament");

    let mut missing = pop.clone();
    missing[3].fitness = None;
    assert_eq!(select(&missing, &config, &mut rng), Err(EvolutionError::MissingFitness(3)));
}

#[test]
fn zero_generations_returns_best_initial() {
    let field = synthetic::two_by_two(300, 4).field;
    let config = EvoConfig {
        generations: 0,
        ..small_config(1)
    };
    let out = evolve(&config, &field, "P1", 10, None).unwrap();
    assert_eq!(out.log.len(), 1);
    let best = out
        .population
        .iter()
        .map(|i| i.fitness.unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(out.best.fitness, Some(best));
    assert_eq!(out.log[0].best_rmse, best);
    assert_eq!(out.log[0].best_pipeline_id, out.best.pipeline.fingerprint());
}

#[test]
fn evolve_is_elitist_and_deterministic() {
    let field = synthetic::generate(&synthetic::SyntheticFieldSpec {
        n_producers: 2,
        n_injectors: 2,
        days: 300,
        seed: 8,
        ..Default::default()
    })
    .field;
    let config = small_config(5);
    let a = evolve(&config, &field, "P2", 10, None).unwrap();
    assert_eq!(a.log.len(), 4);
    assert_eq!(a.population.len(), config.population_size);
    for w in a.log.windows(2) {
        assert!(w[1].best_rmse <= w[0].best_rmse);
    }
    for ind in &a.population {
        assert!(validate(&ind.pipeline).is_empty());
    }
    let b = evolve(&config, &field, "P2", 10, None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.best, b.best);
}

#[test]
fn evolve_checks_preconditions() {
    let field = synthetic::two_by_two(30, 4).field;
    let config = small_config(0);
    assert!(matches!(
        evolve(&config, &field, "P1", 10, None),
        Err(EvolutionError::InsufficientData { len: 30, needed: 37 })
    ));
    let field = synthetic::two_by_two(300, 4).field;
    assert!(matches!(evolve(&config, &field, "P1", 30, None), Err(EvolutionError::InvalidConfig(_))));
    assert_eq!(
        evolve(&config, &field, "X", 10, None).unwrap_err(),
        EvolutionError::UnknownTargetWell("X".into())
    );
}

#[test]
fn validation_rmse_of_a_perfect_model_is_zero() {
    // noise-free CRM data, CRM-only pipeline with observed future injections
    let field = synthetic::two_by_two(300, 6).field;
    let config = small_config(0);
    let p = crate::pipeline::crm_chain("P1", 10, config.crm.clone());
    let rmse = validation_rmse(&p, &field, 20, None).unwrap();
    let scale = field.oil[0].iter().sum::<f64>() / 300.0;
    assert!(rmse < 1e-3 * scale, "{rmse}");
}
