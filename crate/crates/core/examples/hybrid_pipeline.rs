//! Builds pipelines by hand, validates them, serializes one to JSON and
//! evaluates CRM-only, ML-only, hybrid and ensemble forecasts.

use waterflood::features::LagSpec;
use waterflood::learners::LearnerSpec;
use waterflood::pipeline::{
    crm_chain, evaluate, hybrid_template, ml_chain, validate, CrmNodeConfig, EnsembleMethod, NodeKind, Pipeline, PipelineNode,
};
use waterflood::synthetic::{self, SyntheticFieldSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let field = synthetic::generate(&SyntheticFieldSpec {
        n_producers: 2,
        n_injectors: 2,
        days: 300,
        noise: 0.02,
        ..Default::default()
    })
    .field;
    let horizon = 20;
    let lag = LagSpec::new(14, horizon);
    let learner = LearnerSpec::Ridge { lambda: 1.0 };
    let crm = CrmNodeConfig {
        window_lens: vec![60, 90],
        ..CrmNodeConfig::default()
    };

    let hybrid = hybrid_template("P1", lag, learner.clone(), crm.clone());
    println!("hybrid pipeline {}:\n{}", hybrid.fingerprint(), hybrid.to_json());

    let mut ensemble = hybrid.clone();
    ensemble.nodes.push(PipelineNode::new("knn", NodeKind::Learner(LearnerSpec::KNearest { k: 5 }), &["std"]));
    ensemble.nodes.push(PipelineNode::new(
        "ens",
        NodeKind::Ensemble {
            method: EnsembleMethod::Mean,
        },
        &["learner", "knn"],
    ));
    ensemble.output = "ens".into();

    let candidates: Vec<(&str, Pipeline)> = vec![
        ("crm", crm_chain("P1", horizon, crm)),
        ("ml", ml_chain("P1", lag, learner, true)),
        ("hybrid", hybrid),
        ("ensemble", ensemble),
    ];
    for (name, p) in &candidates {
        assert!(validate(p).is_empty());
        let out = evaluate(p, &field)?;
        let f = &out.forecast;
        println!(
            "{name:>9}: {} .. {}, first day {:.1} [{:.1}, {:.1}]",
            out.dates[0],
            out.dates[out.dates.len() - 1],
            f.points[0],
            f.lower[0],
            f.upper[0]
        );
    }

    // Validation reports each problem it finds.
    let mut broken = candidates[2].1.clone();
    broken.nodes[4].inputs = vec!["std".into(), "missing".into()];
    broken.horizon_days = 5;
    for v in validate(&broken) {
        println!("violation: {v:?}");
    }
    Ok(())
}
