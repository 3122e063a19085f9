//! Trains every learner family on the same lagged dataset and scores the
//! forecast of the held-out tail.

use waterflood::features::{lagged_transform, LagSpec};
use waterflood::learners::{predict, train, LearnerSpec};
use waterflood::metrics::rmse;
use waterflood::synthetic::{self, SyntheticFieldSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let field = synthetic::generate(&SyntheticFieldSpec {
        n_producers: 2,
        n_injectors: 2,
        days: 500,
        noise: 0.02,
        ..Default::default()
    })
    .field;
    let ds = lagged_transform(&field, "P1", &LagSpec::new(30, 20))?;
    let cut = ds.rows() - 40;
    let train_rows: Vec<usize> = (0..cut).collect();
    let test_rows: Vec<usize> = (cut..ds.rows()).collect();
    let (tr, te) = (ds.select_rows(&train_rows), ds.select_rows(&test_rows));

    let specs = [
        LearnerSpec::Naive,
        LearnerSpec::Linear,
        LearnerSpec::Ridge { lambda: 10.0 },
        LearnerSpec::KNearest { k: 5 },
        LearnerSpec::DecisionTree {
            max_depth: 8,
            min_samples_leaf: 2,
        },
        LearnerSpec::RandomForest {
            n_trees: 50,
            max_depth: 10,
            min_samples_leaf: 2,
            bootstrap: true,
            feature_subsample_fraction: 0.33,
            seed: 1,
        },
    ];
    for spec in &specs {
        match train(spec, &tr) {
            Ok(model) => {
                let pred = predict(&model, &te.features)?;
                let (p, o): (Vec<f64>, Vec<f64>) =
                    pred.iter().flatten().copied().zip(te.targets.iter().flatten().copied()).unzip();
                println!("{:>14}: test RMSE {:.2} m3/day", spec.name(), rmse(&p, &o)?);
            }
            Err(e) => println!("{:>14}: {e}", spec.name()),
        }
    }
    Ok(())
}
