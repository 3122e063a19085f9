use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::{ColumnKind, ColumnLabel};

fn dataset(features: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> LaggedDataset {
    let p = features.first().map_or(0, Vec::len);
    let o = targets.first().map_or(0, Vec::len);
    let n = features.len();
    LaggedDataset {
        feature_labels: (0..p)
            .map(|c| ColumnLabel {
                series: if c == p - 1 { "y".into() } else { format!("x{c}") },
                offset: -1,
                kind: ColumnKind::Lag,
            })
            .collect(),
        target_labels: (0..o)
            .map(|h| ColumnLabel {
                series: "y".into(),
                offset: h as i64,
                kind: ColumnKind::Target,
            })
            .collect(),
        features,
        targets,
        origins: (0..n).collect(),
        target_series: "y".into(),
        scaling: None,
    }
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, o: usize) -> LaggedDataset {
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let y = x
        .iter()
        .map(|r| {
            (0..o)
                .map(|k| r.iter().enumerate().map(|(c, v)| v * (c + k + 1) as f64).sum::<f64>().sin() + rng.gen_range(-0.1..0.1))
                .collect()
        })
        .collect();
    dataset(x, y)
}

/// Explicit `(AᵀA + Λ)⁻¹ Aᵀ y` with an intercept column in `A` and a penalty
/// matrix `Λ` that leaves the intercept unpenalized.
fn ridge_oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let n = x.len();
    let p = x[0].len();
    let a = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { x[r][c - 1] });
    let mut pen = DMatrix::zeros(p + 1, p + 1);
    for c in 1..=p {
        pen[(c, c)] = lambda;
    }
    let inv = (a.transpose() * &a + pen).try_inverse().expect("invertible");
    let beta = inv * a.transpose() * DVector::from_column_slice(y);
    (beta[0], beta.iter().skip(1).copied().collect())
}

#[test]
fn ridge_exact_linear_fit() {
    let ds = dataset(vec![vec![1.0], vec![2.0], vec![3.0]], vec![vec![2.0], vec![4.0], vec![6.0]]);
    let m = train(&LearnerSpec::Ridge { lambda: 0.0 }, &ds).unwrap();
    let (coef, intercept) = m.linear_coefficients().unwrap();
    assert_abs_diff_eq!(coef[0][0], 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(intercept[0], 0.0, epsilon = 1e-12);
    let pred = predict(&m, &ds.features).unwrap();
    for (p, t) in pred.iter().zip(&ds.targets) {
        assert_abs_diff_eq!(p[0], t[0], epsilon = 1e-12);
    }
}

#[test]
fn ridge_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ds = random_dataset(&mut rng, 10, 3, 2);
    let m = train(&LearnerSpec::Ridge { lambda: 1.0 }, &ds).unwrap();
    let (coef, intercept) = m.linear_coefficients().unwrap();
    for k in 0..2 {
        let y: Vec<f64> = ds.targets.iter().map(|t| t[k]).collect();
        let (b0, b) = ridge_oracle(&ds.features, &y, 1.0);
        assert_abs_diff_eq!(intercept[k], b0, epsilon = 1e-8);
        for c in 0..3 {
            assert_abs_diff_eq!(coef[k][c], b[c], epsilon = 1e-8);
        }
    }
}

#[test]
fn linear_rejects_rank_deficiency() {
    let ds = dataset(
        vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0], vec![4.0, 8.0]],
        vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
    );
    assert_eq!(train(&LearnerSpec::Linear, &ds), Err(LearnerError::SingularSystem));
    assert!(train(&LearnerSpec::Ridge { lambda: 0.5 }, &ds).is_ok());
}

#[test]
fn knn_full_neighbourhood_and_self() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = random_dataset(&mut rng, 12, 3, 2);
    let all = train(&LearnerSpec::KNearest { k: 12 }, &ds).unwrap();
    let mean: Vec<f64> = (0..2)
        .map(|k| ds.targets.iter().map(|t| t[k]).sum::<f64>() / 12.0)
        .collect();
    for p in predict(&all, &[vec![9.0, -9.0, 0.0]]).unwrap() {
        assert_abs_diff_eq!(p[0], mean[0], epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], mean[1], epsilon = 1e-12);
    }
    let one = train(&LearnerSpec::KNearest { k: 1 }, &ds).unwrap();
    assert_eq!(predict(&one, &ds.features).unwrap(), ds.targets);
    assert_eq!(
        train(&LearnerSpec::KNearest { k: 13 }, &ds),
        Err(LearnerError::NotEnoughSamples { needed: 13, got: 12 })
    );
}

#[test]
fn knn_ties_prefer_lower_rows() {
    let ds = dataset(
        vec![vec![1.0], vec![-1.0], vec![1.0]],
        vec![vec![10.0], vec![20.0], vec![30.0]],
    );
    let m = train(&LearnerSpec::KNearest { k: 1 }, &ds).unwrap();
    assert_eq!(predict(&m, &[vec![0.0]]).unwrap(), vec![vec![10.0]]);
}

#[test]
fn tree_constant_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ds = random_dataset(&mut rng, 30, 4, 3);
    ds.targets.iter_mut().for_each(|t| *t = vec![7.5, 7.5, 7.5]);
    let m = train(
        &LearnerSpec::DecisionTree {
            max_depth: 6,
            min_samples_leaf: 1,
        },
        &ds,
    )
    .unwrap();
    for p in predict(&m, &[vec![0.0; 4], vec![5.0, -3.0, 2.0, 1.0]]).unwrap() {
        assert_eq!(p, vec![7.5, 7.5, 7.5]);
    }
}

#[test]
fn tree_learns_step() {
    let x: Vec<Vec<f64>> = (0..20).map(|k| vec![k as f64]).collect();
    let y: Vec<Vec<f64>> = (0..20).map(|k| vec![if k < 10 { 1.0 } else { 5.0 }]).collect();
    let ds = dataset(x, y);
    let m = train(
        &LearnerSpec::DecisionTree {
            max_depth: 1,
            min_samples_leaf: 1,
        },
        &ds,
    )
    .unwrap();
    assert_eq!(predict(&m, &[vec![9.4], vec![9.6]]).unwrap(), vec![vec![1.0], vec![5.0]]);
}

#[test]
fn forest_of_one_equals_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ds = random_dataset(&mut rng, 40, 5, 3);
    let tree = train(
        &LearnerSpec::DecisionTree {
            max_depth: 5,
            min_samples_leaf: 2,
        },
        &ds,
    )
    .unwrap();
    let forest = train(
        &LearnerSpec::RandomForest {
            n_trees: 1,
            max_depth: 5,
            min_samples_leaf: 2,
            bootstrap: false,
            feature_subsample_fraction: 1.0,
            seed: 99,
        },
        &ds,
    )
    .unwrap();
    let probe = random_dataset(&mut rng, 15, 5, 3);
    assert_eq!(predict(&tree, &probe.features).unwrap(), predict(&forest, &probe.features).unwrap());
}

#[test]
fn forest_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ds = random_dataset(&mut rng, 40, 5, 2);
    let spec = LearnerSpec::RandomForest {
        n_trees: 12,
        max_depth: 4,
        min_samples_leaf: 2,
        bootstrap: true,
        feature_subsample_fraction: 0.4,
        seed: 3,
    };
    let a = predict(&train(&spec, &ds).unwrap(), &ds.features).unwrap();
    let b = predict(&train(&spec, &ds).unwrap(), &ds.features).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn naive_repeats_last_target_lag() {
    let ds = dataset(vec![vec![3.0, 10.0], vec![4.0, 11.0]], vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    let m = train(&LearnerSpec::Naive, &ds).unwrap();
    assert_eq!(predict(&m, &[vec![1.0, 42.0]]).unwrap(), vec![vec![42.0, 42.0]]);
    let (z, _) = crate::features::standardize(&ds).unwrap();
    let m = train(&LearnerSpec::Naive, &z).unwrap();
    let row = z.scaling.as_ref().unwrap().apply(&[1.0, 42.0]);
    let p = predict(&m, &[row]).unwrap();
    assert_abs_diff_eq!(p[0][0], 42.0, epsilon = 1e-12);
}

#[test]
fn predict_checks_width_and_specs_validate() {
    let ds = dataset(vec![vec![1.0], vec![2.0]], vec![vec![1.0], vec![2.0]]);
    let m = train(&LearnerSpec::Linear, &ds).unwrap();
    assert_eq!(
        predict(&m, &[vec![1.0, 2.0]]),
        Err(LearnerError::DimensionMismatch { expected: 1, got: 2 })
    );
    assert!(LearnerSpec::Ridge { lambda: -1.0 }.validate().is_err());
    assert!(LearnerSpec::KNearest { k: 0 }.validate().is_err());
    let mut rf = LearnerSpec::random_forest(0);
    if let LearnerSpec::RandomForest {
        feature_subsample_fraction,
        ..
    } = &mut rf
    {
        *feature_subsample_fraction = 0.0;
    }
    assert!(rf.validate().is_err());
}

#[test]
fn ridge_tends_to_mean_for_large_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ds = random_dataset(&mut rng, 20, 3, 1);
    let m = train(&LearnerSpec::Ridge { lambda: 1e12 }, &ds).unwrap();
    let mean = ds.targets.iter().map(|t| t[0]).sum::<f64>() / 20.0;
    for p in predict(&m, &ds.features).unwrap() {
        assert_abs_diff_eq!(p[0], mean, epsilon = 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ridge_norm_shrinks_with_lambda(seed in 0u64..1000, l1 in 0.0f64..10.0, dl in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, 15, 3, 1);
        let norm = |lambda: f64| {
            let m = train(&LearnerSpec::Ridge { lambda }, &ds).unwrap();
            m.linear_coefficients().unwrap().0[0].iter().map(|b| b * b).sum::<f64>()
        };
        prop_assert!(norm(l1 + dl) <= norm(l1) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn tree_training_error_non_increasing_in_depth(seed in 0u64..1000, depth in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, 40, 3, 2);
        let err = |max_depth| {
            let m = train(&LearnerSpec::DecisionTree { max_depth, min_samples_leaf: 1 }, &ds).unwrap();
            let p = predict(&m, &ds.features).unwrap();
            p.iter().flatten().zip(ds.targets.iter().flatten()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        prop_assert!(err(depth + 1) <= err(depth) + 1e-9);
    }

    #[test]
    fn predictions_finite(seed in 0u64..1000, kind in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, 25, 3, 2);
        let spec = match kind {
            0 => LearnerSpec::Naive,
            1 => LearnerSpec::Linear,
            2 => LearnerSpec::Ridge { lambda: 0.3 },
            3 => LearnerSpec::KNearest { k: 4 },
            4 => LearnerSpec::DecisionTree { max_depth: 4, min_samples_leaf: 2 },
            _ => LearnerSpec::RandomForest { n_trees: 5, max_depth: 3, min_samples_leaf: 1, bootstrap: true, feature_subsample_fraction: 0.5, seed },
        };
        let m = train(&spec, &ds).unwrap();
        let probe = random_dataset(&mut rng, 10, 3, 2);
        let p = predict(&m, &probe.features).unwrap();
        prop_assert_eq!(p.len(), 10);
        prop_assert!(p.iter().flatten().all(|v| v.is_finite()));
    }
}
