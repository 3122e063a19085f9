//! Multi-output regressors behind one train/predict contract.

mod forest;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::LaggedDataset;
use crate::linalg::{cholesky, cholesky_solve, SymMatrix};

pub use tree::TreeParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("not enough samples: need {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("singular normal equations (rank-deficient features with lambda = 0)")]
    SingularSystem,
    #[error("expected {expected} feature columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("naive learner needs the most recent lag of {0} among the features")]
    MissingTargetLag(String),
}

/// Learner kind and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// Repeats the last observed value of the target series.
    Naive,
    Linear,
    Ridge {
        lambda: f64,
    },
    KNearest {
        k: usize,
    },
    DecisionTree {
        max_depth: usize,
        min_samples_leaf: usize,
    },
    RandomForest {
        n_trees: usize,
        max_depth: usize,
        min_samples_leaf: usize,
        bootstrap: bool,
        feature_subsample_fraction: f64,
        seed: u64,
    },
}

impl LearnerSpec {
    /// Forest defaults: 100 trees, depth 12, leaves of at least 2 samples.
    pub fn random_forest(seed: u64) -> Self {
        LearnerSpec::RandomForest {
            n_trees: 100,
            max_depth: 12,
            min_samples_leaf: 2,
            bootstrap: true,
            feature_subsample_fraction: 1.0,
            seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Naive => "naive",
            LearnerSpec::Linear => "linear",
            LearnerSpec::Ridge { .. } => "ridge",
            LearnerSpec::KNearest { .. } => "k_nearest",
            LearnerSpec::DecisionTree { .. } => "decision_tree",
            LearnerSpec::RandomForest { .. } => "random_forest",
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: String| Err(LearnerError::InvalidHyperparameter(m));
        match *self {
            LearnerSpec::Ridge { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                bad(format!("ridge lambda must be finite and >= 0, got {lambda}"))
            }
            LearnerSpec::KNearest { k } if k == 0 => bad("k must be >= 1".into()),
            LearnerSpec::DecisionTree {
                max_depth,
                min_samples_leaf,
            } if max_depth == 0 || min_samples_leaf == 0 => {
                bad("max_depth and min_samples_leaf must be >= 1".into())
            }
            LearnerSpec::RandomForest {
                n_trees,
                max_depth,
                min_samples_leaf,
                feature_subsample_fraction: frac,
                ..
            } => {
                if n_trees == 0 || max_depth == 0 || min_samples_leaf == 0 {
                    bad("n_trees, max_depth and min_samples_leaf must be >= 1".into())
                } else if !(frac > 0.0 && frac <= 1.0) {
                    bad(format!("feature_subsample_fraction must lie in (0, 1], got {frac}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum State {
    Naive { column: usize, mean: f64, scale: f64 },
    Linear { coef: Vec<Vec<f64>>, intercept: Vec<f64> },
    KNearest { k: usize, features: Vec<Vec<f64>>, targets: Vec<Vec<f64>> },
    Tree(tree::Tree),
    Forest(Vec<tree::Tree>),
}

/// A trained learner; immutable and safe to share between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedLearner {
    pub spec: LearnerSpec,
    pub input_cols: usize,
    pub output_cols: usize,
    state: State,
}

impl FittedLearner {
    /// Per-output coefficients and intercepts of linear and ridge models.
    pub fn linear_coefficients(&self) -> Option<(&[Vec<f64>], &[f64])> {
        match &self.state {
            State::Linear { coef, intercept } => Some((coef, intercept)),
            _ => None,
        }
    }
}

/// Ridge regression with an unpenalized intercept: centers the data and solves
/// `(XcᵀXc + λI) β = XcᵀYc` for all output columns at once.
fn fit_ridge(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> Result<State, LearnerError> {
    let n = x.len();
    let p = x[0].len();
    let o = y[0].len();
    let col_mean = |m: &[Vec<f64>], c: usize| m.iter().map(|r| r[c]).sum::<f64>() / n as f64;
    let x_mean: Vec<f64> = (0..p).map(|c| col_mean(x, c)).collect();
    let y_mean: Vec<f64> = (0..o).map(|c| col_mean(y, c)).collect();

    let mut gram = SymMatrix::zeros(p);
    let mut rhs = vec![vec![0.0; p]; o];
    let mut xc = vec![0.0; p];
    for (row, t) in x.iter().zip(y) {
        for c in 0..p {
            xc[c] = row[c] - x_mean[c];
        }
        for a in 0..p {
            for b in 0..=a {
                gram.data[a * p + b] += xc[a] * xc[b];
            }
        }
        for (k, r) in rhs.iter_mut().enumerate() {
            let yk = t[k] - y_mean[k];
            for c in 0..p {
                r[c] += xc[c] * yk;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram.data[b * p + a] = gram.data[a * p + b];
        }
        gram.data[a * p + a] += lambda;
    }
    let coef = if p == 0 {
        vec![Vec::new(); o]
    } else {
        let tol = if lambda > 0.0 { 1e-300 } else { 1e-12 };
        let l = cholesky(&gram, tol).ok_or(LearnerError::SingularSystem)?;
        rhs.into_iter()
            .map(|mut b| {
                cholesky_solve(&l, &mut b);
                b
            })
            .collect::<Vec<_>>()
    };
    let intercept = (0..o)
        .map(|k| y_mean[k] - coef[k].iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>())
        .collect();
    Ok(State::Linear { coef, intercept })
}

pub fn train(spec: &LearnerSpec, dataset: &LaggedDataset) -> Result<FittedLearner, LearnerError> {
    spec.validate()?;
    let n = dataset.rows();
    let needed = match spec {
        LearnerSpec::KNearest { k } => *k,
        _ => 1,
    };
    if n < needed {
        return Err(LearnerError::NotEnoughSamples { needed, got: n });
    }
    let x = &dataset.features;
    let y = &dataset.targets;
    let state = match spec {
        LearnerSpec::Naive => {
            let column = dataset
                .last_lag_column(&dataset.target_series)
                .ok_or_else(|| LearnerError::MissingTargetLag(dataset.target_series.clone()))?;
            let (mean, scale) = dataset
                .scaling
                .as_ref()
                .map_or((0.0, 1.0), |s| (s.mean[column], s.scale[column]));
            State::Naive { column, mean, scale }
        }
        LearnerSpec::Linear => fit_ridge(x, y, 0.0)?,
        LearnerSpec::Ridge { lambda } => fit_ridge(x, y, *lambda)?,
        LearnerSpec::KNearest { k } => State::KNearest {
            k: *k,
            features: x.clone(),
            targets: y.clone(),
        },
        LearnerSpec::DecisionTree {
            max_depth,
            min_samples_leaf,
        } => {
            let params = TreeParams {
                max_depth: *max_depth,
                min_samples_leaf: *min_samples_leaf,
                feature_fraction: 1.0,
            };
            let idx: Vec<usize> = (0..n).collect();
            State::Tree(tree::Tree::grow(x, y, &idx, &params, None))
        }
        LearnerSpec::RandomForest {
            n_trees,
            max_depth,
            min_samples_leaf,
            bootstrap,
            feature_subsample_fraction,
            seed,
        } => {
            let params = TreeParams {
                max_depth: *max_depth,
                min_samples_leaf: *min_samples_leaf,
                feature_fraction: *feature_subsample_fraction,
            };
            State::Forest(forest::grow_forest(x, y, *n_trees, *bootstrap, &params, *seed))
        }
    };
    Ok(FittedLearner {
        spec: spec.clone(),
        input_cols: dataset.feature_cols(),
        output_cols: dataset.target_cols(),
        state,
    })
}

fn knn_predict(k: usize, features: &[Vec<f64>], targets: &[Vec<f64>], row: &[f64]) -> Vec<f64> {
    let mut dist: Vec<(f64, usize)> = features
        .iter()
        .enumerate()
        .map(|(i, f)| (f.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by);
        dist.truncate(k);
    }
    let o = targets[0].len();
    let mut out = vec![0.0; o];
    for &(_, i) in &dist {
        for (acc, v) in out.iter_mut().zip(&targets[i]) {
            *acc += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= dist.len() as f64);
    out
}

pub fn predict(model: &FittedLearner, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LearnerError> {
    if let Some(r) = rows.iter().find(|r| r.len() != model.input_cols) {
        return Err(LearnerError::DimensionMismatch {
            expected: model.input_cols,
            got: r.len(),
        });
    }
    let out = rows
        .iter()
        .map(|row| match &model.state {
            State::Naive { column, mean, scale } => vec![row[*column] * scale + mean; model.output_cols],
            State::Linear { coef, intercept } => coef
                .iter()
                .zip(intercept)
                .map(|(b, c)| c + b.iter().zip(row).map(|(u, v)| u * v).sum::<f64>())
                .collect(),
            State::KNearest { k, features, targets } => knn_predict(*k, features, targets, row),
            State::Tree(t) => t.predict(row).to_vec(),
            State::Forest(trees) => {
                let mut acc = vec![0.0; model.output_cols];
                for t in trees {
                    for (a, v) in acc.iter_mut().zip(t.predict(row)) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= trees.len() as f64);
                acc
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests;
