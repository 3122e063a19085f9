//! Supervised datasets from production history: lagged trajectory matrices,
//! exogenous columns and per-column standardization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FieldData;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("series of {len} days is too short for window {window} plus horizon {horizon}")]
    SeriesTooShort { len: usize, window: usize, horizon: usize },
    #[error("unknown producer {0}")]
    UnknownWell(String),
    #[error("row count mismatch: dataset has {dataset}, values have {values}")]
    RowCountMismatch { dataset: usize, values: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid lag spec: {0}")]
    InvalidSpec(String),
}

/// Past window and forecast horizon of the lagged transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LagSpec {
    pub window: usize,
    pub horizon: usize,
    /// Add producer bottom-hole pressures to the lagged series.
    #[serde(default)]
    pub include_pressure: bool,
    /// Lag only the target producer instead of every well.
    #[serde(default)]
    pub target_only: bool,
}

impl LagSpec {
    pub fn new(window: usize, horizon: usize) -> Self {
        LagSpec {
            window,
            horizon,
            include_pressure: false,
            target_only: false,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.window == 0 || self.horizon == 0 {
            return Err(FeatureError::InvalidSpec(format!(
                "window and horizon must be >= 1 (got {} and {})",
                self.window, self.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Lag,
    Target,
    /// A forecast issued at the sample origin for `lead` days ahead.
    Exogenous { lead: usize },
}

/// Identifies a column. `offset` is the latest day, relative to the sample
/// origin, whose observations the column may depend on; targets start at
/// offset 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnLabel {
    pub series: String,
    pub offset: i64,
    pub kind: ColumnKind,
}

/// Per-column mean and scale used by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Feature rows, horizon-wide target rows and their column labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaggedDataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub feature_labels: Vec<ColumnLabel>,
    pub target_labels: Vec<ColumnLabel>,
    /// Day index of the first target of each sample.
    pub origins: Vec<usize>,
    pub target_series: String,
    /// Set when the feature columns are standardized.
    pub scaling: Option<Scaling>,
}

impl LaggedDataset {
    pub fn rows(&self) -> usize {
        self.features.len()
    }

    pub fn feature_cols(&self) -> usize {
        self.feature_labels.len()
    }

    pub fn target_cols(&self) -> usize {
        self.target_labels.len()
    }

    /// Number of (feature, target) column pairs in which the feature may
    /// depend on data at or after the target day.
    pub fn leakage_violations(&self) -> usize {
        self.feature_labels
            .iter()
            .map(|f| self.target_labels.iter().filter(|t| f.offset >= t.offset).count())
            .sum()
    }

    /// Keeps the first `cols` feature columns.
    pub fn project_features(&self, cols: usize) -> LaggedDataset {
        let mut out = self.clone();
        out.features.iter_mut().for_each(|r| r.truncate(cols));
        out.feature_labels.truncate(cols);
        if let Some(s) = out.scaling.as_mut() {
            s.mean.truncate(cols);
            s.scale.truncate(cols);
        }
        out
    }

    pub fn select_rows(&self, rows: &[usize]) -> LaggedDataset {
        LaggedDataset {
            features: rows.iter().map(|&r| self.features[r].clone()).collect(),
            targets: rows.iter().map(|&r| self.targets[r].clone()).collect(),
            origins: rows.iter().map(|&r| self.origins[r]).collect(),
            ..self.clone()
        }
    }

    /// Column index of the most recent lag of `series`.
    pub fn last_lag_column(&self, series: &str) -> Option<usize> {
        self.feature_labels
            .iter()
            .position(|l| l.kind == ColumnKind::Lag && l.series == series && l.offset == -1)
    }
}

/// The series entering the features, in column order.
fn feature_series<'a>(field: &'a FieldData, target: usize, spec: &LagSpec) -> Vec<(String, &'a [f64])> {
    let mut out = Vec::new();
    if spec.target_only {
        out.push((field.producers[target].clone(), field.oil[target].as_slice()));
    } else {
        for (id, s) in field.producers.iter().zip(&field.oil) {
            out.push((id.clone(), s.as_slice()));
        }
        for (id, s) in field.injectors.iter().zip(&field.injection) {
            out.push((id.clone(), s.as_slice()));
        }
    }
    if spec.include_pressure {
        if let Some(p) = &field.pressure {
            for (j, s) in p.iter().enumerate() {
                if !spec.target_only || j == target {
                    out.push((format!("{}:pressure", field.producers[j]), s.as_slice()));
                }
            }
        }
    }
    out
}

fn lag_labels(series: &[(String, &[f64])], window: usize) -> Vec<ColumnLabel> {
    series
        .iter()
        .flat_map(|(id, _)| {
            (1..=window).rev().map(move |lag| ColumnLabel {
                series: id.clone(),
                offset: -(lag as i64),
                kind: ColumnKind::Lag,
            })
        })
        .collect()
}

fn lag_row(series: &[(String, &[f64])], window: usize, origin: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(series.len() * window);
    for (_, s) in series {
        row.extend_from_slice(&s[origin - window..origin]);
    }
    row
}

fn target_index(field: &FieldData, target_well: &str) -> Result<usize, FeatureError> {
    field
        .producer_index(target_well)
        .ok_or_else(|| FeatureError::UnknownWell(target_well.to_string()))
}

/// Builds the trajectory matrix: sample `t` has the previous `window` days of
/// every lagged series as features and the next `horizon` days of the target
/// producer as targets. Samples run over every valid `t` in order.
pub fn lagged_transform(field: &FieldData, target_well: &str, spec: &LagSpec) -> Result<LaggedDataset, FeatureError> {
    spec.validate()?;
    let target = target_index(field, target_well)?;
    let n = field.len();
    if n < spec.window + spec.horizon {
        return Err(FeatureError::SeriesTooShort {
            len: n,
            window: spec.window,
            horizon: spec.horizon,
        });
    }
    let series = feature_series(field, target, spec);
    let y = &field.oil[target];
    let origins: Vec<usize> = (spec.window..=n - spec.horizon).collect();
    Ok(LaggedDataset {
        features: origins.iter().map(|&t| lag_row(&series, spec.window, t)).collect(),
        targets: origins.iter().map(|&t| y[t..t + spec.horizon].to_vec()).collect(),
        feature_labels: lag_labels(&series, spec.window),
        target_labels: (0..spec.horizon)
            .map(|h| ColumnLabel {
                series: target_well.to_string(),
                offset: h as i64,
                kind: ColumnKind::Target,
            })
            .collect(),
        origins,
        target_series: target_well.to_string(),
        scaling: None,
    })
}

/// Feature row for a forecast issued at `origin` (typically the end of the
/// record), laid out like [`lagged_transform`]'s rows.
pub fn feature_row(field: &FieldData, target_well: &str, spec: &LagSpec, origin: usize) -> Result<Vec<f64>, FeatureError> {
    spec.validate()?;
    let target = target_index(field, target_well)?;
    if origin < spec.window || origin > field.len() {
        return Err(FeatureError::SeriesTooShort {
            len: field.len(),
            window: spec.window,
            horizon: spec.horizon,
        });
    }
    let series = feature_series(field, target, spec);
    Ok(lag_row(&series, spec.window, origin))
}

/// Appends exogenous columns; `values[r]` holds the vector for sample `r`.
pub fn attach_exogenous(dataset: &LaggedDataset, name: &str, values: &[Vec<f64>]) -> Result<LaggedDataset, FeatureError> {
    if values.len() != dataset.rows() {
        return Err(FeatureError::RowCountMismatch {
            dataset: dataset.rows(),
            values: values.len(),
        });
    }
    let width = values.first().map_or(0, Vec::len);
    if values.iter().any(|v| v.len() != width) {
        return Err(FeatureError::InvalidSpec("exogenous rows differ in width".into()));
    }
    let mut out = dataset.clone();
    for (row, v) in out.features.iter_mut().zip(values) {
        row.extend_from_slice(v);
    }
    out.feature_labels.extend((0..width).map(|lead| ColumnLabel {
        series: name.to_string(),
        offset: -1,
        kind: ColumnKind::Exogenous { lead },
    }));
    if let Some(s) = out.scaling.as_mut() {
        s.mean.extend(std::iter::repeat(0.0).take(width));
        s.scale.extend(std::iter::repeat(1.0).take(width));
    }
    Ok(out)
}

/// Column statistics with the population (divide-by-n) standard deviation;
/// zero-variance columns get scale 1.
pub fn column_scaling(rows: &[Vec<f64>]) -> Result<Scaling, FeatureError> {
    let n = rows.len();
    if n == 0 {
        return Err(FeatureError::EmptyDataset);
    }
    let cols = rows[0].len();
    let mut mean = vec![0.0; cols];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; cols];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Ok(Scaling { mean, scale })
}

/// Standardizes the feature columns. Targets are untouched.
pub fn standardize(dataset: &LaggedDataset) -> Result<(LaggedDataset, Scaling), FeatureError> {
    let scaling = column_scaling(&dataset.features)?;
    let mut out = dataset.clone();
    out.features = dataset.features.iter().map(|r| scaling.apply(r)).collect();
    out.scaling = Some(scaling.clone());
    Ok((out, scaling))
}

/// Undoes [`standardize`].
pub fn unstandardize(dataset: &LaggedDataset, scaling: &Scaling) -> LaggedDataset {
    let mut out = dataset.clone();
    out.features = dataset.features.iter().map(|r| scaling.invert_row(r)).collect();
    out.scaling = None;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use proptest::prelude::*;

    fn field(producer: Vec<f64>, injector: Option<Vec<f64>>) -> FieldData {
        let n = producer.len();
        FieldData {
            dates: (0..n)
                .map(|k| synthetic::start_date() + chrono::Duration::days(k as i64))
                .collect(),
            producers: vec!["P1".into()],
            injectors: injector.iter().map(|_| "I1".to_string()).collect(),
            oil: vec![producer],
            injection: injector.into_iter().collect(),
            pressure: None,
        }
    }

    #[test]
    fn single_series_enumeration() {
        let f = field(vec![1.0, 2.0, 3.0, 4.0, 5.0], None);
        let ds = lagged_transform(&f, "P1", &LagSpec::new(2, 1)).unwrap();
        assert_eq!(ds.features, vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 4.0]]);
        assert_eq!(ds.targets, vec![vec![3.0], vec![4.0], vec![5.0]]);
        assert_eq!(ds.origins, vec![2, 3, 4]);
        assert_eq!(ds.leakage_violations(), 0);
        assert_eq!(feature_row(&f, "P1", &LagSpec::new(2, 1), 5).unwrap(), vec![4.0, 5.0]);
    }

    #[test]
    fn errors() {
        let f = field(vec![1.0, 2.0, 3.0], None);
        assert!(matches!(
            lagged_transform(&f, "P1", &LagSpec::new(2, 2)),
            Err(FeatureError::SeriesTooShort { .. })
        ));
        assert!(matches!(
            lagged_transform(&f, "P9", &LagSpec::new(1, 1)),
            Err(FeatureError::UnknownWell(_))
        ));
        assert!(matches!(
            lagged_transform(&f, "P1", &LagSpec::new(0, 1)),
            Err(FeatureError::InvalidSpec(_))
        ));
    }

    #[test]
    fn two_series_match_index_enumeration() {
        let q: Vec<f64> = (0..6).map(|k| 10.0 + k as f64).collect();
        let inj: Vec<f64> = (0..6).map(|k| 100.0 + k as f64).collect();
        let f = field(q.clone(), Some(inj.clone()));
        let (w, h) = (2usize, 2usize);
        let ds = lagged_transform(&f, "P1", &LagSpec::new(w, h)).unwrap();
        assert_eq!(ds.rows(), 3);
        assert_eq!(ds.feature_cols(), 4);
        assert_eq!(ds.target_cols(), 2);
        for (s, t) in (w..=6 - h).enumerate() {
            let mut expect = Vec::new();
            for lag in (1..=w).rev() {
                expect.push(q[t - lag]);
            }
            for lag in (1..=w).rev() {
                expect.push(inj[t - lag]);
            }
            assert_eq!(ds.features[s], expect);
            let targets: Vec<f64> = (0..h).map(|k| q[t + k]).collect();
            assert_eq!(ds.targets[s], targets);
        }
        let only = lagged_transform(
            &f,
            "P1",
            &LagSpec {
                target_only: true,
                ..LagSpec::new(w, h)
            },
        )
        .unwrap();
        assert_eq!(only.feature_cols(), 2);
    }

    #[test]
    fn exogenous_append_and_project() {
        let f = field((0..10).map(|k| k as f64).collect(), None);
        let ds = lagged_transform(&f, "P1", &LagSpec::new(3, 2)).unwrap();
        let values: Vec<Vec<f64>> = (0..ds.rows()).map(|r| vec![r as f64 * 0.5]).collect();
        let wide = attach_exogenous(&ds, "crm", &values).unwrap();
        assert_eq!(wide.feature_cols(), ds.feature_cols() + 1);
        for (a, b) in wide.features.iter().zip(&ds.features) {
            assert_eq!(&a[..b.len()], b.as_slice());
        }
        assert_eq!(wide.leakage_violations(), 0);
        assert_eq!(wide.project_features(ds.feature_cols()), ds);
        assert_eq!(
            attach_exogenous(&ds, "crm", &values[1..]),
            Err(FeatureError::RowCountMismatch {
                dataset: ds.rows(),
                values: ds.rows() - 1
            })
        );
    }

    #[test]
    fn standardize_examples() {
        let ds = LaggedDataset {
            features: vec![vec![2.0, 5.0], vec![4.0, 5.0], vec![6.0, 5.0]],
            targets: vec![vec![1.0]; 3],
            feature_labels: vec![
                ColumnLabel {
                    series: "a".into(),
                    offset: -1,
                    kind: ColumnKind::Lag
                };
                2
            ],
            target_labels: vec![ColumnLabel {
                series: "a".into(),
                offset: 0,
                kind: ColumnKind::Target,
            }],
            origins: vec![1, 2, 3],
            target_series: "a".into(),
            scaling: None,
        };
        let (z, s) = standardize(&ds).unwrap();
        // population std of [2, 4, 6] is sqrt(8/3)
        let sd = (8.0f64 / 3.0).sqrt();
        assert_eq!(s.mean, vec![4.0, 5.0]);
        assert!((s.scale[0] - sd).abs() < 1e-12);
        assert_eq!(s.scale[1], 1.0);
        assert!((z.features[0][0] + 2.0 / sd).abs() < 1e-12);
        assert_eq!(z.features[1][0], 0.0);
        assert!(z.features.iter().all(|r| r[1] == 0.0));
        assert_eq!(z.targets, ds.targets);

        let empty = ds.select_rows(&[]);
        assert_eq!(standardize(&empty), Err(FeatureError::EmptyDataset));
    }

    proptest! {
        #[test]
        fn sample_count_and_no_leakage(
            q in proptest::collection::vec(0.0f64..1e3, 5..60),
            w in 1usize..6,
            h in 1usize..6,
        ) {
            prop_assume!(q.len() >= w + h);
            let inj: Vec<f64> = q.iter().map(|v| v * 2.0).collect();
            let f = field(q.clone(), Some(inj));
            let ds = lagged_transform(&f, "P1", &LagSpec::new(w, h)).unwrap();
            prop_assert_eq!(ds.rows(), q.len() - w - h + 1);
            prop_assert_eq!(ds.feature_cols(), 2 * w);
            prop_assert_eq!(ds.leakage_violations(), 0);
        }

        #[test]
        fn standardize_inverts(
            rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 1..30)
        ) {
            let n = rows.len();
            let ds = LaggedDataset {
                features: rows.clone(),
                targets: vec![vec![0.0]; n],
                feature_labels: vec![ColumnLabel { series: "s".into(), offset: -1, kind: ColumnKind::Lag }; 3],
                target_labels: vec![ColumnLabel { series: "s".into(), offset: 0, kind: ColumnKind::Target }],
                origins: (0..n).collect(),
                target_series: "s".into(),
                scaling: None,
            };
            let (z, s) = standardize(&ds).unwrap();
            let back = unstandardize(&z, &s);
            for (a, b) in back.features.iter().flatten().zip(rows.iter().flatten()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
