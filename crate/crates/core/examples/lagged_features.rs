//! Turns a field into a supervised dataset of lagged features and
//! multi-step targets, then standardizes it.

use waterflood::features::{feature_row, lagged_transform, standardize, unstandardize, LagSpec};
use waterflood::synthetic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let field = synthetic::two_by_two(120, 3).field;
    let spec = LagSpec::new(7, 5);
    let ds = lagged_transform(&field, "P1", &spec)?;
    println!(
        "{} samples, {} feature columns, {} target columns, leakage violations: {}",
        ds.rows(),
        ds.feature_cols(),
        ds.target_cols(),
        ds.leakage_violations()
    );
    for label in ds.feature_labels.iter().take(3).chain(ds.target_labels.iter().take(2)) {
        println!("  {:>4} offset {:>3} {:?}", label.series, label.offset, label.kind);
    }
    println!("first sample origin day {}: targets {:?}", ds.origins[0], ds.targets[0]);

    let only_target = lagged_transform(&field, "P1", &LagSpec { target_only: true, ..spec })?;
    println!("target-only lags: {} feature columns", only_target.feature_cols());

    let (scaled, scaling) = standardize(&ds)?;
    let restored = unstandardize(&scaled, &scaling);
    let max_diff = restored
        .features
        .iter()
        .flatten()
        .zip(ds.features.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("standardize then invert: max difference {max_diff:.1e}");

    // The query row for a forecast issued at the end of the record.
    let query = feature_row(&field, "P1", &spec, field.len())?;
    println!("query row has {} values", query.len());
    Ok(())
}
