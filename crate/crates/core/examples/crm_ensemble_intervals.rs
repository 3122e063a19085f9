//! Sliding-window CRM forecasts over several training-window lengths, combined
//! into Student-t intervals, plus an ensemble forecast past the record end.

use waterflood::crm::{ensemble_ahead, ensemble_forecast, windowed_forecast, FitConfig};
use waterflood::metrics::{coverage, dtw, rmse};
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
    let config = FitConfig {
        restarts: 2,
        ..FitConfig::default()
    };

    let single = windowed_forecast(&field, 90, 30, &config)?;
    println!("90-day windows: {} refits covering days {}..{}", single.windows.len(), single.start, field.len());

    let lens = [60, 90, 120];
    let ens = ensemble_forecast(&field, &lens, 30, &config)?;
    println!("ensemble over {lens:?} covers days {}..{}", ens.start, ens.start + ens.len());
    for (j, well) in ens.producers.iter().enumerate() {
        let observed = &field.oil[j][ens.start..];
        let iv = &ens.intervals[j];
        println!(
            "{well}: RMSE {:.2}, DTW {:.1}, 95% interval coverage {:.2}",
            rmse(&iv.points, observed)?,
            dtw(&iv.points, observed)?,
            coverage(iv, observed)?
        );
    }

    // Past the end of the record the injection schedule is held at its last value.
    let ahead = ensemble_ahead(&field, &lens, 14, None, &config)?;
    let iv = &ahead.intervals[0];
    println!("\n{} next 14 days:", ahead.producers[0]);
    for k in 0..iv.len() {
        println!("  day +{:2}: {:7.2} [{:7.2}, {:7.2}]", k + 1, iv.points[k], iv.lower[k], iv.upper[k]);
    }
    Ok(())
}
