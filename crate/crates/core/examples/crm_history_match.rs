//! Fits CRM gains and time constants on a synthetic field with known truth,
//! then forecasts the held-out tail with the fitted model.

use waterflood::crm::{fit_window, objective, simulate, FitConfig, MatchWindow};
use waterflood::metrics::rmse;
use waterflood::synthetic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let syn = synthetic::two_by_two(400, 11);
    let field = &syn.field;
    let window = MatchWindow {
        train_start: 0,
        train_end: 300,
        predict_end: 400,
    };
    let fitted = fit_window(field, &window, &FitConfig::default(), None)?;
    println!("objective on the training window: {:.3e}", objective(&fitted, field, &window)?);
    for (i, inj) in fitted.injectors.iter().enumerate() {
        for (j, prod) in fitted.producers.iter().enumerate() {
            println!(
                "{inj} -> {prod}: gain {:.4} (true {:.4}), tau {:.2} d (true {:.2})",
                fitted.gains[i][j], syn.truth.gains[i][j], fitted.taus[i][j], syn.truth.taus[i][j]
            );
        }
    }

    // Simulate the whole record from the fitted initial state and score the tail.
    let rates = simulate(&fitted, &field.injection, None, field.len())?;
    for (j, prod) in field.producers.iter().enumerate() {
        let err = rmse(&rates[j][300..], &field.oil[j][300..])?;
        println!("{prod}: RMSE over the last 100 days {err:.3e} m3/day");
    }
    println!("\nfitted parameters:\n{}", fitted.to_json());
    Ok(())
}
