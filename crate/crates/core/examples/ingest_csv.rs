//! Round-trips a production history through the CSV format, fills gaps on the
//! daily axis and splits off a test span.
//!
//! Run with `cargo run --example ingest_csv [path.csv]`.

use waterflood::ingest::{parse_production_csv, resample_daily, split, write_production_csv, FieldData, GapPolicy};
use waterflood::synthetic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => {
            // Drop every fifth day of a synthetic field to create gaps.
            let full = synthetic::two_by_two(60, 1).field.to_history();
            let csv = write_production_csv(&full);
            csv.lines()
                .enumerate()
                .filter(|(i, _)| *i == 0 || (i - 1) / 4 % 5 != 3)
                .map(|(_, l)| format!("{l}\n"))
                .collect()
        }
    };
    let history = parse_production_csv(text.as_bytes())?;
    println!("parsed {} wells over {} distinct dates", history.wells.len(), history.len());
    for w in &history.wells {
        println!("  {} {:?}: {} rows", w.well_id, w.kind, w.len());
    }

    let daily = resample_daily(&history, GapPolicy::LinearInterpolate)?;
    println!("daily axis: {} days ({} .. {})", daily.len(), daily.date_axis[0], daily.date_axis[daily.len() - 1]);
    if let Err(e) = resample_daily(&history, GapPolicy::Fail) {
        println!("strict policy rejects the gaps: {e}");
    }

    let (train, test) = split(&daily, 10)?;
    let field = FieldData::from_history(&train)?;
    println!(
        "train {} days, test {} days; {} producers, {} injectors",
        train.len(),
        test.len(),
        field.producers.len(),
        field.injectors.len()
    );
    Ok(())
}
