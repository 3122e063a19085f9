//! The full comparison protocol: CRM, ML and evolved hybrid forecasts over
//! consecutive backtest blocks on a five-producer synthetic field, written as
//! CSV files. Takes a couple of minutes on one core.
//!
//! Run with `cargo run --release --example backtest_protocol [out_dir]`.

use waterflood::evolution::{EvoConfig, LearnerFamily, SearchSpace};
use waterflood::ingest::write_production_csv;
use waterflood::learners::LearnerSpec;
use waterflood::protocol::{run, Command, RunConfig};
use waterflood::synthetic::{self, SyntheticFieldSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| "backtest_out".into());
    std::fs::create_dir_all(&out_dir)?;
    let field = synthetic::generate(&SyntheticFieldSpec {
        noise: 0.02,
        ..Default::default()
    })
    .field;
    let input = std::path::Path::new(&out_dir).join("field.csv");
    std::fs::write(&input, write_production_csv(&field.to_history()))?;

    let config = RunConfig {
        input_csv: input,
        output_dir: out_dir.clone().into(),
        iterations: 4,
        forecast_len_days: 100,
        ml_learner: LearnerSpec::RandomForest {
            n_trees: 30,
            max_depth: 8,
            min_samples_leaf: 2,
            bootstrap: true,
            feature_subsample_fraction: 0.3,
            seed: 0,
        },
        evo: EvoConfig {
            population_size: 8,
            generations: 4,
            elitism_count: 1,
            search_space: SearchSpace {
                learners: vec![LearnerFamily::Ridge, LearnerFamily::KNearest, LearnerFamily::DecisionTree],
                lag_range: (7, 60),
                ..SearchSpace::default()
            },
            ..EvoConfig::default()
        },
        ..RunConfig::default()
    };
    std::fs::write(std::path::Path::new(&out_dir).join("config.json"), serde_json::to_string_pretty(&config)?)?;
    for path in run(Command::Evaluate, &config)? {
        println!("wrote {}", path.display());
    }
    print!("{}", std::fs::read_to_string(std::path::Path::new(&out_dir).join("metrics.csv"))?);
    Ok(())
}
