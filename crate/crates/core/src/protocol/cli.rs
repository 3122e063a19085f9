//! Argument parsing for the `waterflood` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::{run, Command, ProtocolError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "waterflood", version, about = "CRM, ML and hybrid oil production forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Fit the CRM and forecast past the end of the record.
    FitCrm {
        #[command(flatten)]
        common: Common,
        /// Ensemble intervals over all window lengths.
        #[arg(long)]
        intervals: bool,
    },
    /// Forecast with a pipeline (the default hybrid template if none given).
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pipeline: Option<PathBuf>,
    },
    /// Search a pipeline for one target well.
    Evolve {
        #[command(flatten)]
        common: Common,
    },
    /// Compare CRM, ML and evolved hybrid forecasts block by block.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Repeat to select several wells.
    #[arg(long = "target-well")]
    target_well: Vec<String>,
    #[arg(long)]
    forecast_len: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, ProtocolError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.input {
            c.input_csv = v.clone();
        }
        if !self.target_well.is_empty() {
            c.target_wells = self.target_well.clone();
        }
        if let Some(v) = self.forecast_len {
            c.forecast_len_days = v;
        }
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.output_dir = v.clone();
        }
        Ok(c)
    }
}

fn dispatch(cmd: Cmd) -> Result<Vec<PathBuf>, ProtocolError> {
    match cmd {
        Cmd::FitCrm { common, intervals } => {
            let mut c = common.config()?;
            c.intervals |= intervals;
            run(Command::FitCrm, &c)
        }
        Cmd::Forecast { common, pipeline } => {
            let mut c = common.config()?;
            if pipeline.is_some() {
                c.pipeline = pipeline;
            }
            run(Command::Forecast, &c)
        }
        Cmd::Evolve { common } => run(Command::Evolve, &common.config()?),
        Cmd::Evaluate { common } => run(Command::Evaluate, &common.config()?),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Usage errors exit with the configuration code 4.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 4 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
