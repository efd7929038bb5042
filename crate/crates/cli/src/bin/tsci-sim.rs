use std::process::ExitCode;

use clap::Parser;
use tsci_cli::sim::{run_simulation, write_records, SimArgs};
use tsci_cli::{CliError, CliResult};
use tsci_core::stats::mean;

fn run(args: SimArgs) -> CliResult<()> {
    let records = run_simulation(&args)?;
    let file = std::fs::File::create(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    write_records(file, &records)?;
    let betas: Vec<f64> = records.iter().map(|r| r.beta).collect();
    let coverage = records.iter().filter(|r| r.covered).count() as f64 / records.len() as f64;
    println!(
        "scenario {}: {} reps, mean estimate {:.5}, coverage {:.3}",
        args.scenario,
        records.len(),
        mean(&betas),
        coverage
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(SimArgs::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
