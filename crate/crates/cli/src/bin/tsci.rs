use std::process::ExitCode;

use tsci_cli::config::parse_config;
use tsci_cli::{execute, report, CliError, CliResult};

fn run() -> CliResult<()> {
    let cfg = match parse_config(std::env::args_os()) {
        Ok(c) => c,
        Err(CliError::Info(msg)) => {
            print!("{msg}");
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    let result = execute(&cfg)?;
    print!("{}", report::render_text(&result, cfg.extended));
    if let Some(path) = &cfg.out {
        std::fs::write(path, report::to_json(&result)?).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
