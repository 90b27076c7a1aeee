use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use clap::Parser;
use prophet_oracle_cli::{execute, Cli, CliError};

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.output {
        Some(path) => {
            let mut file = BufWriter::new(File::create(path)?);
            execute(cli, &mut file)?;
            file.flush()?;
            Ok(())
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            execute(cli, &mut lock)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
