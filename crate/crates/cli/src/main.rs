use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use layerprobe_cli::{execute, Cli, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim_end().replace('\n', " "));
            eprintln!("error: {}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match execute(&cli.command) {
        Ok(lines) => {
            // A closed pipe (`| head`) is not a failure of the run.
            let mut out = std::io::stdout().lock();
            for l in lines {
                if writeln!(out, "{l}").is_err() {
                    break;
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
