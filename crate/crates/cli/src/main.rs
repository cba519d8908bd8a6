use std::io;
use std::process::ExitCode;

use clap::Parser;
use radeval_cli::{exit, run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::INPUT_ERROR
            } else {
                exit::SUCCESS
            });
        }
    };
    let stdout = io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::INPUT_ERROR)
        }
    }
}
