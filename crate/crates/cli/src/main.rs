use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use garpcast_cli::{run, Cli, EXIT_OTHER};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_OTHER)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli.command) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            let manifest = outcome.out_dir.join(garpcast_cli::manifest::MANIFEST_FILE);
            // a closed pipe is not a failure of the run
            let _ = writeln!(
                stdout,
                "{}\nmanifest: {}",
                outcome.summary,
                manifest.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
