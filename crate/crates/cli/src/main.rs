use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use swag_cli::{exit_code, run, Cli, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(manifest) => {
            for f in &manifest.outputs {
                eprintln!("wrote {}", f.path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("swag: error: {e}");
            let code = exit_code(&e);
            if code == EXIT_USAGE {
                eprintln!("run `swag --help` for usage");
            }
            ExitCode::from(code as u8)
        }
    }
}
