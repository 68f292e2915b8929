use std::io::Write;
use std::process::ExitCode;

use bipfit_cli::{execute, Cli};
use clap::error::ErrorKind;
use clap::Parser;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let env_seed = std::env::var("BIPFIT_SEED").ok();
    match execute(cli, env_seed.as_deref()) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(outcome.stdout.as_bytes());
            let _ = stdout.flush();
            ExitCode::from(outcome.code)
        }
        Err(e) => {
            eprintln!("bipfit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
