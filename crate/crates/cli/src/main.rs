use std::process::ExitCode;

use chartaudit_cli::{dispatch, Cli, Failure};
use clap::Parser;

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Failure::Usage(e) = &f {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(f.exit_code())
        }
    }
}
