use std::process::ExitCode;

use btc_core::parallel::{threads_from_env, with_threads};
use btc_experiments::{parse_args, run_experiment, CliError};

fn main() -> ExitCode {
    let cfg = match parse_args(std::env::args_os()) {
        Ok(cfg) => cfg,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                clap::error::ErrorKind::Io => 3,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match with_threads(threads_from_env(), || run_experiment(&cfg)) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
