//! `stcl`: data generation, training, prediction, segmentation, evaluation
//! and gradient checking for the spatio-temporal ConvLSTM.

mod config;
mod run;

use std::process::ExitCode;

use clap::Parser;

use config::Cli;

/// Exit status for a failed gradient check or acceptance threshold.
pub const EXIT_FAILED_CHECK: u8 = 3;

fn exit_code(e: &stcl::Error) -> u8 {
    match e {
        stcl::Error::Config(_) | stcl::Error::Contract(_) | stcl::Error::Undefined(_) => 1,
        stcl::Error::Io { .. } | stcl::Error::Format { .. } | stcl::Error::Json(_) => 2,
    }
}

fn configure_threads() -> stcl::Result<()> {
    let Ok(raw) = std::env::var("STCL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| stcl::Error::Config(format!("STCL_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| stcl::Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version go to stdout and are not errors; usage errors are config errors.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = configure_threads().and_then(|()| run::dispatch(&cli));
    match outcome {
        Ok(run::Status::Success) => ExitCode::SUCCESS,
        Ok(run::Status::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_FAILED_CHECK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
