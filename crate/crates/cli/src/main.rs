//! `critgap` command-line front end.

mod commands;
mod table;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use commands::Cli;
use critgap::{Error, ErrorClass};

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Data | ErrorClass::Io => 2,
        ErrorClass::Convergence => 3,
        ErrorClass::Usage => 4,
        ErrorClass::Numeric => 1,
    }
}

fn fail(class: ErrorClass, msg: &str) -> ExitCode {
    let line = msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    eprintln!("error[{}]: {line}", class.as_str());
    ExitCode::from(exit_code(class))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail(ErrorClass::Usage, first.trim_start_matches("error: "));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(ErrorClass::Usage, "--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(ErrorClass::Usage, &e.to_string());
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.class(), &message(&e)),
    }
}

fn message(e: &Error) -> String {
    match e {
        Error::Convergence { best, .. } if !best.boundary_flags.is_empty() => {
            format!("{e}; parameters at bounds: {}", best.boundary_flags.join(", "))
        }
        _ => e.to_string(),
    }
}
