mod args;
mod commands;
mod run;
mod summary;

use std::process::ExitCode;

use clap::Parser;
use ovb_core::Error;

use args::{Cli, Command};
use commands::Status;
use run::RunDir;

const EXIT_OK: u8 = 0;
const EXIT_INTERNAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_BUDGET: u8 = 4;
const EXIT_NOT_CONVERGED: u8 = 5;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Data(_)
        | Error::Format { .. }
        | Error::Corruption { .. }
        | Error::Io(_)
        | Error::Csv(_) => EXIT_DATA,
        Error::Budget(_) => EXIT_BUDGET,
        Error::Domain(_)
        | Error::Numerical { .. }
        | Error::NonFiniteTerm { .. }
        | Error::Json(_) => EXIT_INTERNAL,
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let (name, out) = match &cli.command {
        Command::Simulate(a) => ("simulate", &a.output),
        Command::Fit(a) => ("fit", &a.output),
        Command::Predict(a) => ("predict", &a.output),
        Command::Convert(a) => ("convert", &a.output),
        Command::ExportCar(a) => ("export-car", &a.output),
    };
    let mut run = match RunDir::create(name, out.out.as_deref()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot create the run directory: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &mut run),
        Command::Fit(a) => commands::fit(a, &mut run),
        Command::Predict(a) => commands::predict(a, &mut run),
        Command::Convert(a) => commands::convert(a, &mut run),
        Command::ExportCar(a) => commands::export_car(a, &mut run),
    };
    let (status, code, message) = match &result {
        Ok(Status::Done) => ("ok", EXIT_OK, None),
        Ok(Status::NotConverged) => ("not_converged", EXIT_NOT_CONVERGED, None),
        Err(e) => ("failed", exit_code(e), Some(e.to_string())),
    };
    if let Some(m) = &message {
        eprintln!("error: {m}");
    } else if code == EXIT_NOT_CONVERGED {
        eprintln!("warning: the fit did not converge; outputs were written anyway");
    }
    if let Err(e) = run.finish(status, code.into(), message.as_deref()) {
        eprintln!("error: cannot write the run manifest: {e}");
        return ExitCode::from(EXIT_DATA);
    }
    println!("{}", run.dir().display());
    ExitCode::from(code)
}
