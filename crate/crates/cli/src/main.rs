//! `probscale`: distribution-free probabilistic upper bounds on the
//! prediction error of black-box models, via order-statistic calibration.

mod commands;
mod config;
mod error;
mod io;
mod report;

use clap::Parser;

#[derive(Parser)]
#[command(
    name = "probscale",
    version,
    about = "Probabilistic upper bounds on prediction error for black-box predictors",
    long_about = "Calibrates upper bounds on |y - T(x)| that hold with probability at least \
                  1 - epsilon, with confidence 1 - delta over the calibration draw. The number \
                  of calibration samples depends only on (epsilon, delta), never on the \
                  predictor."
)]
struct Cli {
    #[command(subcommand)]
    command: commands::Command,
}

fn main() {
    // Die quietly when stdout is closed early (e.g. piped into `head`)
    // instead of panicking on the broken pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    if let Err(err) = commands::run(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
