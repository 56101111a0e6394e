//! `rsvol`: regime-switching local volatility toolkit.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 numeric failure.

mod args;
mod commands;
mod config;
mod output;

use args::Flags;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 3,
            _ => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Io(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<rsvol_core::Error> for CliError {
    fn from(e: rsvol_core::Error) -> Self {
        use rsvol_core::Error::*;
        match e {
            NonfiniteSolution | Overflow | GridTooCoarse { .. } | SingularNormalMatrix => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

const USAGE: &str = "\
usage: rsvol <subcommand> [--flag value]...

subcommands:
  price           price the generalized call matrix over strikes (CSV K,i,j,price)
  dupire          forward strike-maturity solve of the observed call column (CSV field)
  density-aux     auxiliary density field from a point mass (CSV field)
  density         state-price density by second strike differences (CSV K,i,j,density)
  funsol-check    Gaussian lower-bound verification report (JSON)
  mc              Monte Carlo price of a call (JSON)
  calibrate       reconstruct a diffusion perturbation from observed data (CSV y,g_1..n)
  stability-scan  volatility-gap vs price-gap ratio scan (JSON rows)
  norm-check      norm growth of the linearized response over time (JSON)

common flags: --y-min -4 --y-max 4 --space-nodes 401 --time-steps 400
run `rsvol <subcommand>` without flags to see which ones are required.
";

fn dispatch(argv: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(argv)?;
    match flags.command() {
        "price" => commands::price(&flags),
        "dupire" => commands::dupire(&flags),
        "density-aux" => commands::density_aux(&flags),
        "density" => commands::density(&flags),
        "funsol-check" => commands::funsol_check(&flags),
        "mc" => commands::mc(&flags),
        "calibrate" => commands::calibrate(&flags),
        "stability-scan" => commands::stability_scan_cmd(&flags),
        "norm-check" => commands::norm_check(&flags),
        other => Err(CliError::Usage(format!("unknown subcommand '{other}'"))),
    }
}

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.is_empty() || argv[0] == "--help" || argv[0] == "help" {
        eprint!("{USAGE}");
        std::process::exit(2);
    }
    match dispatch(&argv) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("rsvol: {}", e.message());
            if matches!(e, CliError::Usage(_)) {
                eprint!("{USAGE}");
            }
            std::process::exit(e.exit_code());
        }
    }
}
