//! `ybspin`: levels, spectra, fits and ZEFOZ search for ¹⁷¹Yb³⁺:YVO₄ from the
//! command line.
//!
//! Exit codes: 0 success, 1 runtime or input error, 2 usage or config error,
//! 3 result written but flagged.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ybspin::spectra::Polarization;
use ybspin::spinham::FieldVector;

use commands::{DecayModel, Detection};
use config::Config;
use error::CliError;

#[derive(Parser)]
#[command(name = "ybspin", version, about = "Spin-Hamiltonian toolkit for 171Yb:YVO4")]
struct Cli {
    /// TOML configuration; built-in values are used when absent
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output file; stdout when absent
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Seed for multi-start searches (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Energy levels of both manifolds at one field
    Levels {
        /// Field in tesla, "bx,by,bz"
        #[arg(long, value_parser = parse_field, default_value = "0,0,0")]
        field: FieldVector,
    },
    /// Absorption spectrum at one field
    Spectrum {
        #[arg(long, value_parser = parse_field, default_value = "0,0,0")]
        field: FieldVector,
        #[arg(long, value_parser = parse_pol, default_value = "pi")]
        pol: Polarization,
    },
    /// Absorption map over a field sweep
    Ramp {
        /// Sweep direction, "bx,by,bz"
        #[arg(long, value_parser = parse_field)]
        field: FieldVector,
        /// Field magnitudes in tesla, "start:stop:steps"
        #[arg(long, value_parser = parse_range)]
        range: FieldRange,
        #[arg(long, value_parser = parse_pol, default_value = "sigma")]
        pol: Polarization,
    },
    /// Fit excited-state A and g tensors to peak positions
    FitHam {
        /// CSV with bx,by,bz,pol,freq,uncertainty[,label]
        observations: PathBuf,
    },
    /// Fit a decay trace or a Lorentzian line
    FitDecay {
        /// CSV with time,value[,sigma] (exp, mims) or x,y (lorentzian)
        trace: PathBuf,
        #[arg(long, value_enum)]
        model: DecayModel,
        #[arg(long, value_enum, default_value = "field")]
        mode: Detection,
    },
    /// Oscillator strengths and radiative rates from integrated absorption
    Table1 {
        /// CSV with label,pol,integrated_alpha (GHz/cm)
        absorption: PathBuf,
    },
    /// Search a field box for zero first-order Zeeman points
    Zefoz {
        /// Two levels, e.g. "g3,g4" or "e1,e2"
        #[arg(long)]
        transition: Option<String>,
        /// Cube half-width in tesla (overrides the config box)
        #[arg(long)]
        half_width: Option<f64>,
        /// Gradient-norm acceptance threshold in GHz/T
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn parse_field(s: &str) -> Result<FieldVector, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected \"bx,by,bz\", got \"{s}\""));
    }
    let mut v = [0.0f64; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse().map_err(|_| format!("'{p}' is not a number"))?;
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err("field components must be finite".into());
    }
    Ok(FieldVector::from_components(v))
}

/// Field magnitudes of a ramp.
#[derive(Debug, Clone)]
struct FieldRange(Vec<f64>);

fn parse_range(s: &str) -> Result<FieldRange, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [start, stop, steps] = parts.as_slice() else {
        return Err(format!("expected \"start:stop:steps\", got \"{s}\""));
    };
    let start: f64 = start.trim().parse().map_err(|_| format!("'{start}' is not a number"))?;
    let stop: f64 = stop.trim().parse().map_err(|_| format!("'{stop}' is not a number"))?;
    let steps: usize = steps.trim().parse().map_err(|_| format!("'{steps}' is not a count"))?;
    if steps == 0 || !start.is_finite() || !stop.is_finite() {
        return Err("range needs finite bounds and at least one step".into());
    }
    if steps == 1 {
        return Ok(FieldRange(vec![start]));
    }
    let h = (stop - start) / (steps - 1) as f64;
    Ok(FieldRange((0..steps).map(|i| start + h * i as f64).collect()))
}

fn parse_pol(s: &str) -> Result<Polarization, String> {
    s.parse().map_err(|e: ybspin::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = Config::load(cli.config.as_deref())?;
    let output = match cli.command {
        Command::Levels { field } => commands::levels(&cfg, field),
        Command::Spectrum { field, pol } => commands::spectrum(&cfg, field, pol),
        Command::Ramp { field, range, pol } => commands::ramp(&cfg, field, &range.0, pol),
        Command::FitHam { observations } => commands::fit_ham(&cfg, &observations, cli.seed),
        Command::FitDecay { trace, model, mode } => commands::fit_decay(&trace, model, mode),
        Command::Table1 { absorption } => commands::table1(&cfg, &absorption),
        Command::Zefoz {
            transition,
            half_width,
            threshold,
        } => commands::zefoz(&cfg, transition.as_deref(), half_width, threshold, cli.seed),
    }?;
    io::emit(cli.out.as_deref(), &output.text)?;
    eprint!("{}", output.summary);
    match output.flag {
        Some(flag) => Err(CliError::Flagged(flag)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_parsing() {
        assert_eq!(parse_field("0, 0.1,-2").unwrap(), FieldVector::new(0.0, 0.1, -2.0));
        assert!(parse_field("1,2").is_err());
        assert!(parse_field("a,b,c").is_err());
    }

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("0:1:5").unwrap().0, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_range("0.2:1:1").unwrap().0, vec![0.2]);
        assert!(parse_range("0:1:0").is_err());
        assert!(parse_range("0:1").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
