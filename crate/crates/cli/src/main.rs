use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use symm_spectra_cli::commands::{cmd_mfunction, cmd_resolvent, cmd_selftest, cmd_spectral, cmd_transform, cmd_validate};
use symm_spectra_cli::error::EXIT_USAGE;
use symm_spectra_cli::io::{parse_list, parse_pair};
use symm_spectra_cli::{CliError, CliResult, Options, Output};

#[derive(Parser)]
#[command(name = "symm-spectra", version, about = "m-functions, resolvents and spectral functions of symmetric systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON job config
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the result here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Emit a JSON document instead of CSV or a table
    #[arg(long, global = true)]
    json: bool,
    /// Spectral window a,b
    #[arg(long, global = true, allow_hyphen_values = true)]
    window: Option<String>,
    /// re,im items separated by ';', each part a number or lo:hi:n
    #[arg(long = "lambda-grid", global = true, allow_hyphen_values = true)]
    lambda_grid: Option<String>,
    /// Decreasing eps schedule e1,e2,...
    #[arg(long, global = true)]
    eps: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check coefficients, frames and the boundary parameter
    Validate,
    /// Evaluate m on a lambda grid
    Mfunction,
    /// Spectral function on a window by Stieltjes inversion
    Spectral,
    /// Fourier transform or its inverse
    Transform,
    /// Apply the resolvent to sampled data
    Resolvent,
    /// Run the acceptance suite
    Selftest,
}

fn options(cli: &Cli) -> CliResult<Options> {
    Ok(Options {
        config: cli.config.clone(),
        out: cli.out.clone(),
        json: cli.json,
        window: cli.window.as_deref().map(|s| parse_pair(s, "--window")).transpose()?,
        lambda_grid: cli.lambda_grid.clone(),
        eps: cli.eps.as_deref().map(|s| parse_list(s, "--eps")).transpose()?,
    })
}

fn run(cli: &Cli) -> CliResult<Output> {
    let opts = options(cli)?;
    match cli.command {
        Command::Validate => cmd_validate(&opts),
        Command::Mfunction => cmd_mfunction(&opts),
        Command::Spectral => cmd_spectral(&opts),
        Command::Transform => cmd_transform(&opts),
        Command::Resolvent => cmd_resolvent(&opts),
        Command::Selftest => cmd_selftest(&opts),
    }
}

fn write(cli: &Cli, out: &Output) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Usage(format!("cannot write output: {e}"));
    match &cli.out {
        Some(path) => std::fs::write(path, &out.text).map_err(io)?,
        None => std::io::stdout().write_all(out.text.as_bytes()).map_err(io)?,
    }
    for (path, text) in &out.files {
        std::fs::write(path, text).map_err(io)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match run(&cli).and_then(|out| write(&cli, &out).map(|_| out)) {
        Ok(out) => {
            if let Some(note) = &out.note {
                eprintln!("{note}");
            }
            out.exit
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
