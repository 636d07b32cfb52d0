//! `predbayes`: drive predictive rules from the command line.
//!
//! Every subcommand writes its outputs plus `config.toml` (an echo of every
//! setting that influenced the numbers) and `metadata.json` into the output
//! directory; rerunning with `--config <echo>` reproduces the outputs
//! byte for byte. Exit codes: 0 success, 2 configuration or I/O problems,
//! 3 failures inside a computation.

mod commands;
mod context;
mod dataio;
mod rules;

use std::path::PathBuf;

use clap::Parser;

use context::{CliResult, RunContext};

#[derive(Parser, Debug)]
#[command(name = "predbayes", version, about = "Predictive rules as executable objects")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Debug)]
struct GlobalArgs {
    /// Root seed for all randomness (full 64-bit range).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replicate-parallel commands; affects wall-clock
    /// time only, never the numbers. Defaults to $PREDBAYES_WORKERS or 1.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for output files (created if missing).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(clap::Subcommand, Debug)]
enum Cmd {
    /// Simulate a chain of observations forward from a predictive rule.
    Simulate(commands::simulate::SimulateArgs),
    /// Sample posterior functionals by simulating the chain into the future.
    Resample(commands::resample::ResampleArgs),
    /// Credible intervals and a Gaussian approximation from observed data.
    Credible(commands::credible::CredibleArgs),
    /// Recursive mixing-measure estimation over a fixed grid.
    Newton(commands::newton::NewtonArgs),
    /// Online logistic descent: stream data or measure interval coverage.
    Ogd {
        #[command(subcommand)]
        mode: commands::ogd::OgdMode,
    },
    /// Exhaustive small-sample checks of claimed structural properties.
    Diagnose(commands::diagnose::DiagnoseArgs),
    /// Sample binary relational arrays from a graphon.
    Graphon(commands::graphon::GraphonArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let started = std::time::Instant::now();
    match dispatch(&cli) {
        Ok(()) => {
            // Timing goes to stderr only, so output files and stdout stay a
            // pure function of the configuration.
            eprintln!("completed in {:.3}s", started.elapsed().as_secs_f64());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(i32::from(e.exit_code()));
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let command = match &cli.cmd {
        Cmd::Simulate(_) => "simulate",
        Cmd::Resample(_) => "resample",
        Cmd::Credible(_) => "credible",
        Cmd::Newton(_) => "newton",
        Cmd::Ogd { mode: commands::ogd::OgdMode::Run(_) } => "ogd run",
        Cmd::Ogd { mode: commands::ogd::OgdMode::Coverage(_) } => "ogd coverage",
        Cmd::Diagnose(_) => "diagnose",
        Cmd::Graphon(_) => "graphon",
    };
    let g = &cli.global;
    let ctx =
        RunContext::build(command, g.seed, g.workers, g.out_dir.clone(), g.config.as_deref())?;
    match &cli.cmd {
        Cmd::Simulate(a) => commands::simulate::run(&ctx, a),
        Cmd::Resample(a) => commands::resample::run(&ctx, a),
        Cmd::Credible(a) => commands::credible::run(&ctx, a),
        Cmd::Newton(a) => commands::newton::run(&ctx, a),
        Cmd::Ogd { mode: commands::ogd::OgdMode::Run(a) } => commands::ogd::run_stream(&ctx, a),
        Cmd::Ogd { mode: commands::ogd::OgdMode::Coverage(a) } => {
            commands::ogd::run_coverage(&ctx, a)
        }
        Cmd::Diagnose(a) => commands::diagnose::run(&ctx, a),
        Cmd::Graphon(a) => commands::graphon::run(&ctx, a),
    }
}
