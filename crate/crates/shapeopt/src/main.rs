use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shapeopt::io::{cmd_analytic_check, cmd_optimize, cmd_stationarity, parse_levels, RunConfig};
use shapeopt::Error;

/// Shape optimization via constrained L^p approximation of the shape
/// tensor: stationarity sweeps, gradient descent runs and closed-form
/// self-tests.
#[derive(Parser)]
#[command(name = "shapeopt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep refinement levels and report the stationarity estimator per
    /// level as CSV.
    Stationarity(RunArgs),
    /// Run the shape-gradient descent and write the iteration report and
    /// final mesh.
    Optimize(RunArgs),
    /// Check every closed-form formula against independent oracles.
    AnalyticCheck,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem name: example1 | gingerbread | kidney | polygon.
    #[arg(long)]
    problem: Option<String>,
    /// Norm index in (1, 2].
    #[arg(long)]
    p: Option<f64>,
    /// Refinement levels for stationarity sweeps: "0..5" or "0,2,4".
    #[arg(long)]
    levels: Option<String>,
    /// Initial refinement level for optimize runs.
    #[arg(long)]
    level: Option<usize>,
    /// Initial shape: square | octagon | hexadecagon | tetragon |
    /// polygon:<n>[:<area>] | disk[:<radius>].
    #[arg(long)]
    shape: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Outer iteration cap for optimize runs.
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    /// Force the translation half-step on or off (defaults per problem).
    #[arg(long)]
    translation: Option<bool>,
}

fn resolve(args: &RunArgs, command: &str) -> Result<RunConfig, Error> {
    let mut config = RunConfig {
        command: command.into(),
        ..RunConfig::default()
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        config.apply_config_file(&text)?;
    }
    if let Some(v) = &args.problem {
        config.problem = v.clone();
    }
    if let Some(v) = args.p {
        config.p = v;
    }
    if let Some(v) = &args.levels {
        config.levels = parse_levels(v)?;
    }
    if let Some(v) = args.level {
        config.level = v;
    }
    if let Some(v) = &args.shape {
        config.shape = v.clone();
    }
    if let Some(v) = &args.out {
        config.out_dir = v.clone();
    }
    if let Some(v) = args.max_iters {
        config.max_iters = Some(v);
    }
    if let Some(v) = args.translation {
        config.translation = Some(v);
    }
    config.validate()?;
    Ok(config)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_) | Error::Parse(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<(), Error> = match &cli.command {
        Command::Stationarity(args) => resolve(args, "stationarity").and_then(|config| {
            let path = cmd_stationarity(&config)?;
            println!("wrote {}", path.display());
            Ok(())
        }),
        Command::Optimize(args) => resolve(args, "optimize").and_then(|config| {
            let (csv, mesh) = cmd_optimize(&config)?;
            println!("wrote {}", csv.display());
            println!("wrote {}", mesh.display());
            Ok(())
        }),
        Command::AnalyticCheck => {
            if cmd_analytic_check() {
                Ok(())
            } else {
                Err(Error::Solver("analytic self-test failed".into()))
            }
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
