use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sjde::stopping::grid::GridSpec;
use sjde_cli::{cmd_grid, cmd_preset, cmd_run, cmd_schedule, load_config, write_report, CliError, CliResult, RunOptions, Scheme};

#[derive(Parser)]
#[command(name = "sjde", version, about = "Sequential joint detection and estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials of one scheme over a list of target costs.
    Run {
        /// TOML file, or `preset:<name>`.
        #[arg(long)]
        config: String,
        #[arg(long, value_enum, default_value = "sjde")]
        scheme: Scheme,
        /// Comma-separated targets; defaults to the configuration's sweep.
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cost grid file; switches stopping to grid lookup.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        t_max: Option<usize>,
        #[arg(long)]
        mc_samples: Option<usize>,
    },
    /// Precompute the cost grid of a binary configuration.
    Grid {
        #[arg(long)]
        config: String,
        /// JSON grid specification; defaults to the configuration's `[grid]`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deterministic stopping time of a fixed-matrix configuration.
    Schedule {
        #[arg(long)]
        config: String,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        t_max: Option<usize>,
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print or save a built-in configuration.
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_spec(text: &str) -> CliResult<GridSpec> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("grid specification: {e}")))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run {
            config,
            scheme,
            alpha,
            trials,
            seed,
            out,
            grid,
            t_max,
            mc_samples,
        } => {
            let cfg = load_config(&config)?;
            let opts = RunOptions {
                scheme,
                alphas: alpha,
                trials,
                seed,
                t_max,
                mc_samples,
                grid,
            };
            let report = cmd_run(&cfg, &opts)?;
            write_report(&report, out.as_deref())
        }
        Command::Grid {
            config,
            grid,
            mc_samples,
            seed,
            out,
        } => {
            let cfg = load_config(&config)?;
            let spec = grid.as_deref().map(parse_spec).transpose()?;
            cmd_grid(&cfg, spec.as_ref(), mc_samples, seed, &out).map(|_| ())
        }
        Command::Schedule {
            config,
            alpha,
            t_max,
            mc_samples,
            seed,
            out,
        } => {
            let cfg = load_config(&config)?;
            cmd_schedule(&cfg, alpha, t_max, mc_samples, seed, out.as_deref()).map(|_| ())
        }
        Command::Preset { name, out } => cmd_preset(&name, out.as_deref()).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
