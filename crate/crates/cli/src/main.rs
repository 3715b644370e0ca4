use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ksc_cli::{
    compare_runs, comparison_csv, configure_threads, precompute_hjb, run_experiment, CliError, ControlVariant, Preset,
    RunConfig,
};

#[derive(Parser)]
#[command(name = "ksc", version, about = "Sparse feedback control of kinetic interaction models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the controlled density and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        control: Option<String>,
        #[arg(long)]
        preset: Option<String>,
        /// Use the full reference sample count and interaction scale.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Solve the infinite-horizon two-agent problem and write the feedback table.
    Hjb {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate metrics of finished runs side by side.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
    },
}

fn load(path: &PathBuf, preset: Option<Preset>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e,
    })?;
    RunConfig::parse(&text, preset)
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            control,
            preset,
            paper_scale,
        } => {
            let preset = preset
                .map(|p| p.parse::<Preset>().map_err(|e| CliError::invalid("preset", e)))
                .transpose()?;
            let mut cfg = load(&config, preset)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = control {
                cfg.control = c.parse::<ControlVariant>().map_err(|e| CliError::invalid("control", e))?;
            }
            if paper_scale {
                cfg.paper_scale();
            }
            let report = run_experiment(&cfg, &out)?;
            println!("{report}");
        }
        Command::Hjb { config, out } => {
            let cfg = load(&config, None)?;
            let penalty = cfg
                .control
                .penalty()
                .ok_or_else(|| CliError::invalid("control", "needs a penalized variant (ih-l1 or ih-l2)"))?;
            let (summary, _) = precompute_hjb(&cfg, penalty, &out)?;
            println!("table = {}", summary.table_path.display());
            println!("key = {}", summary.key);
            println!("iterations = {}", summary.iterations);
            println!("residual = {:e}", summary.residual);
            println!("cache_hit = {}", summary.cache_hit);
        }
        Command::Compare { dirs } => {
            let rows = compare_runs(&dirs)?;
            print!("{}", comparison_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
