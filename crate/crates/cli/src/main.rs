use std::path::PathBuf;
use std::process::ExitCode;

use calibrated_kelly_cli::{run_command, verify_dir, CliError, MarketKind, Overrides};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "ckelly",
    version,
    about = "Calibrated log-optimal portfolio experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play every configured seed and write report.json and trajectory.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Output directory; overrides CKELLY_OUT_DIR and the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        market: Option<MarketKind>,
        /// Also write plot_wealth.csv and plot_samples.csv.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Recompute a run's reported numbers from its trajectory.
    Verify {
        /// Directory holding report.json and trajectory.csv.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            rounds,
            out,
            market,
            emit_plot_data,
        } => {
            let overrides = Overrides {
                seed,
                rounds,
                out,
                market,
            };
            let done = run_command(&config, &overrides, emit_plot_data)?;
            Ok(json!({
                "out": done.dir,
                "seeds": done.report.aggregates.seeds,
                "aggregates": done.report.aggregates,
            }))
        }
        Command::Verify { dir } => {
            Ok(serde_json::to_value(verify_dir(&dir)?).expect("plain struct"))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
