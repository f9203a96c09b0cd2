//! The `run` subcommand.

use std::path::{Path, PathBuf};

use calibrated_kelly::engine::market::{
    DiscontinuousAdversary, IidMarket, RegimeMarket, ReplayMarket,
};
use calibrated_kelly::engine::{run_episode, MarketModel, RefinementSchedule, Trajectory};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, MarketConfig, Overrides};
use crate::error::CliError;
use crate::market_csv::{load_market_csv, MarketRow};
use crate::report::{
    build_report, write_plot_data, write_report, write_trajectory_csv, Report, REPORT_FILE,
    TRAJECTORY_FILE,
};

/// A validated experiment, ready to play.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub schedule: RefinementSchedule,
    csv_rows: Option<Vec<MarketRow>>,
}

impl Experiment {
    pub fn prepare(mut config: ExperimentConfig) -> Result<Self, CliError> {
        config.validate()?;
        let schedule = config.resolved_schedule()?;
        let csv_rows = match &config.market {
            MarketConfig::Csv {
                path,
                signal_column,
            } => {
                let rows = load_market_csv(path, &config.spec, signal_column.as_deref())?;
                if rows.len() < config.rounds {
                    return Err(CliError::Config {
                        message: format!(
                            "market file has {} rows, fewer than the {} rounds requested",
                            rows.len(),
                            config.rounds
                        ),
                        path: Some(path.clone()),
                    });
                }
                Some(rows)
            }
            _ => None,
        };
        // The echoed config carries the schedule that was actually played.
        config.schedule = Some(schedule.clone());
        config.grid = None;
        Ok(Self {
            config,
            schedule,
            csv_rows,
        })
    }

    fn market(&self) -> Result<Box<dyn MarketModel>, CliError> {
        let spec = &self.config.spec;
        Ok(match &self.config.market {
            MarketConfig::Iid { atoms, signal } => Box::new(
                IidMarket::new(atoms.clone(), signal.unwrap_or(spec.signal_lo))
                    .map_err(CliError::from_core_config)?,
            ),
            MarketConfig::Regime { regimes, switching } => Box::new(
                RegimeMarket::new(regimes.clone(), *switching)
                    .map_err(CliError::from_core_config)?,
            ),
            MarketConfig::Adversary { signal } => Box::new(DiscontinuousAdversary::new(
                signal.unwrap_or(spec.signal_lo),
            )),
            MarketConfig::Csv { .. } => Box::new(ReplayMarket::new(
                self.csv_rows.clone().unwrap_or_default(),
                spec.signal_lo,
            )),
        })
    }

    pub fn run_seed(&self, seed: u64) -> Result<Trajectory, CliError> {
        let mut market = self.market()?;
        let tr = run_episode(
            &self.config.spec,
            &self.schedule,
            market.as_mut(),
            &self.config.episode(seed),
        )?;
        tr.check_wealth(1e-9)?;
        Ok(tr)
    }

    /// Plays every seed, concurrently, and returns trajectories in seed order.
    pub fn run_all(&self) -> Result<Vec<Trajectory>, CliError> {
        self.config
            .seeds
            .par_iter()
            .map(|&s| self.run_seed(s))
            .collect()
    }

    pub fn report(&self, trajectories: &[Trajectory]) -> Result<Report, CliError> {
        build_report(self.config.clone(), trajectories)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub report: Report,
}

pub fn run_command(
    config_path: &Path,
    overrides: &Overrides,
    emit_plot_data: bool,
) -> Result<RunOutput, CliError> {
    let mut config = ExperimentConfig::load(config_path)?;
    config.apply(overrides)?;
    let dir = config.output_dir(overrides);
    let exp = Experiment::prepare(config)?;
    let trajectories = exp.run_all()?;
    let report = exp.report(&trajectories)?;

    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    write_report(&report, &dir.join(REPORT_FILE))?;
    write_trajectory_csv(&trajectories, exp.config.spec.k, &dir.join(TRAJECTORY_FILE))?;
    if emit_plot_data {
        write_plot_data(&trajectories, &dir)?;
    }
    Ok(RunOutput { dir, report })
}
