//! Experiment configuration files.

use std::path::{Path, PathBuf};

use calibrated_kelly::approachability::DEFAULT_TOL;
use calibrated_kelly::discretization::{GridStageParams, MarketSpec};
use calibrated_kelly::engine::market::{Atom, Regime, Switching};
use calibrated_kelly::engine::{
    refinement_schedule_default, ComparatorConfig, EpisodeConfig, RefinementSchedule,
};
use calibrated_kelly::kelly::{Portfolio, DEFAULT_KELLY_TOL};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_CAP: usize = 250_000;
pub const DEFAULT_SAMPLE_EVERY: usize = 1000;
pub const OUT_DIR_ENV: &str = "CKELLY_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MarketKind {
    Iid,
    Regime,
    Adversary,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarketConfig {
    Iid {
        atoms: Vec<Atom>,
        /// Constant signal; defaults to the low end of the signal interval.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        signal: Option<f64>,
    },
    Regime {
        regimes: Vec<Regime>,
        switching: Switching,
    },
    Adversary {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        signal: Option<f64>,
    },
    Csv {
        path: PathBuf,
        /// Column holding the signal. A column named `signal` is used when
        /// this is absent; without one the signal is constant.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        signal_column: Option<String>,
    },
}

impl MarketConfig {
    pub fn kind(&self) -> MarketKind {
        match self {
            Self::Iid { .. } => MarketKind::Iid,
            Self::Regime { .. } => MarketKind::Regime,
            Self::Adversary { .. } => MarketKind::Adversary,
            Self::Csv { .. } => MarketKind::Csv,
        }
    }

    /// Built-in two-asset market of the given kind.
    pub fn builtin(kind: MarketKind) -> Option<Self> {
        let atom = |r: [f64; 2], p: f64| Atom {
            returns: r.to_vec(),
            probability: p,
        };
        match kind {
            MarketKind::Iid => Some(Self::Iid {
                atoms: vec![atom([2.0, 1.0], 0.5), atom([0.5, 1.0], 0.5)],
                signal: None,
            }),
            MarketKind::Regime => Some(Self::Regime {
                regimes: vec![
                    Regime {
                        signal: 0.0,
                        atoms: vec![atom([2.0, 0.5], 0.7), atom([0.5, 2.0], 0.3)],
                    },
                    Regime {
                        signal: 1.0,
                        atoms: vec![atom([2.0, 0.5], 0.3), atom([0.5, 2.0], 0.7)],
                    },
                ],
                switching: Switching::Random,
            }),
            MarketKind::Adversary => Some(Self::Adversary { signal: None }),
            MarketKind::Csv => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_approach_tol")]
    pub approach: f64,
    #[serde(default = "default_kelly_tol")]
    pub kelly: f64,
}

fn default_approach_tol() -> f64 {
    DEFAULT_TOL
}

fn default_kelly_tol() -> f64 {
    DEFAULT_KELLY_TOL
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            approach: DEFAULT_TOL,
            kelly: DEFAULT_KELLY_TOL,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

fn default_spec() -> MarketSpec {
    MarketSpec {
        k: 2,
        lambda1: 0.5,
        lambda2: 2.0,
        signal_lo: 0.0,
        signal_hi: 1.0,
    }
}

fn default_cap() -> usize {
    DEFAULT_CAP
}

fn default_sample_every() -> usize {
    DEFAULT_SAMPLE_EVERY
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_spec")]
    pub spec: MarketSpec,
    pub market: MarketConfig,
    pub rounds: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Explicit stages; mutually exclusive with `grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<RefinementSchedule>,
    /// One fixed grid for the whole run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridStageParams>,
    /// Forecast grid cap used by the default schedule.
    #[serde(default = "default_cap")]
    pub max_forecast_points: usize,
    #[serde(default)]
    pub comparators: ComparatorConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default, skip_serializing)]
    pub output: OutputConfig,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub out: Option<PathBuf>,
    pub market: Option<MarketKind>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            message: format!("cannot read config: {e}"),
            path: Some(path.to_path_buf()),
        })?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Config {
            message: e.to_string(),
            path: Some(path.to_path_buf()),
        })?;
        if let MarketConfig::Csv { path: csv, .. } = &mut cfg.market {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(t) = o.rounds {
            self.rounds = t;
        }
        if let Some(kind) = o.market {
            if self.market.kind() != kind {
                self.market = MarketConfig::builtin(kind).ok_or_else(|| {
                    CliError::config(format!(
                        "--market {kind:?} needs a market section of that type in the config"
                    ))
                })?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.spec.validate().map_err(CliError::from_core_config)?;
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(CliError::config("seeds must be distinct"));
        }
        if self.sample_every == 0 {
            return Err(CliError::config("sample_every must be positive"));
        }
        if self.schedule.is_some() && self.grid.is_some() {
            return Err(CliError::config("give either schedule or grid, not both"));
        }
        for (name, v) in [
            ("tolerances.approach", self.tolerances.approach),
            ("tolerances.kelly", self.tolerances.kelly),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::config(format!("{name} must be positive")));
            }
        }
        if let Some(table) = &self.comparators.stationary {
            for b in table {
                Portfolio::new(b.weights().to_vec()).map_err(CliError::from_core_config)?;
            }
        }
        let k = self.spec.k;
        let check_atoms = |atoms: &[Atom]| -> Result<(), CliError> {
            for a in atoms {
                if !self.spec.contains_return(&a.returns) {
                    return Err(CliError::config(format!(
                        "atom {:?} is not a return vector in [{}, {}]^{k}",
                        a.returns, self.spec.lambda1, self.spec.lambda2
                    )));
                }
            }
            Ok(())
        };
        let check_signal = |z: f64| -> Result<(), CliError> {
            if self.spec.contains_signal(z) {
                Ok(())
            } else {
                Err(CliError::config(format!(
                    "signal {z} outside [{}, {}]",
                    self.spec.signal_lo, self.spec.signal_hi
                )))
            }
        };
        match &self.market {
            MarketConfig::Iid { atoms, signal } => {
                check_atoms(atoms)?;
                if let Some(z) = signal {
                    check_signal(*z)?;
                }
            }
            MarketConfig::Regime { regimes, .. } => {
                for r in regimes {
                    check_signal(r.signal)?;
                    check_atoms(&r.atoms)?;
                }
            }
            MarketConfig::Adversary { signal } => {
                if k != 2 {
                    return Err(CliError::config("the adversary market needs k = 2"));
                }
                if let Some(z) = signal {
                    check_signal(*z)?;
                }
            }
            MarketConfig::Csv { .. } => {}
        }
        Ok(())
    }

    /// Schedule actually played: explicit stages, a fixed grid, or the
    /// default doubling schedule under the cap.
    pub fn resolved_schedule(&self) -> Result<RefinementSchedule, CliError> {
        if let Some(s) = &self.schedule {
            s.check_caps(&self.spec)
                .map_err(CliError::from_core_config)?;
            return Ok(s.clone());
        }
        if let Some(g) = &self.grid {
            let s = RefinementSchedule::fixed(g.clone()).map_err(CliError::from_core_config)?;
            s.check_caps(&self.spec)
                .map_err(CliError::from_core_config)?;
            return Ok(s);
        }
        refinement_schedule_default(self.rounds.max(1), &self.spec, self.max_forecast_points)
            .map_err(CliError::from_core_config)
    }

    pub fn episode(&self, seed: u64) -> EpisodeConfig {
        EpisodeConfig {
            rounds: self.rounds,
            seed,
            sample_every: self.sample_every,
            tol: self.tolerances.approach,
            kelly_tol: self.tolerances.kelly,
            comparators: self.comparators.clone(),
        }
    }

    /// `--out`, then the environment, then the config file, then `out`.
    pub fn output_dir(&self, o: &Overrides) -> PathBuf {
        o.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
