//! Randomized calibrated forecaster with side information.
//!
//! Each round the forecaster announces a distribution over the forecast grid
//! (the Blackwell strategy for the current mean payoff), draws one forecast
//! from it, then observes the quantized outcome. The ledger of counts it
//! keeps is exactly the data behind the calibration score, and the score
//! always equals the l1 norm of the mean payoff.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::approachability::{
    blackwell_step_with, payoff_vector, BlackwellStep, MeanPayoff, MixedStrategy, NearestUnused,
    TargetSet, WarmBasis,
};
use crate::discretization::{ConditionalForecast, GridSet};
use crate::error::{Error, Result};

/// Counts `N_T(s, i, j)` and `M_T(s, j)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationLedger {
    /// (forecast, return bin, signal) -> count
    n_counts: BTreeMap<(usize, usize, usize), u64>,
    /// (forecast, signal) -> count
    m_counts: BTreeMap<(usize, usize), u64>,
    rounds: u64,
}

impl CalibrationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, forecast: usize, bin: usize, signal: usize) {
        *self.n_counts.entry((forecast, bin, signal)).or_insert(0) += 1;
        *self.m_counts.entry((forecast, signal)).or_insert(0) += 1;
        self.rounds += 1;
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn n_count(&self, forecast: usize, bin: usize, signal: usize) -> u64 {
        self.n_counts
            .get(&(forecast, bin, signal))
            .copied()
            .unwrap_or(0)
    }

    pub fn m_count(&self, forecast: usize, signal: usize) -> u64 {
        self.m_counts.get(&(forecast, signal)).copied().unwrap_or(0)
    }

    pub fn n_entries(&self) -> impl Iterator<Item = ((usize, usize, usize), u64)> + '_ {
        self.n_counts.iter().map(|(&k, &v)| (k, v))
    }

    pub fn m_entries(&self) -> impl Iterator<Item = ((usize, usize), u64)> + '_ {
        self.m_counts.iter().map(|(&k, &v)| (k, v))
    }
}

/// `(1/T) sum_{j,s,i} |N_T(s,i,j) - M_T(s,j) s(i|c_j)|`.
pub fn calibration_score(ledger: &CalibrationLedger, grids: &GridSet) -> Result<f64> {
    if ledger.rounds == 0 {
        return Err(Error::EmptyHistory);
    }
    let mut total = 0.0;
    for (&(forecast, signal), &m) in &ledger.m_counts {
        let row = grids.forecasts.row(forecast, signal)?;
        for (bin, &p) in row.iter().enumerate() {
            let n = ledger.n_count(forecast, bin, signal) as f64;
            total += (n - m as f64 * p).abs();
        }
    }
    Ok(total / ledger.rounds as f64)
}

/// The announced distribution and the forecast drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDraw {
    pub announced: MixedStrategy,
    pub drawn: ConditionalForecast,
    pub signal: usize,
    /// 1-based round this draw belongs to.
    pub round: usize,
}

impl ForecastDraw {
    pub fn index(&self) -> usize {
        self.drawn.grid_index
    }

    /// `s(. | c_signal)` of the drawn forecast.
    pub fn row(&self) -> &[f64] {
        &self.drawn.rows[self.signal]
    }
}

/// Single-owner state machine alternating `next_forecast` / `observe_outcome`.
#[derive(Debug, Clone)]
pub struct Forecaster {
    grids: Arc<GridSet>,
    target: TargetSet,
    tol: f64,
    mean: MeanPayoff,
    ledger: CalibrationLedger,
    /// Outcome counts per (signal, return bin).
    outcomes: Vec<Vec<u64>>,
    /// Cached halfspace step, keyed by round count and signal.
    step: Option<((usize, usize), BlackwellStep)>,
    representative: NearestUnused,
    warm: WarmBasis,
    pending: Option<usize>,
}

impl Forecaster {
    pub fn new(grids: Arc<GridSet>, tol: f64) -> Result<Self> {
        let target = TargetSet::new(grids.epsilon())?;
        let outcomes = vec![vec![0; grids.returns.len()]; grids.signals.len()];
        Ok(Self {
            outcomes,
            grids,
            target,
            tol,
            mean: MeanPayoff::new(),
            ledger: CalibrationLedger::new(),
            step: None,
            representative: NearestUnused::new(),
            warm: WarmBasis::default(),
            pending: None,
        })
    }

    pub fn grids(&self) -> &Arc<GridSet> {
        &self.grids
    }

    pub fn target(&self) -> &TargetSet {
        &self.target
    }

    pub fn mean(&self) -> &MeanPayoff {
        &self.mean
    }

    pub fn ledger(&self) -> &CalibrationLedger {
        &self.ledger
    }

    pub fn rounds(&self) -> usize {
        self.mean.rounds()
    }

    /// The halfspace computation behind the most recent announcement.
    pub fn last_step(&self) -> Option<&BlackwellStep> {
        self.step.as_ref().map(|(_, s)| s)
    }

    /// Lattice point per signal nearest to the observed outcome frequencies;
    /// unseen signals use the pooled frequencies.
    fn empirical_digits(&self) -> Result<Vec<usize>> {
        let m = self.grids.returns.len();
        let mut pooled = vec![0u64; m];
        for row in &self.outcomes {
            for (acc, c) in pooled.iter_mut().zip(row) {
                *acc += c;
            }
        }
        let to_probs = |counts: &[u64]| -> Vec<f64> {
            let total: u64 = counts.iter().sum();
            if total == 0 {
                vec![1.0 / m as f64; m]
            } else {
                counts.iter().map(|&c| c as f64 / total as f64).collect()
            }
        };
        self.outcomes
            .iter()
            .map(|row| {
                let counts = if row.iter().any(|&c| c > 0) {
                    row
                } else {
                    &pooled
                };
                self.grids.forecasts.quantize_row(&to_probs(counts))
            })
            .collect()
    }

    /// Announces the Blackwell strategy and draws a forecast from it. Unused
    /// forecasts are represented by the one nearest to the observed outcome
    /// frequencies. Calling
    /// again before `observe_outcome` replaces the pending draw; the mean
    /// payoff and ledger are untouched.
    pub fn next_forecast<R: Rng + ?Sized>(
        &mut self,
        signal: usize,
        rng: &mut R,
    ) -> Result<ForecastDraw> {
        if signal >= self.grids.signals.len() {
            return Err(Error::IndexOutOfRange {
                index: signal,
                len: self.grids.signals.len(),
            });
        }
        let key = (self.mean.rounds(), signal);
        let step = match self.step.take() {
            Some((k, step)) if k == key => step,
            _ => {
                let digits = self.empirical_digits()?;
                self.representative.set_target(digits, signal);
                blackwell_step_with(
                    &self.mean,
                    &self.target,
                    &self.grids,
                    self.tol,
                    &mut self.representative,
                    &mut self.warm,
                )?
            }
        };
        let announced = step.strategy.clone();
        self.step = Some((key, step));
        let u: f64 = rng.gen();
        let index = announced.sample(u);
        let drawn = self.grids.forecasts.forecast(index)?;
        let round = self.mean.rounds() + 1;
        self.pending = Some(round);
        Ok(ForecastDraw {
            announced,
            drawn,
            signal,
            round,
        })
    }

    pub fn observe_outcome(&mut self, draw: &ForecastDraw, bin: usize) -> Result<()> {
        match self.pending {
            Some(round) if round == draw.round => {}
            Some(round) => {
                return Err(Error::ProtocolViolation(format!(
                    "outcome for round {} while round {round} is pending",
                    draw.round
                )))
            }
            None => {
                return Err(Error::ProtocolViolation(format!(
                    "no forecast pending for round {}",
                    draw.round
                )))
            }
        }
        let payoff = payoff_vector(draw.index(), draw.signal, bin, &self.grids)?;
        self.mean.push(&payoff);
        self.ledger.record(draw.index(), bin, draw.signal);
        self.outcomes[draw.signal][bin] += 1;
        self.pending = None;
        Ok(())
    }

    pub fn calibration_score(&self) -> Result<f64> {
        calibration_score(&self.ledger, &self.grids)
    }

    pub fn dist_l2(&self) -> f64 {
        self.target.dist_l2(&self.mean)
    }

    pub fn dist_l1(&self) -> f64 {
        self.target.dist_l1(&self.mean)
    }
}
