//! Market models: the second player of the portfolio game.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approachability::MixedStrategy;
use crate::discretization::GridSet;
use crate::error::{Error, Result};
use crate::kelly::Portfolio;

/// What the market may look at before emitting returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Oblivious,
    /// Sees the announced distribution and its expected portfolio.
    Adaptive,
}

/// Information available to the market after the investor's announcement.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub round: usize,
    pub signal: f64,
    pub signal_index: usize,
    pub grids: &'a GridSet,
    pub announced: &'a MixedStrategy,
    /// `E_P[b*(p | z_t)]`, present for adaptive markets only.
    pub expected_portfolio: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketOutcome {
    pub returns: Vec<f64>,
    /// Stationary comparator the market plays against, if it defines one.
    pub comparator: Option<Portfolio>,
}

impl MarketOutcome {
    pub fn plain(returns: Vec<f64>) -> Self {
        Self {
            returns,
            comparator: None,
        }
    }
}

pub trait MarketModel: Send {
    fn access(&self) -> Access {
        Access::Oblivious
    }

    /// Side information for round `round` (1-based).
    fn signal(&mut self, round: usize, rng: &mut ChaCha8Rng) -> Result<f64>;

    fn returns(&mut self, ctx: &RoundContext<'_>, rng: &mut ChaCha8Rng) -> Result<MarketOutcome>;
}

/// Finite distribution over return vectors, sampled by inverse CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub returns: Vec<f64>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomSampler {
    atoms: Vec<Atom>,
    cumulative: Vec<f64>,
}

impl AtomSampler {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidParams("atom list is empty".into()));
        };
        let k = first.returns.len();
        if k == 0 || atoms.iter().any(|a| a.returns.len() != k) {
            return Err(Error::InvalidParams(
                "atoms must share a nonzero dimension".into(),
            ));
        }
        if atoms
            .iter()
            .any(|a| !(a.probability >= 0.0) || !a.probability.is_finite())
        {
            return Err(Error::InvalidParams(
                "atom probabilities must be nonnegative".into(),
            ));
        }
        let total: f64 = atoms.iter().map(|a| a.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "atom probabilities sum to {total}, not 1"
            )));
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.probability / total;
                acc
            })
            .collect();
        Ok(Self { atoms, cumulative })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].returns.len()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> &[f64] {
        let u: f64 = rng.gen();
        let i = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.atoms.len() - 1);
        &self.atoms[i].returns
    }
}

/// I.i.d. returns with a constant signal.
#[derive(Debug, Clone)]
pub struct IidMarket {
    sampler: AtomSampler,
    signal: f64,
}

impl IidMarket {
    pub fn new(atoms: Vec<Atom>, signal: f64) -> Result<Self> {
        Ok(Self {
            sampler: AtomSampler::new(atoms)?,
            signal,
        })
    }
}

impl MarketModel for IidMarket {
    fn signal(&mut self, _round: usize, _rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(self.signal)
    }

    fn returns(&mut self, _ctx: &RoundContext<'_>, rng: &mut ChaCha8Rng) -> Result<MarketOutcome> {
        Ok(MarketOutcome::plain(self.sampler.sample(rng).to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub signal: f64,
    pub atoms: Vec<Atom>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Switching {
    /// Regimes in order, each held for `period` rounds.
    Cycle { period: usize },
    /// A fresh uniformly chosen regime every round.
    Random,
}

/// Returns drawn from the distribution of the current regime; the signal
/// reveals the regime.
#[derive(Debug, Clone)]
pub struct RegimeMarket {
    regimes: Vec<(f64, AtomSampler)>,
    switching: Switching,
    current: usize,
}

impl RegimeMarket {
    pub fn new(regimes: Vec<Regime>, switching: Switching) -> Result<Self> {
        if regimes.is_empty() {
            return Err(Error::InvalidParams(
                "regime market needs at least one regime".into(),
            ));
        }
        if let Switching::Cycle { period: 0 } = switching {
            return Err(Error::InvalidParams("cycle period must be positive".into()));
        }
        let regimes = regimes
            .into_iter()
            .map(|r| Ok((r.signal, AtomSampler::new(r.atoms)?)))
            .collect::<Result<Vec<_>>>()?;
        let k = regimes[0].1.dim();
        if regimes.iter().any(|(_, s)| s.dim() != k) {
            return Err(Error::InvalidParams(
                "regimes have different asset counts".into(),
            ));
        }
        Ok(Self {
            regimes,
            switching,
            current: 0,
        })
    }
}

impl MarketModel for RegimeMarket {
    fn signal(&mut self, round: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        self.current = match self.switching {
            Switching::Cycle { period } => ((round - 1) / period) % self.regimes.len(),
            Switching::Random => rng.gen_range(0..self.regimes.len()),
        };
        Ok(self.regimes[self.current].0)
    }

    fn returns(&mut self, _ctx: &RoundContext<'_>, rng: &mut ChaCha8Rng) -> Result<MarketOutcome> {
        Ok(MarketOutcome::plain(
            self.regimes[self.current].1.sample(rng).to_vec(),
        ))
    }
}

/// Two-asset market that punishes the investor's expected portfolio: asset 1
/// doubles when the investor expects to hold at most half of it, asset 2
/// doubles otherwise. Its comparator holds the doubling asset.
#[derive(Debug, Clone)]
pub struct DiscontinuousAdversary {
    signal: f64,
}

impl DiscontinuousAdversary {
    pub fn new(signal: f64) -> Self {
        Self { signal }
    }

    /// Returns and comparator for expected first-asset weight `e1`.
    pub fn respond(e1: f64) -> MarketOutcome {
        if e1 <= 0.5 {
            MarketOutcome {
                returns: vec![2.0, 1.0],
                comparator: Some(Portfolio::single(2, 0)),
            }
        } else {
            MarketOutcome {
                returns: vec![1.0, 2.0],
                comparator: Some(Portfolio::single(2, 1)),
            }
        }
    }
}

impl MarketModel for DiscontinuousAdversary {
    fn access(&self) -> Access {
        Access::Adaptive
    }

    fn signal(&mut self, _round: usize, _rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(self.signal)
    }

    fn returns(&mut self, ctx: &RoundContext<'_>, _rng: &mut ChaCha8Rng) -> Result<MarketOutcome> {
        let e = ctx.expected_portfolio.ok_or_else(|| {
            Error::ProtocolViolation("adaptive market called without the expected portfolio".into())
        })?;
        if e.len() != 2 {
            return Err(Error::MarketContractViolation {
                round: ctx.round,
                message: format!("adversary needs 2 assets, got {}", e.len()),
            });
        }
        Ok(Self::respond(e[0]))
    }
}

/// Replays recorded rows; rows without a signal use `default_signal`.
#[derive(Debug, Clone)]
pub struct ReplayMarket {
    rows: Vec<(Option<f64>, Vec<f64>)>,
    default_signal: f64,
}

impl ReplayMarket {
    pub fn new(rows: Vec<(Option<f64>, Vec<f64>)>, default_signal: f64) -> Self {
        Self {
            rows,
            default_signal,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn row(&self, round: usize) -> Result<&(Option<f64>, Vec<f64>)> {
        self.rows
            .get(round - 1)
            .ok_or_else(|| Error::MarketContractViolation {
                round,
                message: format!("replay has only {} rows", self.rows.len()),
            })
    }
}

impl MarketModel for ReplayMarket {
    fn signal(&mut self, round: usize, _rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(self.row(round)?.0.unwrap_or(self.default_signal))
    }

    fn returns(&mut self, ctx: &RoundContext<'_>, _rng: &mut ChaCha8Rng) -> Result<MarketOutcome> {
        Ok(MarketOutcome::plain(self.row(ctx.round)?.1.clone()))
    }
}
