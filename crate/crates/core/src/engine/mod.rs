//! The portfolio game, round by round:
//!
//! 1. the market announces a signal `z_t`,
//! 2. the investor announces a distribution `P_t` over conditional forecasts,
//! 3. the market announces returns `x_t`,
//! 4. the investor draws `p_t ~ P_t`, holds `b*(p_t | z_t)` and compounds.
//!
//! Grids are rebuilt at every stage of the refinement schedule and the
//! forecaster starts afresh; wealth carries over.

pub mod market;
pub mod schedule;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approachability::{MixedStrategy, Support, DEFAULT_TOL};
use crate::discretization::{build_grids, GridMeta, GridSet, MarketSpec, SignalGrid};
use crate::error::{Error, Result};
use crate::forecaster::{ForecastDraw, Forecaster};
use crate::kelly::{
    bcrp, best_piecewise_stationary, log_optimal_portfolio, CoverUniversal, DiscreteReturnDist,
    Portfolio, DEFAULT_KELLY_TOL,
};

pub use market::{Access, MarketModel, MarketOutcome, RoundContext};
pub use schedule::{refinement_schedule_default, RefinementSchedule, Stage};

/// Stream of the market's random generator; the investor uses stream 0.
pub const MARKET_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparatorConfig {
    /// Stationary comparator as a table over uniform signal bins. Defaults to
    /// the uniform constant portfolio. A market-supplied comparator wins.
    pub stationary: Option<Vec<Portfolio>>,
    /// Signal bins of the piecewise comparator; defaults to the signal grid
    /// size of the last stage.
    pub piecewise_bins: Option<usize>,
    /// Quadrature nodes of the universal portfolio (two assets only); 0 turns
    /// it off.
    pub cover_nodes: usize,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        Self {
            stationary: None,
            piecewise_bins: None,
            cover_nodes: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub rounds: usize,
    pub seed: u64,
    /// Calibration and distance samples are taken every `sample_every`
    /// rounds and at the last round of every stage.
    pub sample_every: usize,
    pub tol: f64,
    pub kelly_tol: f64,
    pub comparators: ComparatorConfig,
}

impl EpisodeConfig {
    pub fn new(rounds: usize, seed: u64) -> Self {
        Self {
            rounds,
            seed,
            sample_every: 1000,
            tol: DEFAULT_TOL,
            kelly_tol: DEFAULT_KELLY_TOL,
            comparators: ComparatorConfig::default(),
        }
    }
}

/// Log2 amounts for the investor and each comparator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Log2Wealth {
    pub investor: f64,
    pub bcrp: f64,
    pub cover: Option<f64>,
    pub piecewise: f64,
    pub stationary: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub stage: usize,
    pub signal: f64,
    pub signal_index: usize,
    pub draw: ForecastDraw,
    pub returns: Vec<f64>,
    pub return_bin: usize,
    pub investor: Portfolio,
    pub stationary: Portfolio,
    pub cover: Option<Portfolio>,
    pub piecewise_bin: usize,
    pub increments: Log2Wealth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: usize,
    pub stage: usize,
    pub calibration_score: f64,
    pub dist_l2: f64,
    pub dist_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub index: usize,
    pub t_start: usize,
    pub t_end: usize,
    pub meta: GridMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub stages: Vec<StageRecord>,
    pub samples: Vec<Sample>,
    /// Hindsight comparators; `None`/empty when no round was played.
    pub bcrp: Option<Portfolio>,
    pub piecewise: Vec<Portfolio>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// `log2 S_T` for every strategy; all zero when `T = 0` (`S_0 = 1`).
    pub fn final_log2_wealth(&self) -> Log2Wealth {
        let mut w = Log2Wealth {
            cover: self
                .rounds
                .first()
                .and_then(|r| r.cover.as_ref())
                .map(|_| 0.0),
            ..Log2Wealth::default()
        };
        for r in &self.rounds {
            w.investor += r.increments.investor;
            w.bcrp += r.increments.bcrp;
            w.piecewise += r.increments.piecewise;
            w.stationary += r.increments.stationary;
            if let (Some(c), Some(i)) = (w.cover.as_mut(), r.increments.cover) {
                *c += i;
            }
        }
        w
    }

    pub fn piecewise_portfolio(&self, record: &RoundRecord) -> Option<&Portfolio> {
        self.piecewise.get(record.piecewise_bin)
    }

    /// Recomputes every increment from the held portfolio and the returns.
    pub fn check_wealth(&self, tol: f64) -> Result<()> {
        let mismatch = |t: usize, name: &str, stored: f64, fresh: f64| {
            Err(Error::InvalidParams(format!(
                "round {t}: stored {name} increment {stored} differs from recomputed {fresh}"
            )))
        };
        for r in &self.rounds {
            let x = &r.returns;
            let checks = [
                ("investor", r.increments.investor, Some(&r.investor)),
                ("stationary", r.increments.stationary, Some(&r.stationary)),
                ("bcrp", r.increments.bcrp, self.bcrp.as_ref()),
                (
                    "piecewise",
                    r.increments.piecewise,
                    self.piecewise_portfolio(r),
                ),
            ];
            for (name, stored, b) in checks {
                let Some(b) = b else {
                    return Err(Error::InvalidParams(format!(
                        "round {}: no {name} portfolio",
                        r.t
                    )));
                };
                let fresh = b.log2_growth(x);
                if (stored - fresh).abs() > tol {
                    return mismatch(r.t, name, stored, fresh);
                }
            }
            if let (Some(b), Some(stored)) = (&r.cover, r.increments.cover) {
                let fresh = b.log2_growth(x);
                if (stored - fresh).abs() > tol {
                    return mismatch(r.t, "cover", stored, fresh);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Signal,
    Announce,
    Returns,
    Settle,
}

/// Enforces the order signal, announce, returns, settle within each round.
#[derive(Debug, Clone)]
pub struct ProtocolMonitor {
    phase: Phase,
    round: usize,
}

impl Default for ProtocolMonitor {
    fn default() -> Self {
        Self {
            phase: Phase::Signal,
            round: 1,
        }
    }
}

impl ProtocolMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    fn step(&mut self, expected: Phase, next: Phase) -> Result<()> {
        if self.phase != expected {
            return Err(Error::ProtocolViolation(format!(
                "round {}: {expected:?} called during {:?}",
                self.round, self.phase
            )));
        }
        self.phase = next;
        Ok(())
    }

    pub fn market_signal(&mut self) -> Result<()> {
        self.step(Phase::Signal, Phase::Announce)
    }

    pub fn investor_announce(&mut self) -> Result<()> {
        self.step(Phase::Announce, Phase::Returns)
    }

    pub fn market_returns(&mut self) -> Result<()> {
        self.step(Phase::Returns, Phase::Settle)
    }

    pub fn investor_settle(&mut self) -> Result<()> {
        self.step(Phase::Settle, Phase::Signal)?;
        self.round += 1;
        Ok(())
    }
}

/// `b*(s | c_j)` for every per-signal forecast point of one stage.
#[derive(Debug, Clone)]
pub struct PortfolioCache {
    grids: Arc<GridSet>,
    entries: Vec<Option<Portfolio>>,
    tol: f64,
}

impl PortfolioCache {
    pub fn new(grids: Arc<GridSet>, tol: f64) -> Self {
        let n = grids.forecasts.per_signal_len();
        Self {
            grids,
            entries: vec![None; n],
            tol,
        }
    }

    /// Log-optimal portfolio for per-signal point `point`.
    pub fn get(&mut self, point: usize) -> Result<&Portfolio> {
        let len = self.entries.len();
        let slot = self
            .entries
            .get_mut(point)
            .ok_or(Error::IndexOutOfRange { index: point, len })?;
        if slot.is_none() {
            let row = self.grids.forecasts.point_row(point);
            let atoms = self
                .grids
                .returns
                .points()
                .iter()
                .zip(row)
                .filter(|(_, &p)| p > 0.0)
                .map(|(a, &p)| (a.clone(), p))
                .collect();
            *slot = Some(log_optimal_portfolio(
                &DiscreteReturnDist::new(atoms)?,
                self.tol,
            )?);
        }
        Ok(slot.as_ref().expect("filled above"))
    }

    /// `b*(p | c_signal)` for the full forecast `index`.
    pub fn for_forecast(&mut self, index: usize, signal: usize) -> Result<&Portfolio> {
        let point = self.grids.forecasts.digit(index, signal);
        self.get(point)
    }

    /// `E_P[b*(p | c_signal)]` computed exactly over the support of `announced`.
    pub fn expected(&mut self, announced: &MixedStrategy, signal: usize) -> Result<Vec<f64>> {
        let k = self.grids.spec.k;
        let mut e = vec![0.0; k];
        match &announced.support {
            Support::Uniform(_) => {
                // The uniform law on the product grid has uniform marginals.
                let n = self.entries.len();
                for point in 0..n {
                    let b = self.get(point)?.weights().to_vec();
                    for (acc, w) in e.iter_mut().zip(b) {
                        *acc += w / n as f64;
                    }
                }
            }
            Support::Weights(weights) => {
                for &(index, q) in weights {
                    let b = self.for_forecast(index, signal)?.weights().to_vec();
                    for (acc, w) in e.iter_mut().zip(b) {
                        *acc += q * w;
                    }
                }
            }
        }
        Ok(e)
    }
}

struct StageState {
    grids: Arc<GridSet>,
    forecaster: Forecaster,
    cache: PortfolioCache,
}

impl StageState {
    fn new(spec: &MarketSpec, stage: &Stage, cfg: &EpisodeConfig) -> Result<Self> {
        let grids = Arc::new(build_grids(spec, &stage.params)?);
        Ok(Self {
            forecaster: Forecaster::new(grids.clone(), cfg.tol)?,
            cache: PortfolioCache::new(grids.clone(), cfg.kelly_tol),
            grids,
        })
    }
}

fn violation(round: usize, message: String) -> Error {
    Error::MarketContractViolation { round, message }
}

pub fn market_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MARKET_STREAM);
    rng
}

pub fn investor_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plays `cfg.rounds` rounds of the portfolio game.
pub fn run_episode(
    spec: &MarketSpec,
    schedule: &RefinementSchedule,
    market: &mut dyn MarketModel,
    cfg: &EpisodeConfig,
) -> Result<Trajectory> {
    spec.validate()?;
    if cfg.sample_every == 0 {
        return Err(Error::InvalidParams("sample_every must be positive".into()));
    }
    let table = match &cfg.comparators.stationary {
        Some(t) if t.is_empty() => {
            return Err(Error::InvalidParams("stationary table is empty".into()));
        }
        Some(t) => {
            for b in t {
                if b.len() != spec.k {
                    return Err(Error::InvalidParams(format!(
                        "stationary portfolio has {} weights for {} assets",
                        b.len(),
                        spec.k
                    )));
                }
            }
            t.clone()
        }
        None => vec![Portfolio::uniform(spec.k)],
    };
    let table_grid = SignalGrid::uniform(spec.signal_lo, spec.signal_hi, table.len())?;
    let mut cover = if spec.k == 2 && cfg.comparators.cover_nodes > 0 {
        Some(CoverUniversal::new(cfg.comparators.cover_nodes)?)
    } else {
        None
    };

    let mut frng = investor_rng(cfg.seed);
    let mut mrng = market_rng(cfg.seed);
    let mut monitor = ProtocolMonitor::new();
    let adaptive = market.access() == Access::Adaptive;

    let mut rounds: Vec<RoundRecord> = Vec::with_capacity(cfg.rounds);
    let mut stages: Vec<StageRecord> = Vec::new();
    let mut samples = Vec::new();
    let mut state: Option<StageState> = None;

    for t in 1..=cfg.rounds {
        let stage_index = schedule.stage_of(t);
        if stages.last().map(|s| s.index) != Some(stage_index) {
            let st = StageState::new(spec, &schedule.stages()[stage_index], cfg)?;
            stages.push(StageRecord {
                index: stage_index,
                t_start: t,
                t_end: t,
                meta: st.grids.meta(),
            });
            state = Some(st);
        }
        let st = state.as_mut().expect("stage state is built above");
        let grids = st.grids.clone();

        monitor.market_signal()?;
        let z = market.signal(t, &mut mrng)?;
        if !(z.is_finite() && spec.contains_signal(z)) {
            return Err(violation(
                t,
                format!(
                    "signal {z} outside [{}, {}]",
                    spec.signal_lo, spec.signal_hi
                ),
            ));
        }
        let j = grids.signals.quantize(z)?;

        monitor.investor_announce()?;
        let draw = st.forecaster.next_forecast(j, &mut frng)?;
        let expected = if adaptive {
            Some(st.cache.expected(&draw.announced, j)?)
        } else {
            None
        };

        monitor.market_returns()?;
        let ctx = RoundContext {
            round: t,
            signal: z,
            signal_index: j,
            grids: &grids,
            announced: &draw.announced,
            expected_portfolio: expected.as_deref(),
        };
        let outcome = market.returns(&ctx, &mut mrng)?;
        let x = outcome.returns;
        if !(x.iter().all(|v| v.is_finite()) && spec.contains_return(&x)) {
            return Err(violation(
                t,
                format!(
                    "returns {x:?} outside [{}, {}]^{}",
                    spec.lambda1, spec.lambda2, spec.k
                ),
            ));
        }
        let bin = grids.returns.quantize(&x)?;

        monitor.investor_settle()?;
        let investor = st.cache.for_forecast(draw.index(), j)?.clone();
        st.forecaster.observe_outcome(&draw, bin)?;

        let stationary = match outcome.comparator {
            Some(b) if b.len() == spec.k => b,
            Some(b) => {
                return Err(violation(
                    t,
                    format!("comparator has {} weights for {} assets", b.len(), spec.k),
                ));
            }
            None => table[table_grid.quantize(z)?].clone(),
        };
        let cover_b = match cover.as_mut() {
            Some(c) => {
                let b = c.weight()?;
                c.update(&x)?;
                Some(b)
            }
            None => None,
        };

        let increments = Log2Wealth {
            investor: investor.log2_growth(&x),
            bcrp: 0.0,
            cover: cover_b.as_ref().map(|b| b.log2_growth(&x)),
            piecewise: 0.0,
            stationary: stationary.log2_growth(&x),
        };
        rounds.push(RoundRecord {
            t,
            stage: stage_index,
            signal: z,
            signal_index: j,
            draw,
            returns: x,
            return_bin: bin,
            investor,
            stationary,
            cover: cover_b,
            piecewise_bin: 0,
            increments,
        });
        if let Some(s) = stages.last_mut() {
            s.t_end = t;
        }

        let stage_ends = t == cfg.rounds || schedule.stage_of(t + 1) != stage_index;
        if t % cfg.sample_every == 0 || stage_ends {
            samples.push(Sample {
                t,
                stage: stage_index,
                calibration_score: st.forecaster.calibration_score()?,
                dist_l2: st.forecaster.dist_l2(),
                dist_l1: st.forecaster.dist_l1(),
            });
        }
    }

    let mut trajectory = Trajectory {
        seed: cfg.seed,
        rounds,
        stages,
        samples,
        bcrp: None,
        piecewise: Vec::new(),
    };
    if !trajectory.is_empty() {
        attach_hindsight(&mut trajectory, spec, schedule, cfg)?;
    }
    Ok(trajectory)
}

/// Best constant and best piecewise-stationary portfolios for the realized
/// returns, and their per-round increments.
fn attach_hindsight(
    trajectory: &mut Trajectory,
    spec: &MarketSpec,
    schedule: &RefinementSchedule,
    cfg: &EpisodeConfig,
) -> Result<()> {
    let last_stage = trajectory.stages.last().map_or(0, |s| s.index);
    let bins = cfg
        .comparators
        .piecewise_bins
        .unwrap_or(schedule.stages()[last_stage].params.signal_points);
    let grid = SignalGrid::uniform(spec.signal_lo, spec.signal_hi, bins)?;

    let xs: Vec<Vec<f64>> = trajectory
        .rounds
        .iter()
        .map(|r| r.returns.clone())
        .collect();
    let best = bcrp(&xs, cfg.kelly_tol)?;
    let mut history = Vec::with_capacity(xs.len());
    for r in trajectory.rounds.iter_mut() {
        r.piecewise_bin = grid.quantize(r.signal)?;
        history.push((r.piecewise_bin, r.returns.clone()));
    }
    let piecewise = best_piecewise_stationary(&history, bins, cfg.kelly_tol)?;
    for r in trajectory.rounds.iter_mut() {
        r.increments.bcrp = best.log2_growth(&r.returns);
        r.increments.piecewise = piecewise[r.piecewise_bin].log2_growth(&r.returns);
    }
    trajectory.bcrp = Some(best);
    trajectory.piecewise = piecewise;
    Ok(())
}
