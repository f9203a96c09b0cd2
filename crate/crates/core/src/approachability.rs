//! The vector-payoff calibration game and its Blackwell strategy.
//!
//! Payoff vectors live in `R^{K*N*M}`: one `M`-block per (forecast, signal)
//! pair. A round where forecast `i` is played under signal `j` and the
//! outcome falls in return bin `a` contributes `delta[a] - s_i(.|c_j)` to
//! block `(i, j)` and zero elsewhere, so every vector here is stored sparsely
//! by block. The target set is the l1 ball of radius `epsilon`; distances and
//! projections onto it are taken in l2.

use std::collections::HashMap;

use crate::discretization::GridSet;
use crate::error::{Error, Result};
use crate::game::{solve_min_max_from, Basic, GameSolution};

/// Default boundary tolerance: a mean payoff this close (l2) to the target
/// set counts as inside it.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Block key: (forecast index, signal index).
pub type BlockKey = (usize, usize);

/// One round's payoff, nonzero only in block `(forecast, signal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePayoff {
    pub forecast: usize,
    pub signal: usize,
    pub values: Vec<f64>,
}

impl SparsePayoff {
    pub fn block(&self) -> BlockKey {
        (self.forecast, self.signal)
    }
}

/// `f(s_i, (a_bin, c_j))` restricted to its only nonzero block.
pub fn payoff_vector(
    forecast: usize,
    signal: usize,
    bin: usize,
    grids: &GridSet,
) -> Result<SparsePayoff> {
    let row = grids.forecasts.row(forecast, signal)?;
    if bin >= row.len() {
        return Err(Error::IndexOutOfRange {
            index: bin,
            len: row.len(),
        });
    }
    let mut values: Vec<f64> = row.iter().map(|&p| -p).collect();
    values[bin] += 1.0;
    Ok(SparsePayoff {
        forecast,
        signal,
        values,
    })
}

/// Running average of the payoff vectors.
///
/// Internally the per-block sums are kept and divided by the round count on
/// read, so the average is always the batch average of the payoffs seen.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeanPayoff {
    /// Block keys in increasing order.
    keys: Vec<BlockKey>,
    /// Block sums laid out in key order, `width` entries each.
    sums: Vec<f64>,
    width: usize,
    rounds: usize,
}

impl MeanPayoff {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn block_count(&self) -> usize {
        self.keys.len()
    }

    pub fn stored_entries(&self) -> usize {
        self.sums.len()
    }

    fn sum_of(&self, pos: usize) -> &[f64] {
        &self.sums[pos * self.width..(pos + 1) * self.width]
    }

    /// Averaged block, or `None` if the block was never hit.
    pub fn block(&self, key: BlockKey) -> Option<Vec<f64>> {
        let t = self.rounds as f64;
        let pos = self.keys.binary_search(&key).ok()?;
        Some(self.sum_of(pos).iter().map(|v| v / t).collect())
    }

    /// All stored blocks in key order, averaged.
    pub fn blocks(&self) -> impl Iterator<Item = (BlockKey, Vec<f64>)> + '_ {
        let t = self.rounds as f64;
        self.sums()
            .map(move |(k, s)| (k, s.iter().map(|v| v / t).collect()))
    }

    /// Unnormalized per-block sums in key order.
    pub fn sums(&self) -> impl Iterator<Item = (BlockKey, &[f64])> + '_ {
        self.keys
            .iter()
            .copied()
            .zip(self.sums.chunks(self.width.max(1)))
    }

    /// # Panics
    /// If the payoff's block length differs from earlier payoffs.
    pub fn push(&mut self, payoff: &SparsePayoff) {
        if self.keys.is_empty() {
            self.width = payoff.values.len();
        }
        assert_eq!(
            payoff.values.len(),
            self.width,
            "payoff blocks must share a length"
        );
        let w = self.width;
        let pos = match self.keys.binary_search(&payoff.block()) {
            Ok(pos) => pos,
            Err(pos) => {
                self.keys.insert(pos, payoff.block());
                self.sums
                    .splice(pos * w..pos * w, std::iter::repeat(0.0).take(w));
                pos
            }
        };
        for (acc, v) in self.sums[pos * w..(pos + 1) * w]
            .iter_mut()
            .zip(&payoff.values)
        {
            *acc += v;
        }
        self.rounds += 1;
    }

    /// `||m||_1`.
    pub fn l1_norm(&self) -> f64 {
        if self.rounds == 0 {
            return 0.0;
        }
        let t = self.rounds as f64;
        self.sums.iter().map(|v| v.abs()).sum::<f64>() / t
    }

    fn flatten(&self) -> Vec<f64> {
        let t = self.rounds as f64;
        self.sums.iter().map(|v| v / t).collect()
    }
}

/// Returns `mean` with one more round averaged in.
pub fn update_mean_payoff(mut mean: MeanPayoff, round_payoff: &SparsePayoff) -> MeanPayoff {
    mean.push(round_payoff);
    mean
}

/// Soft-threshold level that projects `v` onto the l1 ball of radius
/// `epsilon`; zero when `v` is already inside.
pub fn l1_threshold(v: &[f64], epsilon: f64) -> f64 {
    threshold_of_magnitudes(v.iter().map(|x| x.abs()), epsilon)
}

/// Same as [`l1_threshold`] for nonnegative magnitudes. The level is the
/// largest `(S_r - epsilon) / r` over the sums `S_r` of the `r` largest
/// magnitudes; entries at or below a lower bound for it are dropped until
/// none are left to drop.
fn threshold_of_magnitudes<I: Iterator<Item = f64> + Clone>(mags: I, epsilon: f64) -> f64 {
    let (norm, count) = mags.clone().fold((0.0, 0usize), |(s, n), m| (s + m, n + 1));
    if norm <= epsilon {
        return 0.0;
    }
    let mut level = (norm - epsilon) / count as f64;
    let mut kept: Vec<f64> = mags.filter(|&m| m > level).collect();
    let mut before = count;
    while kept.len() < before {
        before = kept.len();
        let sum: f64 = kept.iter().sum();
        level = (sum - epsilon) / kept.len() as f64;
        kept.retain(|&m| m > level);
    }
    level.max(0.0)
}

/// Euclidean projection onto `{y : ||y||_1 <= epsilon}`.
pub fn project_l1_ball(v: &[f64], epsilon: f64) -> Vec<f64> {
    let theta = l1_threshold(v, epsilon);
    if theta == 0.0 {
        return v.to_vec();
    }
    v.iter()
        .map(|&x| x.signum() * (x.abs() - theta).max(0.0))
        .collect()
}

/// The l1 ball `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSet {
    epsilon: f64,
}

impl TargetSet {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "target radius {epsilon} must be positive"
            )));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// l2 distance from `mean` to the ball.
    pub fn dist_l2(&self, mean: &MeanPayoff) -> f64 {
        let v = mean.flatten();
        let theta = l1_threshold(&v, self.epsilon);
        v.iter()
            .map(|x| x.abs().min(theta).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// l1 distance from `mean` to the ball.
    pub fn dist_l1(&self, mean: &MeanPayoff) -> f64 {
        (mean.l1_norm() - self.epsilon).max(0.0)
    }
}

/// Distribution over forecast indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    /// Uniform over `0..n`, kept implicit since `n` can be large.
    Uniform(usize),
    /// Explicit weights, sorted by forecast index, all positive.
    Weights(Vec<(usize, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedStrategy {
    pub support: Support,
    /// Worst-case scalarized payoff attained by this strategy.
    pub value: f64,
}

impl MixedStrategy {
    pub fn uniform(n: usize) -> Self {
        Self {
            support: Support::Uniform(n),
            value: 0.0,
        }
    }

    pub fn from_weights(mut weights: Vec<(usize, f64)>, value: f64) -> Self {
        weights.retain(|&(_, p)| p > 0.0);
        weights.sort_by_key(|&(i, _)| i);
        Self {
            support: Support::Weights(weights),
            value,
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.support, Support::Uniform(_))
    }

    pub fn support_len(&self) -> usize {
        match &self.support {
            Support::Uniform(n) => *n,
            Support::Weights(w) => w.len(),
        }
    }

    pub fn probability(&self, index: usize) -> f64 {
        match &self.support {
            Support::Uniform(n) => {
                if index < *n {
                    1.0 / *n as f64
                } else {
                    0.0
                }
            }
            Support::Weights(w) => w
                .binary_search_by_key(&index, |&(i, _)| i)
                .map(|pos| w[pos].1)
                .unwrap_or(0.0),
        }
    }

    /// (index, probability) pairs in increasing index order.
    pub fn iter(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match &self.support {
            Support::Uniform(n) => {
                let p = 1.0 / *n as f64;
                Box::new((0..*n).map(move |i| (i, p)))
            }
            Support::Weights(w) => Box::new(w.iter().copied()),
        }
    }

    /// Inverse-CDF sample for a uniform draw `u` in `[0, 1)`, scanning the
    /// support in increasing index order.
    pub fn sample(&self, u: f64) -> usize {
        match &self.support {
            Support::Uniform(n) => ((u * *n as f64).floor() as usize).min(n - 1),
            Support::Weights(w) => {
                let mut cumulative = 0.0;
                for &(i, p) in w {
                    cumulative += p;
                    if u < cumulative {
                        return i;
                    }
                }
                w.last().map(|&(i, _)| i).unwrap_or(0)
            }
        }
    }

    pub fn total_probability(&self) -> f64 {
        match &self.support {
            Support::Uniform(_) => 1.0,
            Support::Weights(w) => w.iter().map(|&(_, p)| p).sum(),
        }
    }
}

/// Sparse direction `u = m - d_U(m)` of the halfspace game, stored as
/// equal-width blocks in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Direction {
    keys: Vec<BlockKey>,
    values: Vec<f64>,
    width: usize,
}

impl Direction {
    /// Inserts or replaces a block. All blocks must have the same width.
    pub fn insert(&mut self, key: BlockKey, block: Vec<f64>) {
        if self.keys.is_empty() {
            self.width = block.len();
        }
        assert_eq!(
            block.len(),
            self.width,
            "direction blocks must share a width"
        );
        let w = self.width;
        match self.keys.binary_search(&key) {
            Ok(pos) => self.values[pos * w..(pos + 1) * w].copy_from_slice(&block),
            Err(pos) => {
                self.keys.insert(pos, key);
                self.values.splice(pos * w..pos * w, block);
            }
        }
    }

    pub fn get(&self, key: BlockKey) -> Option<&[f64]> {
        let w = self.width;
        self.keys
            .binary_search(&key)
            .ok()
            .map(|pos| &self.values[pos * w..(pos + 1) * w])
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockKey, &[f64])> + '_ {
        self.keys
            .iter()
            .copied()
            .zip(self.values.chunks(self.width.max(1)))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Chooses which unused forecast stands in for the zero rows of the
/// halfspace game. Every forecast outside the direction's support
/// scalarizes to zero, so the choice does not affect the certificate.
pub trait RepresentativeRule {
    /// A forecast index absent from the sorted slice `used`.
    fn pick(&mut self, grids: &GridSet, used: &[usize]) -> Result<usize>;
}

/// Lowest index outside the support.
#[derive(Debug, Clone, Copy, Default)]
pub struct LowestUnused;

impl RepresentativeRule for LowestUnused {
    fn pick(&mut self, _grids: &GridSet, used: &[usize]) -> Result<usize> {
        Ok(lowest_unused(used))
    }
}

/// Unused forecast closest to a target tuple of per-signal lattice points.
/// Candidates are ranked by the sum of per-signal lattice distances to the
/// target, ties broken by the distance at the current signal.
///
/// Searches resume where the previous search for the same target stopped,
/// so the rule must not be reused across grids.
#[derive(Debug, Clone, Default)]
pub struct NearestUnused {
    target: Vec<usize>,
    signal: usize,
    /// Ranked candidates and the resume position per (target, signal).
    searches: HashMap<(Vec<usize>, usize), (Vec<u32>, usize)>,
}

impl NearestUnused {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_target(&mut self, digits: Vec<usize>, signal: usize) {
        self.target = digits;
        self.signal = signal;
    }
}

fn ranked_candidates(grids: &GridSet, target: &[usize], signal: usize) -> Vec<u32> {
    let f = &grids.forecasts;
    let points = f.per_signal_points();
    let base = points.len();
    let dist: Vec<Vec<u32>> = target
        .iter()
        .map(|&t| {
            points
                .iter()
                .map(|p| l1_lattice_distance(p, &points[t]))
                .collect()
        })
        .collect();
    let mut order: Vec<u32> = (0..f.len() as u32).collect();
    order.sort_by_cached_key(|&i| {
        let mut rest = i as usize;
        let (mut cost, mut own) = (0, 0);
        for (j, d) in dist.iter().enumerate() {
            let dj = d[rest % base];
            rest /= base;
            cost += dj;
            if j == signal {
                own = dj;
            }
        }
        (cost, own, i)
    });
    order
}

impl RepresentativeRule for NearestUnused {
    fn pick(&mut self, grids: &GridSet, used: &[usize]) -> Result<usize> {
        let f = &grids.forecasts;
        let k = grids.signals.len();
        if self.target.len() != k || self.signal >= k {
            return Err(Error::InvalidParams(format!(
                "representative target has {} signals, grid has {k}",
                self.target.len()
            )));
        }
        let is_free = |i: usize| used.binary_search(&i).is_err();
        let base = f.index_of(&self.target)?;
        if is_free(base) {
            return Ok(base);
        }
        let (target, signal) = (&self.target, self.signal);
        let (order, cursor) = self
            .searches
            .entry((target.clone(), signal))
            .or_insert_with(|| (ranked_candidates(grids, target, signal), 0));
        while let Some(&i) = order.get(*cursor) {
            if is_free(i as usize) {
                return Ok(i as usize);
            }
            *cursor += 1;
        }
        Ok(lowest_unused(used))
    }
}

fn lowest_unused(used: &[usize]) -> usize {
    let mut candidate = 0;
    for &i in used {
        if i == candidate {
            candidate += 1;
        } else if i > candidate {
            break;
        }
    }
    candidate
}

fn l1_lattice_distance(a: &[u32], b: &[u32]) -> u32 {
    a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y)).sum()
}

/// Optimal basis of the previous halfspace game, keyed by forecast index,
/// used to start the next one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WarmBasis(Vec<WarmEntry>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WarmEntry {
    Forecast(usize),
    /// The stand-in for the forecasts outside the support.
    Unused,
    Slack(usize),
}

/// Finds `P` with `u . f(P, (a, c_j)) <= anchor + tol` for every pure move.
pub fn solve_halfspace_game(
    direction: &Direction,
    grids: &GridSet,
    anchor: f64,
    tol: f64,
) -> Result<MixedStrategy> {
    solve_halfspace_game_with(
        direction,
        grids,
        anchor,
        tol,
        &mut LowestUnused,
        &mut WarmBasis::default(),
    )
}

pub fn solve_halfspace_game_with(
    direction: &Direction,
    grids: &GridSet,
    anchor: f64,
    tol: f64,
    representative: &mut dyn RepresentativeRule,
    warm: &mut WarmBasis,
) -> Result<MixedStrategy> {
    let n = grids.forecasts.len();
    if direction.is_zero() {
        return Ok(MixedStrategy::uniform(n));
    }

    // Columns are pure moves `(bin, signal)`, flattened as `signal * M + bin`;
    // one row per forecast with a block in the support.
    let m = grids.returns.len();
    let width = m * grids.signals.len();
    let mut owners: Vec<usize> = Vec::new();
    for ((i, _), _) in direction.iter() {
        if owners.last() != Some(&i) {
            owners.push(i);
        }
    }

    // All forecasts outside the support share the zero row; one stands in.
    let mut zero_row = None;
    if owners.len() < n {
        let rep = representative.pick(grids, &owners)?;
        let pos = owners.partition_point(|&i| i < rep);
        owners.insert(pos, rep);
        zero_row = Some(pos);
    }

    let mut flat = vec![0.0; owners.len() * width];
    let mut row = 0;
    for ((i, j), u) in direction.iter() {
        while owners[row] != i {
            row += 1;
        }
        let s = grids.forecasts.row(i, j)?;
        let u_dot_s: f64 = u.iter().zip(s).map(|(a, b)| a * b).sum();
        let base = row * width + j * m;
        for (bin, &ub) in u.iter().enumerate() {
            flat[base + bin] = ub - u_dot_s;
        }
    }

    let start: Vec<Basic> = warm
        .0
        .iter()
        .filter_map(|&b| match b {
            WarmEntry::Forecast(i) => owners.binary_search(&i).ok().map(Basic::Row),
            WarmEntry::Unused => zero_row.map(Basic::Row),
            WarmEntry::Slack(c) => Some(Basic::Slack(c)),
        })
        .collect();
    let (solution, basis) = solve_min_max_from(&flat, width, &start)?;
    warm.0 = basis
        .into_iter()
        .map(|b| match b {
            Basic::Row(r) if Some(r) == zero_row => WarmEntry::Unused,
            Basic::Row(r) => WarmEntry::Forecast(owners[r]),
            Basic::Slack(c) => WarmEntry::Slack(c),
        })
        .collect();
    let GameSolution { strategy, value } = solution;
    if value > anchor + tol {
        return Err(Error::Infeasible { value, anchor, tol });
    }
    let weights = owners.into_iter().zip(strategy).collect();
    Ok(MixedStrategy::from_weights(weights, value))
}

/// Everything the forecaster computed for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct BlackwellStep {
    pub strategy: MixedStrategy,
    /// `m - d_U(m)`; empty when the mean is treated as inside the target.
    pub direction: Direction,
    /// `u . d_U(m)`.
    pub anchor: f64,
    pub dist_l2: f64,
}

pub fn blackwell_step(
    mean: &MeanPayoff,
    target: &TargetSet,
    grids: &GridSet,
    tol: f64,
) -> Result<BlackwellStep> {
    blackwell_step_with(
        mean,
        target,
        grids,
        tol,
        &mut LowestUnused,
        &mut WarmBasis::default(),
    )
}

pub fn blackwell_step_with(
    mean: &MeanPayoff,
    target: &TargetSet,
    grids: &GridSet,
    tol: f64,
    representative: &mut dyn RepresentativeRule,
    warm: &mut WarmBasis,
) -> Result<BlackwellStep> {
    let n = grids.forecasts.len();
    let inside = BlackwellStep {
        strategy: MixedStrategy::uniform(n),
        direction: Direction::default(),
        anchor: 0.0,
        dist_l2: 0.0,
    };
    if mean.rounds() == 0 {
        return Ok(inside);
    }
    let t = mean.rounds() as f64;
    let theta =
        threshold_of_magnitudes(mean.sums.iter().map(|v| v.abs()), target.epsilon() * t) / t;

    let mut direction = Direction {
        keys: Vec::with_capacity(mean.keys.len()),
        values: Vec::with_capacity(mean.sums.len()),
        width: mean.width,
    };
    let mut anchor = 0.0;
    let mut norm2 = 0.0;
    for (key, sums) in mean.sums() {
        let start = direction.values.len();
        let mut nonzero = false;
        for &v in sums {
            let x = v / t;
            let residue = x.signum() * x.abs().min(theta);
            anchor += residue * (x - residue);
            norm2 += residue * residue;
            nonzero |= residue != 0.0;
            direction.values.push(residue);
        }
        if nonzero {
            direction.keys.push(key);
        } else {
            direction.values.truncate(start);
        }
    }
    let dist_l2 = norm2.sqrt();
    if dist_l2 <= tol {
        return Ok(BlackwellStep { dist_l2, ..inside });
    }
    let strategy = solve_halfspace_game_with(&direction, grids, anchor, tol, representative, warm)?;
    Ok(BlackwellStep {
        strategy,
        direction,
        anchor,
        dist_l2,
    })
}

/// Mixed forecast for the next round given the current mean payoff.
pub fn blackwell_strategy(
    mean: &MeanPayoff,
    target: &TargetSet,
    grids: &GridSet,
    tol: f64,
) -> Result<MixedStrategy> {
    blackwell_step(mean, target, grids, tol).map(|s| s.strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{build_grids, GridStageParams, MarketSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// K=1, M=2 with D=4: forecasts (0,1), (.25,.75), ..., (1,0).
    fn grids_k1m2(eps: f64) -> GridSet {
        let spec = MarketSpec::new(1, 0.5, 2.0, 0.0, 1.0).unwrap();
        build_grids(
            &spec,
            &GridStageParams {
                signal_points: 1,
                mu: 0.75,
                epsilon: eps,
                max_forecast_points: 1000,
            },
        )
        .unwrap()
    }

    #[test]
    fn payoff_examples() {
        let g = grids_k1m2(0.5); // D = 2: (0,1), (.5,.5), (1,0)
        assert_eq!(g.forecasts.len(), 3);
        let p = payoff_vector(1, 0, 1, &g).unwrap();
        assert_eq!(p.values, vec![-0.5, 0.5]);
        // point mass on the outcome gives zero
        let p = payoff_vector(2, 0, 0, &g).unwrap();
        assert_eq!(p.values, vec![0.0, 0.0]);
        assert!(payoff_vector(3, 0, 0, &g).is_err());
        assert!(payoff_vector(0, 0, 2, &g).is_err());
    }

    #[test]
    fn payoff_identity_on_random_inputs() {
        let spec = MarketSpec::new(2, 0.5, 2.0, 0.0, 1.0).unwrap();
        let g = build_grids(
            &spec,
            &GridStageParams {
                signal_points: 2,
                mu: 1.1,
                epsilon: 0.75,
                max_forecast_points: 100_000,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let i = rng.gen_range(0..g.forecasts.len());
            let j = rng.gen_range(0..2);
            let bin = rng.gen_range(0..g.returns.len());
            let p = payoff_vector(i, j, bin, &g).unwrap();
            let s = g.forecasts.row(i, j).unwrap();
            assert!(p.values.iter().sum::<f64>().abs() < 1e-12);
            let l1: f64 = p.values.iter().map(|v| v.abs()).sum();
            assert!((l1 - 2.0 * (1.0 - s[bin])).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_l1_ball(&[0.3, -0.2], 1.0), vec![0.3, -0.2]);
        let y = project_l1_ball(&[0.8, -0.6], 1.0);
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] + 0.4).abs() < 1e-15);
        assert_eq!(project_l1_ball(&[1.0, 0.0, 0.0], 0.5), vec![0.5, 0.0, 0.0]);
        assert!((l1_threshold(&[0.8, -0.6], 1.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn incremental_mean() {
        let g = grids_k1m2(0.5);
        let p = payoff_vector(1, 0, 1, &g).unwrap();
        let mean = update_mean_payoff(MeanPayoff::new(), &p);
        assert_eq!(mean.block((1, 0)).unwrap(), p.values);
        let zero = payoff_vector(2, 0, 0, &g).unwrap();
        let mean = update_mean_payoff(mean, &zero);
        assert_eq!(mean.block((1, 0)).unwrap(), vec![-0.25, 0.25]);
        assert_eq!(mean.rounds(), 2);
    }

    #[test]
    fn incremental_matches_batch() {
        let g = grids_k1m2(0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let payoffs: Vec<SparsePayoff> = (0..1000)
            .map(|_| payoff_vector(rng.gen_range(0..5), 0, rng.gen_range(0..2), &g).unwrap())
            .collect();
        let mean = payoffs.iter().fold(MeanPayoff::new(), update_mean_payoff);
        for i in 0..5 {
            let mut batch = [0.0; 2];
            for p in payoffs.iter().filter(|p| p.forecast == i) {
                batch[0] += p.values[0] / 1000.0;
                batch[1] += p.values[1] / 1000.0;
            }
            let got = mean.block((i, 0)).unwrap_or(vec![0.0, 0.0]);
            assert!((got[0] - batch[0]).abs() < 1e-9 && (got[1] - batch[1]).abs() < 1e-9);
        }
        assert!(mean.block_count() <= 5);
        assert!(mean.stored_entries() <= 1000 * 2);
    }

    #[test]
    fn empty_history_is_uniform() {
        let g = grids_k1m2(0.25);
        let s = blackwell_strategy(
            &MeanPayoff::new(),
            &TargetSet::new(0.25).unwrap(),
            &g,
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(s.support, Support::Uniform(5));
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn boundary_counts_as_inside() {
        let g = grids_k1m2(0.25);
        // forecast (.5,.5), outcome bin 1: block (-0.5, 0.5), l1 norm 1
        let mean = update_mean_payoff(MeanPayoff::new(), &payoff_vector(2, 0, 1, &g).unwrap());
        let s = blackwell_strategy(&mean, &TargetSet::new(1.0).unwrap(), &g, DEFAULT_TOL).unwrap();
        assert!(s.is_uniform());
    }

    #[test]
    fn one_round_history() {
        let g = grids_k1m2(0.25);
        let mean = update_mean_payoff(MeanPayoff::new(), &payoff_vector(2, 0, 1, &g).unwrap());
        let target = TargetSet::new(0.25).unwrap();
        let step = blackwell_step(&mean, &target, &g, DEFAULT_TOL).unwrap();
        // soft threshold of (-0.5, 0.5) to l1 radius 0.25: theta = 0.375
        let u = step.direction.get((2, 0)).unwrap();
        assert!((u[0] + 0.375).abs() < 1e-15 && (u[1] - 0.375).abs() < 1e-15);
        // projection (-0.125, 0.125), anchor = 2 * 0.375 * 0.125
        assert!((step.anchor - 0.09375).abs() < 1e-15);
        // exhaustive check over the two pure moves
        for bin in 0..2 {
            let mut scalar = 0.0;
            for (i, p) in step.strategy.iter() {
                if i == 2 {
                    let s = g.forecasts.row(i, 0).unwrap();
                    let f: Vec<f64> = (0..2)
                        .map(|m| if m == bin { 1.0 } else { 0.0 } - s[m])
                        .collect();
                    scalar += p * (u[0] * f[0] + u[1] * f[1]);
                }
            }
            assert!(scalar <= step.anchor + DEFAULT_TOL);
        }
    }

    #[test]
    fn hand_enumerated_halfspace_game() {
        // D = 2 grid: index 0 = (0,1), 1 = (.5,.5), 2 = (1,0).
        let g = grids_k1m2(0.5);
        let mut direction = Direction::default();
        direction.insert((0, 0), vec![1.0, -1.0]);
        // Row 0: u.(delta[a] - (0,1)) = (1 - (-1), -1 - (-1)) = (2, 0).
        // Rows 1, 2 are zero rows; the solver must avoid row 0.
        let s = solve_halfspace_game(&direction, &g, 0.0, DEFAULT_TOL).unwrap();
        assert!(s.value <= 0.0);
        assert_eq!(s.probability(0), 0.0);
        assert_eq!(s.probability(1), 1.0);
    }

    #[test]
    fn sampling_inverse_cdf() {
        let s = MixedStrategy::from_weights(vec![(0, 0.2), (1, 0.3), (2, 0.5)], 0.0);
        assert_eq!(s.sample(0.6), 2);
        assert_eq!(s.sample(0.0), 0);
        assert_eq!(s.sample(0.2), 1);
        assert_eq!(s.sample(0.9999999), 2);
        assert_eq!(MixedStrategy::uniform(4).sample(0.5), 2);
    }
}
