//! Finite grids over signals, return vectors and conditional distributions.
//!
//! The three grids are built together for one refinement stage and are
//! immutable afterwards. Each grid certifies a mesh bound: every point of the
//! underlying continuous set is within `nu` (signals, absolute distance),
//! `mesh` (returns, l2 distance) or `epsilon` (conditional distributions,
//! l1 distance per condition) of some grid element.
//!
//! Quantization ties always resolve to the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when turning a real mesh target into an integer count, so that
/// `ceil` of an exactly representable ratio is not bumped by rounding noise.
const CEIL_SLACK: f64 = 1e-9;

/// Market-wide bounds: `k` assets with price relatives in `[lambda1, lambda2]`
/// and a side-information signal in `[signal_lo, signal_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub signal_lo: f64,
    pub signal_hi: f64,
}

impl MarketSpec {
    pub fn new(
        k: usize,
        lambda1: f64,
        lambda2: f64,
        signal_lo: f64,
        signal_hi: f64,
    ) -> Result<Self> {
        let spec = Self {
            k,
            lambda1,
            lambda2,
            signal_lo,
            signal_hi,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParams(
                "asset count k must be at least 1".into(),
            ));
        }
        if !(self.lambda1.is_finite() && self.lambda2.is_finite()) {
            return Err(Error::InvalidParams("return bounds must be finite".into()));
        }
        if self.lambda1 <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "lambda1 = {} must be positive",
                self.lambda1
            )));
        }
        if self.lambda1 >= self.lambda2 {
            return Err(Error::InvalidParams(format!(
                "lambda1 = {} must be below lambda2 = {}",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.signal_lo.is_finite() && self.signal_hi.is_finite())
            || self.signal_lo > self.signal_hi
        {
            return Err(Error::InvalidParams(format!(
                "signal interval [{}, {}] is empty",
                self.signal_lo, self.signal_hi
            )));
        }
        Ok(())
    }

    pub fn contains_return(&self, x: &[f64]) -> bool {
        x.len() == self.k && x.iter().all(|&v| v >= self.lambda1 && v <= self.lambda2)
    }

    pub fn contains_signal(&self, z: f64) -> bool {
        z >= self.signal_lo && z <= self.signal_hi
    }
}

/// Precision levels for one refinement stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridStageParams {
    /// Number of signal grid points (K).
    pub signal_points: usize,
    /// Return mesh in l2.
    pub mu: f64,
    /// Forecast mesh (per-condition l1), also the radius of the target ball.
    pub epsilon: f64,
    pub max_forecast_points: usize,
}

impl GridStageParams {
    pub fn validate(&self) -> Result<()> {
        if self.signal_points == 0 {
            return Err(Error::InvalidParams(
                "signal grid needs at least one point".into(),
            ));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "mu = {} must be positive",
                self.mu
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "epsilon = {} must be positive",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Uniform grid over the signal interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalGrid {
    points: Vec<f64>,
    nu: f64,
    lo: f64,
    hi: f64,
}

impl SignalGrid {
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParams(
                "signal grid needs at least one point".into(),
            ));
        }
        if count > 1 && lo == hi {
            return Err(Error::InvalidParams(
                "a degenerate signal interval admits only one grid point".into(),
            ));
        }
        let points = if count == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            let h = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        hi
                    } else {
                        lo + h * i as f64
                    }
                })
                .collect()
        };
        let nu = if count == 1 {
            0.5 * (hi - lo)
        } else {
            (hi - lo) / (2.0 * (count - 1) as f64)
        };
        Ok(Self { points, nu, lo, hi })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Certified mesh: every signal in the interval is within `nu` of a grid point.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn quantize(&self, z: f64) -> Result<usize> {
        if !(z >= self.lo && z <= self.hi) {
            return Err(Error::OutOfRange {
                value: z,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(nearest_sorted(&self.points, z))
    }
}

/// Index of the point nearest to `x` in an increasing sequence; ties go low.
fn nearest_sorted(points: &[f64], x: f64) -> usize {
    let above = points.partition_point(|&p| p < x);
    if above == 0 {
        return 0;
    }
    if above == points.len() {
        return points.len() - 1;
    }
    let below = above - 1;
    if x - points[below] <= points[above] - x {
        below
    } else {
        above
    }
}

/// Product grid over `[lambda1, lambda2]^k` with `per_axis` points per axis,
/// flattened in row-major order (first coordinate most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnGrid {
    k: usize,
    per_axis: usize,
    axis: Vec<f64>,
    points: Vec<Vec<f64>>,
    lambda1: f64,
    lambda2: f64,
}

impl ReturnGrid {
    /// Points per axis needed for an l2 mesh of `mu`.
    pub fn per_axis_for(spec: &MarketSpec, mu: f64) -> usize {
        let ratio = (spec.lambda2 - spec.lambda1) * (spec.k as f64).sqrt() / (2.0 * mu);
        let steps = (ratio - CEIL_SLACK).ceil().max(0.0) as usize;
        (steps + 1).max(2)
    }

    pub fn with_per_axis(spec: &MarketSpec, per_axis: usize) -> Result<Self> {
        if per_axis < 2 {
            return Err(Error::InvalidParams(
                "return grid needs at least two points per axis".into(),
            ));
        }
        let total = (per_axis as u128).checked_pow(spec.k as u32);
        let m = match total {
            Some(m) if m <= (1u128 << 32) => m as usize,
            _ => {
                return Err(Error::InvalidParams(format!(
                    "return grid with {per_axis}^{} points is too large",
                    spec.k
                )))
            }
        };
        let h = (spec.lambda2 - spec.lambda1) / (per_axis - 1) as f64;
        let axis: Vec<f64> = (0..per_axis)
            .map(|i| {
                if i + 1 == per_axis {
                    spec.lambda2
                } else {
                    spec.lambda1 + h * i as f64
                }
            })
            .collect();
        let mut points = Vec::with_capacity(m);
        for flat in 0..m {
            let mut rem = flat;
            let mut point = vec![0.0; spec.k];
            for c in (0..spec.k).rev() {
                point[c] = axis[rem % per_axis];
                rem /= per_axis;
            }
            points.push(point);
        }
        Ok(Self {
            k: spec.k,
            per_axis,
            axis,
            points,
            lambda1: spec.lambda1,
            lambda2: spec.lambda2,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Result<&[f64]> {
        self.points
            .get(index)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange {
                index,
                len: self.points.len(),
            })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Certified l2 mesh `h * sqrt(k) / 2`.
    pub fn mesh(&self) -> f64 {
        let h = (self.lambda2 - self.lambda1) / (self.per_axis - 1) as f64;
        h * (self.k as f64).sqrt() / 2.0
    }

    /// Nearest grid point in l2. On a product grid this is the per-axis nearest
    /// point, and per-axis low ties give the lowest flat index among ties.
    pub fn quantize(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.k {
            return Err(Error::InvalidParams(format!(
                "return vector has {} components, expected {}",
                x.len(),
                self.k
            )));
        }
        let mut flat = 0;
        for &v in x {
            if !(v >= self.lambda1 && v <= self.lambda2) {
                return Err(Error::OutOfRange {
                    value: v,
                    lo: self.lambda1,
                    hi: self.lambda2,
                });
            }
            flat = flat * self.per_axis + nearest_sorted(&self.axis, v);
        }
        Ok(flat)
    }
}

/// Grid of conditional distributions: one lattice probability vector with
/// denominator `D` per signal point. A flat index is the mixed-radix number
/// whose digit `j` (least significant first) selects the row for signal `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastGrid {
    denominator: usize,
    signal_points: usize,
    return_points: usize,
    numerators: Vec<Vec<u32>>,
    rows: Vec<Vec<f64>>,
    total: usize,
}

/// `C(n, r)` saturating at `u128::MAX`.
pub fn binomial(n: u64, r: u64) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Lattice denominator giving per-condition l1 rounding error at most `epsilon`.
pub fn lattice_denominator(return_points: usize, epsilon: f64) -> usize {
    let ratio = (return_points.saturating_sub(1)) as f64 / epsilon;
    ((ratio - CEIL_SLACK).ceil().max(1.0)) as usize
}

/// Forecast-grid cardinality `C(D+M-1, M-1)^K`, saturating.
pub fn forecast_count(signal_points: usize, return_points: usize, denominator: usize) -> u128 {
    let per_signal = binomial(
        (denominator + return_points - 1) as u64,
        (return_points - 1) as u64,
    );
    let mut n: u128 = 1;
    for _ in 0..signal_points {
        n = n.saturating_mul(per_signal);
    }
    n
}

impl ForecastGrid {
    pub fn new(
        signal_points: usize,
        return_points: usize,
        epsilon: f64,
        cap: usize,
    ) -> Result<Self> {
        if return_points < 2 {
            return Err(Error::InvalidParams(
                "forecast grid needs at least two return points".into(),
            ));
        }
        let denominator = lattice_denominator(return_points, epsilon);
        let n = forecast_count(signal_points, return_points, denominator);
        if n > cap as u128 {
            return Err(Error::CapExceeded {
                n,
                cap,
                signal_points,
                return_points,
                denominator,
            });
        }
        let numerators = compositions(denominator as u32, return_points);
        let rows = numerators
            .iter()
            .map(|c| c.iter().map(|&v| v as f64 / denominator as f64).collect())
            .collect();
        Ok(Self {
            denominator,
            signal_points,
            return_points,
            numerators,
            rows,
            total: n as usize,
        })
    }

    pub fn denominator(&self) -> usize {
        self.denominator
    }

    /// Total number of conditional forecasts (N).
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Number of lattice points on one M-simplex.
    pub fn per_signal_len(&self) -> usize {
        self.rows.len()
    }

    pub fn per_signal_points(&self) -> &[Vec<u32>] {
        &self.numerators
    }

    /// Probability vector of the per-signal lattice point `point`.
    pub fn point_row(&self, point: usize) -> &[f64] {
        &self.rows[point]
    }

    /// Per-signal lattice point used by forecast `index` under signal `signal`.
    pub fn digit(&self, index: usize, signal: usize) -> usize {
        let base = self.rows.len();
        let mut rem = index;
        for _ in 0..signal {
            rem /= base;
        }
        rem % base
    }

    pub fn digits(&self, index: usize) -> Vec<usize> {
        let base = self.rows.len();
        let mut rem = index;
        (0..self.signal_points)
            .map(|_| {
                let d = rem % base;
                rem /= base;
                d
            })
            .collect()
    }

    pub fn index_of(&self, digits: &[usize]) -> Result<usize> {
        if digits.len() != self.signal_points {
            return Err(Error::InvalidParams(format!(
                "expected {} digits, got {}",
                self.signal_points,
                digits.len()
            )));
        }
        let base = self.rows.len();
        let mut index = 0;
        for &d in digits.iter().rev() {
            if d >= base {
                return Err(Error::IndexOutOfRange {
                    index: d,
                    len: base,
                });
            }
            index = index * base + d;
        }
        Ok(index)
    }

    /// `s_index(. | c_signal)`.
    pub fn row(&self, index: usize, signal: usize) -> Result<&[f64]> {
        if index >= self.total {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.total,
            });
        }
        if signal >= self.signal_points {
            return Err(Error::IndexOutOfRange {
                index: signal,
                len: self.signal_points,
            });
        }
        Ok(&self.rows[self.digit(index, signal)])
    }

    pub fn forecast(&self, index: usize) -> Result<ConditionalForecast> {
        if index >= self.total {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.total,
            });
        }
        let rows = self
            .digits(index)
            .into_iter()
            .map(|d| self.rows[d].clone())
            .collect();
        Ok(ConditionalForecast {
            grid_index: index,
            rows,
        })
    }

    /// Lattice point nearest to a probability vector by largest-remainder
    /// rounding; per-condition l1 error is at most `M / (2D) <= epsilon`.
    pub fn quantize_row(&self, probs: &[f64]) -> Result<usize> {
        if probs.len() != self.return_points {
            return Err(Error::InvalidParams(format!(
                "distribution has {} entries, expected {}",
                probs.len(),
                self.return_points
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidParams(
                "probabilities must be nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        let d = self.denominator as f64;
        let mut counts: Vec<u32> = Vec::with_capacity(probs.len());
        let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(probs.len());
        for (i, &p) in probs.iter().enumerate() {
            let scaled = p / sum * d;
            let floor = scaled.floor();
            counts.push(floor as u32);
            remainders.push((scaled - floor, i));
        }
        let assigned: u32 = counts.iter().sum();
        let missing = (self.denominator as u32).saturating_sub(assigned) as usize;
        // Largest remainders first, lowest index on ties.
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in remainders.iter().take(missing) {
            counts[i] += 1;
        }
        Ok(composition_rank(&counts, self.denominator as u32))
    }

    /// Grid forecast within `epsilon` (per condition, l1) of the given
    /// conditional distribution, one row per signal point.
    pub fn quantize(&self, conditional: &[Vec<f64>]) -> Result<usize> {
        if conditional.len() != self.signal_points {
            return Err(Error::InvalidParams(format!(
                "expected {} conditional rows, got {}",
                self.signal_points,
                conditional.len()
            )));
        }
        let digits = conditional
            .iter()
            .map(|row| self.quantize_row(row))
            .collect::<Result<Vec<_>>>()?;
        self.index_of(&digits)
    }
}

/// All compositions of `total` into `parts` nonnegative parts, in
/// lexicographic order.
fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    fn rec(remaining: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if parts == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=remaining {
            prefix.push(first);
            rec(remaining - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(total, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

/// Position of a composition in the order produced by [`compositions`].
fn composition_rank(counts: &[u32], total: u32) -> usize {
    let mut rank: u128 = 0;
    let mut remaining = total as u64;
    let parts = counts.len();
    for (pos, &c) in counts.iter().enumerate().take(parts - 1) {
        let rest = (parts - pos - 1) as u64;
        for smaller in 0..c as u64 {
            // compositions of (remaining - smaller) into `rest` parts
            rank += binomial(remaining - smaller + rest - 1, rest - 1);
        }
        remaining -= c as u64;
    }
    rank as usize
}

/// One element of the forecast grid, expanded to its K rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalForecast {
    pub grid_index: usize,
    pub rows: Vec<Vec<f64>>,
}

/// Summary written into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct GridMeta {
    pub K: usize,
    pub M: usize,
    pub N: usize,
    pub D: usize,
    pub nu: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub per_axis: usize,
}

/// The three grids of one refinement stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSet {
    pub spec: MarketSpec,
    pub params: GridStageParams,
    pub signals: SignalGrid,
    pub returns: ReturnGrid,
    pub forecasts: ForecastGrid,
}

impl GridSet {
    pub fn meta(&self) -> GridMeta {
        GridMeta {
            K: self.signals.len(),
            M: self.returns.len(),
            N: self.forecasts.len(),
            D: self.forecasts.denominator(),
            nu: self.signals.nu(),
            mu: self.params.mu,
            epsilon: self.params.epsilon,
            per_axis: self.returns.per_axis(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.params.epsilon
    }
}

pub fn build_grids(spec: &MarketSpec, params: &GridStageParams) -> Result<GridSet> {
    spec.validate()?;
    params.validate()?;
    let signals = SignalGrid::uniform(spec.signal_lo, spec.signal_hi, params.signal_points)?;
    let returns = ReturnGrid::with_per_axis(spec, ReturnGrid::per_axis_for(spec, params.mu))?;
    let forecasts = ForecastGrid::new(
        params.signal_points,
        returns.len(),
        params.epsilon,
        params.max_forecast_points,
    )?;
    Ok(GridSet {
        spec: spec.clone(),
        params: params.clone(),
        signals,
        returns,
        forecasts,
    })
}
