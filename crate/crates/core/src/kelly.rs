//! Log-optimal (Kelly) portfolios over discrete return distributions, and the
//! classical comparators: best constant rebalanced portfolio in hindsight,
//! Cover's universal portfolio, and the best per-signal-bin constant portfolio.
//!
//! Reported growth is in bits (base-2 logarithms). Optimization works with
//! natural logs; the base only rescales the objective.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_KELLY_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100_000;

/// Nonnegative weights over assets summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Portfolio(Vec<f64>);

impl Portfolio {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParams(
                "portfolio needs at least one asset".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "portfolio weights {weights:?} must be nonnegative"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParams(format!(
                "portfolio weights sum to {sum}, not 1"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// All wealth in asset `j`.
    pub fn single(k: usize, j: usize) -> Self {
        let mut w = vec![0.0; k];
        w[j] = 1.0;
        Self(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Period growth factor `b . x`.
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    pub fn log2_growth(&self, x: &[f64]) -> f64 {
        self.dot(x).log2()
    }
}

/// Finitely many return vectors with probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteReturnDist {
    atoms: Vec<(Vec<f64>, f64)>,
    k: usize,
}

impl DiscreteReturnDist {
    /// Probabilities must sum to one within 1e-9; they are renormalized.
    /// Zero-probability atoms are dropped.
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let k = atoms.first().map(|(a, _)| a.len()).unwrap_or(0);
        if k == 0 {
            return Err(Error::InvalidParams(
                "distribution needs at least one nonempty atom".into(),
            ));
        }
        for (a, p) in &atoms {
            if a.len() != k {
                return Err(Error::InvalidParams(
                    "atoms have different dimensions".into(),
                ));
            }
            if a.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "atom {a:?} must be positive and finite"
                )));
            }
            if !(*p >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "probability {p} must be nonnegative"
                )));
            }
        }
        let total: f64 = atoms.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let atoms = atoms
            .into_iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(a, p)| (a, p / total))
            .collect();
        Ok(Self { atoms, k })
    }

    /// Equal-weight distribution over `returns`, merging repeated vectors.
    pub fn empirical(returns: &[Vec<f64>]) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let mut sorted: Vec<&Vec<f64>> = returns.iter().collect();
        sorted.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let weight = 1.0 / returns.len() as f64;
        let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for x in sorted {
            match atoms.last() {
                Some((last, _)) if last == x => *counts.last_mut().unwrap() += 1,
                _ => {
                    atoms.push((x.clone(), 0.0));
                    counts.push(1);
                }
            }
        }
        for ((_, p), c) in atoms.iter_mut().zip(counts) {
            *p = c as f64 * weight;
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[(Vec<f64>, f64)] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Every atom has all coordinates equal, so `b . a` does not depend on `b`.
    fn is_flat(&self) -> bool {
        self.atoms.iter().all(|(a, _)| {
            let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo <= 1e-15 * hi
        })
    }
}

/// `sum_i s_i log2(b . a_i)`.
pub fn growth_rate(b: &Portfolio, dist: &DiscreteReturnDist) -> f64 {
    dist.atoms.iter().map(|(a, p)| p * b.dot(a).log2()).sum()
}

fn log_objective(b: &[f64], dist: &DiscreteReturnDist) -> f64 {
    dist.atoms.iter().map(|(a, p)| p * dot(b, a).ln()).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `g_j = sum_i s_i a_i(j) / (b . a_i)`, the natural-log gradient.
pub fn kelly_gradient(b: &[f64], dist: &DiscreteReturnDist) -> Vec<f64> {
    let mut g = vec![0.0; dist.k];
    for (a, p) in &dist.atoms {
        let w = dot(b, a);
        for (gj, aj) in g.iter_mut().zip(a) {
            *gj += p * aj / w;
        }
    }
    g
}

/// Violation of the log-optimality conditions `max_j g_j <= 1` and
/// `g_j >= 1` wherever `b_j > tol`.
pub fn kkt_residual(b: &Portfolio, dist: &DiscreteReturnDist, tol: f64) -> f64 {
    kkt_residual_raw(b.weights(), &kelly_gradient(b.weights(), dist), tol)
}

fn kkt_residual_raw(b: &[f64], g: &[f64], tol: f64) -> f64 {
    let mut residual: f64 = 0.0;
    for (&bj, &gj) in b.iter().zip(g) {
        residual = residual.max(gj - 1.0);
        if bj > tol {
            residual = residual.max(1.0 - gj);
        }
    }
    residual
}

/// Solves `argmax_b sum_i s_i log(b . a_i)` over the simplex with an
/// active-set Newton method. Stops when the KKT residual is at most `tol`.
pub fn log_optimal_portfolio(dist: &DiscreteReturnDist, tol: f64) -> Result<Portfolio> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let k = dist.k;
    if k == 1 {
        return Ok(Portfolio(vec![1.0]));
    }
    if dist.is_flat() {
        return Ok(Portfolio::uniform(k));
    }

    let mut b = vec![1.0 / k as f64; k];
    let mut free = vec![true; k];
    let mut residual = f64::INFINITY;

    for _ in 0..MAX_ITERATIONS {
        let g = kelly_gradient(&b, dist);
        residual = kkt_residual_raw(&b, &g, tol);
        if residual <= tol {
            return Ok(finish(b));
        }

        // Release the bound variable with the largest positive violation.
        if let Some((j, _)) = g
            .iter()
            .enumerate()
            .filter(|&(j, &gj)| !free[j] && gj > 1.0 + 0.5 * tol)
            .max_by(|a, b| a.1.total_cmp(b.1))
        {
            free[j] = true;
        }

        let f: Vec<usize> = (0..k).filter(|&j| free[j]).collect();
        let direction = newton_direction(&b, &g, &f, dist);
        let slope: f64 = f.iter().zip(&direction).map(|(&j, d)| g[j] * d).sum();

        let mut alpha_max = f64::INFINITY;
        let mut blocking = None;
        if slope > 1e-18 && direction.iter().all(|d| d.is_finite()) {
            // Largest step keeping every weight nonnegative.
            for (&j, &d) in f.iter().zip(&direction) {
                if d < 0.0 {
                    let limit = b[j] / -d;
                    if limit < alpha_max {
                        alpha_max = limit;
                        blocking = Some(j);
                    }
                }
            }
        } else {
            alpha_max = 0.0;
        }
        if !(alpha_max > 0.0) {
            // Newton stalled or points out of the simplex; shift weight from
            // the worst held asset to the best one instead.
            pairwise_step(&mut b, &g, dist);
            for j in 0..k {
                free[j] = b[j] > 0.0;
            }
            continue;
        }
        let mut alpha = alpha_max.min(1.0);
        let base = log_objective(&b, dist);
        loop {
            let trial = step(&b, &f, &direction, alpha);
            if log_objective(&trial, dist) >= base + 1e-4 * alpha * slope || alpha < 1e-20 {
                break;
            }
            alpha *= 0.5;
        }
        b = step(&b, &f, &direction, alpha);
        if alpha == alpha_max {
            if let Some(j) = blocking {
                b[j] = 0.0;
            }
        }
        for j in 0..k {
            if b[j] <= 0.0 {
                b[j] = 0.0;
                free[j] = false;
            }
        }
        let s: f64 = b.iter().sum();
        for v in b.iter_mut() {
            *v /= s;
        }
    }
    Err(Error::NonConvergence {
        residual,
        iterations: MAX_ITERATIONS,
    })
}

/// Exact line search along `e_best - e_worst`, where `best` has the largest
/// gradient entry and `worst` the smallest among held assets.
fn pairwise_step(b: &mut [f64], g: &[f64], dist: &DiscreteReturnDist) {
    let best = (0..b.len())
        .max_by(|&i, &j| g[i].total_cmp(&g[j]))
        .unwrap_or(0);
    let Some(worst) = (0..b.len())
        .filter(|&j| b[j] > 0.0)
        .min_by(|&i, &j| g[i].total_cmp(&g[j]))
    else {
        return;
    };
    if best == worst {
        return;
    }
    let slope = |alpha: f64| -> f64 {
        dist.atoms
            .iter()
            .map(|(x, p)| {
                let delta = x[best] - x[worst];
                p * delta / (dot(b, x) + alpha * delta)
            })
            .sum()
    };
    let cap = b[worst];
    let alpha = if slope(cap) >= 0.0 {
        cap
    } else {
        let (mut lo, mut hi) = (0.0, cap);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    b[best] += alpha;
    b[worst] = if alpha == cap { 0.0 } else { b[worst] - alpha };
}

fn step(b: &[f64], free: &[usize], direction: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = b.to_vec();
    for (&j, d) in free.iter().zip(direction) {
        out[j] = (out[j] + alpha * d).max(0.0);
    }
    out
}

fn finish(mut b: Vec<f64>) -> Portfolio {
    for v in b.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let s: f64 = b.iter().sum();
    Portfolio(b.into_iter().map(|v| v / s).collect())
}

/// Equality-constrained Newton direction on the free coordinates:
/// maximize `g'd - d'Ad/2` subject to `sum d = 0`, with `A` the negated
/// Hessian plus a small ridge for singular faces.
fn newton_direction(b: &[f64], g: &[f64], free: &[usize], dist: &DiscreteReturnDist) -> Vec<f64> {
    let n = free.len();
    let mut a = vec![vec![0.0; n]; n];
    for (atom, p) in &dist.atoms {
        let w = dot(b, atom);
        let scale = p / (w * w);
        for (r, &jr) in free.iter().enumerate() {
            for (c, &jc) in free.iter().enumerate() {
                a[r][c] += scale * atom[jr] * atom[jc];
            }
        }
    }
    let trace: f64 = (0..n).map(|i| a[i][i]).sum();
    let ridge = 1e-12 * trace.max(1e-300);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += ridge;
    }
    let gf: Vec<f64> = free.iter().map(|&j| g[j]).collect();
    let ones = vec![1.0; n];
    let (Some(y), Some(z)) = (solve_spd(&a, &gf), solve_spd(&a, &ones)) else {
        return vec![f64::NAN; n];
    };
    let lambda = y.iter().sum::<f64>() / z.iter().sum::<f64>();
    y.iter().zip(&z).map(|(yi, zi)| yi - lambda * zi).collect()
}

/// Cholesky solve for a small symmetric positive definite system.
fn solve_spd(a: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = rhs[i];
        for p in 0..i {
            s -= l[i][p] * y[p];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in i + 1..n {
            s -= l[p][i] * x[p];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

/// Best constant rebalanced portfolio in hindsight.
pub fn bcrp(returns: &[Vec<f64>], tol: f64) -> Result<Portfolio> {
    log_optimal_portfolio(&DiscreteReturnDist::empirical(returns)?, tol)
}

/// Log2 wealth of a constant rebalanced portfolio over `returns`.
pub fn crp_log2_wealth(b: &Portfolio, returns: &[Vec<f64>]) -> f64 {
    returns.iter().map(|x| b.log2_growth(x)).sum()
}

/// Cover's universal portfolio for two assets, maintained online.
///
/// The Dirichlet(1/2, 1/2) prior on `b1` becomes uniform in `theta` under
/// `b1 = sin^2(theta)`, which removes the endpoint singularity; the midpoint
/// rule in `theta` is then exact for low-degree trigonometric integrands.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverUniversal {
    nodes: Vec<f64>,
    log_wealth: Vec<f64>,
    rounds: usize,
}

impl CoverUniversal {
    pub fn new(quad_points: usize) -> Result<Self> {
        if quad_points == 0 {
            return Err(Error::InvalidParams(
                "quadrature needs at least one node".into(),
            ));
        }
        let h = FRAC_PI_2 / quad_points as f64;
        let nodes = (0..quad_points)
            .map(|q| ((q as f64 + 0.5) * h).sin().powi(2))
            .collect();
        Ok(Self {
            nodes,
            log_wealth: vec![0.0; quad_points],
            rounds: 0,
        })
    }

    pub fn weight(&self) -> Result<Portfolio> {
        if self.rounds == 0 {
            // prior mean
            return Ok(Portfolio::uniform(2));
        }
        let top = self
            .log_wealth
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::QuadratureUnstable(format!(
                "log-wealth maximum is {top}"
            )));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (&b1, &lw) in self.nodes.iter().zip(&self.log_wealth) {
            let w = (lw - top).exp();
            num += w * b1;
            den += w;
        }
        let b1 = (num / den).clamp(0.0, 1.0);
        if !b1.is_finite() {
            return Err(Error::QuadratureUnstable(
                "mixture weight is not finite".into(),
            ));
        }
        Ok(Portfolio(vec![b1, 1.0 - b1]))
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != 2 {
            return Err(Error::Unsupported(format!(
                "universal portfolio quadrature supports 2 assets, got {}",
                x.len()
            )));
        }
        for (&b1, lw) in self.nodes.iter().zip(self.log_wealth.iter_mut()) {
            *lw += (b1 * x[0] + (1.0 - b1) * x[1]).ln();
        }
        self.rounds += 1;
        Ok(())
    }
}

/// `int b prod_t (b . x_t) dD(b) / int prod_t (b . x_t) dD(b)` for k = 2.
pub fn cover_universal_weight(
    history: &[Vec<f64>],
    k: usize,
    quad_points: usize,
) -> Result<Portfolio> {
    if k != 2 {
        return Err(Error::Unsupported(format!(
            "universal portfolio quadrature supports 2 assets, got {k}"
        )));
    }
    let mut cover = CoverUniversal::new(quad_points)?;
    for x in history {
        cover.update(x)?;
    }
    cover.weight()
}

/// Per signal bin, the best constant portfolio over the rounds in that bin;
/// bins that never occur get the uniform portfolio.
pub fn best_piecewise_stationary(
    history: &[(usize, Vec<f64>)],
    signal_bins: usize,
    tol: f64,
) -> Result<Vec<Portfolio>> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let k = history[0].1.len();
    let mut per_bin: Vec<Vec<Vec<f64>>> = vec![Vec::new(); signal_bins];
    for (j, x) in history {
        per_bin
            .get_mut(*j)
            .ok_or(Error::IndexOutOfRange {
                index: *j,
                len: signal_bins,
            })?
            .push(x.clone());
    }
    per_bin
        .iter()
        .map(|xs| {
            if xs.is_empty() {
                Ok(Portfolio::uniform(k))
            } else {
                bcrp(xs, tol)
            }
        })
        .collect()
}
