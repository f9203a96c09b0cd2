//! Dense solver for finite two-player zero-sum games.
//!
//! The row player minimizes the expected payoff, the column player maximizes
//! it. The game is shifted to strictly positive entries and solved as the
//! standard-form linear program
//!
//! ```text
//! maximize 1'x  subject to  A'x <= 1,  x >= 0
//! ```
//!
//! whose optimum gives `value = 1 / 1'x` and the row strategy `x / 1'x`.
//! Entries are first scaled into `[-1, 1]` and identical rows are merged.
//! The revised simplex method re-solves the basis
//! system from the original data at every step, so rounding errors do not
//! accumulate; it prices with the largest reduced cost and switches to
//! Bland's rule after a run of degenerate pivots.

use std::collections::hash_map::Entry;
use std::hash::Hasher;

use rustc_hash::{FxHashMap, FxHasher};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const OPTIMALITY_TOL: f64 = 1e-12;
const DEGENERATE_RUN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct GameSolution {
    /// Row player's mixed strategy.
    pub strategy: Vec<f64>,
    /// Worst-case expected payoff of `strategy`, i.e. `max_c sum_i p_i g(i, c)`.
    pub value: f64,
}

/// Solves `min_p max_c sum_i p_i * payoff[i][c]` over the simplex.
pub fn solve_min_max(payoff: &[Vec<f64>]) -> Result<GameSolution> {
    let cols = payoff.first().map_or(0, Vec::len);
    if payoff.iter().any(|r| r.len() != cols) {
        return Err(Error::LinearProgram(
            "game matrix is empty or ragged".into(),
        ));
    }
    let flat: Vec<f64> = payoff.iter().flatten().copied().collect();
    solve_min_max_dense(&flat, cols)
}

/// [`solve_min_max`] for a row-major matrix with `cols` columns.
pub fn solve_min_max_dense(payoff: &[f64], cols: usize) -> Result<GameSolution> {
    solve_min_max_from(payoff, cols, &[]).map(|(solution, _)| solution)
}

/// Basic variable of the linear program: a row of the game or the slack of
/// a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basic {
    Row(usize),
    Slack(usize),
}

/// [`solve_min_max_dense`] starting from the basis `start` when it is
/// usable. Also returns the optimal basis, so that a sequence of similar
/// games can be solved with few pivots each.
pub fn solve_min_max_from(
    payoff: &[f64],
    cols: usize,
    start: &[Basic],
) -> Result<(GameSolution, Vec<Basic>)> {
    if cols == 0 || payoff.is_empty() || payoff.len() % cols != 0 {
        return Err(Error::LinearProgram(
            "game matrix is empty or ragged".into(),
        ));
    }
    let rows = payoff.len() / cols;
    if payoff.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearProgram(
            "game matrix has non-finite entries".into(),
        ));
    }
    let scale = payoff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        let solution = GameSolution {
            strategy: vec![1.0 / rows as f64; rows],
            value: 0.0,
        };
        return Ok((solution, Vec::new()));
    }

    // Identical rows are interchangeable; the first copy stands for all of
    // them.
    let row = |i: usize| &payoff[i * cols..(i + 1) * cols];
    let same = |a: usize, b: usize| row(a) == row(b);
    let mut first: FxHashMap<u64, usize> =
        FxHashMap::with_capacity_and_hasher(rows, Default::default());
    let mut distinct = Vec::new();
    let mut class = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut h = FxHasher::default();
        for &v in row(i) {
            h.write_u64((v + 0.0).to_bits());
        }
        let next = distinct.len();
        let c = match first.entry(h.finish()) {
            Entry::Occupied(e) if same(distinct[*e.get()], i) => *e.get(),
            Entry::Occupied(_) => next,
            Entry::Vacant(e) => *e.insert(next),
        };
        if c == next {
            distinct.push(i);
        }
        class.push(c);
    }
    // Shifted to entries in [1, 3], which keeps the program bounded.
    let min_entry = payoff.iter().fold(f64::INFINITY, |m, &v| m.min(v)) / scale;
    let shift = 1.0 - min_entry;
    let mut shifted = Vec::with_capacity(distinct.len() * cols);
    for &i in &distinct {
        shifted.extend(
            payoff[i * cols..(i + 1) * cols]
                .iter()
                .map(|v| v / scale + shift),
        );
    }
    let n = distinct.len();
    let start: Vec<usize> = start
        .iter()
        .filter_map(|b| match *b {
            Basic::Row(i) if i < rows => Some(class[i]),
            Basic::Slack(c) if c < cols => Some(n + c),
            _ => None,
        })
        .collect();
    let (x, basis) = simplex(&shifted, cols, &start)?;

    let mut strategy = vec![0.0; rows];
    for (&i, p) in distinct.iter().zip(x) {
        strategy[i] = p;
    }
    let value = worst_case_dense(payoff, cols, &strategy);
    let basis = basis
        .into_iter()
        .map(|j| {
            if j < n {
                Basic::Row(distinct[j])
            } else {
                Basic::Slack(j - n)
            }
        })
        .collect();
    Ok((GameSolution { strategy, value }, basis))
}

/// `max_c sum_i p_i * payoff[i][c]`.
pub fn worst_case(payoff: &[Vec<f64>], strategy: &[f64]) -> f64 {
    let cols = payoff.first().map_or(0, Vec::len);
    let flat: Vec<f64> = payoff.iter().flatten().copied().collect();
    worst_case_dense(&flat, cols, strategy)
}

/// [`worst_case`] for a row-major matrix with `cols` columns.
pub fn worst_case_dense(payoff: &[f64], cols: usize, strategy: &[f64]) -> f64 {
    let mut totals = vec![0.0; cols];
    for (row, &p) in payoff.chunks(cols.max(1)).zip(strategy) {
        if p != 0.0 {
            for (t, v) in totals.iter_mut().zip(row) {
                *t += p * v;
            }
        }
    }
    totals.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `B z = rhs` by Gaussian elimination with partial pivoting, where
/// `columns[c]` is column `c` of `B`.
fn solve_columns(columns: &[&[f64]], rhs: &[f64], transpose: bool) -> Result<Vec<f64>> {
    let n = rhs.len();
    let w = n + 1;
    let mut a = vec![0.0; n * w];
    for r in 0..n {
        for c in 0..n {
            a[r * w + c] = if transpose {
                columns[r][c]
            } else {
                columns[c][r]
            };
        }
        a[r * w + n] = rhs[r];
    }
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i * w + c].abs().total_cmp(&a[j * w + c].abs()))
            .expect("nonempty range");
        if a[p * w + c].abs() < 1e-14 {
            return Err(Error::LinearProgram("singular basis".into()));
        }
        if p != c {
            for k in 0..w {
                a.swap(c * w + k, p * w + k);
            }
        }
        for r in c + 1..n {
            let f = a[r * w + c] / a[c * w + c];
            if f != 0.0 {
                for k in c..w {
                    a[r * w + k] -= f * a[c * w + k];
                }
            }
        }
    }
    let mut z = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = a[r * w + n];
        for k in r + 1..n {
            s -= a[r * w + k] * z[k];
        }
        z[r] = s / a[r * w + r];
    }
    Ok(z)
}

/// Optimal row strategy of a row-major game with entries in `[1, 3]`, and
/// the final basis. A feasible nonsingular `start` is completed with slacks
/// and used as the initial basis; otherwise the slack basis is.
fn simplex(shifted: &[f64], cols: usize, start: &[usize]) -> Result<(Vec<f64>, Vec<usize>)> {
    let rows = shifted.len() / cols;
    // Variables 0..rows are x_i with column shifted[i]; rows.. are the
    // slacks with unit columns.
    let units: Vec<f64> = (0..cols * cols)
        .map(|i| if i / cols == i % cols { 1.0 } else { 0.0 })
        .collect();
    let column = |j: usize| -> &[f64] {
        if j < rows {
            &shifted[j * cols..(j + 1) * cols]
        } else {
            &units[(j - rows) * cols..(j - rows + 1) * cols]
        }
    };
    let cost = |j: usize| if j < rows { 1.0 } else { 0.0 };
    let ones = vec![1.0; cols];
    let mut reduced = vec![0.0; rows];

    let mut in_basis = vec![false; rows + cols];
    let mut basis: Vec<usize> = Vec::with_capacity(cols);
    for &j in start.iter().chain(&(rows..rows + cols).collect::<Vec<_>>()) {
        if basis.len() < cols && !in_basis[j] {
            in_basis[j] = true;
            basis.push(j);
        }
    }
    let b_cols: Vec<&[f64]> = basis.iter().map(|&j| column(j)).collect();
    let usable =
        solve_columns(&b_cols, &ones, false).is_ok_and(|x| x.iter().all(|&v| v >= -PIVOT_TOL));
    if !usable {
        in_basis.fill(false);
        basis = (rows..rows + cols).collect();
        for &j in &basis {
            in_basis[j] = true;
        }
    }
    let mut degenerate = 0;
    let max_pivots = 50 * (rows + cols) + 1000;
    for _ in 0..max_pivots {
        let b_cols: Vec<&[f64]> = basis.iter().map(|&j| column(j)).collect();
        let x_b = solve_columns(&b_cols, &ones, false)?;
        let c_b: Vec<f64> = basis.iter().map(|&j| cost(j)).collect();
        let y = solve_columns(&b_cols, &c_b, true)?;

        // Reduced costs: 1 - column . y for rows, -y_c for slacks.
        let bland = degenerate >= DEGENERATE_RUN;
        let mut entering: Option<(usize, f64)> = None;
        let mut consider = |j: usize, r: f64| {
            if r > OPTIMALITY_TOL && entering.map_or(true, |(_, best)| r > best) {
                entering = Some((j, r));
                return bland;
            }
            false
        };
        let mut stopped = false;
        for (r, col) in reduced.iter_mut().zip(shifted.chunks_exact(cols)) {
            *r = 1.0 - col.iter().zip(&y).map(|(v, yc)| v * yc).sum::<f64>();
        }
        for (j, &r) in reduced.iter().enumerate() {
            if !in_basis[j] && consider(j, r) {
                stopped = true;
                break;
            }
        }
        if !stopped {
            for (c, &yc) in y.iter().enumerate() {
                if !in_basis[rows + c] && consider(rows + c, -yc) {
                    break;
                }
            }
        }
        let Some((e, _)) = entering else {
            let mut x = vec![0.0; rows];
            for (&j, &v) in basis.iter().zip(&x_b) {
                if j < rows {
                    x[j] = v.max(0.0);
                }
            }
            let total: f64 = x.iter().sum();
            if !(total > 0.0) {
                return Err(Error::LinearProgram(
                    "degenerate optimum with empty support".into(),
                ));
            }
            return Ok((x.iter().map(|v| v / total).collect(), basis));
        };

        let d = solve_columns(&b_cols, column(e), false)?;
        let mut leaving: Option<(usize, f64)> = None;
        for r in 0..cols {
            if d[r] <= PIVOT_TOL {
                continue;
            }
            let ratio = x_b[r].max(0.0) / d[r];
            leaving = match leaving {
                None => Some((r, ratio)),
                Some((best, best_ratio)) => {
                    let tie = (ratio - best_ratio).abs() <= 1e-12;
                    let better = if tie {
                        if bland {
                            basis[r] < basis[best]
                        } else {
                            d[r] > d[best]
                        }
                    } else {
                        ratio < best_ratio
                    };
                    if better {
                        Some((r, ratio))
                    } else {
                        Some((best, best_ratio))
                    }
                }
            };
        }
        // Positive entries keep the program bounded.
        let Some((r, ratio)) = leaving else {
            return Err(Error::LinearProgram(
                "unbounded direction in a bounded program".into(),
            ));
        };
        degenerate = if ratio <= 1e-12 { degenerate + 1 } else { 0 };
        in_basis[basis[r]] = false;
        in_basis[e] = true;
        basis[r] = e;
    }
    Err(Error::LinearProgram(format!(
        "no convergence after {max_pivots} pivots"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_pennies() {
        let g = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let s = solve_min_max(&g).unwrap();
        assert!(s.value.abs() < 1e-12);
        assert!((s.strategy[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dominated_row() {
        // Row 1 is better for the minimizer in every column.
        let g = vec![vec![3.0, 2.0], vec![1.0, 0.0]];
        let s = solve_min_max(&g).unwrap();
        assert!((s.value - 1.0).abs() < 1e-12);
        assert!((s.strategy[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rock_paper_scissors_variant() {
        // Value 1/12 for the maximizing row player; the transpose puts the
        // minimizing column player on the rows.
        let g = vec![
            vec![0.0, 2.0, -1.0],
            vec![-1.0, 0.0, 1.0],
            vec![1.0, -1.0, 0.0],
        ];
        let t: Vec<Vec<f64>> = (0..3).map(|c| (0..3).map(|r| g[r][c]).collect()).collect();
        let s = solve_min_max(&t).unwrap();
        assert!((s.value - 1.0 / 12.0).abs() < 1e-12);
        let expected = [1.0 / 3.0, 0.25, 5.0 / 12.0];
        for (p, e) in s.strategy.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12, "{:?}", s.strategy);
        }
    }

    #[test]
    fn all_zero_game() {
        let g = vec![vec![0.0; 3]; 4];
        let s = solve_min_max(&g).unwrap();
        assert_eq!(s.value, 0.0);
        assert!((s.strategy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ragged_rejected() {
        assert!(solve_min_max(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(solve_min_max(&[]).is_err());
    }
}
