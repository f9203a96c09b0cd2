//! Staged grid refinement.
//!
//! Stage `n >= 1` nominally spans `[256 * 2^(n-1), 256 * 2^n)`; the warm-up
//! rounds before 256 belong to the first stage, so stage starts are
//! `1, 512, 1024, ...`. Precision levels come from
//!
//! ```text
//! mu_hat = (ln T_n)^(-1/(k+2)),  K_n = ceil(1/mu_hat),  mu_n = (lambda2 - lambda1) mu_hat
//! eps_n  = T_n^(-1/(K_n M_n + 1))
//! ```
//!
//! evaluated at the nominal stage end `T_n`, then clamped so that no stage is
//! coarser than its predecessor and the forecast grid stays within the cap.

use serde::{Deserialize, Serialize};

use crate::discretization::{
    forecast_count, lattice_denominator, GridStageParams, MarketSpec, ReturnGrid,
};
use crate::error::{Error, Result};

pub const FIRST_STAGE_START: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    /// First round (1-based) played on this stage's grids.
    pub start: usize,
    pub params: GridStageParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Stage>", into = "Vec<Stage>")]
pub struct RefinementSchedule {
    stages: Vec<Stage>,
}

impl TryFrom<Vec<Stage>> for RefinementSchedule {
    type Error = Error;

    fn try_from(stages: Vec<Stage>) -> Result<Self> {
        Self::new(stages)
    }
}

impl From<RefinementSchedule> for Vec<Stage> {
    fn from(s: RefinementSchedule) -> Self {
        s.stages
    }
}

impl RefinementSchedule {
    /// Starts must begin at round 1 and increase; `epsilon` and `mu` must not
    /// increase from one stage to the next.
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        let Some(first) = stages.first() else {
            return Err(Error::InvalidParams("schedule has no stages".into()));
        };
        if first.start != 1 {
            return Err(Error::InvalidParams(format!(
                "first stage starts at round {}, not 1",
                first.start
            )));
        }
        for s in &stages {
            s.params.validate()?;
        }
        for w in stages.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.start <= a.start {
                return Err(Error::InvalidParams(format!(
                    "stage starts {} and {} are not increasing",
                    a.start, b.start
                )));
            }
            if b.params.epsilon > a.params.epsilon || b.params.mu > a.params.mu {
                return Err(Error::InvalidParams(format!(
                    "stage starting at {} is coarser than its predecessor",
                    b.start
                )));
            }
        }
        Ok(Self { stages })
    }

    pub fn fixed(params: GridStageParams) -> Result<Self> {
        Self::new(vec![Stage { start: 1, params }])
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Stage index for 1-based round `t`.
    pub fn stage_of(&self, t: usize) -> usize {
        self.stages
            .partition_point(|s| s.start <= t)
            .saturating_sub(1)
    }

    /// Checks every stage's forecast grid against its own cap.
    pub fn check_caps(&self, spec: &MarketSpec) -> Result<()> {
        for s in &self.stages {
            let per_axis = ReturnGrid::per_axis_for(spec, s.params.mu);
            let m = return_points(per_axis, spec.k).ok_or_else(|| {
                Error::InvalidParams(format!(
                    "return grid with {per_axis} points per axis is too large"
                ))
            })?;
            let d = lattice_denominator(m, s.params.epsilon);
            let n = forecast_count(s.params.signal_points, m, d);
            if n > s.params.max_forecast_points as u128 {
                return Err(Error::CapExceeded {
                    n,
                    cap: s.params.max_forecast_points,
                    signal_points: s.params.signal_points,
                    return_points: m,
                    denominator: d,
                });
            }
        }
        Ok(())
    }
}

fn return_points(per_axis: usize, k: usize) -> Option<usize> {
    per_axis.checked_pow(k as u32).filter(|&m| m <= 1 << 32)
}

/// Stage start rounds covering `1..=t_total`.
pub fn stage_starts(t_total: usize) -> Vec<usize> {
    let mut starts = vec![1];
    let mut s = 2 * FIRST_STAGE_START;
    while s <= t_total {
        starts.push(s);
        s *= 2;
    }
    starts
}

#[derive(Debug, Clone, Copy)]
struct Level {
    signal_points: usize,
    per_axis: usize,
    mu: f64,
    epsilon: f64,
}

fn choose_level(spec: &MarketSpec, t_eval: usize, prev: Level, cap: usize) -> Level {
    let k = spec.k as f64;
    let span = spec.lambda2 - spec.lambda1;
    let t = t_eval as f64;
    let mu_hat = t.ln().powf(-1.0 / (k + 2.0));
    let k_target = ((1.0 / mu_hat).ceil() as usize)
        .max(1)
        .max(prev.signal_points);
    let mu_target = (span * mu_hat).min(prev.mu);
    let p_target = ReturnGrid::per_axis_for(spec, mu_target).max(prev.per_axis);

    for p in (prev.per_axis..=p_target).rev() {
        let Some(m) = return_points(p, spec.k) else {
            continue;
        };
        let mu = if p == p_target {
            mu_target
        } else {
            (span * k.sqrt() / (2.0 * (p - 1) as f64)).min(prev.mu)
        };
        for signal_points in (prev.signal_points..=k_target).rev() {
            let eps_target = t
                .powf(-1.0 / ((signal_points * m) as f64 + 1.0))
                .min(prev.epsilon);
            let d_min = lattice_denominator(m, prev.epsilon);
            let d_target = lattice_denominator(m, eps_target).max(d_min);
            // N grows with D, so the first fit from the top is the finest.
            for d in (d_min..=d_target).rev() {
                if forecast_count(signal_points, m, d) <= cap as u128 {
                    let epsilon = if d == d_target {
                        eps_target
                    } else {
                        ((m - 1) as f64 / d as f64).min(prev.epsilon)
                    };
                    return Level {
                        signal_points,
                        per_axis: p,
                        mu,
                        epsilon,
                    };
                }
            }
        }
    }
    prev
}

/// Doubling schedule for `t_total` rounds with forecast grids of at most
/// `cap` points. Stages that would not refine their predecessor are merged
/// into it, so a cap that binds from the start yields a single stage.
pub fn refinement_schedule_default(
    t_total: usize,
    spec: &MarketSpec,
    cap: usize,
) -> Result<RefinementSchedule> {
    if t_total == 0 {
        return Err(Error::InvalidParams(
            "schedule needs at least one round".into(),
        ));
    }
    spec.validate()?;
    let coarse_m = 1usize << spec.k.min(63);
    if spec.k >= 63 || forecast_count(1, coarse_m, 1) > cap as u128 {
        return Err(Error::CapExceeded {
            n: forecast_count(1, coarse_m, 1),
            cap,
            signal_points: 1,
            return_points: coarse_m,
            denominator: 1,
        });
    }
    let mut prev = Level {
        signal_points: 1,
        per_axis: 2,
        mu: (spec.lambda2 - spec.lambda1) * (spec.k as f64).sqrt() / 2.0,
        epsilon: (coarse_m - 1) as f64,
    };

    let mut stages: Vec<Stage> = Vec::new();
    for (n, &start) in stage_starts(t_total).iter().enumerate() {
        let nominal_end = (FIRST_STAGE_START << (n + 1)) - 1;
        let level = choose_level(spec, nominal_end, prev, cap);
        let unchanged = level.signal_points == prev.signal_points
            && level.per_axis == prev.per_axis
            && level.epsilon == prev.epsilon
            && level.mu == prev.mu;
        if !stages.is_empty() && unchanged {
            continue;
        }
        stages.push(Stage {
            start,
            params: GridStageParams {
                signal_points: level.signal_points,
                mu: level.mu,
                epsilon: level.epsilon,
                max_forecast_points: cap,
            },
        });
        prev = level;
    }
    RefinementSchedule::new(stages)
}
