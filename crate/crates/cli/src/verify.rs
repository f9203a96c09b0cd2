//! The `verify` subcommand: recomputes every reported number from
//! trajectory.csv and the config echoed in report.json.

use std::collections::BTreeMap;
use std::path::Path;

use calibrated_kelly::approachability::{payoff_vector, MeanPayoff, TargetSet};
use calibrated_kelly::discretization::{build_grids, GridSet};
use calibrated_kelly::engine::Log2Wealth;
use calibrated_kelly::forecaster::{calibration_score, CalibrationLedger};
use serde::Serialize;

use crate::error::CliError;
use crate::report::{
    aggregate, read_report, seed_summary, trajectory_header, Aggregates, CalibrationSample,
    DistanceSample, Report, SeedSummary, REPORT_FILE, STRATEGIES, TRAJECTORY_FILE,
};

pub const VERIFY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySummary {
    pub ok: bool,
    pub seeds: usize,
    pub rows: usize,
    pub checks: usize,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
struct Row {
    seed: u64,
    t: usize,
    stage: usize,
    signal_bin: usize,
    returns: Vec<f64>,
    return_bin: usize,
    forecast: usize,
    /// Weights per strategy, in `STRATEGIES` order.
    weights: Vec<Option<Vec<f64>>>,
    increments: Vec<Option<f64>>,
}

struct Checker {
    checks: usize,
    max_err: f64,
}

impl Checker {
    fn close(
        &mut self,
        what: impl FnOnce() -> String,
        reported: f64,
        fresh: f64,
    ) -> Result<(), CliError> {
        self.checks += 1;
        let err = (reported - fresh).abs();
        if !(err <= VERIFY_TOL) {
            return Err(CliError::Mismatch(format!(
                "{}: reported {reported}, recomputed {fresh}",
                what()
            )));
        }
        self.max_err = self.max_err.max(err);
        Ok(())
    }

    fn close_opt(
        &mut self,
        what: impl Fn() -> String,
        reported: Option<f64>,
        fresh: Option<f64>,
    ) -> Result<(), CliError> {
        match (reported, fresh) {
            (Some(a), Some(b)) => self.close(what, a, b),
            (None, None) => Ok(()),
            _ => Err(CliError::Mismatch(format!("{}: presence differs", what()))),
        }
    }

    fn wealth(&mut self, what: &str, a: &Log2Wealth, b: &Log2Wealth) -> Result<(), CliError> {
        self.close(|| format!("{what}.investor"), a.investor, b.investor)?;
        self.close(|| format!("{what}.bcrp"), a.bcrp, b.bcrp)?;
        self.close(|| format!("{what}.piecewise"), a.piecewise, b.piecewise)?;
        self.close(|| format!("{what}.stationary"), a.stationary, b.stationary)?;
        self.close_opt(|| format!("{what}.cover"), a.cover, b.cover)
    }
}

fn read_rows(path: &Path, k: usize) -> Result<Vec<Row>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Config {
        message: format!("cannot read trajectory: {e}"),
        path: Some(path.to_path_buf()),
    })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Mismatch(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != trajectory_header(k) {
        return Err(CliError::Mismatch(format!(
            "{} header does not match {k} assets",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Mismatch(e.to_string()))?;
        let bad = |c: usize| {
            CliError::Mismatch(format!("trajectory row {}, column {}", i + 1, header[c]))
        };
        let int = |c: usize| rec[c].parse::<u64>().map_err(|_| bad(c));
        let num = |c: usize| rec[c].parse::<f64>().map_err(|_| bad(c));
        let opt = |c: usize| -> Result<Option<f64>, CliError> {
            if rec[c].is_empty() {
                Ok(None)
            } else {
                num(c).map(Some)
            }
        };
        let returns = (0..k).map(|a| num(5 + a)).collect::<Result<Vec<_>, _>>()?;
        let mut col = 5 + k + 3;
        let mut weights = Vec::new();
        for _ in STRATEGIES {
            let w = (0..k)
                .map(|a| opt(col + a))
                .collect::<Result<Option<Vec<_>>, _>>()?;
            weights.push(w);
            col += k;
        }
        let increments = (0..STRATEGIES.len())
            .map(|s| opt(col + s))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(Row {
            seed: int(0)?,
            t: int(1)? as usize,
            stage: int(2)? as usize,
            signal_bin: int(4)? as usize,
            returns,
            return_bin: int(5 + k)? as usize,
            forecast: int(5 + k + 1)? as usize,
            weights,
            increments,
        });
    }
    Ok(rows)
}

/// Calibration and distance samples replayed from the rows of one seed.
fn replay_samples(
    rows: &[&Row],
    report: &Report,
    sample_ts: &BTreeMap<usize, usize>,
) -> Result<(Vec<CalibrationSample>, Vec<DistanceSample>), CliError> {
    let cfg = &report.config;
    let schedule = cfg
        .schedule
        .as_ref()
        .ok_or_else(|| CliError::Mismatch("report config has no schedule".into()))?;
    let mut cal = Vec::new();
    let mut dist = Vec::new();
    let mut current: Option<(usize, GridSet, TargetSet, CalibrationLedger, MeanPayoff)> = None;
    for r in rows {
        if current.as_ref().map(|c| c.0) != Some(r.stage) {
            let stage = schedule.stages().get(r.stage).ok_or_else(|| {
                CliError::Mismatch(format!("round {}: unknown stage {}", r.t, r.stage))
            })?;
            let grids = build_grids(&cfg.spec, &stage.params)?;
            let target = TargetSet::new(stage.params.epsilon)?;
            current = Some((
                r.stage,
                grids,
                target,
                CalibrationLedger::new(),
                MeanPayoff::new(),
            ));
        }
        let (_, grids, target, ledger, mean) = current.as_mut().expect("set above");
        ledger.record(r.forecast, r.return_bin, r.signal_bin);
        mean.push(&payoff_vector(
            r.forecast,
            r.signal_bin,
            r.return_bin,
            grids,
        )?);
        if sample_ts.contains_key(&r.t) {
            cal.push(CalibrationSample {
                t: r.t,
                stage: r.stage,
                score: calibration_score(ledger, grids)?,
            });
            dist.push(DistanceSample {
                t: r.t,
                stage: r.stage,
                dist_l2: target.dist_l2(mean),
                dist_l1: target.dist_l1(mean),
            });
        }
    }
    Ok((cal, dist))
}

fn check_seed(
    c: &mut Checker,
    reported: &SeedSummary,
    fresh: &SeedSummary,
) -> Result<(), CliError> {
    let s = reported.seed;
    if reported.rounds != fresh.rounds {
        return Err(CliError::Mismatch(format!(
            "seed {s}: {} rounds reported, {} in trajectory",
            reported.rounds, fresh.rounds
        )));
    }
    c.wealth(
        &format!("seed {s} final_log2_wealth"),
        &reported.final_log2_wealth,
        &fresh.final_log2_wealth,
    )?;
    c.wealth(
        &format!("seed {s} growth_per_round"),
        &reported.growth_per_round,
        &fresh.growth_per_round,
    )?;
    c.close(
        || format!("seed {s} gap_per_round"),
        reported.gap_per_round,
        fresh.gap_per_round,
    )?;
    c.close(
        || format!("seed {s} gap_vs_piecewise"),
        reported.gap_vs_piecewise,
        fresh.gap_vs_piecewise,
    )?;
    c.close(
        || format!("seed {s} gap_vs_bcrp"),
        reported.gap_vs_bcrp,
        fresh.gap_vs_bcrp,
    )?;
    if reported.calibration_samples.len() != fresh.calibration_samples.len() {
        return Err(CliError::Mismatch(format!(
            "seed {s}: calibration sample count differs"
        )));
    }
    for (a, b) in reported
        .calibration_samples
        .iter()
        .zip(&fresh.calibration_samples)
    {
        c.close(
            || format!("seed {s} calibration score at t={}", a.t),
            a.score,
            b.score,
        )?;
    }
    for (a, b) in reported
        .approach_distance_samples
        .iter()
        .zip(&fresh.approach_distance_samples)
    {
        c.close(
            || format!("seed {s} dist_l2 at t={}", a.t),
            a.dist_l2,
            b.dist_l2,
        )?;
        c.close(
            || format!("seed {s} dist_l1 at t={}", a.t),
            a.dist_l1,
            b.dist_l1,
        )?;
    }
    Ok(())
}

fn check_aggregates(c: &mut Checker, a: &Aggregates, b: &Aggregates) -> Result<(), CliError> {
    if a.seeds != b.seeds {
        return Err(CliError::Mismatch("aggregates.seeds differs".into()));
    }
    c.wealth(
        "aggregates.mean_final_log2_wealth",
        &a.mean_final_log2_wealth,
        &b.mean_final_log2_wealth,
    )?;
    c.wealth(
        "aggregates.min_final_log2_wealth",
        &a.min_final_log2_wealth,
        &b.min_final_log2_wealth,
    )?;
    let pairs = [
        (
            "mean_gap_per_round",
            a.mean_gap_per_round,
            b.mean_gap_per_round,
        ),
        (
            "min_gap_per_round",
            a.min_gap_per_round,
            b.min_gap_per_round,
        ),
        (
            "mean_gap_vs_piecewise",
            a.mean_gap_vs_piecewise,
            b.mean_gap_vs_piecewise,
        ),
        (
            "min_gap_vs_piecewise",
            a.min_gap_vs_piecewise,
            b.min_gap_vs_piecewise,
        ),
        ("mean_gap_vs_bcrp", a.mean_gap_vs_bcrp, b.mean_gap_vs_bcrp),
        ("min_gap_vs_bcrp", a.min_gap_vs_bcrp, b.min_gap_vs_bcrp),
    ];
    for (name, x, y) in pairs {
        c.close(|| format!("aggregates.{name}"), x, y)?;
    }
    Ok(())
}

/// Checks report.json in `dir` against trajectory.csv to `VERIFY_TOL`.
pub fn verify_dir(dir: &Path) -> Result<VerifySummary, CliError> {
    let report = read_report(&dir.join(REPORT_FILE))?;
    let k = report.config.spec.k;
    let rows = read_rows(&dir.join(TRAJECTORY_FILE), k)?;
    let mut c = Checker {
        checks: 0,
        max_err: 0.0,
    };

    // Every stored increment against the stored weights and returns.
    for r in &rows {
        for (name, (w, inc)) in STRATEGIES.iter().zip(r.weights.iter().zip(&r.increments)) {
            match (w, inc) {
                (Some(w), Some(inc)) => {
                    let fresh = w
                        .iter()
                        .zip(&r.returns)
                        .map(|(b, x)| b * x)
                        .sum::<f64>()
                        .log2();
                    c.close(
                        || format!("seed {} round {} {name} increment", r.seed, r.t),
                        *inc,
                        fresh,
                    )?;
                }
                (None, None) => {}
                _ => {
                    return Err(CliError::Mismatch(format!(
                        "seed {} round {}: {name} has weights or an increment but not both",
                        r.seed, r.t
                    )))
                }
            }
        }
    }

    let mut fresh_seeds = Vec::new();
    for reported in &report.seeds {
        let mine: Vec<&Row> = rows.iter().filter(|r| r.seed == reported.seed).collect();
        for (i, r) in mine.iter().enumerate() {
            if r.t != i + 1 {
                return Err(CliError::Mismatch(format!(
                    "seed {}: row {} has t = {}",
                    reported.seed,
                    i + 1,
                    r.t
                )));
            }
        }
        let mut w = Log2Wealth {
            cover: mine.first().and_then(|r| r.increments[4]).map(|_| 0.0),
            ..Log2Wealth::default()
        };
        for r in &mine {
            let inc = |s: usize| r.increments[s].unwrap_or(0.0);
            w.investor += inc(0);
            w.stationary += inc(1);
            w.bcrp += inc(2);
            w.piecewise += inc(3);
            if let Some(c) = w.cover.as_mut() {
                *c += inc(4);
            }
        }
        let sample_ts: BTreeMap<usize, usize> = reported
            .calibration_samples
            .iter()
            .map(|s| (s.t, s.stage))
            .collect();
        let (cal, dist) = replay_samples(&mine, &report, &sample_ts)?;
        let fresh = seed_summary(reported.seed, mine.len(), w, cal, dist);
        check_seed(&mut c, reported, &fresh)?;
        fresh_seeds.push(fresh);
    }
    let counted: usize = fresh_seeds.iter().map(|s| s.rounds).sum();
    if counted != rows.len() {
        return Err(CliError::Mismatch(format!(
            "trajectory has {} rows, report covers {counted}",
            rows.len()
        )));
    }
    if fresh_seeds.is_empty() {
        return Err(CliError::Mismatch("report has no seeds".into()));
    }
    check_aggregates(&mut c, &report.aggregates, &aggregate(&fresh_seeds))?;

    Ok(VerifySummary {
        ok: true,
        seeds: fresh_seeds.len(),
        rows: rows.len(),
        checks: c.checks,
        max_abs_error: c.max_err,
    })
}
