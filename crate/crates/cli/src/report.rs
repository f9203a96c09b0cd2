//! report.json, trajectory.csv and the optional plot series.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use calibrated_kelly::engine::{Log2Wealth, StageRecord, Trajectory};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const SCHEMA_VERSION: &str = "1";
pub const REPORT_FILE: &str = "report.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const PLOT_WEALTH_FILE: &str = "plot_wealth.csv";
pub const PLOT_SAMPLES_FILE: &str = "plot_samples.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
#[serde(deny_unknown_fields)]
pub struct StageSummary {
    pub K: usize,
    pub M: usize,
    pub N: usize,
    pub D: usize,
    pub epsilon: f64,
    pub mu: f64,
    pub nu: f64,
    pub per_axis: usize,
    pub t_start: usize,
    pub t_end: usize,
}

impl From<&StageRecord> for StageSummary {
    fn from(s: &StageRecord) -> Self {
        let m = &s.meta;
        Self {
            K: m.K,
            M: m.M,
            N: m.N,
            D: m.D,
            epsilon: m.epsilon,
            mu: m.mu,
            nu: m.nu,
            per_axis: m.per_axis,
            t_start: s.t_start,
            t_end: s.t_end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSample {
    pub t: usize,
    pub stage: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSample {
    pub t: usize,
    pub stage: usize,
    pub dist_l2: f64,
    pub dist_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSummary {
    pub seed: u64,
    pub rounds: usize,
    pub final_log2_wealth: Log2Wealth,
    pub growth_per_round: Log2Wealth,
    /// `(log2 S_T - log2 S*_T) / T` against the stationary comparator.
    pub gap_per_round: f64,
    /// `(log2 S*_T - log2 S_T) / T` against the piecewise comparator.
    pub gap_vs_piecewise: f64,
    pub gap_vs_bcrp: f64,
    pub calibration_samples: Vec<CalibrationSample>,
    pub approach_distance_samples: Vec<DistanceSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregates {
    pub seeds: usize,
    pub mean_final_log2_wealth: Log2Wealth,
    pub min_final_log2_wealth: Log2Wealth,
    pub mean_gap_per_round: f64,
    pub min_gap_per_round: f64,
    pub mean_gap_vs_piecewise: f64,
    pub min_gap_vs_piecewise: f64,
    pub mean_gap_vs_bcrp: f64,
    pub min_gap_vs_bcrp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema_version: String,
    pub config: ExperimentConfig,
    pub stages: Vec<StageSummary>,
    pub seeds: Vec<SeedSummary>,
    pub aggregates: Aggregates,
}

fn per_round(w: &Log2Wealth, t: usize) -> Log2Wealth {
    let n = t.max(1) as f64;
    Log2Wealth {
        investor: w.investor / n,
        bcrp: w.bcrp / n,
        cover: w.cover.map(|c| c / n),
        piecewise: w.piecewise / n,
        stationary: w.stationary / n,
    }
}

/// Per-seed numbers derived from the final wealths.
pub fn seed_summary(
    seed: u64,
    rounds: usize,
    w: Log2Wealth,
    calibration_samples: Vec<CalibrationSample>,
    approach_distance_samples: Vec<DistanceSample>,
) -> SeedSummary {
    let n = rounds.max(1) as f64;
    SeedSummary {
        seed,
        rounds,
        final_log2_wealth: w,
        growth_per_round: per_round(&w, rounds),
        gap_per_round: (w.stationary - w.investor) / n,
        gap_vs_piecewise: (w.investor - w.piecewise) / n,
        gap_vs_bcrp: (w.investor - w.bcrp) / n,
        calibration_samples,
        approach_distance_samples,
    }
}

pub fn summarize(tr: &Trajectory) -> SeedSummary {
    seed_summary(
        tr.seed,
        tr.len(),
        tr.final_log2_wealth(),
        tr.samples
            .iter()
            .map(|s| CalibrationSample {
                t: s.t,
                stage: s.stage,
                score: s.calibration_score,
            })
            .collect(),
        tr.samples
            .iter()
            .map(|s| DistanceSample {
                t: s.t,
                stage: s.stage,
                dist_l2: s.dist_l2,
                dist_l1: s.dist_l1,
            })
            .collect(),
    )
}

fn fold(seeds: &[SeedSummary], f: impl Fn(&SeedSummary) -> f64) -> (f64, f64) {
    let sum: f64 = seeds.iter().map(&f).sum();
    let min = seeds.iter().map(&f).fold(f64::INFINITY, f64::min);
    (sum / seeds.len() as f64, min)
}

fn fold_opt(
    seeds: &[SeedSummary],
    f: impl Fn(&SeedSummary) -> Option<f64>,
) -> (Option<f64>, Option<f64>) {
    let vals: Option<Vec<f64>> = seeds.iter().map(f).collect();
    match vals {
        Some(v) if !v.is_empty() => {
            let sum: f64 = v.iter().sum();
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            (Some(sum / v.len() as f64), Some(min))
        }
        _ => (None, None),
    }
}

/// Mean and minimum over seeds, in seed order.
pub fn aggregate(seeds: &[SeedSummary]) -> Aggregates {
    let (mi, ni) = fold(seeds, |s| s.final_log2_wealth.investor);
    let (mb, nb) = fold(seeds, |s| s.final_log2_wealth.bcrp);
    let (mp, np) = fold(seeds, |s| s.final_log2_wealth.piecewise);
    let (ms, ns) = fold(seeds, |s| s.final_log2_wealth.stationary);
    let (mc, nc) = fold_opt(seeds, |s| s.final_log2_wealth.cover);
    let (mean_gap_per_round, min_gap_per_round) = fold(seeds, |s| s.gap_per_round);
    let (mean_gap_vs_piecewise, min_gap_vs_piecewise) = fold(seeds, |s| s.gap_vs_piecewise);
    let (mean_gap_vs_bcrp, min_gap_vs_bcrp) = fold(seeds, |s| s.gap_vs_bcrp);
    Aggregates {
        seeds: seeds.len(),
        mean_final_log2_wealth: Log2Wealth {
            investor: mi,
            bcrp: mb,
            cover: mc,
            piecewise: mp,
            stationary: ms,
        },
        min_final_log2_wealth: Log2Wealth {
            investor: ni,
            bcrp: nb,
            cover: nc,
            piecewise: np,
            stationary: ns,
        },
        mean_gap_per_round,
        min_gap_per_round,
        mean_gap_vs_piecewise,
        min_gap_vs_piecewise,
        mean_gap_vs_bcrp,
        min_gap_vs_bcrp,
    }
}

pub fn build_report(
    config: ExperimentConfig,
    trajectories: &[Trajectory],
) -> Result<Report, CliError> {
    let Some(first) = trajectories.first() else {
        return Err(CliError::Runtime("no trajectories to report".into()));
    };
    let seeds: Vec<SeedSummary> = trajectories.iter().map(summarize).collect();
    Ok(Report {
        schema_version: SCHEMA_VERSION.into(),
        config,
        stages: first.stages.iter().map(StageSummary::from).collect(),
        aggregates: aggregate(&seeds),
        seeds,
    })
}

pub fn write_report(report: &Report, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Runtime(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn read_report(path: &Path) -> Result<Report, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        message: format!("cannot read report: {e}"),
        path: Some(path.to_path_buf()),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config {
        message: format!("malformed report: {e}"),
        path: Some(path.to_path_buf()),
    })
}

/// Portfolio columns of trajectory.csv, in order.
pub const STRATEGIES: [&str; 5] = ["investor", "stationary", "bcrp", "piecewise", "cover"];

pub fn trajectory_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["seed", "t", "stage", "signal", "signal_bin"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=k).map(|i| format!("x{i}")));
    h.extend(["return_bin", "forecast_index", "piecewise_bin"].map(String::from));
    for s in STRATEGIES {
        h.extend((1..=k).map(|i| format!("{s}_w{i}")));
    }
    for s in STRATEGIES {
        h.push(format!("{s}_log2_inc"));
    }
    h
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

/// One row per round and seed. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_trajectory_csv(
    trajectories: &[Trajectory],
    k: usize,
    path: &Path,
) -> Result<(), CliError> {
    let mut out = create(path)?;
    let err = io_err(path);
    writeln!(out, "{}", trajectory_header(k).join(",")).map_err(&err)?;
    let mut line = String::new();
    for tr in trajectories {
        let bcrp = tr.bcrp.as_ref();
        for r in &tr.rounds {
            use std::fmt::Write as _;
            line.clear();
            let _ = write!(
                line,
                "{},{},{},{},{}",
                tr.seed, r.t, r.stage, r.signal, r.signal_index
            );
            for v in &r.returns {
                let _ = write!(line, ",{v}");
            }
            let _ = write!(
                line,
                ",{},{},{}",
                r.return_bin,
                r.draw.index(),
                r.piecewise_bin
            );
            let weights = [
                Some(&r.investor),
                Some(&r.stationary),
                bcrp,
                tr.piecewise_portfolio(r),
                r.cover.as_ref(),
            ];
            for b in weights {
                match b {
                    Some(b) => b.weights().iter().for_each(|w| {
                        let _ = write!(line, ",{w}");
                    }),
                    None => (0..k).for_each(|_| line.push(',')),
                }
            }
            let inc = &r.increments;
            let _ = write!(
                line,
                ",{},{},{},{},",
                inc.investor, inc.stationary, inc.bcrp, inc.piecewise
            );
            if let Some(c) = inc.cover {
                let _ = write!(line, "{c}");
            }
            writeln!(out, "{line}").map_err(&err)?;
        }
    }
    out.flush().map_err(&err)
}

/// Cumulative log2 wealth per round, and the sampled diagnostics, for
/// external plotting.
pub fn write_plot_data(trajectories: &[Trajectory], dir: &Path) -> Result<(), CliError> {
    let path = dir.join(PLOT_WEALTH_FILE);
    let err = io_err(&path);
    let mut out = create(&path)?;
    writeln!(out, "seed,t,investor,stationary,bcrp,piecewise,cover").map_err(&err)?;
    for tr in trajectories {
        let mut w = Log2Wealth::default();
        let mut cover = 0.0;
        for r in &tr.rounds {
            w.investor += r.increments.investor;
            w.stationary += r.increments.stationary;
            w.bcrp += r.increments.bcrp;
            w.piecewise += r.increments.piecewise;
            let c = r.increments.cover.map(|c| {
                cover += c;
                cover.to_string()
            });
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                tr.seed,
                r.t,
                w.investor,
                w.stationary,
                w.bcrp,
                w.piecewise,
                c.unwrap_or_default()
            )
            .map_err(&err)?;
        }
    }
    out.flush().map_err(&err)?;

    let path = dir.join(PLOT_SAMPLES_FILE);
    let err = io_err(&path);
    let mut out = create(&path)?;
    writeln!(out, "seed,t,stage,calibration_score,dist_l2,dist_l1").map_err(&err)?;
    for tr in trajectories {
        for s in &tr.samples {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                tr.seed, s.t, s.stage, s.calibration_score, s.dist_l2, s.dist_l1
            )
            .map_err(&err)?;
        }
    }
    out.flush().map_err(&err)
}
