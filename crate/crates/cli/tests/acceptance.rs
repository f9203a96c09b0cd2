//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use calibrated_kelly::approachability::{project_l1_ball, MixedStrategy};
use calibrated_kelly::discretization::{build_grids, GridSet, GridStageParams, MarketSpec};
use calibrated_kelly::engine::market::{
    Atom, DiscontinuousAdversary, IidMarket, Regime, RegimeMarket, Switching,
};
use calibrated_kelly::engine::{run_episode, EpisodeConfig, RefinementSchedule};
use calibrated_kelly::forecaster::Forecaster;
use calibrated_kelly::kelly::{
    cover_universal_weight, kkt_residual, log_optimal_portfolio, DiscreteReturnDist,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn atom(returns: Vec<f64>, probability: f64) -> Atom {
    Atom {
        returns,
        probability,
    }
}

fn fixed(signal_points: usize, mu: f64, epsilon: f64, cap: usize) -> GridStageParams {
    GridStageParams {
        signal_points,
        mu,
        epsilon,
        max_forecast_points: cap,
    }
}

// Criterion 1.

fn ln_growth(b1: f64, atoms: &[(Vec<f64>, f64)]) -> f64 {
    atoms
        .iter()
        .map(|(a, p)| p * (b1 * a[0] + (1.0 - b1) * a[1]).ln())
        .sum()
}

fn kelly_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_gap, mut worst_kkt) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let atoms: Vec<(Vec<f64>, f64)> = raw
            .iter()
            .map(|w| {
                (
                    vec![rng.gen_range(0.5..=2.0), rng.gen_range(0.5..=2.0)],
                    w / total,
                )
            })
            .collect();
        let dist = DiscreteReturnDist::new(atoms.clone()).expect("valid distribution");
        let b = log_optimal_portfolio(&dist, 1e-12).expect("solver converges");
        let brute = (0..=10_000)
            .map(|i| ln_growth(i as f64 * 1e-4, &atoms))
            .fold(f64::NEG_INFINITY, f64::max);
        worst_gap = worst_gap.max((ln_growth(b.weights()[0], &atoms) - brute).abs());
        worst_kkt = worst_kkt.max(kkt_residual(&b, &dist, 1e-9));
    }
    outcome(
        worst_gap <= 1e-6 && worst_kkt <= 1e-8,
        format!("200 instances, max |objective - grid search| {worst_gap:.2e}, max KKT residual {worst_kkt:.2e}"),
    )
}

// Criterion 2.

/// Soft threshold found by bisection on `sum max(|v| - theta, 0) = eps`.
fn projection_oracle(v: &[f64], eps: f64) -> Vec<f64> {
    let excess = |theta: f64| v.iter().map(|x| (x.abs() - theta).max(0.0)).sum::<f64>() - eps;
    if excess(0.0) <= 0.0 {
        return v.to_vec();
    }
    let (mut lo, mut hi) = (0.0, v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    v.iter()
        .map(|x| x.signum() * (x.abs() - theta).max(0.0))
        .collect()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn projection_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = Vec::new();
    let mut worst_oracle = 0.0f64;
    for i in 0..10_000 {
        let eps = [0.1, 1.0, 10.0][i % 3];
        let dim = rng.gen_range(1..=64);
        let scale = [0.01, 0.5, 5.0][rng.gen_range(0..3)];
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-scale..scale)).collect();
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-scale..scale)).collect();
        let p = project_l1_ball(&v, eps);
        let q = project_l1_ball(&w, eps);
        let again = project_l1_ball(&p, eps);
        let oracle = projection_oracle(&v, eps);
        let err = p
            .iter()
            .zip(&oracle)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_oracle = worst_oracle.max(err);
        if l1(&p) > eps * (1.0 + 1e-12) + 1e-12 {
            failures.push(format!("#{i} outside ball"));
        }
        if l2_dist(&p, &again) > 1e-12 {
            failures.push(format!("#{i} not idempotent"));
        }
        if l2_dist(&p, &q) > l2_dist(&v, &w) + 1e-12 {
            failures.push(format!("#{i} expansive"));
        }
        if err > 1e-9 {
            failures.push(format!("#{i} oracle error {err:.2e}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "10000 vectors, max oracle error {worst_oracle:.2e}, {} violations{}",
            failures.len(),
            failures
                .first()
                .map(|f| format!(" (first: {f})"))
                .unwrap_or_default()
        ),
    )
}

// Criteria 3 and 5 drive the forecaster directly.

fn one_asset_grids(epsilon: f64) -> GridSet {
    let spec = MarketSpec::new(1, 0.5, 2.0, 0.0, 1.0).unwrap();
    let grids = build_grids(&spec, &fixed(1, 0.75, epsilon, 1000)).unwrap();
    assert_eq!(grids.returns.len(), 2);
    grids
}

/// Largest `u . f(P, (b, c_j))` over every pure move, and `u . d_U(m)`, from
/// the forecaster's mean with an independently computed projection.
fn certificate(f: &Forecaster, strategy: &MixedStrategy) -> (f64, f64) {
    let grids = f.grids();
    let blocks: Vec<((usize, usize), Vec<f64>)> = f.mean().blocks().collect();
    let flat: Vec<f64> = blocks.iter().flat_map(|(_, b)| b.iter().copied()).collect();
    let proj = projection_oracle(&flat, f.target().epsilon());
    let u: Vec<f64> = flat.iter().zip(&proj).map(|(m, p)| m - p).collect();
    let anchor: f64 = u.iter().zip(&proj).map(|(a, b)| a * b).sum();
    let m = grids.returns.len();
    let dir = |key: (usize, usize)| -> Option<&[f64]> {
        let pos = blocks.iter().position(|(k, _)| *k == key)?;
        Some(&u[pos * m..(pos + 1) * m])
    };
    let mut worst = f64::NEG_INFINITY;
    for j in 0..grids.signals.len() {
        for bin in 0..m {
            let mut value = 0.0;
            for (s, p) in strategy.iter() {
                if let Some(ublock) = dir((s, j)) {
                    let row = grids.forecasts.row(s, j).unwrap();
                    let dot: f64 = (0..m)
                        .map(|i| ublock[i] * (f64::from(u8::from(i == bin)) - row[i]))
                        .sum();
                    value += p * dot;
                }
            }
            worst = worst.max(value);
        }
    }
    (worst, anchor)
}

fn halfspace_certificate() -> Outcome {
    let grids = std::sync::Arc::new(one_asset_grids(0.25));
    let mut f = Forecaster::new(grids, 1e-9).unwrap();
    let mut frng = ChaCha8Rng::seed_from_u64(3);
    let mut mrng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_excess, mut checked) = (f64::NEG_INFINITY, 0);
    for _ in 0..5000 {
        let draw = f.next_forecast(0, &mut frng).unwrap();
        let (worst, anchor) = certificate(&f, &draw.announced);
        worst_excess = worst_excess.max(worst - anchor);
        checked += 1;
        let bin = usize::from(mrng.gen::<f64>() < 0.35);
        f.observe_outcome(&draw, bin).unwrap();
    }
    outcome(
        worst_excess <= 1e-7,
        format!(
            "{checked} rounds, max over rounds of (worst pure move - anchor) {worst_excess:.2e}"
        ),
    )
}

/// Picks the bin the announced distribution expects least.
fn adversarial_bin(grids: &GridSet, announced: &MixedStrategy) -> usize {
    let m = grids.returns.len();
    let mut expected = vec![0.0; m];
    for (s, p) in announced.iter() {
        for (e, q) in expected.iter_mut().zip(grids.forecasts.row(s, 0).unwrap()) {
            *e += p * q;
        }
    }
    (0..m)
        .min_by(|&a, &b| expected[a].total_cmp(&expected[b]))
        .unwrap()
}

fn calibration() -> Outcome {
    let eps = 0.25;
    let runs: Vec<(u64, f64, f64)> = SEEDS
        .par_iter()
        .map(|&seed| {
            let grids = std::sync::Arc::new(one_asset_grids(eps));
            let mut f = Forecaster::new(grids.clone(), 1e-9).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut identity_err = 0.0f64;
            for t in 1..=50_000 {
                let draw = f.next_forecast(0, &mut rng).unwrap();
                let bin = adversarial_bin(&grids, &draw.announced);
                f.observe_outcome(&draw, bin).unwrap();
                if t % 100 == 0 {
                    let score = f.calibration_score().unwrap();
                    identity_err = identity_err.max((score - f.mean().l1_norm()).abs());
                }
            }
            (seed, f.calibration_score().unwrap(), identity_err)
        })
        .collect();
    let worst_score = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let worst_identity = runs.iter().map(|r| r.2).fold(0.0, f64::max);
    outcome(
        worst_score <= eps + 0.05 && worst_identity <= 1e-9,
        format!(
            "scores at T=50000 {:?}, max |score - ||m||_1| {worst_identity:.2e}",
            runs.iter()
                .map(|r| format!("{:.4}", r.1))
                .collect::<Vec<_>>()
        ),
    )
}

// Criterion 4.

fn approachability_decay() -> Outcome {
    let spec = MarketSpec::new(1, 0.5, 2.0, 0.0, 1.0).unwrap();
    let schedule = RefinementSchedule::fixed(fixed(1, 0.75, 0.25, 1000)).unwrap();
    let checkpoints = [1250usize, 5000, 20_000];
    let runs: Vec<Vec<f64>> = SEEDS
        .par_iter()
        .map(|&seed| {
            let mut market =
                IidMarket::new(vec![atom(vec![0.5], 0.35), atom(vec![2.0], 0.65)], 0.0).unwrap();
            let mut cfg = EpisodeConfig::new(20_000, seed);
            cfg.sample_every = 1250;
            let tr = run_episode(&spec, &schedule, &mut market, &cfg).unwrap();
            checkpoints
                .iter()
                .map(|&t| tr.samples.iter().find(|s| s.t == t).unwrap().dist_l2)
                .collect()
        })
        .collect();
    let mut pass = true;
    let mut medians = Vec::new();
    for (c, &t) in checkpoints.iter().enumerate() {
        let bound = 4.0 * ((1.0f64 / 0.05).ln() / t as f64).sqrt();
        let mut d: Vec<f64> = runs.iter().map(|r| r[c]).collect();
        pass &= d.iter().all(|&x| x <= bound);
        d.sort_by(f64::total_cmp);
        medians.push(d[d.len() / 2]);
    }
    pass &= medians.windows(2).all(|w| w[1] < w[0]);
    outcome(
        pass,
        format!(
            "median dist_l2 at T=1250/5000/20000: {:.4}/{:.4}/{:.4}, bounds {:.4}/{:.4}/{:.4}, max {:.4}/{:.4}/{:.4}",
            medians[0],
            medians[1],
            medians[2],
            4.0 * (20f64.ln() / 1250.0).sqrt(),
            4.0 * (20f64.ln() / 5000.0).sqrt(),
            4.0 * (20f64.ln() / 20000.0).sqrt(),
            runs.iter().map(|r| r[0]).fold(0.0, f64::max),
            runs.iter().map(|r| r[1]).fold(0.0, f64::max),
            runs.iter().map(|r| r[2]).fold(0.0, f64::max),
        ),
    )
}

// Criterion 6.

fn regime_optimality() -> Outcome {
    let spec = MarketSpec::new(2, 0.5, 2.0, 0.0, 1.0).unwrap();
    let schedule = RefinementSchedule::fixed(fixed(2, 1.1, 0.25, 250_000)).unwrap();
    let rounds = 50_000;
    let runs: Vec<(f64, f64)> = SEEDS
        .par_iter()
        .map(|&seed| {
            let regime = |z: f64, p: f64| Regime {
                signal: z,
                atoms: vec![atom(vec![2.0, 0.5], p), atom(vec![0.5, 2.0], 1.0 - p)],
            };
            let mut market =
                RegimeMarket::new(vec![regime(0.0, 0.7), regime(1.0, 0.3)], Switching::Random)
                    .unwrap();
            let tr = run_episode(
                &spec,
                &schedule,
                &mut market,
                &EpisodeConfig::new(rounds, seed),
            )
            .unwrap();
            let w = tr.final_log2_wealth();
            let n = rounds as f64;
            ((w.investor - w.piecewise) / n, (w.investor - w.bcrp) / n)
        })
        .collect();
    let pw = runs.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let bc = runs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    outcome(
        pw >= -0.1 && bc >= -0.05,
        format!(
            "per-round gap vs piecewise {:?} (min {pw:.4}), vs BCRP min {bc:.4}",
            runs.iter()
                .map(|r| format!("{:.4}", r.0))
                .collect::<Vec<_>>()
        ),
    )
}

// Criterion 7.

fn discontinuous_adversary() -> Outcome {
    let spec = MarketSpec::new(2, 0.5, 2.0, 0.0, 1.0).unwrap();
    let schedule = RefinementSchedule::fixed(fixed(1, 1.1, 0.5, 1000)).unwrap();
    let gaps: Vec<f64> = SEEDS
        .par_iter()
        .map(|&seed| {
            let mut market = DiscontinuousAdversary::new(0.5);
            let tr = run_episode(
                &spec,
                &schedule,
                &mut market,
                &EpisodeConfig::new(10_000, seed),
            )
            .unwrap();
            let w = tr.final_log2_wealth();
            (w.stationary - w.investor) / 10_000.0
        })
        .collect();
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        min >= 0.125,
        format!(
            "per-round log2 gap of the stationary comparator over the investor per seed {:?}",
            gaps.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>()
        ),
    )
}

// Criterion 8.

/// Simpson's rule in `phi` with `b1 = (1 - cos phi)/2`, under which the
/// Dirichlet(1/2, 1/2) weight is uniform on `[0, pi]`.
fn cover_oracle(history: &[[f64; 2]], nodes: usize) -> f64 {
    let h = std::f64::consts::PI / nodes as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=nodes {
        let phi = i as f64 * h;
        let b = (1.0 - phi.cos()) / 2.0;
        let wealth: f64 = history
            .iter()
            .map(|x| b * x[0] + (1.0 - b) * x[1])
            .product();
        let c = if i == 0 || i == nodes {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        num += c * b * wealth;
        den += c * wealth;
    }
    num / den
}

fn cover_baseline() -> Outcome {
    let oracle = cover_oracle(&[[2.0, 1.0]], 1_000_000);
    let b = cover_universal_weight(&[vec![2.0, 1.0]], 2, 2048).unwrap();
    let empty = cover_universal_weight(&[], 2, 2048).unwrap();
    let err = (b.weights()[0] - oracle).abs();
    outcome(
        err <= 1e-6 && (oracle - 7.0 / 12.0).abs() <= 1e-6 && empty.weights() == [0.5, 0.5],
        format!(
            "b1 after (2,1) = {:.9}, oracle {oracle:.9}, |diff| {err:.2e}; empty history {:?}",
            b.weights()[0],
            empty.weights()
        ),
    )
}

// Criterion 9.

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "market": {
            "type": "regime",
            "regimes": [
                {"signal": 0.0, "atoms": [
                    {"returns": [2.0, 0.5], "probability": 0.7},
                    {"returns": [0.5, 2.0], "probability": 0.3}]},
                {"signal": 1.0, "atoms": [
                    {"returns": [2.0, 0.5], "probability": 0.3},
                    {"returns": [0.5, 2.0], "probability": 0.7}]}
            ],
            "switching": {"kind": "random"}
        },
        "rounds": 2000,
        "seeds": [11, 12],
        "max_forecast_points": 5000,
        "sample_every": 250
    });
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let run = |out: &Path, extra: &[&str]| {
        let status = Command::new(env!("CARGO_BIN_EXE_ckelly"))
            .args([
                "run",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .args(extra)
            .env_remove("CKELLY_OUT_DIR")
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
    };
    let mut same = true;
    let mut files = 0;
    for extra in [
        &[][..],
        &["--seed", "5", "--market", "adversary", "--rounds", "1500"][..],
    ] {
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        run(&a, extra);
        run(&b, extra);
        for f in ["report.json", "trajectory.csv"] {
            same &= std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
            files += 1;
        }
        std::fs::remove_dir_all(&a).unwrap();
        std::fs::remove_dir_all(&b).unwrap();
    }
    outcome(same, format!("{files} file pairs compared byte for byte"))
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 9] = [
        (
            1,
            "Kelly solver oracle",
            Duration::from_secs(30),
            kelly_oracle,
        ),
        (
            2,
            "projection contract",
            Duration::from_secs(10),
            projection_contract,
        ),
        (
            3,
            "halfspace certificate",
            Duration::from_secs(120),
            halfspace_certificate,
        ),
        (
            4,
            "approachability decay",
            Duration::from_secs(300),
            approachability_decay,
        ),
        (5, "calibration", Duration::from_secs(600), calibration),
        (
            6,
            "regime market optimality",
            Duration::from_secs(900),
            regime_optimality,
        ),
        (
            7,
            "discontinuous adversary",
            Duration::from_secs(180),
            discontinuous_adversary,
        ),
        (8, "universal portfolio", Duration::MAX, cover_baseline),
        (9, "determinism", Duration::MAX, determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, limit, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = result.pass && in_time;
        failed += usize::from(!pass);
        let budget = if limit == Duration::MAX {
            String::new()
        } else {
            format!(" / limit {}s", limit.as_secs())
        };
        println!(
            "criterion {n} {}: {name}: {} [{:.1}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
