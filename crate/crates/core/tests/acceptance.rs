//! End-to-end acceptance checks. Every criterion is evaluated, one line is
//! printed per criterion, and the test fails if any of them failed.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the table.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use qpf::harness::{
    match_delays, median, plateau_levels, run_pipeline, sample_thetas, ExperimentConfig, PipelineRun, PlateauStats,
};
use qpf::infogeo::{fisher_metric, oracle_coefficients, QuadratureSpec, ThetaUnnorm, ORACLE_MIN_POINTS};
use qpf::prelude::*;
use qpf::projfilter::{run_projfilter_with, stratonovich_drift_unnorm, strat_to_ito_drift, CenterMode};
use qpf::qfilter::{mixture_step, QMixture};
use qpf::wonham::run_wonham;

struct Outcome {
    label: &'static str,
    passed: bool,
    detail: String,
}

#[derive(Default)]
struct Table(Vec<Outcome>);

impl Table {
    fn record(&mut self, label: &'static str, passed: bool, detail: String) {
        println!("{} {label}: {detail}", if passed { "PASS" } else { "FAIL" });
        self.0.push(Outcome { label, passed, detail });
    }

    fn failures(&self) -> Vec<String> {
        self.0
            .iter()
            .filter(|o| !o.passed)
            .map(|o| format!("{}: {}", o.label, o.detail))
            .collect()
    }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn thetas() -> Vec<ThetaUnnorm> {
    sample_thetas(2024, 20)
}

fn fisher_metric_check() -> (bool, String) {
    let mut worst = 0.0f64;
    for t in thetas() {
        let m = fisher_metric(&t, &QuadratureSpec::auto(&t, ORACLE_MIN_POINTS)).unwrap();
        let expected = [t.nu_plus / 2.0, 1.0 / t.nu_plus, t.nu_minus / 2.0, 1.0 / t.nu_minus];
        let scale = expected.iter().fold(0.0f64, |a, b| a.max(*b));
        for i in 0..4 {
            for j in 0..4 {
                let reference = if i == j { expected[i] } else { 0.0 };
                let err = (m[(i, j)] - reference).abs() / if i == j { reference } else { scale };
                worst = worst.max(err);
            }
        }
    }
    (worst < 1e-6, format!("max relative error {worst:.2e} over 20 points (limit 1e-6)"))
}

/// Unnormalized Stratonovich coefficients written out directly.
fn closed_form(t: &ThetaUnnorm, p: &ModelParams) -> ([f64; 4], [f64; 4]) {
    let hg = p.gamma / 2.0;
    let ke = p.kappa * p.eta;
    let c = (2.0 * p.kappa * p.eta).sqrt();
    let drift = [
        -p.g - p.kappa * t.mu_plus + hg * (t.nu_minus / t.nu_plus) * (t.mu_minus - t.mu_plus),
        hg * (t.nu_minus - t.nu_plus) - ke * t.mu_plus * t.mu_plus * t.nu_plus,
        p.g - p.kappa * t.mu_minus + hg * (t.nu_plus / t.nu_minus) * (t.mu_plus - t.mu_minus),
        hg * (t.nu_plus - t.nu_minus) - ke * t.mu_minus * t.mu_minus * t.nu_minus,
    ];
    let gain = [0.0, c * t.mu_plus * t.nu_plus, 0.0, c * t.mu_minus * t.nu_minus];
    (drift, gain)
}

fn coefficient_check() -> (bool, String) {
    let params = ModelParams::moderate();
    let mut worst = 0.0f64;
    for t in thetas() {
        let quad = QuadratureSpec::auto(&t, ORACLE_MIN_POINTS);
        let got = match oracle_coefficients(&t, &params, &quad) {
            Ok(c) => c,
            Err(e) => return (false, format!("oracle failed at {t:?}: {e}")),
        };
        let (drift, gain) = closed_form(&t, &params);
        let reference: Vec<f64> = drift.iter().chain(&gain).copied().collect();
        let floor = reference.iter().fold(1.0f64, |a, b| a.max(b.abs())) * 1e-6;
        for (q, r) in got.drift.iter().chain(&got.gain).zip(&reference) {
            worst = worst.max((q - r).abs() / r.abs().max(floor));
        }
    }
    (worst < 1e-5, format!("max relative error {worst:.2e} over 20 points, 8 coefficients each (limit 1e-5)"))
}

fn strat_ito_check() -> (bool, String) {
    let params = ModelParams::moderate();
    let hg = params.gamma / 2.0;
    let mut worst = 0.0f64;
    for t in thetas() {
        let strat = stratonovich_drift_unnorm(&t, &params);
        let correction = strat_to_ito_drift(&t, &params);
        let ito = [strat[1] + correction[1], strat[3] + correction[3]];
        let scale = hg * (t.nu_plus + t.nu_minus) + params.kappa * 36.0 * (t.nu_plus + t.nu_minus);
        worst = worst
            .max((ito[0] - hg * (t.nu_minus - t.nu_plus)).abs() / scale)
            .max((ito[1] - hg * (t.nu_plus - t.nu_minus)).abs() / scale)
            .max((correction[1] - params.kappa * params.eta * t.mu_plus * t.mu_plus * t.nu_plus).abs() / scale);
    }
    (worst < 1e-14, format!("max residual {worst:.2e} relative to the drift scale"))
}

fn wonham_check() -> (bool, String) {
    let params = ModelParams::moderate();
    let dims = HilbertDims::new(25).unwrap();
    let tp = TelegraphParams::from_model(&params).unwrap();
    let mut worst = 0.0f64;
    for seed in [11, 12, 13] {
        let grid = SimGrid::new(1e-5, 25_000, seed).unwrap();
        let (record, _) = run_trajectory(&params, &grid, &StateVector::ground_minus(dims)).unwrap();
        let start = ProjState::new(0.5, -3.0, 3.0).unwrap();
        let proj = run_projfilter_with(&record, start, CenterMode::Frozen).unwrap();
        let won = run_wonham(&record.dy, &tp.with_levels(-3.0, 3.0), record.dt(), WonhamState::new(0.5).unwrap());
        for (a, b) in proj.estimates.p_plus.iter().zip(&won.p_plus) {
            worst = worst.max((a - b).abs());
        }
    }
    (worst < 1e-12, format!("max |Δp| {worst:.2e} on 3 records of 25000 steps"))
}

fn moments(q: &QState) -> (f64, f64) {
    let g = q.grid();
    let tot: Vec<f64> = q.q_plus().iter().zip(q.q_minus()).map(|(a, b)| a + b).collect();
    let m = g.integrate(&tot);
    let first: Vec<f64> = g.points().zip(&tot).map(|(y, v)| y * v).collect();
    let mean = g.integrate(&first) / m;
    let second: Vec<f64> = g.points().zip(&tot).map(|(y, v)| (y - mean).powi(2) * v).collect();
    (mean, g.integrate(&second) / m)
}

fn ou_check() -> (bool, String) {
    let params = ModelParams::new(0.0, 40.0, 0.0, 0.0).unwrap();
    let grid = QGrid::default();
    let dt = 1e-5;
    let mut fd = QState::bi_gaussian(grid, 0.0, 0.0, 5.0).unwrap();
    let mut mix = QMixture::bi_gaussian(0.0, 0.0, 5.0).unwrap();
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    for k in 1..=2000 {
        fd = qfilter_step(&fd, 0.0, &params, dt).unwrap().0;
        mix = mixture_step(&mix, 0.0, &params, dt).unwrap().0;
        if k % 100 == 0 {
            let expected = 5.0 * (-40.0 * k as f64 * dt).exp();
            for (mean, var) in [moments(&fd), moments(&mix.on_grid(grid).unwrap())] {
                mean_err = mean_err.max((mean - expected).abs() / expected);
                var_err = var_err.max((var - 2.0).abs() / 2.0);
            }
        }
    }
    (
        mean_err < 0.01 && var_err < 0.01,
        format!("mean within {:.3}%, variance within {:.3}% (grid and kernel forms, limit 1%)", 100.0 * mean_err, 100.0 * var_err),
    )
}

fn plateau_check(runs: &[PipelineRun], kappa: f64) -> (bool, String) {
    let stats = runs
        .iter()
        .map(|r| plateau_levels(&r.record, &r.truth, 3.0 / kappa))
        .fold(PlateauStats::default(), PlateauStats::merge);
    match (stats.level_plus(), stats.level_minus()) {
        (Some(p), Some(m)) => {
            let ok = (p + 3.0).abs() < 0.15 && (m - 3.0).abs() < 0.15;
            (
                ok,
                format!(
                    "atom |+⟩ plateau {p:.3} ({} samples), |−⟩ plateau {m:.3} ({} samples); targets ∓3 ± 5%",
                    stats.samples_plus, stats.samples_minus
                ),
            )
        }
        _ => (false, "no settled plateau of one of the signs".into()),
    }
}

fn near_optimality(runs: &[PipelineRun]) -> (bool, f64, f64) {
    let p: Vec<f64> = runs.iter().map(|r| r.metrics.mean_abs_p).collect();
    let y: Vec<f64> = runs.iter().map(|r| r.metrics.rms_y).collect();
    let (mp, my) = (median(&p).unwrap(), median(&y).unwrap());
    (mp < 0.05 && my < 0.3, mp, my)
}

fn innovations_check(runs: &[PipelineRun]) -> (bool, String) {
    let mut worst_sum = 0.0f64;
    let mut worst_qv = 0.0f64;
    let mut ok = true;
    for r in runs {
        let t = r.record.grid.duration();
        let inn = r.optimal.innovations(&r.record).unwrap();
        let sum: f64 = inn.iter().sum();
        let qv: f64 = inn.iter().map(|v| v * v).sum();
        worst_sum = worst_sum.max(sum.abs() / (3.0 * t.sqrt()));
        worst_qv = worst_qv.max((qv - t).abs() / t);
        ok &= sum.abs() < 3.0 * t.sqrt() && (qv - t).abs() < 0.05 * t;
    }
    (
        ok,
        format!(
            "{} records; worst |Σ|/(3√T) = {worst_sum:.3}, worst |QV − T|/T = {worst_qv:.4}",
            runs.len()
        ),
    )
}

fn z_count_check(runs: &[PipelineRun]) -> (bool, String) {
    let count = runs
        .iter()
        .flat_map(|r| &r.record.jumps)
        .filter(|j| j.channel == JumpChannel::Z)
        .count() as f64;
    let total_time: f64 = runs.iter().map(|r| r.record.grid.duration()).sum();
    let expected = runs[0].record.params.gamma / 2.0 * total_time;
    let ok = (count - expected).abs() <= 3.0 * expected.sqrt();
    (ok, format!("{count} z-jumps over {total_time:.2} time units, expected {expected:.1} ± {:.1}", 3.0 * expected.sqrt()))
}

fn delay_check(runs: &[PipelineRun]) -> (bool, String) {
    let window = 5.0 / runs[0].record.params.gamma;
    let mut delays = Vec::new();
    let (mut misses, mut false_jumps) = (0, 0);
    for r in runs {
        let d = match_delays(&r.record, &r.optimal, window);
        delays.extend(d.delays);
        misses += d.misses;
        false_jumps += d.false_jumps;
    }
    match median(&delays) {
        Some(m) => (
            m > 0.0,
            format!("median delay {m:.5} over {} matched jumps; {misses} missed, {false_jumps} false switches", delays.len()),
        ),
        None => (false, "no matched jumps".into()),
    }
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

fn cross_backend_check() -> (bool, String) {
    let cfg = ExperimentConfig::moderate();
    let dims = cfg.dims().unwrap();
    let (mut coarse_sq, mut fine_sq, mut worst) = (0.0, 0.0, 0.0f64);
    let seeds = [0u64, 1, 2, 3, 4];
    for &seed in &seeds {
        let grid = SimGrid::new(cfg.grid.dt / 2.0, cfg.grid.n_steps * 2, seed).unwrap();
        let (fine, _) = run_trajectory(&cfg.params, &grid, &StateVector::ground_minus(dims)).unwrap();
        let coarse = fine.coarsened(2).unwrap();

        let density = run_qfilter(&coarse, &FilterInit::density_vacuum(dims)).unwrap();
        let kernel = run_qfilter(&coarse, &FilterInit::mixture_vacuum()).unwrap();
        let d = rms(&kernel.p_plus, &density.p_plus);
        worst = worst.max(d);
        coarse_sq += d * d;

        let density_f = run_qfilter(&fine, &FilterInit::density_vacuum(dims)).unwrap();
        let q0 = QMixture::vacuum_minus().with_merge_width(cfg.q_merge / 2.0).unwrap();
        let kernel_f = run_qfilter(&fine, &FilterInit::Mixture(q0)).unwrap();
        let every_other = |v: &[f64]| v.iter().step_by(2).copied().collect::<Vec<_>>();
        let d = rms(&every_other(&kernel_f.p_plus), &every_other(&density_f.p_plus));
        fine_sq += d * d;
    }
    let n = seeds.len() as f64;
    let (coarse, fine) = ((coarse_sq / n).sqrt(), (fine_sq / n).sqrt());
    (
        worst < 0.02 && fine < coarse,
        format!("worst RMS Δp {worst:.4} (limit 0.02); pooled {coarse:.4} at dt, {fine:.4} at dt/2"),
    )
}

fn write_comparison(name: &str, runs: &[PipelineRun]) -> PathBuf {
    let mut csv = String::from("seed,mean_abs_p,rms_p,mean_abs_y,rms_y,clamps,matched,misses,false_switches\n");
    for r in runs {
        let m = &r.metrics;
        let d = m.delays.clone().unwrap_or_default();
        writeln!(
            csv,
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{},{},{},{}",
            r.record.seed(),
            m.mean_abs_p,
            m.rms_p,
            m.mean_abs_y,
            m.rms_y,
            r.projection.clamp_count,
            d.delays.len(),
            d.misses,
            d.false_jumps
        )
        .unwrap();
    }
    let path = out_dir().join(format!("{name}_comparison.csv"));
    std::fs::write(&path, csv).unwrap();
    path
}

fn pipeline(cfg: &ExperimentConfig) -> Result<Vec<PipelineRun>> {
    (0..20).map(|seed| run_pipeline(cfg, seed)).collect()
}

/// Runs `check` and fails it if it takes longer than `limit`.
fn timed(limit: Duration, check: impl FnOnce() -> (bool, String)) -> (bool, String) {
    let start = Instant::now();
    let (ok, detail) = check();
    let took = start.elapsed();
    (
        ok && took <= limit,
        format!("{detail}; {:.1} s (limit {} s)", took.as_secs_f64(), limit.as_secs()),
    )
}

#[test]
fn acceptance() {
    let mut table = Table::default();

    let (ok, d) = timed(Duration::from_secs(10), fisher_metric_check);
    table.record("01 fisher metric", ok, d);
    let (ok, d) = timed(Duration::from_secs(60), coefficient_check);
    table.record("02 projection coefficients", ok, d);
    let (ok, d) = strat_ito_check();
    table.record("03 stratonovich to ito", ok, d);
    let (ok, d) = wonham_check();
    table.record("04 wonham reduction", ok, d);
    let (ok, d) = timed(Duration::from_secs(30), ou_check);
    table.record("05 ornstein-uhlenbeck limit", ok, d);

    let moderate = ExperimentConfig::moderate();
    let start = Instant::now();
    let runs = pipeline(&moderate).expect("moderate-coupling pipeline");
    let moderate_time = start.elapsed();
    let (ok, d) = plateau_check(&runs, moderate.params.kappa);
    table.record("06 steady-state level", ok, d);
    let (ok, mp, my) = near_optimality(&runs);
    let path = write_comparison("moderate", &runs);
    table.record(
        "07 near-optimality",
        ok && moderate_time <= Duration::from_secs(600),
        format!(
            "median mean|Δp| {mp:.4} (limit 0.05), median RMS Δy {my:.4} (limit 0.3); 20 runs in {:.0} s (limit 600 s); data in {}",
            moderate_time.as_secs_f64(),
            path.display()
        ),
    );
    let (ok, d) = cross_backend_check();
    table.record("08 cross-backend agreement", ok, d);
    let (ok, d) = innovations_check(&runs);
    table.record("09 innovation whiteness", ok, d);
    let (ok, d) = z_count_check(&runs);
    table.record("10 z-jump statistics", ok, d);
    let (ok, d) = delay_check(&runs);
    table.record("11 detection delay", ok, d);

    let strong = ExperimentConfig::strong();
    match pipeline(&strong) {
        Ok(runs) => {
            let clamps: usize = runs.iter().map(|r| r.projection.clamp_count).sum();
            let (near, mp, my) = near_optimality(&runs);
            let (white, wd) = innovations_check(&runs);
            let path = write_comparison("strong", &runs);
            table.record(
                "12 strong coupling",
                clamps == 0 && near && white,
                format!(
                    "20 runs of {} steps; clamps {clamps}; median mean|Δp| {mp:.4}, median RMS Δy {my:.4}; {wd}; data in {}",
                    strong.grid.n_steps,
                    path.display()
                ),
            );
        }
        Err(e) => table.record("12 strong coupling", false, format!("run failed: {e}")),
    }

    let failures = table.failures();
    assert!(failures.is_empty(), "failed: {failures:#?}");
}
