//! Experiment configuration, pipelines, metrics and the command
//! implementations behind the `qpf` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{Atom, HilbertDims, StateVector};
use crate::infogeo::{
    closed_form_coefficients, fisher_metric, fisher_metric_closed_form, oracle_coefficients, oracle_report_csv,
    relative_error, OracleRow, QuadratureSpec, ThetaUnnorm, ORACLE_MIN_POINTS,
};
use crate::io::{self, fmt_f64, EstimatesFile, Metadata, TraceFile};
use crate::projfilter::{
    proj_step, proj_step_stratonovich, run_projfilter_with, stratonovich_drift_unnorm, strat_to_ito_drift,
    CenterMode, ProjRun, ProjState,
};
use crate::qfilter::{run_qfilter, FilterEstimates, FilterInit, QGrid, QMixture, QState, DEFAULT_MERGE_WIDTH};
use crate::trajectory::{run_trajectory, JumpChannel, ModelParams, ObservationRecord, SimGrid, TruthRecord};
use crate::wonham::{run_wonham, TelegraphParams, WonhamState};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "QPF_THREADS";

/// Initial state of the simulated system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialState {
    /// `|−⟩⊗|0⟩`
    #[default]
    MinusVacuum,
    /// `|+⟩⊗|0⟩`
    PlusVacuum,
}

impl InitialState {
    pub fn name(self) -> &'static str {
        match self {
            InitialState::MinusVacuum => "minus-vacuum",
            InitialState::PlusVacuum => "plus-vacuum",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "minus-vacuum" | "minus" => Ok(InitialState::MinusVacuum),
            "plus-vacuum" | "plus" => Ok(InitialState::PlusVacuum),
            _ => Err(Error::invalid(format!("unknown initial state `{s}`"))),
        }
    }

    pub fn state(self, dims: HilbertDims) -> StateVector {
        match self {
            InitialState::MinusVacuum => StateVector::ground_minus(dims),
            InitialState::PlusVacuum => StateVector::basis(dims, Atom::Plus, 0).expect("vacuum is in range"),
        }
    }
}

/// Everything needed to reproduce a set of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    /// `seed` is ignored; runs use `seeds`.
    pub grid: SimGrid,
    pub qgrid: QGrid,
    /// Kernel merge width of the default optimal filter.
    pub q_merge: f64,
    pub n_fock: usize,
    pub initial: InitialState,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Values swept by `sweep`, keyed by config key.
    pub sweep: BTreeMap<String, Vec<String>>,
}

impl ExperimentConfig {
    /// `g = 120, κ = 40, γ = 20, η = 1`, 25 000 steps of `1e-5`.
    pub fn moderate() -> Self {
        Self {
            params: ModelParams::moderate(),
            grid: SimGrid::default(),
            qgrid: QGrid::default(),
            q_merge: DEFAULT_MERGE_WIDTH,
            n_fock: crate::hilbert::DEFAULT_N_FOCK,
            initial: InitialState::MinusVacuum,
            seeds: vec![0],
            out_dir: PathBuf::from("out"),
            sweep: BTreeMap::new(),
        }
    }

    /// `g = 600, κ = 200, γ = 20, η = 1`, 100 000 steps of `2.5e-6`.
    pub fn strong() -> Self {
        Self {
            params: ModelParams::strong(),
            grid: SimGrid {
                dt: 2.5e-6,
                n_steps: 100_000,
                seed: 0,
            },
            ..Self::moderate()
        }
    }

    pub fn dims(&self) -> Result<HilbertDims> {
        HilbertDims::new(self.n_fock)
    }

    pub fn sim_grid(&self, seed: u64) -> SimGrid {
        SimGrid { seed, ..self.grid }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.grid.validate()?;
        self.dims()?;
        if self.seeds.is_empty() {
            return Err(Error::invalid("no seeds given"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("seeds must be distinct"));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|e| Error::invalid(format!("`{key}`: cannot parse `{v}`: {e}")))
        };
        let int = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|e| Error::invalid(format!("`{key}`: cannot parse `{v}`: {e}")))
        };
        match key {
            "preset" => {
                let sweep = std::mem::take(&mut self.sweep);
                *self = match value {
                    "moderate" => Self::moderate(),
                    "strong" => Self::strong(),
                    _ => return Err(Error::invalid(format!("unknown preset `{value}`"))),
                };
                self.sweep = sweep;
            }
            "g" => self.params.g = num(value)?,
            "kappa" => self.params.kappa = num(value)?,
            "gamma" => self.params.gamma = num(value)?,
            "eta" => self.params.eta = num(value)?,
            "dt" => self.grid.dt = num(value)?,
            "steps" | "n_steps" => self.grid.n_steps = int(value)?,
            "seed" => self.seeds = vec![int(value)? as u64],
            "seeds" => self.seeds = parse_seeds(value)?,
            "n_fock" => self.n_fock = int(value)?,
            "q_min" => self.qgrid = QGrid::new(num(value)?, self.qgrid.y_max(), self.qgrid.n_points())?,
            "q_max" => self.qgrid = QGrid::new(self.qgrid.y_min(), num(value)?, self.qgrid.n_points())?,
            "q_points" => self.qgrid = QGrid::new(self.qgrid.y_min(), self.qgrid.y_max(), int(value)?)?,
            "q_merge" => {
                let w = num(value)?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::invalid(format!("q_merge must be > 0, got {value}")));
                }
                self.q_merge = w;
            }
            "initial" => self.initial = InitialState::parse(value)?,
            "out" => self.out_dir = PathBuf::from(value),
            _ => match key.strip_prefix("sweep.") {
                Some(inner) => {
                    let values: Vec<String> = value.split(',').map(|s| s.trim().to_owned()).collect();
                    // validate each value on a scratch copy
                    for v in &values {
                        self.clone().set(inner, v)?;
                    }
                    self.sweep.insert(inner.to_owned(), values);
                }
                None => return Err(Error::invalid(format!("unknown config key `{key}`"))),
            },
        }
        Ok(())
    }

    /// Parses a flat `key = value` file on top of the defaults. A `preset`
    /// line, if present, is applied first.
    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let meta = io::parse_key_values(text, source)?;
        let mut cfg = Self::moderate();
        if let Some(p) = meta.get("preset") {
            cfg.set("preset", p)?;
        }
        for (k, v) in meta.entries().filter(|(k, _)| *k != "preset") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&io::read_text(path)?, &path.display().to_string())
    }

    /// Settings as `key = value` text accepted by [`Self::from_text`].
    pub fn to_text(&self) -> String {
        let mut m = Metadata::new();
        m.set("g", self.params.g)
            .set("kappa", self.params.kappa)
            .set("gamma", self.params.gamma)
            .set("eta", self.params.eta)
            .set("dt", self.grid.dt)
            .set("steps", self.grid.n_steps)
            .set(
                "seeds",
                self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            )
            .set("n_fock", self.n_fock)
            .set("q_min", self.qgrid.y_min())
            .set("q_max", self.qgrid.y_max())
            .set("q_points", self.qgrid.n_points())
            .set("q_merge", self.q_merge)
            .set("initial", self.initial.name())
            .set("out", self.out_dir.display());
        for (k, v) in &self.sweep {
            m.set(&format!("sweep.{k}"), v.join(","));
        }
        io::render_key_values(&m).replace('=', " = ")
    }
}

/// `N..M` (half-open) or a comma-separated list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = |e: std::num::ParseIntError| Error::invalid(format!("bad seed list `{s}`: {e}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a >= b {
            return Err(Error::invalid(format!("empty seed range `{s}`")));
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(bad)).collect()
}

/// Rayon pool sized by `QPF_THREADS` if set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::invalid(format!("{THREADS_ENV} must be positive")));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::invalid(e.to_string()))
}

/// Filter selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Q-functions as coherent-kernel mixtures.
    Qpde,
    /// Q-functions on the central-difference grid.
    QpdeGrid,
    Density,
    Projection,
    WonhamFrozen,
}

impl Backend {
    pub const ALL: [Backend; 5] = [
        Backend::Qpde,
        Backend::QpdeGrid,
        Backend::Density,
        Backend::Projection,
        Backend::WonhamFrozen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Qpde => "qpde",
            Backend::QpdeGrid => "qpde-fd",
            Backend::Density => "density",
            Backend::Projection => "projection",
            Backend::WonhamFrozen => "wonham-frozen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown backend `{s}` (expected qpde, qpde-fd, density, projection or wonham-frozen)")))
    }
}

/// Output of one filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub estimates: FilterEstimates,
    /// Projection parameters, for the projection backend.
    pub trace: Option<Vec<ProjState>>,
    pub clamp_count: usize,
}

/// Runs `backend` on `record` from the `|−⟩⊗|0⟩` initial condition. `qgrid`
/// is used by `qpde-fd`, `q_merge` by `qpde`.
pub fn run_backend(record: &ObservationRecord, backend: Backend, qgrid: QGrid, q_merge: f64) -> Result<FilterOutput> {
    let dims = HilbertDims::new(record.n_fock)?;
    let plain = |estimates| FilterOutput {
        estimates,
        trace: None,
        clamp_count: 0,
    };
    match backend {
        Backend::Qpde => {
            let q0 = QMixture::vacuum_minus().with_merge_width(q_merge)?;
            Ok(plain(run_qfilter(record, &FilterInit::Mixture(q0))?))
        }
        Backend::QpdeGrid => Ok(plain(run_qfilter(record, &FilterInit::grid_vacuum(qgrid, dims)?)?)),
        Backend::Density => Ok(plain(run_qfilter(record, &FilterInit::density_vacuum(dims))?)),
        Backend::Projection => {
            let run = run_projfilter_with(record, ProjState::singular_start(), CenterMode::Free)?;
            Ok(FilterOutput {
                estimates: run.estimates,
                trace: Some(run.trace),
                clamp_count: run.clamp_count,
            })
        }
        Backend::WonhamFrozen => {
            let tp = TelegraphParams::from_model(&record.params)?;
            let run = run_wonham(&record.dy, &tp, record.dt(), WonhamState { p_plus: 0.0 });
            let mut est = FilterEstimates::with_capacity(record.len());
            for (k, p) in run.p_plus.iter().enumerate() {
                let t = if k == 0 { 0.0 } else { record.times[k - 1] };
                est.push(t, *p, tp.a_plus * p + tp.a_minus * (1.0 - p));
            }
            est.norm_log = vec![1.0; record.len()];
            Ok(FilterOutput {
                estimates: est,
                trace: None,
                clamp_count: run.clamp_count,
            })
        }
    }
}

/// Detection-delay analysis of one filter against side-channel jumps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DelayStats {
    /// Crossing time minus jump time, per matched jump; negative means the
    /// filter switched first.
    pub delays: Vec<f64>,
    pub misses: usize,
    pub false_jumps: usize,
}

impl DelayStats {
    pub fn median(&self) -> Option<f64> {
        median(&self.delays)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Distance from 0 or 1 that confirms a decision switch.
pub const DECISION_BAND: f64 = 0.1;

/// Decision switches of `p` with hysteresis: the time of a ½-crossing,
/// `true` when upward, counted only once `p` goes on to reach within
/// `band` of the far end before crossing back.
pub fn decision_switches(times: &[f64], p: &[f64], band: f64) -> Vec<(f64, bool)> {
    let mut out = Vec::new();
    let Some(&p0) = p.first() else {
        return out;
    };
    let mut high = p0 >= 0.5;
    let mut last_cross = None;
    for k in 1..p.len() {
        if (p[k - 1] >= 0.5) != (p[k] >= 0.5) {
            last_cross = Some(times[k]);
        }
        let confirmed = if high { p[k] <= band } else { p[k] >= 1.0 - band };
        if confirmed {
            high = !high;
            out.push((last_cross.unwrap_or(times[k]), high));
        }
    }
    out
}

/// Matches every side-peak jump to the nearest unused decision switch in the right
/// direction within `window`. A `+` jump (atom leaves `|+⟩`) expects a
/// downward crossing and an `m` jump an upward one.
pub fn match_delays(record: &ObservationRecord, est: &FilterEstimates, window: f64) -> DelayStats {
    let crossings = decision_switches(&est.times, &est.p_plus, DECISION_BAND);
    let mut used = vec![false; crossings.len()];
    let mut stats = DelayStats::default();
    for j in record.jumps.iter().filter(|j| j.channel.flips_atom()) {
        let upward = j.channel == JumpChannel::Minus;
        let best = crossings
            .iter()
            .enumerate()
            .filter(|(i, (t, up))| !used[*i] && *up == upward && (t - j.time).abs() <= window)
            .min_by(|a, b| (a.1 .0 - j.time).abs().total_cmp(&(b.1 .0 - j.time).abs()));
        match best {
            Some((i, (t, _))) => {
                used[i] = true;
                stats.delays.push(t - j.time);
            }
            None => stats.misses += 1,
        }
    }
    stats.false_jumps = used.iter().filter(|u| !**u).count();
    stats
}

/// Time-averaged full-information `⟨y⟩` on settled plateaus, per atomic
/// state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlateauStats {
    /// Sum of `⟨y⟩` samples and their count while the atom is `|+⟩`.
    pub sum_plus: f64,
    pub samples_plus: usize,
    pub sum_minus: f64,
    pub samples_minus: usize,
}

impl PlateauStats {
    pub fn level_plus(&self) -> Option<f64> {
        (self.samples_plus > 0).then(|| self.sum_plus / self.samples_plus as f64)
    }

    pub fn level_minus(&self) -> Option<f64> {
        (self.samples_minus > 0).then(|| self.sum_minus / self.samples_minus as f64)
    }

    /// Pools samples of several runs.
    pub fn merge(self, other: Self) -> Self {
        Self {
            sum_plus: self.sum_plus + other.sum_plus,
            samples_plus: self.samples_plus + other.samples_plus,
            sum_minus: self.sum_minus + other.sum_minus,
            samples_minus: self.samples_minus + other.samples_minus,
        }
    }
}

/// Averages `truth.y_mean_full` over `[t_j + settle, t_{j+1})` for every
/// pair of consecutive side-peak jumps more than `settle` apart.
pub fn plateau_levels(record: &ObservationRecord, truth: &TruthRecord, settle: f64) -> PlateauStats {
    let mut stats = PlateauStats::default();
    let side: Vec<_> = record.jumps.iter().filter(|j| j.channel.flips_atom()).collect();
    for pair in side.windows(2) {
        let (start, end) = (pair[0].time + settle, pair[1].time);
        if start >= end {
            continue;
        }
        let (sum, count) = truth
            .times()
            .zip(&truth.y_mean_full)
            .filter(|(t, _)| *t >= start && *t < end)
            .fold((0.0, 0usize), |(s, c), (_, y)| (s + y, c + 1));
        // a `μ†` jump leaves the atom in `|+⟩`
        if pair[0].channel == JumpChannel::Minus {
            stats.sum_plus += sum;
            stats.samples_plus += count;
        } else {
            stats.sum_minus += sum;
            stats.samples_minus += count;
        }
    }
    stats
}

/// Agreement between two estimate series, plus delays of the first one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonMetrics {
    pub n: usize,
    /// Time average of `|p_a − p_b|`.
    pub mean_abs_p: f64,
    pub rms_p: f64,
    pub mean_abs_y: f64,
    pub rms_y: f64,
    pub delays: Option<DelayStats>,
}

impl ComparisonMetrics {
    pub fn to_metadata(&self) -> Metadata {
        let mut m = Metadata::new();
        m.set("n", self.n)
            .set("mean_abs_p", fmt_f64(self.mean_abs_p))
            .set("rms_p", fmt_f64(self.rms_p))
            .set("mean_abs_y", fmt_f64(self.mean_abs_y))
            .set("rms_y", fmt_f64(self.rms_y));
        if let Some(d) = &self.delays {
            m.set("matched", d.delays.len())
                .set("misses", d.misses)
                .set("false_jumps", d.false_jumps)
                .set("median_delay", d.median().map_or("nan".to_owned(), fmt_f64))
                .set(
                    "delays",
                    d.delays.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" "),
                );
        }
        m
    }
}

fn check_aligned(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if let Some(k) = (0..a.len()).find(|&k| (a[k] - b[k]).abs() > 1e-12 * a[k].abs().max(1.0)) {
        return Err(Error::invalid(format!("time grids differ at row {k}: {} vs {}", a[k], b[k])));
    }
    Ok(())
}

fn mean_abs_rms(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let (s1, s2) = a.iter().zip(b).fold((0.0, 0.0), |(s1, s2), (x, y)| {
        let d = (x - y).abs();
        (s1 + d, s2 + d * d)
    });
    (s1 / n, (s2 / n).sqrt())
}

/// Compares `a` against `b`; with a record, also the delays of `a`.
pub fn compare(a: &FilterEstimates, b: &FilterEstimates, record: Option<&ObservationRecord>) -> Result<ComparisonMetrics> {
    check_aligned(&a.times, &b.times)?;
    let (mean_abs_p, rms_p) = mean_abs_rms(&a.p_plus, &b.p_plus);
    let (mean_abs_y, rms_y) = mean_abs_rms(&a.y_mean, &b.y_mean);
    let delays = match record {
        Some(r) => {
            if r.len() + 1 != a.len() {
                return Err(Error::DimensionMismatch {
                    expected: r.len() + 1,
                    found: a.len(),
                });
            }
            Some(match_delays(r, a, 5.0 / r.params.gamma))
        }
        None => None,
    };
    Ok(ComparisonMetrics {
        n: a.len(),
        mean_abs_p,
        rms_p,
        mean_abs_y,
        rms_y,
        delays,
    })
}

/// Simulation plus the optimal and projection filters for one seed.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub record: ObservationRecord,
    pub truth: TruthRecord,
    pub optimal: FilterEstimates,
    pub projection: ProjRun,
    pub metrics: ComparisonMetrics,
}

pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64) -> Result<PipelineRun> {
    let dims = cfg.dims()?;
    let (record, truth) = run_trajectory(&cfg.params, &cfg.sim_grid(seed), &cfg.initial.state(dims))?;
    let atom = match cfg.initial {
        InitialState::MinusVacuum => Atom::Minus,
        InitialState::PlusVacuum => Atom::Plus,
    };
    let q0 = QMixture::coherent(atom, 0.0)?.with_merge_width(cfg.q_merge)?;
    let optimal = run_qfilter(&record, &FilterInit::Mixture(q0))?;
    let start = match cfg.initial {
        InitialState::MinusVacuum => ProjState::singular_start(),
        InitialState::PlusVacuum => ProjState::singular_start().swapped(),
    };
    let projection = run_projfilter_with(&record, start, CenterMode::Free)?;
    let metrics = compare(&optimal, &projection.estimates, Some(&record))?;
    Ok(PipelineRun {
        record,
        truth,
        optimal,
        projection,
        metrics,
    })
}

fn record_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("record_seed{seed}.csv"))
}

fn truth_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("truth_seed{seed}.csv"))
}

/// Simulates every seed and writes records, truths and a manifest.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dims = cfg.dims()?;
    let pool = worker_pool()?;
    let outputs: Vec<(PathBuf, PathBuf)> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let (record, truth) = run_trajectory(&cfg.params, &cfg.sim_grid(seed), &cfg.initial.state(dims))?;
                let (rp, tp) = (record_path(&cfg.out_dir, seed), truth_path(&cfg.out_dir, seed));
                io::write_record(&rp, &record)?;
                io::write_truth(&tp, &truth, seed)?;
                Ok((rp, tp))
            })
            .collect::<Result<_>>()
    })?;
    let mut manifest = String::from("# seed,record,truth\n");
    for (seed, (r, t)) in cfg.seeds.iter().zip(&outputs) {
        manifest.push_str(&format!("{seed},{},{}\n", file_name(r), file_name(t)));
    }
    let mpath = cfg.out_dir.join("manifest.csv");
    io::write_text(&mpath, &manifest)?;
    io::write_text(&cfg.out_dir.join("config.txt"), &cfg.to_text())?;
    let mut all: Vec<PathBuf> = outputs.into_iter().flat_map(|(a, b)| [a, b]).collect();
    all.push(mpath);
    Ok(all)
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Filters a record file; returns the written paths.
pub fn cmd_filter(record_file: &Path, backend: Backend, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let record = io::read_record(record_file)?;
    let out = run_backend(&record, backend, cfg.qgrid, cfg.q_merge)?;
    let out_dir = cfg.out_dir.as_path();
    let mut meta = Metadata::new();
    meta.set("backend", backend.name())
        .set("record", file_name(record_file))
        .set("seed", record.seed())
        .set_f64("dt", record.dt())
        .set("n_steps", record.len())
        .set("clamp_count", out.clamp_count);
    let seed = record.seed();
    let path = out_dir.join(format!("estimates_{}_seed{seed}.csv", backend.name()));
    EstimatesFile::new(meta.clone(), &out.estimates).write(&path)?;
    let mut written = vec![path];
    if let Some(trace) = out.trace {
        let tpath = out_dir.join(format!("trace_seed{seed}.csv"));
        TraceFile {
            meta,
            times: out.estimates.times,
            states: trace,
        }
        .write(&tpath)?;
        written.push(tpath);
    }
    Ok(written)
}

fn estimates_from_file(f: EstimatesFile) -> FilterEstimates {
    FilterEstimates {
        times: f.times,
        p_plus: f.p_plus,
        y_mean: f.y_mean,
        norm_log: Vec::new(),
    }
}

/// Compares two estimate files and writes `metrics.txt`.
pub fn cmd_compare(a: &Path, b: &Path, record: Option<&Path>, out_dir: &Path) -> Result<(ComparisonMetrics, PathBuf)> {
    let ea = estimates_from_file(EstimatesFile::read(a)?);
    let eb = estimates_from_file(EstimatesFile::read(b)?);
    let rec = record.map(io::read_record).transpose()?;
    let metrics = compare(&ea, &eb, rec.as_ref())?;
    let mut meta = metrics.to_metadata();
    meta.set("a", file_name(a)).set("b", file_name(b));
    let path = out_dir.join("metrics.txt");
    io::write_text(&path, &io::render_key_values(&meta))?;
    Ok((metrics, path))
}

/// Outcome of one verification suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Knobs for exercising the verifier itself.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerifyOptions {
    /// Relative perturbation applied to the closed-form weight drift before
    /// it is compared with the quadrature oracle.
    pub perturb_weight_drift: f64,
    /// Steps of each shared record in the reduction suite.
    pub reduction_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
    pub oracle_rows: Vec<OracleRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn render(&self) -> String {
        self.suites
            .iter()
            .map(|s| format!("{} {}: {}\n", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail))
            .collect()
    }
}

/// 20 parameter points with `μ± ∈ [−6, 6]`, `ν± ∈ [0.1, 10]`.
pub fn sample_thetas(seed: u64, n: usize) -> Vec<ThetaUnnorm> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| ThetaUnnorm {
            mu_plus: rng.random_range(-6.0..=6.0),
            nu_plus: rng.random_range(0.1..=10.0),
            mu_minus: rng.random_range(-6.0..=6.0),
            nu_minus: rng.random_range(0.1..=10.0),
        })
        .collect()
}

/// Largest relative deviation of the quadrature metric from the closed form.
pub fn fisher_suite(thetas: &[ThetaUnnorm]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in thetas {
        let g = fisher_metric(t, &QuadratureSpec::auto(t, ORACLE_MIN_POINTS))?;
        let c = fisher_metric_closed_form(t);
        for i in 0..4 {
            for j in 0..4 {
                let scale = c[(i, i)].max(c[(j, j)]);
                worst = worst.max((g[(i, j)] - c[(i, j)]).abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// Oracle rows for each `θ`, with the closed-form weight drift scaled by
/// `1 + perturb`.
pub fn coefficient_suite(thetas: &[ThetaUnnorm], params: &ModelParams, perturb: f64) -> Result<Vec<OracleRow>> {
    thetas
        .par_iter()
        .map(|t| {
            let quad = QuadratureSpec::auto(t, ORACLE_MIN_POINTS);
            let quadrature = oracle_coefficients(t, params, &quad)?;
            let mut closed = closed_form_coefficients(t, params);
            closed.drift[1] *= 1.0 + perturb;
            closed.drift[3] *= 1.0 + perturb;
            let scale = closed.drift.iter().chain(&closed.gain).fold(1.0f64, |m, v| m.max(v.abs()));
            let q: Vec<f64> = quadrature.drift.iter().chain(&quadrature.gain).copied().collect();
            let c: Vec<f64> = closed.drift.iter().chain(&closed.gain).copied().collect();
            Ok(OracleRow {
                theta: *t,
                closed,
                quadrature,
                rel_err: std::array::from_fn(|k| relative_error(q[k], c[k], 1e-6 * scale)),
            })
        })
        .collect()
}

/// Largest mismatch of the Itô conversion identities over `thetas`.
pub fn strat_ito_suite(thetas: &[ThetaUnnorm], params: &ModelParams) -> f64 {
    let k_eta = params.kappa * params.eta;
    let hg = params.gamma / 2.0;
    let mut worst: f64 = 0.0;
    for t in thetas {
        let s = stratonovich_drift_unnorm(t, params);
        let c = strat_to_ito_drift(t, params);
        let scale = (k_eta * t.mu_plus * t.mu_plus * t.nu_plus).abs().max(1.0);
        worst = worst
            .max((c[1] - k_eta * t.mu_plus * t.mu_plus * t.nu_plus).abs() / scale)
            .max((s[1] + c[1] - hg * (t.nu_minus - t.nu_plus)).abs() / scale)
            .max(c[0].abs())
            .max(c[2].abs());
        let p = ProjState::from(*t);
        let a = proj_step(&p, 3e-3, params, 1e-5).map(|r| r.0);
        let b = proj_step_stratonovich(&p, 3e-3, params, 1e-5);
        match a {
            Ok(a) => {
                worst = worst
                    .max((a.nu_tilde - b[0]).abs())
                    .max((a.mu_plus - b[1]).abs() / a.mu_plus.abs().max(1.0))
                    .max((a.mu_minus - b[2]).abs() / a.mu_minus.abs().max(1.0));
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    worst
}

/// Relative errors of mean and variance against `5e^{−κt}` and 2 at
/// `t = 0.01` for the Q-filter without coupling, jumps or measurement, on
/// the default grid. Worst of the kernel and central-difference forms.
pub fn ou_suite() -> Result<(f64, f64)> {
    let grid = QGrid::default();
    let params = ModelParams::new(0.0, 40.0, 0.0, 0.0)?;
    let (dt, n) = (1e-5, 1000);
    let expected = 5.0 * (-40.0f64 * 0.01).exp();

    let mut q = QState::bi_gaussian(grid, 0.0, 0.0, 5.0)?;
    let mut mix = QMixture::bi_gaussian(0.0, 0.0, 5.0)?;
    for _ in 0..n {
        q = crate::qfilter::qfilter_step(&q, 0.0, &params, dt)?.0;
        mix = crate::qfilter::mixture_step(&mix, 0.0, &params, dt)?.0;
    }
    let mut worst = (0.0f64, 0.0f64);
    for state in [q, mix.on_grid(grid)?] {
        let mean = crate::qfilter::qfilter_estimates(&state).1;
        let tot: Vec<f64> = state.q_plus().iter().zip(state.q_minus()).map(|(a, b)| a + b).collect();
        let second: Vec<f64> = grid.points().zip(&tot).map(|(y, v)| (y - mean).powi(2) * v).collect();
        let var = grid.integrate(&second) / grid.integrate(&tot);
        worst.0 = worst.0.max((mean - expected).abs() / expected);
        worst.1 = worst.1.max((var - 2.0).abs() / 2.0);
    }
    Ok(worst)
}

/// Largest per-step difference between the frozen projection filter and the
/// Wonham filter on records with the given seeds.
pub fn wonham_reduction_suite(params: &ModelParams, seeds: &[u64], n_steps: usize, n_fock: usize) -> Result<f64> {
    let dims = HilbertDims::new(n_fock)?;
    let diffs = seeds
        .par_iter()
        .map(|&seed| {
            let grid = SimGrid::new(SimGrid::DEFAULT_DT, n_steps, seed)?;
            let (record, _) = run_trajectory(params, &grid, &StateVector::ground_minus(dims))?;
            let tp = TelegraphParams::from_model(params)?;
            let start = ProjState::new(0.5, tp.a_plus, tp.a_minus)?;
            let proj = run_projfilter_with(&record, start, CenterMode::Frozen)?;
            let won = run_wonham(&record.dy, &tp, record.dt(), WonhamState::new(0.5)?);
            Ok(proj
                .estimates
                .p_plus
                .iter()
                .zip(&won.p_plus)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}

/// Runs all analytic and oracle suites. Writes `verify_report.txt` and
/// `oracle_report.csv` into `out_dir` when given.
pub fn cmd_verify(opts: &VerifyOptions, out_dir: Option<&Path>) -> Result<VerifyReport> {
    let pool = worker_pool()?;
    pool.install(|| {
        let thetas = sample_thetas(2024, 20);
        let params = ModelParams::moderate();
        let mut suites = Vec::new();
        let mut push = |name, passed, detail: String| {
            suites.push(SuiteResult { name, passed, detail });
        };

        match fisher_suite(&thetas) {
            Ok(w) => push("fisher-metric", w < 1e-6, format!("max relative error {w:.3e}")),
            Err(e) => push("fisher-metric", false, e.to_string()),
        }

        let oracle_rows = match coefficient_suite(&thetas, &params, opts.perturb_weight_drift) {
            Ok(rows) => {
                let w = rows.iter().map(OracleRow::max_rel_err).fold(0.0, f64::max);
                push("projection-coefficients", w < 1e-5, format!("max relative error {w:.3e}"));
                rows
            }
            Err(e) => {
                push("projection-coefficients", false, e.to_string());
                Vec::new()
            }
        };

        let w = strat_ito_suite(&thetas, &params);
        push("stratonovich-ito", w < 1e-12, format!("max mismatch {w:.3e}"));

        match ou_suite() {
            Ok((em, ev)) => push(
                "ou-limit",
                em < 0.01 && ev < 0.01,
                format!("mean rel error {em:.3e}, variance rel error {ev:.3e}"),
            ),
            Err(e) => push("ou-limit", false, e.to_string()),
        }

        let steps = opts.reduction_steps.unwrap_or(SimGrid::DEFAULT_STEPS);
        match wonham_reduction_suite(&params, &[1, 2, 3], steps, crate::hilbert::DEFAULT_N_FOCK) {
            Ok(d) => push("wonham-reduction", d < 1e-12, format!("max per-step difference {d:.3e}")),
            Err(e) => push("wonham-reduction", false, e.to_string()),
        }

        let report = VerifyReport { suites, oracle_rows };
        if let Some(dir) = out_dir {
            io::write_text(&dir.join("verify_report.txt"), &report.render())?;
            io::write_text(&dir.join("oracle_report.csv"), &oracle_report_csv(&report.oracle_rows))?;
        }
        Ok(report)
    })
}

/// Every combination of the swept values, in key order.
pub fn sweep_configs(base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let mut configs = vec![base.clone()];
    for (key, values) in &base.sweep {
        let mut next = Vec::with_capacity(configs.len() * values.len());
        for c in &configs {
            for v in values {
                let mut c2 = c.clone();
                c2.set(key, v)?;
                next.push(c2);
            }
        }
        configs = next;
    }
    for c in &mut configs {
        c.sweep.clear();
    }
    Ok(configs)
}

const SWEEP_COLUMNS: [&str; 14] = [
    "g",
    "kappa",
    "gamma",
    "eta",
    "dt",
    "steps",
    "seed",
    "mean_abs_p",
    "rms_p",
    "rms_y",
    "median_delay",
    "misses",
    "false_jumps",
    "clamp_count",
];

/// Runs the full pipeline for every combination and seed; writes
/// `sweep.csv`.
pub fn cmd_sweep(base: &ExperimentConfig) -> Result<PathBuf> {
    base.validate()?;
    let configs = sweep_configs(base)?;
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| base.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = worker_pool()?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let c = &configs[i];
                c.validate()?;
                let run = run_pipeline(c, seed)?;
                let d = run.metrics.delays.clone().unwrap_or_default();
                Ok(vec![
                    c.params.g.to_string(),
                    c.params.kappa.to_string(),
                    c.params.gamma.to_string(),
                    c.params.eta.to_string(),
                    c.grid.dt.to_string(),
                    c.grid.n_steps.to_string(),
                    seed.to_string(),
                    fmt_f64(run.metrics.mean_abs_p),
                    fmt_f64(run.metrics.rms_p),
                    fmt_f64(run.metrics.rms_y),
                    d.median().map_or("nan".to_owned(), fmt_f64),
                    d.misses.to_string(),
                    d.false_jumps.to_string(),
                    run.projection.clamp_count.to_string(),
                ])
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut meta = Metadata::new();
    meta.set("combinations", configs.len()).set("seeds", base.seeds.len());
    let path = base.out_dir.join("sweep.csv");
    io::write_text(&path, &io::render_table(&meta, &SWEEP_COLUMNS, rows)?)?;
    Ok(path)
}
