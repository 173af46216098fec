//! Measurement-record simulator.
//!
//! The simulator propagates the pure conditional state of an observer who
//! sees the forward-channel homodyne current and counts photons in the three
//! Mollow side channels. With unit efficiency that state stays pure, so a
//! stochastic Schrödinger equation on the truncated Hilbert space suffices.
//! Detector inefficiency enters only when the photocurrent handed to the
//! homodyne-only filters is synthesized.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hilbert::{CompositeOps, SparseOp, StateVector};

/// Maximum jump probability per step before the sampler starts clipping.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;

/// Physical rates shared by the simulator and every filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Atom-cavity coupling `g`. Its sign is a convention (`g → −g` mirrors
    /// the quadrature), so only finiteness is enforced.
    pub g: f64,
    /// Cavity decay rate `κ`.
    pub kappa: f64,
    /// Spontaneous emission rate `γ` of each Mollow channel.
    pub gamma: f64,
    /// Homodyne detection efficiency `η`.
    pub eta: f64,
}

impl ModelParams {
    pub fn new(g: f64, kappa: f64, gamma: f64, eta: f64) -> Result<Self> {
        let p = Self {
            g,
            kappa,
            gamma,
            eta,
        };
        p.validate()?;
        Ok(p)
    }

    /// `g = 120, κ = 40, γ = 20, η = 1`
    pub fn moderate() -> Self {
        Self {
            g: 120.0,
            kappa: 40.0,
            gamma: 20.0,
            eta: 1.0,
        }
    }

    /// Strong coupling: `g = 600, κ = 200, γ = 20, η = 1`
    pub fn strong() -> Self {
        Self {
            g: 600.0,
            kappa: 200.0,
            gamma: 20.0,
            eta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.g.is_finite() {
            return Err(Error::invalid(format!("g must be finite, got {}", self.g)));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::invalid(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }

    /// Homodyne signal gain `√(2κη)`.
    pub fn signal_gain(&self) -> f64 {
        (2.0 * self.kappa * self.eta).sqrt()
    }

    /// Plateau level `g/κ` of the cavity quadrature.
    pub fn plateau(&self) -> f64 {
        self.g / self.kappa
    }

    pub fn with_g(self, g: f64) -> Self {
        Self { g, ..self }
    }

    pub fn with_eta(self, eta: f64) -> Self {
        Self { eta, ..self }
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::moderate()
    }
}

/// Time discretization and seed of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl SimGrid {
    pub const DEFAULT_DT: f64 = 1e-5;
    pub const DEFAULT_STEPS: usize = 25_000;

    pub fn new(dt: f64, n_steps: usize, seed: u64) -> Result<Self> {
        let g = Self { dt, n_steps, seed };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be positive"));
        }
        Ok(())
    }

    /// Emits a warning when `dt·max(2κ, γ, |g|)` exceeds 0.1.
    pub fn check_stability(&self, params: &ModelParams) -> bool {
        let fastest = (2.0 * params.kappa).max(params.gamma).max(params.g.abs());
        let ok = self.dt * fastest < 0.1;
        if !ok {
            log::warn!(
                "dt = {} is coarse for the fastest rate {fastest} (dt·rate = {:.3})",
                self.dt,
                self.dt * fastest
            );
        }
        ok
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    /// Time at the end of step `k` (0-based).
    pub fn time_after(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dt
    }
}

impl Default for SimGrid {
    fn default() -> Self {
        Self {
            dt: Self::DEFAULT_DT,
            n_steps: Self::DEFAULT_STEPS,
            seed: 0,
        }
    }
}

/// Mollow side-channel a photon was counted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JumpChannel {
    /// Upper side peak, jump operator `μ` (atom `|+⟩ → |−⟩`).
    Plus,
    /// Central peak, jump operator `μ_z`.
    Z,
    /// Lower side peak, jump operator `μ†` (atom `|−⟩ → |+⟩`).
    Minus,
}

impl JumpChannel {
    pub fn symbol(self) -> char {
        match self {
            JumpChannel::Plus => '+',
            JumpChannel::Z => 'z',
            JumpChannel::Minus => 'm',
        }
    }

    pub fn from_symbol(c: char) -> Option<Option<Self>> {
        match c {
            '-' => Some(None),
            '+' => Some(Some(JumpChannel::Plus)),
            'z' => Some(Some(JumpChannel::Z)),
            'm' => Some(Some(JumpChannel::Minus)),
            _ => None,
        }
    }

    /// Side-peak jumps flip the atom; central-peak jumps do not.
    pub fn flips_atom(self) -> bool {
        !matches!(self, JumpChannel::Z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub step: usize,
    pub time: f64,
    pub channel: JumpChannel,
}

/// Homodyne increments plus side-channel counts of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    /// `times[k]` is the end of step `k`, `(k + 1)·dt`.
    pub times: Vec<f64>,
    pub dy: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    pub params: ModelParams,
    pub grid: SimGrid,
    pub n_fock: usize,
}

impl ObservationRecord {
    pub fn len(&self) -> usize {
        self.dy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dy.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn seed(&self) -> u64 {
        self.grid.seed
    }

    /// Per-step jump column (`None` where no photon was counted).
    pub fn jump_column(&self) -> Vec<Option<JumpChannel>> {
        let mut col = vec![None; self.len()];
        for j in &self.jumps {
            col[j.step] = Some(j.channel);
        }
        col
    }

    /// Checks time uniformity and jump placement.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.grid.validate()?;
        if self.times.len() != self.dy.len() || self.dy.len() != self.grid.n_steps {
            return Err(Error::invalid(format!(
                "record lengths disagree: {} times, {} increments, n_steps = {}",
                self.times.len(),
                self.dy.len(),
                self.grid.n_steps
            )));
        }
        for (k, t) in self.times.iter().enumerate() {
            let expected = self.grid.time_after(k);
            if (t - expected).abs() > 1e-9 * expected.max(1.0) {
                return Err(Error::invalid(format!("time {t} at step {k} is off the grid")));
            }
        }
        let mut last = None;
        for j in &self.jumps {
            if j.step >= self.len() || Some(j.step) <= last {
                return Err(Error::invalid(format!("jump at step {} is misplaced", j.step)));
            }
            last = Some(j.step);
        }
        Ok(())
    }

    /// Copy with the homodyne increments replaced, e.g. for a record with the
    /// same jumps but a different noise realisation.
    pub fn with_increments(&self, dy: Vec<f64>) -> Result<Self> {
        if dy.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: dy.len(),
            });
        }
        Ok(Self { dy, ..self.clone() })
    }

    /// Same path observed on a grid `factor` times coarser: increments are
    /// summed over blocks and jumps moved to the block they fall in. Fails
    /// if `factor` does not divide the step count or two jumps share a
    /// block.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.len() % factor != 0 {
            return Err(Error::invalid(format!("cannot coarsen {} steps by {factor}", self.len())));
        }
        let grid = SimGrid::new(self.dt() * factor as f64, self.len() / factor, self.seed())?;
        let dy = self.dy.chunks(factor).map(|c| c.iter().sum()).collect();
        let times = (0..grid.n_steps).map(|k| grid.time_after(k)).collect();
        let mut jumps: Vec<JumpEvent> = Vec::with_capacity(self.jumps.len());
        for j in &self.jumps {
            let step = j.step / factor;
            if jumps.last().is_some_and(|l| l.step == step) {
                return Err(Error::invalid(format!("two jumps fall in coarse step {step}")));
            }
            jumps.push(JumpEvent { step, ..*j });
        }
        Ok(Self {
            times,
            dy,
            jumps,
            grid,
            ..self.clone()
        })
    }
}

/// Estimates of the full-information observer (homodyne plus side channels).
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    /// `p_plus_full[k]` is `⟨μ†μ⟩` at time `k·dt`; length `n_steps + 1`.
    pub p_plus_full: Vec<f64>,
    pub y_mean_full: Vec<f64>,
    pub dt: f64,
}

impl TruthRecord {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.p_plus_full.len()).map(move |k| k as f64 * self.dt)
    }
}

/// Random inputs consumed by one simulator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepNoise {
    /// Forward-channel Wiener increment, `N(0, dt)`.
    pub dw: f64,
    /// Independent corrupting noise for `η < 1`, `N(0, dt)`.
    pub dv: f64,
    /// Uniform variate in `[0, 1)` deciding the side-channel jump.
    pub u_jump: f64,
}

pub trait NoiseSource {
    fn next_step(&mut self, dt: f64) -> StepNoise;
}

/// Seeded noise with one ChaCha8 stream per noise kind, so that e.g. the
/// jump decisions do not depend on how many Gaussians were drawn.
#[derive(Debug, Clone)]
pub struct SeededNoise {
    diffusion: ChaCha8Rng,
    corruption: ChaCha8Rng,
    jumps: ChaCha8Rng,
}

impl SeededNoise {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            diffusion: stream(1),
            corruption: stream(2),
            jumps: stream(3),
        }
    }
}

impl NoiseSource for SeededNoise {
    fn next_step(&mut self, dt: f64) -> StepNoise {
        let s = dt.sqrt();
        let dw: f64 = self.diffusion.sample::<f64, _>(StandardNormal) * s;
        let dv: f64 = self.corruption.sample::<f64, _>(StandardNormal) * s;
        let u_jump: f64 = self.jumps.random();
        StepNoise { dw, dv, u_jump }
    }
}

/// Wraps a noise source and negates its Gaussian increments.
#[derive(Debug, Clone)]
pub struct MirroredNoise<N>(pub N);

impl<N: NoiseSource> NoiseSource for MirroredNoise<N> {
    fn next_step(&mut self, dt: f64) -> StepNoise {
        let n = self.0.next_step(dt);
        StepNoise {
            dw: -n.dw,
            dv: -n.dv,
            ..n
        }
    }
}

/// One Itô–Euler step of the stochastic Schrödinger equation, followed by
/// renormalization and, if requested, a side-channel jump.
pub fn sse_step(
    state: &StateVector,
    ops: &CompositeOps,
    params: &ModelParams,
    dt: f64,
    dw: f64,
    jump: Option<JumpChannel>,
) -> Result<StateVector> {
    if state.dims() != ops.dims {
        return Err(Error::DimensionMismatch {
            expected: ops.dims.total(),
            found: state.dims().total(),
        });
    }
    let sp = &ops.sparse;
    let psi = state.amplitudes();
    let y_mean = state.expect_sparse(&sp.y).re;
    let k = params.kappa;
    let i = Complex64::i();

    let h_psi = sp.mu_z_x.apply(psi);
    let a_psi = sp.a.apply(psi);
    let n_psi = sp.number.apply(psi);

    // drift: −i(g/2)μ_z x − iκ⟨y⟩a − κa†a − (κ/4)⟨y⟩²
    // diffusion: −√(2κ)(ia + ⟨y⟩/2) dW
    let root = (2.0 * k).sqrt();
    let a_coeff = -i * (k * y_mean * dt) - i * (root * dw);
    let psi_coeff = -(k / 4.0) * y_mean * y_mean * dt - root * y_mean / 2.0 * dw;
    let mut next: DVector<Complex64> = psi
        + h_psi * (-i * (params.g / 2.0 * dt))
        + a_psi * a_coeff
        - n_psi * Complex64::from(k * dt)
        + psi * Complex64::from(psi_coeff);

    let norm = next.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::numerical(0, format!("state norm became {norm}")));
    }
    next.unscale_mut(norm);

    if let Some(channel) = jump {
        let op: &SparseOp = match channel {
            JumpChannel::Plus => &sp.mu,
            JumpChannel::Z => &sp.mu_z,
            JumpChannel::Minus => &sp.mu_dagger,
        };
        let jumped = op.apply(&next);
        let n = jumped.norm();
        if n == 0.0 {
            return Err(Error::invalid(format!(
                "jump in channel {channel:?} requested from a state with zero rate"
            )));
        }
        next = jumped.unscale(n);
    }
    StateVector::from_amplitudes(state.dims(), next)
}

/// Side-channel jump rates `((γ/2)⟨μ†μ⟩, γ/2, (γ/2)⟨μμ†⟩)`.
pub fn jump_rates(state: &StateVector, ops: &CompositeOps, params: &ModelParams) -> [f64; 3] {
    let half = params.gamma / 2.0;
    let pp = state.expect_sparse(&ops.sparse.p_plus).re.clamp(0.0, 1.0);
    let pm = state.expect_sparse(&ops.sparse.p_minus).re.clamp(0.0, 1.0);
    [half * pp, half, half * pm]
}

/// Picks at most one channel using the uniform variate `u`: the unit interval
/// is split into consecutive segments of length `rate·dt` for plus, z, minus.
pub fn select_jump(rates: [f64; 3], dt: f64, u: f64) -> Option<JumpChannel> {
    let channels = [JumpChannel::Plus, JumpChannel::Z, JumpChannel::Minus];
    let mut edge = 0.0;
    for (rate, channel) in rates.into_iter().zip(channels) {
        let mut p = rate * dt;
        if p > MAX_JUMP_PROBABILITY {
            log::debug!("jump probability {p:.3} per step clipped to {MAX_JUMP_PROBABILITY}");
            p = MAX_JUMP_PROBABILITY;
        }
        edge += p;
        if p > 0.0 && u < edge {
            return Some(channel);
        }
    }
    None
}

pub fn sample_jumps<R: Rng + ?Sized>(
    state: &StateVector,
    ops: &CompositeOps,
    params: &ModelParams,
    dt: f64,
    rng: &mut R,
) -> Option<JumpChannel> {
    select_jump(jump_rates(state, ops, params), dt, rng.random())
}

/// `dY = √(2κη)⟨y⟩dt + √η dW + √(1−η) dV`
pub fn synthesize_photocurrent(y_mean: f64, dw: f64, dv: f64, params: &ModelParams, dt: f64) -> f64 {
    let eta = params.eta;
    params.signal_gain() * y_mean * dt + eta.sqrt() * dw + (1.0 - eta).sqrt() * dv
}

pub fn run_trajectory(
    params: &ModelParams,
    grid: &SimGrid,
    initial: &StateVector,
) -> Result<(ObservationRecord, TruthRecord)> {
    run_trajectory_with_noise(params, grid, initial, &mut SeededNoise::new(grid.seed))
}

pub fn run_trajectory_with_noise<N: NoiseSource>(
    params: &ModelParams,
    grid: &SimGrid,
    initial: &StateVector,
    noise: &mut N,
) -> Result<(ObservationRecord, TruthRecord)> {
    params.validate()?;
    grid.validate()?;
    grid.check_stability(params);
    let norm = initial.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("initial state norm {norm} != 1")));
    }

    let ops = CompositeOps::new(initial.dims());
    let n = grid.n_steps;
    let dt = grid.dt;
    let mut times = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    let mut jumps = Vec::new();
    let mut p_plus_full = Vec::with_capacity(n + 1);
    let mut y_mean_full = Vec::with_capacity(n + 1);

    let mut state = initial.clone();
    p_plus_full.push(state.p_plus());
    y_mean_full.push(state.expect_sparse(&ops.sparse.y).re);

    for k in 0..n {
        let StepNoise { dw, dv, u_jump } = noise.next_step(dt);
        let y_mean = *y_mean_full.last().expect("non-empty");
        dy.push(synthesize_photocurrent(y_mean, dw, dv, params, dt));
        times.push(grid.time_after(k));

        let jump = select_jump(jump_rates(&state, &ops, params), dt, u_jump);
        state = sse_step(&state, &ops, params, dt, dw, jump).map_err(|e| match e {
            Error::Numerical { message, .. } => Error::numerical(k, message),
            other => other,
        })?;
        if let Some(channel) = jump {
            jumps.push(JumpEvent {
                step: k,
                time: grid.time_after(k),
                channel,
            });
        }
        p_plus_full.push(state.p_plus());
        y_mean_full.push(state.expect_sparse(&ops.sparse.y).re);
    }

    let record = ObservationRecord {
        times,
        dy,
        jumps,
        params: *params,
        grid: *grid,
        n_fock: initial.dims().n_fock(),
    };
    let truth = TruthRecord {
        p_plus_full,
        y_mean_full,
        dt,
    };
    Ok((record, truth))
}
