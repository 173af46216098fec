//! Random telegraph signal in white noise and its Wonham filter.
//!
//! `x(t)` jumps between `a₊` and `a₋` at rate `λ` each way and is seen
//! through `dy = s·x dt + dw`. The Wonham filter for `p₊ = P(x = a₊)` is
//!
//! ```text
//! dp₊ = −2λ(p₊ − ½)dt + s p₊(1 − p₊)(a₊ − a₋)(dy − s[a₊p₊ + a₋(1 − p₊)]dt)
//! ```

use rand::Rng;
use rand_distr::{Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::trajectory::{ModelParams, SimGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelegraphParams {
    pub a_plus: f64,
    pub a_minus: f64,
    /// Switching rate `λ` out of either level.
    pub rate: f64,
    /// Observation gain `s`.
    pub snr_gain: f64,
}

impl TelegraphParams {
    pub fn new(a_plus: f64, a_minus: f64, rate: f64, snr_gain: f64) -> Result<Self> {
        let p = Self {
            a_plus,
            a_minus,
            rate,
            snr_gain,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.a_plus, self.a_minus, self.rate, self.snr_gain].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("non-finite telegraph parameters {self:?}")));
        }
        if self.rate <= 0.0 {
            return Err(Error::invalid(format!("switching rate must be > 0, got {}", self.rate)));
        }
        if self.a_plus == self.a_minus {
            log::warn!("telegraph levels coincide; the observation carries no information");
        }
        Ok(())
    }

    /// Levels `a± = ∓g/κ`, rate `γ/2`, gain `√(2κη)`.
    pub fn from_model(params: &ModelParams) -> Result<Self> {
        let level = params.plateau();
        Self::new(-level, level, params.gamma / 2.0, params.signal_gain())
    }

    /// Same rate and gain with the levels replaced.
    pub fn with_levels(self, a_plus: f64, a_minus: f64) -> Self {
        Self {
            a_plus,
            a_minus,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WonhamState {
    pub p_plus: f64,
}

impl WonhamState {
    pub fn new(p_plus: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_plus) {
            return Err(Error::invalid(format!("p_plus = {p_plus} outside [0, 1]")));
        }
        Ok(Self { p_plus })
    }
}

/// Telegraph path on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TelegraphPath {
    /// Level at `k·dt`, length `n_steps + 1`.
    pub x: Vec<f64>,
    /// Observation increments, length `n_steps`.
    pub dy: Vec<f64>,
    /// Exact switching times.
    pub switch_times: Vec<f64>,
}

impl TelegraphPath {
    /// Fraction of grid points at `a_plus`.
    pub fn occupation(&self, a_plus: f64) -> f64 {
        self.x.iter().filter(|&&v| v == a_plus).count() as f64 / self.x.len() as f64
    }
}

/// Samples a stationary telegraph path with exponential holding times and
/// integrates it exactly over each step, then adds Gaussian observation
/// noise.
pub fn simulate_telegraph<R: Rng + ?Sized>(params: &TelegraphParams, grid: &SimGrid, rng: &mut R) -> Result<TelegraphPath> {
    params.validate()?;
    grid.validate()?;
    let clock = Exp::new(params.rate).map_err(|e| Error::invalid(e.to_string()))?;
    let dt = grid.dt;
    let n = grid.n_steps;

    let mut at_plus = rng.random_bool(0.5);
    let mut next_switch: f64 = rng.sample(clock);
    let mut switch_times = Vec::new();
    let level = |plus: bool| if plus { params.a_plus } else { params.a_minus };

    let mut x = Vec::with_capacity(n + 1);
    let mut dy = Vec::with_capacity(n);
    x.push(level(at_plus));
    for k in 0..n {
        let (t0, t1) = (k as f64 * dt, (k + 1) as f64 * dt);
        let mut integral = 0.0;
        let mut t = t0;
        while next_switch < t1 {
            integral += level(at_plus) * (next_switch - t);
            t = next_switch;
            at_plus = !at_plus;
            switch_times.push(next_switch);
            next_switch += rng.sample(clock);
        }
        integral += level(at_plus) * (t1 - t);
        let dw: f64 = rng.sample::<f64, _>(StandardNormal) * dt.sqrt();
        dy.push(params.snr_gain * integral + dw);
        x.push(level(at_plus));
    }
    Ok(TelegraphPath { x, dy, switch_times })
}

/// Euler step of the Wonham filter clamped to `[0, 1]`. The flag reports
/// whether the clamp was active.
pub fn wonham_step(state: &WonhamState, dy: f64, params: &TelegraphParams, dt: f64) -> (WonhamState, bool) {
    let p = state.p_plus;
    let s = params.snr_gain;
    let (ap, am) = (params.a_plus, params.a_minus);
    let gamma = 2.0 * params.rate;
    let next = p - gamma * (p - 0.5) * dt + s * p * (1.0 - p) * (ap - am) * (dy - s * (ap * p + am * (1.0 - p)) * dt);
    let clamped = !(0.0..=1.0).contains(&next);
    (
        WonhamState {
            p_plus: next.clamp(0.0, 1.0),
        },
        clamped,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct WonhamRun {
    /// Filter output at `k·dt`, length `n + 1`.
    pub p_plus: Vec<f64>,
    pub clamp_count: usize,
}

pub fn run_wonham(dy: &[f64], params: &TelegraphParams, dt: f64, initial: WonhamState) -> WonhamRun {
    let mut p_plus = Vec::with_capacity(dy.len() + 1);
    let mut clamp_count = 0;
    let mut state = initial;
    p_plus.push(state.p_plus);
    for &d in dy {
        let (next, clamped) = wonham_step(&state, d, params, dt);
        clamp_count += usize::from(clamped);
        state = next;
        p_plus.push(state.p_plus);
    }
    WonhamRun { p_plus, clamp_count }
}

/// Time average of `|p₊ − 1{x = a₊}|`.
pub fn tracking_error(run: &WonhamRun, path: &TelegraphPath, a_plus: f64) -> f64 {
    let total: f64 = run
        .p_plus
        .iter()
        .zip(&path.x)
        .map(|(p, &x)| (p - if x == a_plus { 1.0 } else { 0.0 }).abs())
        .sum();
    total / run.p_plus.len() as f64
}
