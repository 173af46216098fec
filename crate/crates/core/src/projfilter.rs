//! Three-parameter projection filter onto the bi-Gaussian family
//! `q(y, ±) = (ν±/2√π)·exp(−(y − μ±)²/4)`.
//!
//! In normalized coordinates `ν̃ = ν⁺/(ν⁺ + ν⁻)` the Itô equations are
//!
//! ```text
//! dν̃  = −γ(ν̃ − ½)dt + √(2κη)ν̃(1 − ν̃)(μ⁺ − μ⁻)(dY − √(2κη)[μ⁺ν̃ + μ⁻(1 − ν̃)]dt)
//! dμ⁺ = [−g − κμ⁺ + (γ/2)((1 − ν̃)/ν̃)(μ⁻ − μ⁺)]dt
//! dμ⁻ = [ g − κμ⁻ + (γ/2)(ν̃/(1 − ν̃))(μ⁺ − μ⁻)]dt
//! ```
//!
//! The family is singular at `ν̃ ∈ {0, 1}`; the weight is clamped to
//! `[ε, 1 − ε]` and every clamp is counted.

use crate::error::{Error, Result};
use crate::infogeo::ThetaUnnorm;
use crate::qfilter::FilterEstimates;
use crate::trajectory::{ModelParams, ObservationRecord};

/// Clamp distance of `ν̃` from the singular points.
pub const NU_EPSILON: f64 = 1e-12;
/// `μ⁺` (resp. `μ⁻`) is held fixed while `ν̃` (resp. `1 − ν̃`) is below this.
pub const FREEZE_THRESHOLD: f64 = 1e-6;

/// Normalized filter parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjState {
    pub nu_tilde: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
}

impl ProjState {
    /// Clamps `nu_tilde` into `[ε, 1 − ε]`.
    pub fn new(nu_tilde: f64, mu_plus: f64, mu_minus: f64) -> Result<Self> {
        if !(nu_tilde.is_finite() && mu_plus.is_finite() && mu_minus.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite projection state ({nu_tilde}, {mu_plus}, {mu_minus})"
            )));
        }
        Ok(Self {
            nu_tilde: nu_tilde.clamp(NU_EPSILON, 1.0 - NU_EPSILON),
            mu_plus,
            mu_minus,
        })
    }

    /// `ν̃ = μ⁺ = μ⁻ = 0`, i.e. the atom certainly in `|−⟩` and the cavity
    /// empty, with the weight moved onto the clamp.
    pub fn singular_start() -> Self {
        Self {
            nu_tilde: NU_EPSILON,
            mu_plus: 0.0,
            mu_minus: 0.0,
        }
    }

    /// Representative unnormalized parameters (`ν⁺ + ν⁻ = 1`).
    pub fn to_theta(&self) -> ThetaUnnorm {
        ThetaUnnorm {
            mu_plus: self.mu_plus,
            nu_plus: self.nu_tilde,
            mu_minus: self.mu_minus,
            nu_minus: 1.0 - self.nu_tilde,
        }
    }

    /// Exchanges the roles of the two branches.
    pub fn swapped(&self) -> Self {
        Self {
            nu_tilde: 1.0 - self.nu_tilde,
            mu_plus: self.mu_minus,
            mu_minus: self.mu_plus,
        }
    }
}

impl From<ThetaUnnorm> for ProjState {
    fn from(t: ThetaUnnorm) -> Self {
        let total = t.nu_plus + t.nu_minus;
        Self {
            nu_tilde: t.nu_plus / total,
            mu_plus: t.mu_plus,
            mu_minus: t.mu_minus,
        }
    }
}

/// `(p_plus, y_mean) = (ν̃, ν̃μ⁺ + (1 − ν̃)μ⁻)`
pub fn proj_estimates(state: &ProjState) -> (f64, f64) {
    let nu = state.nu_tilde;
    (nu, nu * state.mu_plus + (1.0 - nu) * state.mu_minus)
}

/// Which centers are held fixed during a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Freeze {
    pub mu_plus: bool,
    pub mu_minus: bool,
}

impl Freeze {
    pub const BOTH: Freeze = Freeze {
        mu_plus: true,
        mu_minus: true,
    };

    /// The singular-start rule: a center moves only once its branch carries
    /// at least [`FREEZE_THRESHOLD`] weight.
    pub fn singular(state: &ProjState) -> Self {
        Self {
            mu_plus: state.nu_tilde < FREEZE_THRESHOLD,
            mu_minus: 1.0 - state.nu_tilde < FREEZE_THRESHOLD,
        }
    }
}

/// Itô drift `(ν̃, μ⁺, μ⁻)` of the normalized filter.
pub fn ito_drift(state: &ProjState, params: &ModelParams) -> [f64; 3] {
    let ProjState {
        nu_tilde: nu,
        mu_plus: mp,
        mu_minus: mm,
    } = *state;
    let c = params.signal_gain();
    let half_gamma = params.gamma / 2.0;
    [
        -params.gamma * (nu - 0.5) - c * c * nu * (1.0 - nu) * (mp - mm) * (mp * nu + mm * (1.0 - nu)),
        -params.g - params.kappa * mp + half_gamma * ((1.0 - nu) / nu) * (mm - mp),
        params.g - params.kappa * mm + half_gamma * (nu / (1.0 - nu)) * (mp - mm),
    ]
}

/// Stratonovich drift `(ν̃, μ⁺, μ⁻)` of the normalized filter.
pub fn stratonovich_drift(state: &ProjState, params: &ModelParams) -> [f64; 3] {
    let ProjState {
        nu_tilde: nu,
        mu_plus: mp,
        mu_minus: mm,
    } = *state;
    let k_eta = params.kappa * params.eta;
    let ito = ito_drift(state, params);
    [
        -params.gamma * (nu - 0.5) - k_eta * nu * (1.0 - nu) * (mp * mp - mm * mm),
        ito[1],
        ito[2],
    ]
}

/// Coefficient of `dY` (identical in both calculi).
pub fn gain(state: &ProjState, params: &ModelParams) -> [f64; 3] {
    let nu = state.nu_tilde;
    [
        params.signal_gain() * nu * (1.0 - nu) * (state.mu_plus - state.mu_minus),
        0.0,
        0.0,
    ]
}

/// Stratonovich drift `(μ⁺, ν⁺, μ⁻, ν⁻)` of the unnormalized filter.
pub fn stratonovich_drift_unnorm(theta: &ThetaUnnorm, params: &ModelParams) -> [f64; 4] {
    let ThetaUnnorm {
        mu_plus: mp,
        nu_plus: np,
        mu_minus: mm,
        nu_minus: nm,
    } = *theta;
    let k = params.kappa;
    let k_eta = k * params.eta;
    let hg = params.gamma / 2.0;
    [
        -params.g - k * mp + hg * (nm / np) * (mm - mp),
        hg * (nm - np) - k_eta * mp * mp * np,
        params.g - k * mm + hg * (np / nm) * (mp - mm),
        hg * (np - nm) - k_eta * mm * mm * nm,
    ]
}

/// `dY` coefficients `(μ⁺, ν⁺, μ⁻, ν⁻)` of the unnormalized filter.
pub fn gain_unnorm(theta: &ThetaUnnorm, params: &ModelParams) -> [f64; 4] {
    let c = params.signal_gain();
    [0.0, c * theta.mu_plus * theta.nu_plus, 0.0, c * theta.mu_minus * theta.nu_minus]
}

/// Parameter vectors that admit the Itô correction `½(∂b/∂θ)·b` for a
/// single scalar noise with coefficient field `b`.
pub trait FilterCoordinates {
    type Vector;

    /// Returns `(b, ∂b/∂θ)` at the point.
    fn gain_jacobian(&self, params: &ModelParams) -> (Self::Vector, Vec<Vec<f64>>);
}

impl FilterCoordinates for ThetaUnnorm {
    type Vector = [f64; 4];

    fn gain_jacobian(&self, params: &ModelParams) -> ([f64; 4], Vec<Vec<f64>>) {
        let c = params.signal_gain();
        let mut jac = vec![vec![0.0; 4]; 4];
        // b_ν± = c μ± ν±
        jac[1][0] = c * self.nu_plus;
        jac[1][1] = c * self.mu_plus;
        jac[3][2] = c * self.nu_minus;
        jac[3][3] = c * self.mu_minus;
        (gain_unnorm(self, params), jac)
    }
}

impl FilterCoordinates for ProjState {
    type Vector = [f64; 3];

    fn gain_jacobian(&self, params: &ModelParams) -> ([f64; 3], Vec<Vec<f64>>) {
        let c = params.signal_gain();
        let nu = self.nu_tilde;
        let d = self.mu_plus - self.mu_minus;
        let mut jac = vec![vec![0.0; 3]; 3];
        // b_ν̃ = c ν̃(1 − ν̃)(μ⁺ − μ⁻)
        jac[0][0] = c * (1.0 - 2.0 * nu) * d;
        jac[0][1] = c * nu * (1.0 - nu);
        jac[0][2] = -c * nu * (1.0 - nu);
        (gain(self, params), jac)
    }
}

/// Itô minus Stratonovich drift, `½ Σ_j (∂b_i/∂θ_j) b_j`.
pub fn strat_to_ito_drift<C>(coords: &C, params: &ModelParams) -> C::Vector
where
    C: FilterCoordinates,
    C::Vector: AsRef<[f64]> + AsMut<[f64]> + Default,
{
    let (b, jac) = coords.gain_jacobian(params);
    let mut out = C::Vector::default();
    for (i, row) in jac.iter().enumerate() {
        out.as_mut()[i] = 0.5 * row.iter().zip(b.as_ref()).map(|(j, bj)| j * bj).sum::<f64>();
    }
    out
}

/// One Euler step with the given centers held fixed. Returns the new state
/// and whether `ν̃` had to be clamped.
pub fn proj_step_frozen(
    state: &ProjState,
    dy: f64,
    params: &ModelParams,
    dt: f64,
    freeze: Freeze,
) -> Result<(ProjState, bool)> {
    let nu = state.nu_tilde;
    let mp = state.mu_plus;
    let mm = state.mu_minus;
    let c = params.signal_gain();
    let drift = ito_drift(state, params);

    let nu_next = nu - params.gamma * (nu - 0.5) * dt + c * nu * (1.0 - nu) * (mp - mm) * (dy - c * (mp * nu + mm * (1.0 - nu)) * dt);
    let mp_next = if freeze.mu_plus { mp } else { mp + drift[1] * dt };
    let mm_next = if freeze.mu_minus { mm } else { mm + drift[2] * dt };

    if !(nu_next.is_finite() && mp_next.is_finite() && mm_next.is_finite()) {
        return Err(Error::numerical(
            0,
            format!("projection filter left the finite range at ({nu}, {mp}, {mm})"),
        ));
    }
    let clamped = !(NU_EPSILON..=1.0 - NU_EPSILON).contains(&nu_next);
    Ok((
        ProjState {
            nu_tilde: nu_next.clamp(NU_EPSILON, 1.0 - NU_EPSILON),
            mu_plus: mp_next,
            mu_minus: mm_next,
        },
        clamped,
    ))
}

/// One Euler step of the Itô equations with both centers free.
pub fn proj_step(state: &ProjState, dy: f64, params: &ModelParams, dt: f64) -> Result<(ProjState, bool)> {
    proj_step_frozen(state, dy, params, dt, Freeze::default())
}

/// Same step assembled from the Stratonovich drift plus the Itô correction.
pub fn proj_step_stratonovich(state: &ProjState, dy: f64, params: &ModelParams, dt: f64) -> [f64; 3] {
    let s = stratonovich_drift(state, params);
    let corr = strat_to_ito_drift(state, params);
    let b = gain(state, params);
    let x = [state.nu_tilde, state.mu_plus, state.mu_minus];
    std::array::from_fn(|i| x[i] + (s[i] + corr[i]) * dt + b[i] * dy)
}

/// How centers are treated during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CenterMode {
    /// Centers evolve, held only by the singular-start rule.
    #[default]
    Free,
    /// Centers never move; the filter reduces to Wonham's.
    Frozen,
}

/// Full output of a projection-filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjRun {
    pub estimates: FilterEstimates,
    /// Parameters at `k·dt` for `k = 0..=n_steps`.
    pub trace: Vec<ProjState>,
    pub clamp_count: usize,
}

pub fn run_projfilter_with(record: &ObservationRecord, initial: ProjState, mode: CenterMode) -> Result<ProjRun> {
    record.validate()?;
    let params = &record.params;
    let dt = record.dt();
    let mut est = FilterEstimates::with_capacity(record.len());
    let mut trace = Vec::with_capacity(record.len() + 1);
    let mut clamp_count = 0;

    let mut state = ProjState::new(initial.nu_tilde, initial.mu_plus, initial.mu_minus)?;
    let (p, y) = proj_estimates(&state);
    est.push(0.0, p, y);
    trace.push(state);
    for (k, (&dy, &t)) in record.dy.iter().zip(&record.times).enumerate() {
        let freeze = match mode {
            CenterMode::Free => Freeze::singular(&state),
            CenterMode::Frozen => Freeze::BOTH,
        };
        let (next, clamped) = proj_step_frozen(&state, dy, params, dt, freeze).map_err(|e| match e {
            Error::Numerical { message, .. } => Error::numerical(k, message),
            other => other,
        })?;
        if clamped {
            clamp_count += 1;
            log::debug!("nu_tilde clamped at step {k}");
        }
        state = next;
        let (p, y) = proj_estimates(&state);
        est.push(t, p, y);
        est.norm_log.push(1.0);
        trace.push(state);
    }
    Ok(ProjRun {
        estimates: est,
        trace,
        clamp_count,
    })
}

/// Runs the projection filter over a record.
pub fn run_projfilter(record: &ObservationRecord, initial: ProjState) -> Result<FilterEstimates> {
    Ok(run_projfilter_with(record, initial, CenterMode::Free)?.estimates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{SimGrid, TruthRecord};

    fn zero_record(params: ModelParams, dt: f64, n: usize) -> ObservationRecord {
        ObservationRecord {
            times: (0..n).map(|k| (k + 1) as f64 * dt).collect(),
            dy: vec![0.0; n],
            jumps: vec![],
            params,
            grid: SimGrid::new(dt, n, 0).unwrap(),
            n_fock: 2,
        }
    }

    #[test]
    fn estimates_of_simple_states() {
        let s = ProjState::new(0.5, -3.0, 3.0).unwrap();
        assert_eq!(proj_estimates(&s), (0.5, 0.0));
        let s = ProjState::new(1.0, -3.0, 3.0).unwrap();
        assert_close!(proj_estimates(&s).1, -3.0, 1e-11);
    }

    #[test]
    fn construction_clamps() {
        assert_eq!(ProjState::new(0.0, 0.0, 0.0).unwrap().nu_tilde, NU_EPSILON);
        assert_eq!(ProjState::new(1.0, 0.0, 0.0).unwrap().nu_tilde, 1.0 - NU_EPSILON);
        assert!(ProjState::new(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn no_measurement_relaxes_weight() {
        let params = ModelParams::new(120.0, 40.0, 20.0, 0.0).unwrap();
        let mut s = ProjState::new(0.9, -3.0, 3.0).unwrap();
        let dt = 1e-5;
        for _ in 0..10_000 {
            s = proj_step(&s, 0.37, &params, dt).unwrap().0;
        }
        // exact Euler decay of ν̃ − ½
        let expected = 0.5 + 0.4 * (1.0 - 20.0 * dt).powi(10_000);
        assert_close!(s.nu_tilde, expected, 1e-12);
    }

    #[test]
    fn flow_to_symmetric_fixed_point() {
        let params = ModelParams::new(120.0, 40.0, 20.0, 0.0).unwrap();
        let record = zero_record(params, 1e-4, 20_000);
        let run = run_projfilter_with(&record, ProjState::new(0.2, 1.0, -0.5).unwrap(), CenterMode::Free).unwrap();
        let last = run.trace.last().unwrap();
        assert_close!(last.nu_tilde, 0.5, 1e-9);
        assert_close!(last.mu_plus, -2.0, 1e-9);
        assert_close!(last.mu_minus, 2.0, 1e-9);
        assert_eq!(run.clamp_count, 0);
    }

    #[test]
    fn locked_branch_settles_at_steady_level() {
        let params = ModelParams::moderate();
        let s = ProjState::new(1.0, -3.0, 3.0).unwrap();
        let d = ito_drift(&s, &params);
        assert_close!(d[1], 0.0, 1e-9);
    }

    #[test]
    fn singular_start_freezes_plus_center() {
        let s = ProjState::singular_start();
        assert_eq!(Freeze::singular(&s), Freeze { mu_plus: true, mu_minus: false });
        let params = ModelParams::moderate();
        let (next, clamped) = proj_step_frozen(&s, 0.01, &params, 1e-5, Freeze::singular(&s)).unwrap();
        assert!(!clamped);
        assert_eq!(next.mu_plus, 0.0);
        assert!(next.nu_tilde > FREEZE_THRESHOLD);
    }

    #[test]
    fn nu_plus_correction_cancels_stratonovich_term() {
        let params = ModelParams::moderate();
        let theta = ThetaUnnorm::new(-2.5, 0.7, 1.5, 0.3).unwrap();
        let s = stratonovich_drift_unnorm(&theta, &params);
        let corr = strat_to_ito_drift(&theta, &params);
        assert_eq!(corr[0], 0.0);
        assert_eq!(corr[2], 0.0);
        let k_eta = params.kappa * params.eta;
        assert_eq!(corr[1], k_eta * theta.mu_plus * theta.mu_plus * theta.nu_plus);
        assert_close!(s[1] + corr[1], 10.0 * (0.3 - 0.7), 1e-12);
        assert_close!(s[3] + corr[3], 10.0 * (0.7 - 0.3), 1e-12);
    }

    #[test]
    fn zero_efficiency_has_no_correction() {
        let params = ModelParams::moderate().with_eta(0.0);
        let s = ProjState::new(0.3, -1.0, 2.0).unwrap();
        assert_eq!(strat_to_ito_drift(&s, &params), [0.0; 3]);
    }

    #[test]
    fn normalized_forms_agree() {
        let params = ModelParams::moderate();
        let s = ProjState::new(0.3, -2.0, 2.5).unwrap();
        let a = proj_step(&s, 0.004, &params, 1e-5).unwrap().0;
        let b = proj_step_stratonovich(&s, 0.004, &params, 1e-5);
        assert_close!(a.nu_tilde, b[0], 1e-15);
        assert_close!(a.mu_plus, b[1], 1e-12);
        assert_close!(a.mu_minus, b[2], 1e-12);
    }

    #[test]
    fn swap_symmetry_on_a_record() {
        let params = ModelParams::moderate();
        let grid = SimGrid::new(1e-5, 2000, 3).unwrap();
        let dims = crate::hilbert::HilbertDims::new(10).unwrap();
        let (rec, _): (_, TruthRecord) =
            crate::trajectory::run_trajectory(&params, &grid, &crate::hilbert::StateVector::ground_minus(dims)).unwrap();
        let mirrored = ObservationRecord {
            params: params.with_g(-params.g),
            ..rec.clone()
        };
        let s0 = ProjState::new(0.3, -1.0, 2.0).unwrap();
        let a = run_projfilter_with(&rec, s0, CenterMode::Frozen).unwrap();
        let b = run_projfilter_with(&mirrored, s0.swapped(), CenterMode::Frozen).unwrap();
        let a_free = run_projfilter_with(&rec, s0, CenterMode::Free).unwrap();
        let b_free = run_projfilter_with(&mirrored, s0.swapped(), CenterMode::Free).unwrap();
        for (x, y) in a.trace.iter().zip(&b.trace).chain(a_free.trace.iter().zip(&b_free.trace)) {
            let y = y.swapped();
            assert_close!(x.nu_tilde, y.nu_tilde, 1e-10);
            assert_close!(x.mu_plus, y.mu_plus, 1e-9);
            assert_close!(x.mu_minus, y.mu_minus, 1e-9);
        }
    }

    #[test]
    fn run_lengths() {
        let params = ModelParams::moderate();
        let record = zero_record(params, 1e-5, 50);
        let est = run_projfilter(&record, ProjState::singular_start()).unwrap();
        assert_eq!(est.len(), 51);
        assert_eq!(est.norm_log.len(), 50);
    }
}
