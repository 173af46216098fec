//! Optimal homodyne filter.
//!
//! Three representations of the same filter are provided:
//!
//! * [`QMixture`]: each Q-function as a weighted sum of coherent-state
//!   kernels `φ(y − c) = e^{−(y−c)²/4}/(2√π)`. On a kernel the measurement
//!   operator acts as `(y + 2∂_y)φ(y − c) = c·φ(y − c)` and drift plus
//!   diffusion move the center along `dc/dt = −(±g + κc)`, so the PDE
//!   reduces to moving centers and reweighting. This is the default.
//! * [`QState`]: the Q-function PDE on a uniform grid with central
//!   differences and Itô–Euler steps. At `η > ½` the equation is
//!   anti-diffusive in Stratonovich form and this scheme slowly loses
//!   positivity; see [`QState::negativity`].
//! * the normalized density-operator filter on the truncated Hilbert space.
//!
//! All are renormalized after every step; the logged normalization factors
//! let the unnormalized linear filter be reconstructed.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hilbert::{Atom, CompositeOps, DensityOperator, HilbertDims, SparseOp, StateVector};
use crate::trajectory::{ModelParams, ObservationRecord};

/// Uniform grid on `[y_min, y_max]` for the Q-functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QGrid {
    y_min: f64,
    y_max: f64,
    n_points: usize,
}

impl QGrid {
    pub fn new(y_min: f64, y_max: f64, n_points: usize) -> Result<Self> {
        if !(y_min.is_finite() && y_max.is_finite() && y_min < y_max) {
            return Err(Error::invalid(format!("bad grid interval [{y_min}, {y_max}]")));
        }
        if n_points < 16 {
            return Err(Error::invalid(format!("grid needs >= 16 points, got {n_points}")));
        }
        Ok(Self {
            y_min,
            y_max,
            n_points,
        })
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        (self.y_max - self.y_min) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.y_min + i as f64 * self.spacing()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.point(i))
    }

    /// Trapezoid rule.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.n_points);
        let n = f.len();
        let inner: f64 = f[1..n - 1].iter().sum();
        self.spacing() * (inner + 0.5 * (f[0] + f[n - 1]))
    }

    /// Same interval with `2n − 1` points, i.e. half the spacing.
    pub fn refined(&self) -> Self {
        Self {
            n_points: 2 * self.n_points - 1,
            ..*self
        }
    }
}

impl Default for QGrid {
    /// 128 points on `[−18, 18]`.
    fn default() -> Self {
        Self {
            y_min: -18.0,
            y_max: 18.0,
            n_points: 128,
        }
    }
}

/// Pair of Q-functions normalized to unit total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct QState {
    grid: QGrid,
    q_plus: Vec<f64>,
    q_minus: Vec<f64>,
}

impl QState {
    /// Normalizes `(q_plus, q_minus)` to unit trapezoid mass.
    pub fn from_unnormalized(grid: QGrid, q_plus: Vec<f64>, q_minus: Vec<f64>) -> Result<Self> {
        let mut s = Self::raw(grid, q_plus, q_minus)?;
        let m = s.mass();
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::invalid(format!("Q-function mass {m} is not positive")));
        }
        s.scale(1.0 / m);
        Ok(s)
    }

    fn raw(grid: QGrid, q_plus: Vec<f64>, q_minus: Vec<f64>) -> Result<Self> {
        for v in [&q_plus, &q_minus] {
            if v.len() != grid.n_points() {
                return Err(Error::DimensionMismatch {
                    expected: grid.n_points(),
                    found: v.len(),
                });
            }
        }
        Ok(Self {
            grid,
            q_plus,
            q_minus,
        })
    }

    /// `weight_plus·N(mu_plus, 2) + (1 − weight_plus)·N(mu_minus, 2)` on the
    /// grid, the bi-Gaussian family in normalized coordinates.
    pub fn bi_gaussian(grid: QGrid, weight_plus: f64, mu_plus: f64, mu_minus: f64) -> Result<Self> {
        let g = |mu: f64, w: f64| -> Vec<f64> {
            grid.points()
                .map(|y| w / (2.0 * std::f64::consts::PI.sqrt()) * (-(y - mu) * (y - mu) / 4.0).exp())
                .collect()
        };
        Self::from_unnormalized(grid, g(mu_plus, weight_plus), g(mu_minus, 1.0 - weight_plus))
    }

    /// Q-function of `|−⟩⊗|0⟩`, computed through the Fock expansion.
    pub fn vacuum_minus(grid: QGrid, dims: HilbertDims) -> Result<Self> {
        let rho = DensityOperator::from_pure(&StateVector::ground_minus(dims));
        Ok(crate::hilbert::state_to_q(&rho, &grid)?.q)
    }

    pub fn grid(&self) -> &QGrid {
        &self.grid
    }

    pub fn q_plus(&self) -> &[f64] {
        &self.q_plus
    }

    pub fn q_minus(&self) -> &[f64] {
        &self.q_minus
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.q_plus) + self.grid.integrate(&self.q_minus)
    }

    fn scale(&mut self, s: f64) {
        self.q_plus.iter_mut().chain(self.q_minus.iter_mut()).for_each(|v| *v *= s);
    }

    /// `−min/max` over both components; 0 for a nonnegative state.
    pub fn negativity(&self) -> f64 {
        let all = || self.q_plus.iter().chain(&self.q_minus).copied();
        let max = all().fold(0.0, f64::max);
        let min = all().fold(0.0, f64::min);
        if max > 0.0 {
            -min / max
        } else {
            0.0
        }
    }

    /// Number of grid values below `−threshold·max`.
    pub fn count_negative(&self, threshold: f64) -> usize {
        let all = || self.q_plus.iter().chain(&self.q_minus).copied();
        let max = all().fold(0.0, f64::max);
        all().filter(|&v| v < -threshold * max).count()
    }
}

/// Per-step output of any of the filters.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterEstimates {
    /// `k·dt` for `k = 0..=n_steps`.
    pub times: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub y_mean: Vec<f64>,
    /// Mass (or trace) of the state just before each renormalization; length
    /// `n_steps`. Filters without a normalization step log 1.
    pub norm_log: Vec<f64>,
}

impl FilterEstimates {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n + 1),
            p_plus: Vec::with_capacity(n + 1),
            y_mean: Vec::with_capacity(n + 1),
            norm_log: Vec::with_capacity(n),
        }
    }

    pub(crate) fn push(&mut self, t: f64, p_plus: f64, y_mean: f64) {
        self.times.push(t);
        self.p_plus.push(p_plus);
        self.y_mean.push(y_mean);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Innovation increments `dY_k − √(2κη)·ŷ(t_k)·dt` against `record`.
    pub fn innovations(&self, record: &ObservationRecord) -> Result<Vec<f64>> {
        if self.len() != record.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: record.len() + 1,
                found: self.len(),
            });
        }
        let gain = record.params.signal_gain();
        let dt = record.dt();
        Ok(record
            .dy
            .iter()
            .zip(&self.y_mean)
            .map(|(dy, y)| dy - gain * y * dt)
            .collect())
    }
}

/// `p_plus = ∫Q⁺ / m`, `y_mean = ∫y(Q⁺ + Q⁻) / m`.
pub fn qfilter_estimates(state: &QState) -> (f64, f64) {
    let grid = state.grid();
    let m = state.mass();
    let p_plus = grid.integrate(&state.q_plus) / m;
    let first: Vec<f64> = grid
        .points()
        .zip(state.q_plus.iter().zip(&state.q_minus))
        .map(|(y, (a, b))| y * (a + b))
        .collect();
    (p_plus, grid.integrate(&first) / m)
}

/// Linear Itô–Euler step of the unnormalized Q-filter:
///
/// `dQ± = (γ/2)(Q∓ − Q±)dt + ∂_y[(±g + κy)Q±]dt + 2κ∂²_y Q± dt
///        + √(2κη)(y + 2∂_y)Q± dY`
///
/// with central differences and zero boundary values.
pub fn qfilter_step_unnormalized(state: &QState, dy: f64, params: &ModelParams, dt: f64) -> QState {
    let grid = state.grid;
    let n = grid.n_points();
    let h = grid.spacing();
    let half_gamma = params.gamma / 2.0;
    let k = params.kappa;
    let meas = params.signal_gain() * dy;

    let mut out_plus = vec![0.0; n];
    let mut out_minus = vec![0.0; n];
    let ys: Vec<f64> = grid.points().collect();

    for (sign, q, other, out) in [
        (1.0, &state.q_plus, &state.q_minus, &mut out_plus),
        (-1.0, &state.q_minus, &state.q_plus, &mut out_minus),
    ] {
        let flux = |i: usize| (sign * params.g + k * ys[i]) * q[i];
        for i in 1..n - 1 {
            let d1 = (q[i + 1] - q[i - 1]) / (2.0 * h);
            let d2 = (q[i + 1] - 2.0 * q[i] + q[i - 1]) / (h * h);
            let advection = (flux(i + 1) - flux(i - 1)) / (2.0 * h);
            let drift = half_gamma * (other[i] - q[i]) + advection + 2.0 * k * d2;
            out[i] = q[i] + drift * dt + meas * (ys[i] * q[i] + 2.0 * d1);
        }
    }
    QState {
        grid,
        q_plus: out_plus,
        q_minus: out_minus,
    }
}

/// One normalized Q-filter step. Returns the new state and the mass it had
/// before renormalization.
pub fn qfilter_step(state: &QState, dy: f64, params: &ModelParams, dt: f64) -> Result<(QState, f64)> {
    let mut next = qfilter_step_unnormalized(state, dy, params, dt);
    let m = next.mass();
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::numerical(
            0,
            format!("Q-filter mass became {m}; grid too coarse or dt too large"),
        ));
    }
    next.scale(1.0 / m);
    Ok((next, m))
}

/// Default distance below which neighbouring kernel centers are merged.
pub const DEFAULT_MERGE_WIDTH: f64 = 1e-2;

/// Coherent-state kernel `weight·φ(y − center)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub center: f64,
    pub weight: f64,
}

impl Kernel {
    /// `φ(y − c) = e^{−(y−c)²/4}/(2√π)`, the vacuum-width Gaussian.
    pub fn eval(&self, y: f64) -> f64 {
        let u = y - self.center;
        self.weight * (-u * u / 4.0).exp() / (2.0 * std::f64::consts::PI.sqrt())
    }
}

/// Pair of Q-functions as kernel mixtures, normalized to unit total weight.
/// Centers are kept sorted, and kernels in the same bin of the merge width
/// are combined, so the kernel count stays bounded by the spread of the
/// centers over the width.
#[derive(Debug, Clone, PartialEq)]
pub struct QMixture {
    plus: Vec<Kernel>,
    minus: Vec<Kernel>,
    merge_width: f64,
}

impl QMixture {
    pub fn new(plus: Vec<Kernel>, minus: Vec<Kernel>, merge_width: f64) -> Result<Self> {
        if !(merge_width.is_finite() && merge_width > 0.0) {
            return Err(Error::invalid(format!("merge width must be > 0, got {merge_width}")));
        }
        for k in plus.iter().chain(&minus) {
            if !(k.center.is_finite() && k.weight.is_finite() && k.weight >= 0.0) {
                return Err(Error::invalid(format!("bad kernel {k:?}")));
            }
        }
        let sorted = |mut v: Vec<Kernel>| {
            v.sort_by(|a, b| a.center.total_cmp(&b.center));
            merge_close(v, merge_width)
        };
        let mut m = Self {
            plus: sorted(plus),
            minus: sorted(minus),
            merge_width,
        };
        let mass = m.mass();
        if !(mass > 0.0) {
            return Err(Error::invalid("kernel mixture has no weight"));
        }
        m.scale(1.0 / mass);
        Ok(m)
    }

    /// Coherent state `|atom⟩⊗|iy/2⟩` centered at `y = center`.
    pub fn coherent(atom: Atom, center: f64) -> Result<Self> {
        let k = vec![Kernel { center, weight: 1.0 }];
        match atom {
            Atom::Plus => Self::new(k, Vec::new(), DEFAULT_MERGE_WIDTH),
            Atom::Minus => Self::new(Vec::new(), k, DEFAULT_MERGE_WIDTH),
        }
    }

    /// `|−⟩⊗|0⟩`
    pub fn vacuum_minus() -> Self {
        Self::coherent(Atom::Minus, 0.0).expect("valid kernel")
    }

    /// Same bi-Gaussian as [`QState::bi_gaussian`], as two kernels.
    pub fn bi_gaussian(weight_plus: f64, mu_plus: f64, mu_minus: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight_plus) {
            return Err(Error::invalid(format!("weight {weight_plus} outside [0, 1]")));
        }
        Self::new(
            vec![Kernel { center: mu_plus, weight: weight_plus }],
            vec![Kernel { center: mu_minus, weight: 1.0 - weight_plus }],
            DEFAULT_MERGE_WIDTH,
        )
    }

    pub fn with_merge_width(self, merge_width: f64) -> Result<Self> {
        Self::new(self.plus, self.minus, merge_width)
    }

    pub fn merge_width(&self) -> f64 {
        self.merge_width
    }

    pub fn plus(&self) -> &[Kernel] {
        &self.plus
    }

    pub fn minus(&self) -> &[Kernel] {
        &self.minus
    }

    pub fn n_kernels(&self) -> usize {
        self.plus.len() + self.minus.len()
    }

    pub fn mass(&self) -> f64 {
        self.plus.iter().chain(&self.minus).map(|k| k.weight).sum()
    }

    fn scale(&mut self, s: f64) {
        self.plus.iter_mut().chain(self.minus.iter_mut()).for_each(|k| k.weight *= s);
    }

    /// `(p_plus, y_mean)`; each kernel has unit mass and mean `center`.
    pub fn estimates(&self) -> (f64, f64) {
        let m = self.mass();
        let p: f64 = self.plus.iter().map(|k| k.weight).sum();
        let y: f64 = self.plus.iter().chain(&self.minus).map(|k| k.weight * k.center).sum();
        (p / m, y / m)
    }

    /// Q-functions sampled on `grid`.
    pub fn on_grid(&self, grid: QGrid) -> Result<QState> {
        let eval = |ks: &[Kernel]| -> Vec<f64> { grid.points().map(|y| ks.iter().map(|k| k.eval(y)).sum()).collect() };
        QState::from_unnormalized(grid, eval(&self.plus), eval(&self.minus))
    }
}

/// Combines sorted kernels that fall in the same bin `round(c/width)`,
/// preserving weight and mean. Bins are symmetric about 0. Zero weights
/// are dropped.
fn merge_close(sorted: Vec<Kernel>, width: f64) -> Vec<Kernel> {
    let mut out: Vec<Kernel> = Vec::with_capacity(sorted.len());
    let mut bin = f64::NAN;
    for k in sorted.into_iter().filter(|k| k.weight > 0.0) {
        let b = (k.center / width).round();
        match out.last_mut() {
            Some(last) if b == bin => {
                let w = last.weight + k.weight;
                last.center = (last.weight * last.center + k.weight * k.center) / w;
                last.weight = w;
            }
            _ => {
                bin = b;
                out.push(k);
            }
        }
    }
    out
}

fn merge_sorted(a: Vec<Kernel>, b: Vec<Kernel>) -> Vec<Kernel> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut a, mut b) = (a.into_iter().peekable(), b.into_iter().peekable());
    loop {
        let next = match (a.peek(), b.peek()) {
            (Some(x), Some(y)) if x.center <= y.center => a.next(),
            (Some(_), Some(_)) => b.next(),
            (Some(_), None) => a.next(),
            (None, _) => b.next(),
        };
        match next {
            Some(k) => out.push(k),
            None => return out,
        }
    }
}

/// Unnormalized step of the kernel representation: Itô measurement factor
/// `exp(√(2κη)c·dY − κηc²dt)` at the old centers, exact two-state mixing
/// `(1 ± e^{−γdt})/2` between the branches, then the exact affine flow of
/// each center toward `∓g/κ`.
pub fn mixture_step_unnormalized(state: &QMixture, dy: f64, params: &ModelParams, dt: f64) -> QMixture {
    let s = params.signal_gain() * dy;
    let half_var = params.kappa * params.eta * dt;
    let reweight = |ks: &[Kernel]| -> Vec<Kernel> {
        ks.iter()
            .map(|k| Kernel {
                center: k.center,
                weight: k.weight * (s * k.center - half_var * k.center * k.center).exp(),
            })
            .collect()
    };
    let (plus, minus) = (reweight(&state.plus), reweight(&state.minus));

    let e = (-params.gamma * dt).exp();
    let (stay, hop) = ((1.0 + e) / 2.0, (1.0 - e) / 2.0);
    let scaled = |ks: &[Kernel], f: f64| -> Vec<Kernel> {
        ks.iter()
            .map(|k| Kernel {
                center: k.center,
                weight: k.weight * f,
            })
            .collect()
    };
    let plus_next = merge_sorted(scaled(&plus, stay), scaled(&minus, hop));
    let minus_next = merge_sorted(scaled(&minus, stay), scaled(&plus, hop));

    // c ← e^{−κdt}c − a(1 − e^{−κdt})/κ with a = ±g
    let k = params.kappa;
    let contraction = (-k * dt).exp();
    let reach = if k > 0.0 { -(-k * dt).exp_m1() / k } else { dt };
    let flow = |ks: Vec<Kernel>, a: f64| -> Vec<Kernel> {
        let moved = ks
            .into_iter()
            .map(|kn| Kernel {
                center: contraction * kn.center - a * reach,
                weight: kn.weight,
            })
            .collect();
        merge_close(moved, state.merge_width)
    };
    QMixture {
        plus: flow(plus_next, params.g),
        minus: flow(minus_next, -params.g),
        merge_width: state.merge_width,
    }
}

/// Normalized kernel step; returns the mass before renormalization.
pub fn mixture_step(state: &QMixture, dy: f64, params: &ModelParams, dt: f64) -> Result<(QMixture, f64)> {
    let mut next = mixture_step_unnormalized(state, dy, params, dt);
    let m = next.mass();
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::numerical(0, format!("kernel mixture mass became {m}")));
    }
    next.scale(1.0 / m);
    Ok((next, m))
}

/// Operators of the density filter, built once per run.
#[derive(Debug, Clone)]
pub struct DensityFilter {
    ops: CompositeOps,
    identity: SparseOp,
}

impl DensityFilter {
    pub fn new(dims: HilbertDims) -> Self {
        let ops = CompositeOps::new(dims);
        let identity = SparseOp::from_dense(&crate::hilbert::OperatorMatrix::identity(dims.total()));
        Self { ops, identity }
    }

    pub fn ops(&self) -> &CompositeOps {
        &self.ops
    }

    /// `D[c]ρ = cρc† − ½(c†cρ + ρc†c)`
    fn dissipator(c: &SparseOp, cdc: &SparseOp, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let half = Complex64::new(0.5, 0.0);
        c.sandwich(rho) - (cdc.left_mul(rho) + cdc.right_mul(rho)) * half
    }

    /// Itô–Euler step of the normalized filter
    ///
    /// `dρ = −i(g/2)[μ_z x, ρ]dt + 2κD[a]ρ dt + (γ/2)(D[μ] + D[μ_z] + D[μ†])ρ dt
    ///       + √(2κη)(iρa† − iaρ − Tr[ρy]ρ)(dY − √(2κη)Tr[ρy]dt)`
    ///
    /// followed by re-Hermitization and trace renormalization. Returns the
    /// trace before renormalization.
    pub fn step(&self, rho: &DensityOperator, dy: f64, params: &ModelParams, dt: f64) -> Result<(DensityOperator, f64)> {
        if rho.dims() != self.ops.dims {
            return Err(Error::DimensionMismatch {
                expected: self.ops.dims.total(),
                found: rho.dims().total(),
            });
        }
        let sp = &self.ops.sparse;
        let r = rho.matrix();
        let i = Complex64::i();
        let y_mean = rho.expect_sparse(&sp.y).re;

        let hamiltonian = (sp.mu_z_x.left_mul(r) - sp.mu_z_x.right_mul(r)) * (-i * (params.g / 2.0));
        let cavity = Self::dissipator(&sp.a, &sp.number, r) * Complex64::from(2.0 * params.kappa);
        let atomic = (Self::dissipator(&sp.mu, &sp.p_plus, r)
            + Self::dissipator(&sp.mu_z, &self.identity, r)
            + Self::dissipator(&sp.mu_dagger, &sp.p_minus, r))
            * Complex64::from(params.gamma / 2.0);

        let gain = params.signal_gain();
        let innovation = dy - gain * y_mean * dt;
        let measurement = (sp.a.right_mul_adjoint(r) * i - sp.a.left_mul(r) * i - r * Complex64::from(y_mean))
            * Complex64::from(gain * innovation);

        let next = r + (hamiltonian + cavity + atomic) * Complex64::from(dt) + measurement;
        let mut out = DensityOperator::from_matrix(rho.dims(), next)?;
        out.hermitize();
        let t = out.normalize_trace();
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::numerical(0, format!("density filter trace became {t}")));
        }
        Ok((out, t))
    }

    pub fn estimates(&self, rho: &DensityOperator) -> (f64, f64) {
        (rho.p_plus(), rho.expect_sparse(&self.ops.sparse.y).re)
    }
}

/// Convenience wrapper building the operators on every call; use
/// [`DensityFilter`] in loops.
pub fn density_filter_step(rho: &DensityOperator, dy: f64, params: &ModelParams, dt: f64) -> Result<DensityOperator> {
    Ok(DensityFilter::new(rho.dims()).step(rho, dy, params, dt)?.0)
}

/// Initial condition, which also selects the representation.
#[derive(Debug, Clone)]
pub enum FilterInit {
    /// Coherent-kernel mixture.
    Mixture(QMixture),
    /// Central-difference grid.
    Grid(QState),
    /// Density operator.
    Density(DensityOperator),
}

impl FilterInit {
    /// `|−⟩⊗|0⟩` as a single kernel.
    pub fn mixture_vacuum() -> Self {
        FilterInit::Mixture(QMixture::vacuum_minus())
    }

    /// `|−⟩⊗|0⟩` on the grid.
    pub fn grid_vacuum(grid: QGrid, dims: HilbertDims) -> Result<Self> {
        Ok(FilterInit::Grid(QState::vacuum_minus(grid, dims)?))
    }

    /// `|−⟩⊗|0⟩` as a density operator.
    pub fn density_vacuum(dims: HilbertDims) -> Self {
        FilterInit::Density(DensityOperator::from_pure(&StateVector::ground_minus(dims)))
    }
}

fn at_step(e: Error, k: usize) -> Error {
    match e {
        Error::Numerical { message, .. } => Error::numerical(k, message),
        other => other,
    }
}

/// Runs the optimal filter over a whole record.
pub fn run_qfilter(record: &ObservationRecord, init: &FilterInit) -> Result<FilterEstimates> {
    record.validate()?;
    let params = &record.params;
    let dt = record.dt();
    let mut est = FilterEstimates::with_capacity(record.len());
    match init {
        FilterInit::Mixture(q0) => {
            let mut q = q0.clone();
            let (p, y) = q.estimates();
            est.push(0.0, p, y);
            for (k, (&dy, &t)) in record.dy.iter().zip(&record.times).enumerate() {
                let (next, m) = mixture_step(&q, dy, params, dt).map_err(|e| at_step(e, k))?;
                q = next;
                let (p, y) = q.estimates();
                est.push(t, p, y);
                est.norm_log.push(m);
            }
        }
        FilterInit::Grid(q0) => {
            let mut q = q0.clone();
            let (p, y) = qfilter_estimates(&q);
            est.push(0.0, p, y);
            for (k, (&dy, &t)) in record.dy.iter().zip(&record.times).enumerate() {
                let (next, m) = qfilter_step(&q, dy, params, dt).map_err(|e| at_step(e, k))?;
                q = next;
                let (p, y) = qfilter_estimates(&q);
                est.push(t, p, y);
                est.norm_log.push(m);
            }
        }
        FilterInit::Density(rho0) => {
            let filter = DensityFilter::new(rho0.dims());
            let mut rho = rho0.clone();
            let (p, y) = filter.estimates(&rho);
            est.push(0.0, p, y);
            for (k, (&dy, &t)) in record.dy.iter().zip(&record.times).enumerate() {
                let (next, tr) = filter.step(&rho, dy, params, dt).map_err(|e| at_step(e, k))?;
                rho = next;
                let (p, y) = filter.estimates(&rho);
                est.push(t, p, y);
                est.norm_log.push(tr);
            }
        }
    }
    Ok(est)
}
