//! Truncated atom ⊗ cavity Hilbert space.
//!
//! Basis ordering is atom-major: the first `n_fock` amplitudes belong to
//! `|+⟩ ⊗ |n⟩`, the next `n_fock` to `|−⟩ ⊗ |n⟩`. Every composite operator in
//! the crate is built with [`embed`], which follows the same convention.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qfilter::{QGrid, QState};

pub const DEFAULT_N_FOCK: usize = 25;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HilbertDims {
    n_fock: usize,
}

impl HilbertDims {
    pub fn new(n_fock: usize) -> Result<Self> {
        if n_fock < 2 {
            return Err(Error::invalid(format!("n_fock must be >= 2, got {n_fock}")));
        }
        Ok(Self { n_fock })
    }

    pub fn n_fock(&self) -> usize {
        self.n_fock
    }

    /// Dimension of the composite space, `2 * n_fock`.
    pub fn total(&self) -> usize {
        2 * self.n_fock
    }

    pub fn index(&self, atom: Atom, n: usize) -> usize {
        debug_assert!(n < self.n_fock);
        atom.block() * self.n_fock + n
    }
}

impl Default for HilbertDims {
    fn default() -> Self {
        Self {
            n_fock: DEFAULT_N_FOCK,
        }
    }
}

/// Atomic basis state in the dressed basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Atom {
    Plus,
    Minus,
}

impl Atom {
    fn block(self) -> usize {
        match self {
            Atom::Plus => 0,
            Atom::Minus => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Atom::Plus => Atom::Minus,
            Atom::Minus => Atom::Plus,
        }
    }
}

/// Dense complex square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix(DMatrix<Complex64>);

impl OperatorMatrix {
    pub fn from_matrix(m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid(format!(
                "operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(&self.0 - &other.0)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self(&self.0 * s)
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0 - &other.0 * &self.0)
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        (&self.0 - self.0.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.0 * v
    }
}

/// Sparse view of an operator, used on the hot paths of the simulator and
/// the density filter where dense 50×50 products would dominate run time.
#[derive(Debug, Clone)]
pub struct SparseOp {
    dim: usize,
    entries: Vec<(usize, usize, Complex64)>,
}

impl SparseOp {
    pub fn from_dense(op: &OperatorMatrix) -> Self {
        let m = op.matrix();
        let mut entries = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let z = m[(r, c)];
                if z != ZERO {
                    entries.push((r, c, z));
                }
            }
        }
        Self {
            dim: m.nrows(),
            entries,
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        let mut out = DVector::zeros(self.dim);
        for &(r, c, z) in &self.entries {
            out[r] += z * v[c];
        }
        out
    }

    /// `A ρ`
    pub fn left_mul(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = rho.ncols();
        let mut out = DMatrix::zeros(self.dim, n);
        for &(r, c, z) in &self.entries {
            for j in 0..n {
                out[(r, j)] += z * rho[(c, j)];
            }
        }
        out
    }

    /// `ρ A†`
    pub fn right_mul_adjoint(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        // (ρ A†)_{ij} = Σ_k ρ_{ik} conj(A_{jk})
        let n = rho.nrows();
        let mut out = DMatrix::zeros(n, self.dim);
        for &(r, c, z) in &self.entries {
            let zc = z.conj();
            for i in 0..n {
                out[(i, r)] += rho[(i, c)] * zc;
            }
        }
        out
    }

    /// `ρ A`
    pub fn right_mul(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = rho.nrows();
        let mut out = DMatrix::zeros(n, self.dim);
        for &(r, c, z) in &self.entries {
            for i in 0..n {
                out[(i, c)] += rho[(i, r)] * z;
            }
        }
        out
    }

    /// `A ρ A†`
    pub fn sandwich(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self.right_mul_adjoint(&self.left_mul(rho))
    }
}

/// Annihilation operator `a` on the cavity factor (`n_fock × n_fock`).
pub fn build_annihilation(dims: HilbertDims) -> OperatorMatrix {
    let n = dims.n_fock();
    let mut m = DMatrix::zeros(n, n);
    for k in 1..n {
        m[(k - 1, k)] = Complex64::new((k as f64).sqrt(), 0.0);
    }
    OperatorMatrix(m)
}

/// Atomic lowering/raising/inversion operators in the `(|+⟩, |−⟩)` basis.
#[derive(Debug, Clone)]
pub struct AtomicOps {
    /// `μ = |−⟩⟨+|`
    pub mu: OperatorMatrix,
    pub mu_dagger: OperatorMatrix,
    /// `μ_z = [μ†, μ] = diag(1, −1)`
    pub mu_z: OperatorMatrix,
}

pub fn build_atomic_ops() -> AtomicOps {
    let mut mu = DMatrix::zeros(2, 2);
    mu[(1, 0)] = ONE;
    let mu = OperatorMatrix(mu);
    let mu_dagger = mu.adjoint();
    let mu_z = mu_dagger.commutator(&mu);
    AtomicOps {
        mu,
        mu_dagger,
        mu_z,
    }
}

/// Tensor product `atom_op ⊗ cavity_op` in atom-major ordering.
pub fn embed(atom_op: &OperatorMatrix, cavity_op: &OperatorMatrix) -> Result<OperatorMatrix> {
    if atom_op.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: atom_op.dim(),
        });
    }
    if cavity_op.dim() < 2 {
        return Err(Error::invalid("cavity operator must have dimension >= 2"));
    }
    Ok(OperatorMatrix(atom_op.0.kronecker(&cavity_op.0)))
}

/// Every composite-space operator used by the simulator and the filters.
#[derive(Debug, Clone)]
pub struct CompositeOps {
    pub dims: HilbertDims,
    pub a: OperatorMatrix,
    pub number: OperatorMatrix,
    /// `x = a† + a`
    pub x: OperatorMatrix,
    /// `y = i(a† − a)`
    pub y: OperatorMatrix,
    pub mu: OperatorMatrix,
    pub mu_dagger: OperatorMatrix,
    pub mu_z: OperatorMatrix,
    /// `μ_z x`, the interaction Hamiltonian without the `g/2` prefactor.
    pub mu_z_x: OperatorMatrix,
    /// `μ†μ`, projector onto `|+⟩`.
    pub p_plus: OperatorMatrix,
    /// `μμ†`, projector onto `|−⟩`.
    pub p_minus: OperatorMatrix,
    pub(crate) sparse: SparseSet,
}

#[derive(Debug, Clone)]
pub(crate) struct SparseSet {
    pub a: SparseOp,
    pub number: SparseOp,
    pub y: SparseOp,
    pub mu: SparseOp,
    pub mu_dagger: SparseOp,
    pub mu_z: SparseOp,
    pub mu_z_x: SparseOp,
    pub p_plus: SparseOp,
    pub p_minus: SparseOp,
}

impl CompositeOps {
    pub fn new(dims: HilbertDims) -> Self {
        let id2 = OperatorMatrix::identity(2);
        let idc = OperatorMatrix::identity(dims.n_fock());
        let a_c = build_annihilation(dims);
        let ad_c = a_c.adjoint();
        let x_c = ad_c.add(&a_c);
        let y_c = ad_c.sub(&a_c).scale(I);
        let atomic = build_atomic_ops();

        // Dimensions are correct by construction.
        let e = |at: &OperatorMatrix, cav: &OperatorMatrix| embed(at, cav).expect("composite dims");
        let a = e(&id2, &a_c);
        let number = e(&id2, &ad_c.mul(&a_c));
        let x = e(&id2, &x_c);
        let y = e(&id2, &y_c);
        let mu = e(&atomic.mu, &idc);
        let mu_dagger = e(&atomic.mu_dagger, &idc);
        let mu_z = e(&atomic.mu_z, &idc);
        let mu_z_x = e(&atomic.mu_z, &x_c);
        let p_plus = mu_dagger.mul(&mu);
        let p_minus = mu.mul(&mu_dagger);

        let sparse = SparseSet {
            a: SparseOp::from_dense(&a),
            number: SparseOp::from_dense(&number),
            y: SparseOp::from_dense(&y),
            mu: SparseOp::from_dense(&mu),
            mu_dagger: SparseOp::from_dense(&mu_dagger),
            mu_z: SparseOp::from_dense(&mu_z),
            mu_z_x: SparseOp::from_dense(&mu_z_x),
            p_plus: SparseOp::from_dense(&p_plus),
            p_minus: SparseOp::from_dense(&p_minus),
        };

        Self {
            dims,
            a,
            number,
            x,
            y,
            mu,
            mu_dagger,
            mu_z,
            mu_z_x,
            p_plus,
            p_minus,
            sparse,
        }
    }
}

/// Pure state of the composite system.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    dims: HilbertDims,
    amplitudes: DVector<Complex64>,
}

impl StateVector {
    pub fn from_amplitudes(dims: HilbertDims, amplitudes: DVector<Complex64>) -> Result<Self> {
        if amplitudes.len() != dims.total() {
            return Err(Error::DimensionMismatch {
                expected: dims.total(),
                found: amplitudes.len(),
            });
        }
        Ok(Self { dims, amplitudes })
    }

    /// `|atom⟩ ⊗ |n⟩`
    pub fn basis(dims: HilbertDims, atom: Atom, n: usize) -> Result<Self> {
        if n >= dims.n_fock() {
            return Err(Error::invalid(format!(
                "Fock level {n} outside truncation {}",
                dims.n_fock()
            )));
        }
        let mut amplitudes = DVector::zeros(dims.total());
        amplitudes[dims.index(atom, n)] = ONE;
        Ok(Self { dims, amplitudes })
    }

    /// `|−⟩ ⊗ |0⟩`, the default initial state.
    pub fn ground_minus(dims: HilbertDims) -> Self {
        Self::basis(dims, Atom::Minus, 0).expect("n_fock >= 2")
    }

    /// `|atom⟩ ⊗ |α⟩` with the coherent state truncated and renormalized.
    pub fn coherent(dims: HilbertDims, atom: Atom, alpha: Complex64) -> Self {
        let c = coherent_amplitudes(alpha, dims.n_fock());
        let mut amplitudes = DVector::zeros(dims.total());
        for (n, z) in c.iter().enumerate() {
            amplitudes[dims.index(atom, n)] = *z;
        }
        let mut s = Self { dims, amplitudes };
        s.renormalize();
        s
    }

    pub fn dims(&self) -> HilbertDims {
        self.dims
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// Rescales to unit norm and returns the norm before rescaling.
    pub fn renormalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes.unscale_mut(n);
        }
        n
    }

    pub(crate) fn expect_sparse(&self, op: &SparseOp) -> Complex64 {
        self.amplitudes.dotc(&op.apply(&self.amplitudes))
    }

    /// Population of `|+⟩`.
    pub fn p_plus(&self) -> f64 {
        let n = self.dims.n_fock();
        self.amplitudes.rows(0, n).norm_squared()
    }
}

/// Mixed state of the composite system.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    dims: HilbertDims,
    entries: DMatrix<Complex64>,
}

impl DensityOperator {
    pub fn from_matrix(dims: HilbertDims, entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != dims.total() || entries.ncols() != dims.total() {
            return Err(Error::DimensionMismatch {
                expected: dims.total(),
                found: entries.nrows(),
            });
        }
        Ok(Self { dims, entries })
    }

    pub fn from_pure(state: &StateVector) -> Self {
        let v = state.amplitudes();
        Self {
            dims: state.dims(),
            entries: v * v.adjoint(),
        }
    }

    pub fn dims(&self) -> HilbertDims {
        self.dims
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    pub fn hermitize(&mut self) {
        let adj = self.entries.adjoint();
        self.entries = (&self.entries + adj) * Complex64::new(0.5, 0.0);
    }

    /// Rescales to unit trace and returns the real trace before rescaling.
    pub fn normalize_trace(&mut self) -> f64 {
        let t = self.trace().re;
        if t > 0.0 {
            self.entries.unscale_mut(t);
        }
        t
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.entries - self.entries.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.entries + self.entries.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks Hermiticity, unit trace and positivity at the crate tolerances.
    pub fn validate(&self) -> Result<()> {
        let h = self.hermiticity_error();
        if h > 1e-10 {
            return Err(Error::invalid(format!("density not Hermitian ({h:e})")));
        }
        let t = self.trace();
        if (t.re - 1.0).abs() > 1e-9 || t.im.abs() > 1e-9 {
            return Err(Error::invalid(format!("density trace {t} != 1")));
        }
        let e = self.min_eigenvalue();
        if e < -1e-8 {
            return Err(Error::invalid(format!("density has eigenvalue {e:e}")));
        }
        Ok(())
    }

    pub(crate) fn expect_sparse(&self, op: &SparseOp) -> Complex64 {
        op.left_mul(&self.entries).trace()
    }

    /// Population of `|+⟩`.
    pub fn p_plus(&self) -> f64 {
        let n = self.dims.n_fock();
        (0..n).map(|k| self.entries[(k, k)].re).sum()
    }
}

/// `⟨ψ|A|ψ⟩` or `Tr[Aρ]`.
pub trait Expectation {
    fn dim(&self) -> usize;

    fn expectation(&self, op: &OperatorMatrix) -> Result<Complex64>;
}

impl Expectation for StateVector {
    fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    fn expectation(&self, op: &OperatorMatrix) -> Result<Complex64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: op.dim(),
            });
        }
        Ok(self.amplitudes.dotc(&op.apply(&self.amplitudes)))
    }
}

impl Expectation for DensityOperator {
    fn dim(&self) -> usize {
        self.entries.nrows()
    }

    fn expectation(&self, op: &OperatorMatrix) -> Result<Complex64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: op.dim(),
            });
        }
        Ok((op.matrix() * &self.entries).trace())
    }
}

pub fn expectation<S: Expectation>(state: &S, op: &OperatorMatrix) -> Result<Complex64> {
    state.expectation(op)
}

/// Fock amplitudes `e^{−|α|²/2} αⁿ/√n!` for `n < n_fock`, without
/// renormalizing the truncated vector.
///
/// Magnitudes are accumulated in log space so large `|α|` does not underflow
/// the prefactor before the powers catch up.
pub fn coherent_amplitudes(alpha: Complex64, n_fock: usize) -> Vec<Complex64> {
    let r = alpha.norm();
    let phase = alpha.arg();
    let mut out = Vec::with_capacity(n_fock);
    if r == 0.0 {
        out.push(ONE);
        out.resize(n_fock, ZERO);
        return out;
    }
    let ln_r = r.ln();
    let mut ln_mag = -0.5 * r * r;
    for n in 0..n_fock {
        if n > 0 {
            ln_mag += ln_r - 0.5 * (n as f64).ln();
        }
        out.push(Complex64::from_polar(ln_mag.exp(), phase * n as f64));
    }
    out
}

/// Result of projecting a density operator onto the Q-function grid.
#[derive(Debug, Clone)]
pub struct QConversion {
    pub q: QState,
    /// Set when the grid reaches amplitudes the Fock truncation cannot
    /// represent reliably (`|y|/2 > 0.9·√n_fock`).
    pub truncation_warning: bool,
}

/// `Q±(y) = ⟨±, iy/2| ρ |±, iy/2⟩` on the grid, rescaled to unit mass.
pub fn state_to_q(rho: &DensityOperator, grid: &QGrid) -> Result<QConversion> {
    let dims = rho.dims();
    let n = dims.n_fock();
    let limit = 0.9 * (n as f64).sqrt();
    let y_abs = grid.y_min().abs().max(grid.y_max().abs());
    let truncation_warning = y_abs / 2.0 > limit;
    if truncation_warning {
        log::warn!(
            "Q grid reaches |y|/2 = {:.2} beyond the reliable truncation range {:.2} for n_fock = {n}",
            y_abs / 2.0,
            limit
        );
    }

    let m = rho.matrix();
    let mut q_plus = vec![0.0; grid.n_points()];
    let mut q_minus = vec![0.0; grid.n_points()];
    for (k, y) in grid.points().enumerate() {
        let c = DVector::from_vec(coherent_amplitudes(Complex64::new(0.0, y / 2.0), n));
        for (atom, out) in [(Atom::Plus, &mut q_plus), (Atom::Minus, &mut q_minus)] {
            let off = atom.block() * n;
            let block = m.view((off, off), (n, n));
            out[k] = c.dotc(&(block * &c)).re.max(0.0);
        }
    }
    let q = QState::from_unnormalized(*grid, q_plus, q_minus)?;
    Ok(QConversion {
        q,
        truncation_warning,
    })
}
