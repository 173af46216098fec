//! Numerical information geometry of the bi-Gaussian family.
//!
//! Everything here is computed by brute-force quadrature so that it can act
//! as an independent check on the closed-form projection filter: the Fisher
//! metric `g_ij = 4⟨∂_i√q, ∂_j√q⟩`, the dual tangent vectors
//! `Λⁱ = Σ_j g^{ij} ∂_j q`, and the projected coefficients
//! `⟨A/q, Λⁱ⟩`, `⟨B/q, Λⁱ⟩` of the Stratonovich filter field.
//!
//! Parameters are ordered `θ = (μ⁺, ν⁺, μ⁻, ν⁻)` throughout.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::hilbert::Atom;
use crate::projfilter::{gain_unnorm, stratonovich_drift_unnorm};
use crate::trajectory::ModelParams;

/// Default relative step for finite-difference parameter derivatives.
pub const DEFAULT_FD_STEP: f64 = 1e-6;
/// Minimum number of points for oracle evaluations.
pub const ORACLE_MIN_POINTS: usize = 512;
/// Margin around the centers used by [`QuadratureSpec::auto`].
pub const AUTO_MARGIN: f64 = 15.0;

/// Unnormalized family parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaUnnorm {
    pub mu_plus: f64,
    pub nu_plus: f64,
    pub mu_minus: f64,
    pub nu_minus: f64,
}

impl ThetaUnnorm {
    pub fn new(mu_plus: f64, nu_plus: f64, mu_minus: f64, nu_minus: f64) -> Result<Self> {
        let t = Self {
            mu_plus,
            nu_plus,
            mu_minus,
            nu_minus,
        };
        if ![mu_plus, nu_plus, mu_minus, nu_minus].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("non-finite parameters {t:?}")));
        }
        if nu_plus < 0.0 || nu_minus < 0.0 || nu_plus + nu_minus == 0.0 {
            return Err(Error::invalid(format!("weights must be >= 0 and not both 0: {t:?}")));
        }
        Ok(t)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.mu_plus, self.nu_plus, self.mu_minus, self.nu_minus]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            mu_plus: a[0],
            nu_plus: a[1],
            mu_minus: a[2],
            nu_minus: a[3],
        }
    }

    fn branch(&self, atom: Atom) -> (f64, f64) {
        match atom {
            Atom::Plus => (self.mu_plus, self.nu_plus),
            Atom::Minus => (self.mu_minus, self.nu_minus),
        }
    }

    fn require_interior(&self) -> Result<()> {
        if self.nu_plus > 0.0 && self.nu_minus > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("metric is singular at {self:?}")))
        }
    }
}

/// Uniform trapezoid rule plus the finite-difference step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub y_min: f64,
    pub y_max: f64,
    pub n_points: usize,
    pub fd_step: f64,
}

impl QuadratureSpec {
    pub fn new(y_min: f64, y_max: f64, n_points: usize, fd_step: f64) -> Result<Self> {
        if !(y_min < y_max && n_points >= 3 && fd_step > 0.0) {
            return Err(Error::invalid(format!(
                "bad quadrature [{y_min}, {y_max}] with {n_points} points, step {fd_step}"
            )));
        }
        Ok(Self {
            y_min,
            y_max,
            n_points,
            fd_step,
        })
    }

    /// `[min μ − 15, max μ + 15]` with `n_points` points.
    pub fn auto(theta: &ThetaUnnorm, n_points: usize) -> Self {
        let lo = theta.mu_plus.min(theta.mu_minus) - AUTO_MARGIN;
        let hi = theta.mu_plus.max(theta.mu_minus) + AUTO_MARGIN;
        Self {
            y_min: lo,
            y_max: hi,
            n_points: n_points.max(3),
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn spacing(&self) -> f64 {
        (self.y_max - self.y_min) / (self.n_points - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_points).map(|i| self.y_min + i as f64 * h).collect()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        let n = f.len();
        let inner: f64 = f[1..n - 1].iter().sum();
        self.spacing() * (inner + 0.5 * (f[0] + f[n - 1]))
    }

    /// Same interval, half the spacing.
    pub fn refined(&self) -> Self {
        Self {
            n_points: 2 * self.n_points - 1,
            ..*self
        }
    }

    /// Checks both centers sit ten standard deviations (√2 each) inside.
    pub fn covers(&self, theta: &ThetaUnnorm) -> bool {
        let margin = 10.0 * 2f64.sqrt();
        let lo = theta.mu_plus.min(theta.mu_minus) - margin;
        let hi = theta.mu_plus.max(theta.mu_minus) + margin;
        self.y_min <= lo && self.y_max >= hi
    }
}

/// `q(y, ±; θ) = (ν±/2√π)·exp(−(y − μ±)²/4)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyDensity {
    pub theta: ThetaUnnorm,
}

impl FamilyDensity {
    pub fn new(theta: ThetaUnnorm) -> Self {
        Self { theta }
    }

    pub fn eval(&self, y: f64, atom: Atom) -> f64 {
        let (mu, nu) = self.theta.branch(atom);
        nu / (2.0 * PI.sqrt()) * (-(y - mu) * (y - mu) / 4.0).exp()
    }

    pub fn on_grid(&self, quad: &QuadratureSpec, atom: Atom) -> Vec<f64> {
        quad.points().iter().map(|&y| self.eval(y, atom)).collect()
    }

    /// `∂_y q` and `∂²_y q` from the Gaussian form.
    pub fn y_derivatives(&self, y: f64, atom: Atom) -> (f64, f64) {
        let (mu, _) = self.theta.branch(atom);
        let q = self.eval(y, atom);
        let u = (y - mu) / 2.0;
        (-u * q, (u * u - 0.5) * q)
    }

    /// `∂ log q(y, ±) / ∂θ_j` for `j = 0..4`.
    pub fn score(&self, y: f64, atom: Atom) -> [f64; 4] {
        let (mu, nu) = self.theta.branch(atom);
        let (dmu, dnu) = ((y - mu) / 2.0, 1.0 / nu);
        match atom {
            Atom::Plus => [dmu, dnu, 0.0, 0.0],
            Atom::Minus => [0.0, 0.0, dmu, dnu],
        }
    }
}

const BRANCHES: [Atom; 2] = [Atom::Plus, Atom::Minus];

fn sqrt_q_derivatives_fd(theta: &ThetaUnnorm, quad: &QuadratureSpec, atom: Atom) -> [Vec<f64>; 4] {
    let base = theta.to_array();
    std::array::from_fn(|j| {
        // weights get a relative step, centers one relative to max(|μ|, 1)
        let scale = if j % 2 == 1 { base[j] } else { base[j].abs().max(1.0) };
        let h = quad.fd_step * scale;
        let mut up = base;
        let mut down = base;
        up[j] += h;
        down[j] -= h;
        let fu = FamilyDensity::new(ThetaUnnorm::from_array(up));
        let fd = FamilyDensity::new(ThetaUnnorm::from_array(down));
        quad.points()
            .iter()
            .map(|&y| (fu.eval(y, atom).sqrt() - fd.eval(y, atom).sqrt()) / (2.0 * h))
            .collect()
    })
}

fn sqrt_q_derivatives_analytic(theta: &ThetaUnnorm, quad: &QuadratureSpec, atom: Atom) -> [Vec<f64>; 4] {
    let f = FamilyDensity::new(*theta);
    let pts = quad.points();
    std::array::from_fn(|j| {
        pts.iter()
            // ∂√q = ½√q ∂log q
            .map(|&y| 0.5 * f.eval(y, atom).sqrt() * f.score(y, atom)[j])
            .collect()
    })
}

fn gram(quad: &QuadratureSpec, parts: &[[Vec<f64>; 4]; 2]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| {
        parts
            .iter()
            .map(|d| {
                let prod: Vec<f64> = d[i].iter().zip(&d[j]).map(|(a, b)| a * b).collect();
                4.0 * quad.integrate(&prod)
            })
            .sum()
    })
}

/// Fisher metric by central differences of `√q` and trapezoid quadrature,
/// cross-checked against analytic parameter derivatives.
pub fn fisher_metric(theta: &ThetaUnnorm, quad: &QuadratureSpec) -> Result<Matrix4<f64>> {
    theta.require_interior()?;
    let fd = gram(quad, &BRANCHES.map(|a| sqrt_q_derivatives_fd(theta, quad, a)));
    let analytic = gram(quad, &BRANCHES.map(|a| sqrt_q_derivatives_analytic(theta, quad, a)));

    let scale = analytic.diagonal().amax();
    for i in 0..4 {
        for j in 0..4 {
            let (a, b) = (fd[(i, j)], analytic[(i, j)]);
            let tol = 1e-6 * analytic[(i, i)].abs().max(1e-12 * scale);
            if (a - b).abs() > tol.max(1e-8 * scale) {
                return Err(Error::Numerical {
                    step: 0,
                    message: format!("finite-difference metric entry ({i},{j}) = {a} disagrees with {b}"),
                });
            }
        }
    }
    if fd.cholesky().is_none() {
        return Err(Error::Numerical {
            step: 0,
            message: format!("Fisher metric at {theta:?} is not positive definite; widen the quadrature"),
        });
    }
    Ok(fd)
}

/// `diag(ν⁺/2, 1/ν⁺, ν⁻/2, 1/ν⁻)`
pub fn fisher_metric_closed_form(theta: &ThetaUnnorm) -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::new(
        theta.nu_plus / 2.0,
        1.0 / theta.nu_plus,
        theta.nu_minus / 2.0,
        1.0 / theta.nu_minus,
    ))
}

/// Dual tangent vectors `Λⁱ(y, ±)` on the quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVectors {
    pub quad: QuadratureSpec,
    /// `lambda[i][branch]`, branch 0 is `+`.
    pub lambda: [[Vec<f64>; 2]; 4],
    pub metric_inverse: Matrix4<f64>,
}

fn inverse_metric(theta: &ThetaUnnorm, quad: &QuadratureSpec) -> Result<Matrix4<f64>> {
    fisher_metric(theta, quad)?.try_inverse().ok_or_else(|| Error::Numerical {
        step: 0,
        message: format!("singular Fisher metric at {theta:?}"),
    })
}

pub fn tangent_vectors(theta: &ThetaUnnorm, quad: &QuadratureSpec) -> Result<TangentVectors> {
    let inv = inverse_metric(theta, quad)?;
    let f = FamilyDensity::new(*theta);
    let pts = quad.points();
    let lambda = std::array::from_fn(|i| {
        BRANCHES.map(|atom| {
            pts.iter()
                .map(|&y| {
                    let s = f.score(y, atom);
                    let q = f.eval(y, atom);
                    (0..4).map(|j| inv[(i, j)] * s[j] * q).sum()
                })
                .collect()
        })
    });
    Ok(TangentVectors {
        quad: *quad,
        lambda,
        metric_inverse: inv,
    })
}

impl TangentVectors {
    /// `⟨Λⁱ, ∂_j log q⟩ = Σ± ∫ Λⁱ ∂_j log q dy`, the identity when dual.
    pub fn duality(&self, theta: &ThetaUnnorm) -> Matrix4<f64> {
        let f = FamilyDensity::new(*theta);
        let pts = self.quad.points();
        Matrix4::from_fn(|i, j| {
            BRANCHES
                .iter()
                .enumerate()
                .map(|(b, &atom)| {
                    let prod: Vec<f64> = pts
                        .iter()
                        .zip(&self.lambda[i][b])
                        .map(|(&y, l)| l * f.score(y, atom)[j])
                        .collect();
                    self.quad.integrate(&prod)
                })
                .sum()
        })
    }
}

/// Stratonovich filter field evaluated on the family, `[branch][point]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StratonovichField {
    pub drift: [Vec<f64>; 2],
    pub gain: [Vec<f64>; 2],
}

/// `A± = (γ/2)(q∓ − q±) + ∂_y[(±g + κ(1 − 4η)y)q±] + 2κ(1 − 2η)∂²_y q± + κη(2 − y²)q±`,
/// `B± = √(2κη)(y + 2∂_y)q±`, differentiated analytically.
pub fn stratonovich_field(density: &FamilyDensity, params: &ModelParams, quad: &QuadratureSpec) -> StratonovichField {
    let pts = quad.points();
    let k = params.kappa;
    let eta = params.eta;
    let c = params.signal_gain();
    let adv = k * (1.0 - 4.0 * eta);
    let diff = 2.0 * k * (1.0 - 2.0 * eta);

    let field = |atom: Atom| -> (Vec<f64>, Vec<f64>) {
        let sign = if atom == Atom::Plus { 1.0 } else { -1.0 };
        pts.iter()
            .map(|&y| {
                let q = density.eval(y, atom);
                let other = density.eval(y, atom.flipped());
                let (d1, d2) = density.y_derivatives(y, atom);
                let a = params.gamma / 2.0 * (other - q)
                    + adv * q
                    + (sign * params.g + adv * y) * d1
                    + diff * d2
                    + k * eta * (2.0 - y * y) * q;
                (a, c * (y * q + 2.0 * d1))
            })
            .unzip()
    };
    let (ap, bp) = field(Atom::Plus);
    let (am, bm) = field(Atom::Minus);
    StratonovichField {
        drift: [ap, am],
        gain: [bp, bm],
    }
}

/// Projected Stratonovich coefficients `(drift, gain)` in `θ` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub drift: [f64; 4],
    pub gain: [f64; 4],
}

impl Coefficients {
    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.drift.iter().chain(&self.gain).copied()
    }
}

fn project_once(theta: &ThetaUnnorm, params: &ModelParams, quad: &QuadratureSpec) -> Result<Coefficients> {
    let tangents = tangent_vectors(theta, quad)?;
    let f = FamilyDensity::new(*theta);
    let field = stratonovich_field(&f, params, quad);
    let pts = quad.points();
    // ⟨A/q, Λⁱ⟩ = Σ± ∫ A± Σ_j g^{ij} ∂_j log q± dy, which avoids dividing by
    // the vanishing tails of q.
    let project = |arr: &[Vec<f64>; 2], i: usize| -> f64 {
        BRANCHES
            .iter()
            .enumerate()
            .map(|(b, &atom)| {
                let prod: Vec<f64> = pts
                    .iter()
                    .zip(&arr[b])
                    .map(|(&y, v)| {
                        let s = f.score(y, atom);
                        v * (0..4).map(|j| tangents.metric_inverse[(i, j)] * s[j]).sum::<f64>()
                    })
                    .collect();
                quad.integrate(&prod)
            })
            .sum()
    };
    Ok(Coefficients {
        drift: std::array::from_fn(|i| project(&field.drift, i)),
        gain: std::array::from_fn(|i| project(&field.gain, i)),
    })
}

/// Relative convergence tolerance under grid doubling.
pub const ORACLE_CONVERGENCE: f64 = 1e-6;

/// Brute-force projection of the Stratonovich field onto the family.
///
/// Fails if halving the quadrature spacing changes any coefficient by more
/// than [`ORACLE_CONVERGENCE`] relative to its size (or to the largest
/// coefficient or rate, for those that vanish).
pub fn oracle_coefficients(theta: &ThetaUnnorm, params: &ModelParams, quad: &QuadratureSpec) -> Result<Coefficients> {
    if !quad.covers(theta) {
        return Err(Error::invalid(format!(
            "quadrature [{}, {}] does not cover the centers of {theta:?}",
            quad.y_min, quad.y_max
        )));
    }
    let coarse = project_once(theta, params, quad)?;
    let fine = project_once(theta, params, &quad.refined())?;
    // at fixed points every coefficient vanishes; fall back on the rates
    let rates = params.g.abs() + params.kappa + params.gamma;
    let scale = fine.values().fold(rates, |m, v| m.max(v.abs()));
    for (c, f) in coarse.values().zip(fine.values()) {
        let tol = ORACLE_CONVERGENCE * f.abs().max(1e-3 * scale);
        if (c - f).abs() > tol {
            return Err(Error::Numerical {
                step: 0,
                message: format!("oracle did not converge at {theta:?}: {c} vs {f}"),
            });
        }
    }
    Ok(fine)
}

/// The closed-form Stratonovich coefficients of the projection filter.
pub fn closed_form_coefficients(theta: &ThetaUnnorm, params: &ModelParams) -> Coefficients {
    Coefficients {
        drift: stratonovich_drift_unnorm(theta, params),
        gain: gain_unnorm(theta, params),
    }
}

/// Relative error with an absolute floor `floor` for vanishing references.
pub fn relative_error(value: f64, reference: f64, floor: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(floor)
}

/// One row of the oracle report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRow {
    pub theta: ThetaUnnorm,
    pub closed: Coefficients,
    pub quadrature: Coefficients,
    /// Relative errors, drift then gain.
    pub rel_err: [f64; 8],
}

impl OracleRow {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().fold(0.0, |m, &v| m.max(v))
    }
}

/// Compares closed form and quadrature at `theta`.
pub fn oracle_row(theta: &ThetaUnnorm, params: &ModelParams, n_points: usize) -> Result<OracleRow> {
    let quad = QuadratureSpec::auto(theta, n_points.max(ORACLE_MIN_POINTS));
    let quadrature = oracle_coefficients(theta, params, &quad)?;
    let closed = closed_form_coefficients(theta, params);
    let scale = closed.values().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut rel_err = [0.0; 8];
    for (k, (q, c)) in quadrature.values().zip(closed.values()).enumerate() {
        rel_err[k] = relative_error(q, c, 1e-6 * scale);
    }
    Ok(OracleRow {
        theta: *theta,
        closed,
        quadrature,
        rel_err,
    })
}

/// CSV rendering of oracle rows.
pub fn oracle_report_csv(rows: &[OracleRow]) -> String {
    let names = ["mu_plus", "nu_plus", "mu_minus", "nu_minus"];
    let mut out = String::from("mu_plus,nu_plus,mu_minus,nu_minus");
    for kind in ["drift", "gain"] {
        for n in names {
            write!(out, ",{kind}_{n}_closed,{kind}_{n}_quad,{kind}_{n}_relerr").unwrap();
        }
    }
    out.push('\n');
    for r in rows {
        let t = r.theta.to_array();
        write!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", t[0], t[1], t[2], t[3]).unwrap();
        for (k, (c, q)) in r.closed.values().zip(r.quadrature.values()).enumerate() {
            write!(out, ",{c:.16e},{q:.16e},{:.6e}", r.rel_err[k]).unwrap();
        }
        out.push('\n');
    }
    out
}
