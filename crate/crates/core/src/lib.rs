//! Quantum trajectories, optimal filtering and projection filtering for a
//! strongly driven two-level atom coupled to a damped cavity mode.
//!
//! The crate is organised around the measurement pipeline:
//!
//! * [`hilbert`] builds the truncated atom ⊗ cavity Hilbert space.
//! * [`trajectory`] integrates the stochastic Schrödinger equation and
//!   synthesizes homodyne photocurrents plus side-channel photon counts.
//! * [`qfilter`] is the optimal homodyne filter, as an evolution of the pair
//!   of Q-functions and as a density-operator filter.
//! * [`projfilter`] is the three-parameter projection filter onto the
//!   bi-Gaussian family.
//! * [`infogeo`] recomputes the projection filter coefficients by brute-force
//!   quadrature of the Fisher metric and the projected vector field.
//! * [`wonham`] is the classical random telegraph benchmark.
//! * [`harness`] wires everything into reproducible experiments and the
//!   `qpf` command line tool.
//!
//! ```
//! use qpf::prelude::*;
//!
//! let params = ModelParams::moderate();
//! let grid = SimGrid::new(1e-5, 500, 7).unwrap();
//! let dims = HilbertDims::new(10).unwrap();
//! let (record, _truth) = run_trajectory(&params, &grid, &StateVector::ground_minus(dims)).unwrap();
//!
//! let estimates = run_projfilter(&record, ProjState::singular_start()).unwrap();
//! assert_eq!(estimates.p_plus.len(), record.len() + 1);
//! ```

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}

pub mod error;
pub mod harness;
pub mod hilbert;
pub mod infogeo;
pub mod io;
pub mod projfilter;
pub mod qfilter;
pub mod trajectory;
pub mod wonham;

pub use error::{Error, Result};

/// Commonly used types and entry points.
pub mod prelude {
    pub use crate::error::{Error, Result};
    pub use crate::hilbert::{
        build_annihilation, build_atomic_ops, embed, state_to_q, DensityOperator, Expectation,
        HilbertDims, OperatorMatrix, StateVector,
    };
    pub use crate::infogeo::{fisher_metric, oracle_coefficients, QuadratureSpec, ThetaUnnorm};
    pub use crate::projfilter::{proj_estimates, proj_step, run_projfilter, ProjState};
    pub use crate::qfilter::{
        density_filter_step, mixture_step, qfilter_estimates, qfilter_step, run_qfilter,
        FilterEstimates, FilterInit, Kernel, QGrid, QMixture, QState,
    };
    pub use crate::trajectory::{
        run_trajectory, JumpChannel, ModelParams, ObservationRecord, SimGrid, TruthRecord,
    };
    pub use crate::wonham::{simulate_telegraph, wonham_step, TelegraphParams, WonhamState};
}
