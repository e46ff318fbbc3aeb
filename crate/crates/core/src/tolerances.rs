//! Default tolerances. Every value is overridable through [`Tolerances`];
//! the CLI exposes them in the system spec.

use serde::{Deserialize, Serialize};

/// Minimal separation `|λ_a - λ_b|` inside the stratum.
pub const EIG_SEP_TOL: f64 = 1e-10;
/// Relative tolerance for the linear constraints on `ω̃_j`.
pub const CONSTRAINT_TOL: f64 = 1e-12;
/// Relative eigenvalue clustering tolerance.
pub const CLUSTER_REL: f64 = 1e-8;
/// Distance to a nonzero integer below which a difference is resonant.
pub const INT_TOL: f64 = 1e-7;
pub const JORDAN_COND_MAX: f64 = 1e10;
/// Flow monitors above this flag the result.
pub const MONITOR_FAIL: f64 = 1e-6;
/// Smallest acceptable angular margin of an admissible direction.
pub const TAU_MIN_MARGIN: f64 = 1e-3;
/// Default relative tolerance of the integrator.
pub const ODE_RTOL: f64 = 1e-10;
/// Default tolerance for monodromy-data constancy.
pub const AUDIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub eig_sep_tol: f64,
    pub constraint_tol: f64,
    pub cluster_rel: f64,
    pub int_tol: f64,
    pub jordan_cond_max: f64,
    pub monitor_fail: f64,
    pub tau_min_margin: f64,
    pub ode_rtol: f64,
    pub audit_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eig_sep_tol: EIG_SEP_TOL,
            constraint_tol: CONSTRAINT_TOL,
            cluster_rel: CLUSTER_REL,
            int_tol: INT_TOL,
            jordan_cond_max: JORDAN_COND_MAX,
            monitor_fail: MONITOR_FAIL,
            tau_min_margin: TAU_MIN_MARGIN,
            ode_rtol: ODE_RTOL,
            audit_tol: AUDIT_TOL,
        }
    }
}

impl Tolerances {
    pub fn jordan(&self) -> crate::blocks::JordanTolerances {
        crate::blocks::JordanTolerances {
            cluster_rel: self.cluster_rel,
            int_tol: self.int_tol,
            cond_max: self.jordan_cond_max,
        }
    }
}
