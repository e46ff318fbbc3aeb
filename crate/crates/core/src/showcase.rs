//! Worked systems: the rigid 3×3 case `Λ = diag(λ₁, λ₂, λ₂)` with its
//! closed-form solutions and explicit reducer `T(x)`, and the 4×4 case
//! `Λ = diag(λ₁, λ₁, λ₂, λ₃)` reduced to a flow in `x` and to the
//! Ω-system.

use std::sync::Arc;

use serde::Serialize;

use crate::blocks::{BlockPartition, JordanTolerances, JordanizationResult, Lambda};
use crate::error::{Error, Result};
use crate::flow::DSpec;
use crate::linalg::{self, CMat, C64};
use crate::ode::{self, OdeOptions, OdeStats};
use crate::pfaffian::CoalescedSystem;

/// Data of the 3×3 example with zero diagonal and constant `A₂₃`, `A₃₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThreeDExample {
    pub a23: C64,
    pub a32: C64,
    /// Integration constants `c₁, …, c₄`.
    pub c: [C64; 4],
    /// Constants of `T(x) = T₀ diag(a₀, b₀x^ρ a₀, c₀x^{-ρ} a₀)`.
    pub a0: C64,
    pub b0: C64,
    pub c0: C64,
}

fn cpow(x: C64, p: C64) -> C64 {
    (p * x.ln()).exp()
}

impl ThreeDExample {
    pub fn new(a23: C64, a32: C64, c: [C64; 4]) -> Result<Self> {
        if (a23 * a32).norm() == 0.0 {
            return Err(Error::Invalid("the example needs A₂₃A₃₂ ≠ 0".into()));
        }
        let one = C64::new(1.0, 0.0);
        Ok(ThreeDExample {
            a23,
            a32,
            c,
            a0: one,
            b0: one,
            c0: one,
        })
    }

    /// `A₂₃ = 1`, `A₃₂ = 1/4` (so `ρ = 1/2`) and `c = (1, 0, 0, 1)`.
    pub fn standard() -> Self {
        let (o, z) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        Self::new(o, C64::new(0.25, 0.0), [o, z, z, o]).expect("nonzero product")
    }

    /// `ρ = √(A₂₃A₃₂)` on the principal branch.
    pub fn rho(&self) -> C64 {
        (self.a23 * self.a32).sqrt()
    }

    pub fn partition() -> BlockPartition {
        BlockPartition::new(&[1, 2]).expect("valid sizes")
    }

    /// `λ = (x, 0)`, so `x = λ₁ - λ₂`.
    pub fn lambda(x: C64) -> Result<Lambda> {
        Lambda::new(vec![x, C64::new(0.0, 0.0)], Self::partition(), 0.0)
    }

    /// `A(x)` from the closed-form general solution of `dA/dx = [ω₁(x), A]`.
    pub fn closed_form(&self, x: C64) -> Result<CMat> {
        if x.norm() == 0.0 {
            return Err(Error::Pole("x = 0".into()));
        }
        let rho = self.rho();
        let xp = cpow(x, rho);
        let xm = cpow(x, -rho);
        let [c1, c2, c3, c4] = self.c;
        let r1 = (self.a23 / self.a32).sqrt();
        let r2 = (self.a32 / self.a23).sqrt();
        let z = C64::new(0.0, 0.0);
        Ok(linalg::from_rows(
            3,
            3,
            &[
                z,
                c1 * xp + c2 * xm,
                r1 * (c1 * xp - c2 * xm),
                c3 * xp + c4 * xm,
                z,
                self.a23,
                -r2 * (c3 * xp - c4 * xm),
                self.a32,
                z,
            ],
        ))
    }

    pub fn system(&self, x: C64) -> Result<CoalescedSystem> {
        CoalescedSystem::new(Self::lambda(x)?, self.closed_form(x)?)
    }

    /// The particular constant matrix diagonalizing `0 ⊕ A_{[2,2]}`.
    pub fn t0_particular(&self) -> CMat {
        let o = C64::new(1.0, 0.0);
        let z = C64::new(0.0, 0.0);
        let q = self.a23 / self.rho();
        linalg::from_rows(3, 3, &[o, z, z, z, q, -q, z, o, o])
    }

    /// Jordan form `diag(0, ρ, -ρ)` of the block-diagonal part.
    pub fn jordan(&self) -> CMat {
        let rho = self.rho();
        linalg::diag(&[C64::new(0.0, 0.0), rho, -rho])
    }

    /// `T(x) = T₀^particular · diag(a, b₀x^ρ a, c₀x^{-ρ} a)` with `a = a₀`.
    pub fn t_of_x(&self, x: C64) -> Result<CMat> {
        if x.norm() == 0.0 {
            return Err(Error::Pole("x = 0".into()));
        }
        let rho = self.rho();
        let d = linalg::diag(&[self.a0, self.b0 * cpow(x, rho) * self.a0, self.c0 * cpow(x, -rho) * self.a0]);
        Ok(self.t0_particular() * d)
    }

    /// `T₀ = T₀^particular · diag(a₀, b₀, c₀)`.
    pub fn t0(&self) -> CMat {
        self.t0_particular() * linalg::diag(&[self.a0, self.b0, self.c0])
    }

    /// The explicit reducer `T₀` with `J = diag(0, ρ, -ρ)` for `A(x)`.
    pub fn reducer(&self, x: C64) -> Result<JordanizationResult> {
        JordanizationResult::from_explicit(
            &self.closed_form(x)?,
            &Self::partition(),
            self.t0(),
            self.jordan(),
            &JordanTolerances::default(),
        )
    }

    /// `T'(x)T(x)⁻¹ = T₀^particular diag(0, ρ/x, -ρ/x) (T₀^particular)⁻¹`.
    pub fn dt_t_inv(&self, x: C64) -> Result<CMat> {
        if x.norm() == 0.0 {
            return Err(Error::Pole("x = 0".into()));
        }
        let rho = self.rho();
        let tp = self.t0_particular();
        let d = linalg::diag(&[C64::new(0.0, 0.0), rho / x, -rho / x]);
        Ok(&tp * d * linalg::inverse(&tp)?)
    }

    /// `𝒟₁ = T'T⁻¹`, `𝒟₂ = -𝒟₁` as a field of `λ`.
    pub fn dspec_t_derived(&self) -> DSpec {
        let ex = *self;
        DSpec::Field(Arc::new(move |l: &[C64]| {
            let d = ex.dt_t_inv(l[0] - l[1])?;
            Ok(vec![d.clone(), -d])
        }))
    }

    /// The same `𝒟` by finite differences of `T(λ₁ - λ₂)`.
    pub fn dspec_from_t(&self, h: f64) -> DSpec {
        let ex = *self;
        DSpec::FromT(Arc::new(move |l: &[C64]| ex.t_of_x(l[0] - l[1])), h)
    }

    /// `A(x) = T₀(T(x)⁻¹ A₀ T(x))T₀⁻¹` with `A₀ = A(1)`.
    pub fn gauge_form(&self, x: C64) -> Result<CMat> {
        let a0 = self.closed_form(C64::new(1.0, 0.0))?;
        let t = self.t_of_x(x)?;
        let t0 = self.t_of_x(C64::new(1.0, 0.0))?;
        Ok(&t0 * linalg::inverse(&t)? * a0 * &t * linalg::inverse(&t0)?)
    }
}

/// `ω̂₂(x)` for `A` partitioned `(2, 1, 1)`: `ω₂` at `λ = (0, x, 1)`.
pub fn omega_hat_4d(a4: &CMat, x: C64) -> Result<CMat> {
    if a4.nrows() != 4 || a4.ncols() != 4 {
        return Err(Error::Dimension("ω̂₂ needs a 4×4 matrix".into()));
    }
    if x.norm() == 0.0 || (x - 1.0).norm() == 0.0 {
        return Err(Error::Pole("x ∈ {0, 1}".into()));
    }
    let mut w = linalg::zeros(4, 4);
    for i in 0..2 {
        w[(i, 2)] = a4[(i, 2)] / x;
        w[(2, i)] = a4[(2, i)] / x;
    }
    w[(2, 3)] = a4[(2, 3)] / (x - 1.0);
    w[(3, 2)] = a4[(3, 2)] / (x - 1.0);
    Ok(w)
}

pub fn partition_4d() -> BlockPartition {
    BlockPartition::new(&[2, 1, 1]).expect("valid sizes")
}

/// `dA/dx = [ω̂₂(x), A]`.
pub fn reduced_rhs_4d(a4: &CMat, x: C64) -> Result<CMat> {
    Ok(linalg::commutator(&omega_hat_4d(a4, x)?, a4))
}

/// Skew-symmetric `A` with `A₁₃ = φ₁, A₂₃ = φ₂, A₁₄ = φ₃, A₂₄ = φ₄, A₃₄ = φ₅`.
pub fn skew_from_phi(phi: &[C64; 5]) -> CMat {
    let mut u = linalg::zeros(4, 4);
    u[(0, 2)] = phi[0];
    u[(1, 2)] = phi[1];
    u[(0, 3)] = phi[2];
    u[(1, 3)] = phi[3];
    u[(2, 3)] = phi[4];
    &u - u.transpose()
}

pub fn phi_from_skew(a: &CMat) -> [C64; 5] {
    [a[(0, 2)], a[(1, 2)], a[(0, 3)], a[(1, 3)], a[(2, 3)]]
}

/// The φ-system obtained by restricting `dA/dx = [ω̂₂, A]` to skew-symmetric `A`.
///
/// Since `A₄₃ = -φ₅`, the first two equations read `φ₁' = -φ₃φ₅/(1-x)`.
pub fn phi_rhs(phi: &[C64; 5], x: C64) -> [C64; 5] {
    let [p1, p2, p3, p4, p5] = *phi;
    let one = C64::new(1.0, 0.0);
    [
        -p3 * p5 / (one - x),
        -p4 * p5 / (one - x),
        p1 * p5 / (x * (one - x)),
        p2 * p5 / (x * (one - x)),
        -(p1 * p3 + p2 * p4) / x,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OmegaState {
    pub omega: [C64; 3],
    pub x: C64,
}

impl OmegaState {
    /// `Ω₁² + Ω₂² + Ω₃²`.
    pub fn quadratic(&self) -> C64 {
        self.omega.iter().map(|w| w * w).sum()
    }

    /// `Ω₁ = -iφ₅, Ω₂ = √2φ₁, Ω₃ = i√2φ₃`.
    ///
    /// This map carries `φ₁' = +φ₃φ₅/(1-x)` to the Ω-system; it does not
    /// intertwine the φ-flow of [`phi_rhs`]. See [`OmegaState::from_phi_flow`].
    pub fn from_phi(phi: &[C64; 5], x: C64) -> Self {
        let i = C64::new(0.0, 1.0);
        let r2 = std::f64::consts::SQRT_2;
        OmegaState {
            omega: [-i * phi[4], phi[0] * r2, i * r2 * phi[2]],
            x,
        }
    }
}

impl OmegaState {
    /// `Ω₁ = φ₅, Ω₂ = √2φ₁, Ω₃ = -√2φ₃`: carries the φ-flow with
    /// `φ₁ = φ₂`, `φ₃ = φ₄` onto the Ω-system.
    pub fn from_phi_flow(phi: &[C64; 5], x: C64) -> Self {
        let r2 = std::f64::consts::SQRT_2;
        OmegaState {
            omega: [phi[4], phi[0] * r2, -phi[2] * r2],
            x,
        }
    }

    /// Inverse of [`OmegaState::from_phi_flow`] onto `φ₁ = φ₂`, `φ₃ = φ₄`.
    pub fn to_phi_flow(&self) -> [C64; 5] {
        let r2 = std::f64::consts::SQRT_2;
        let [w1, w2, w3] = self.omega;
        [w2 / r2, w2 / r2, -w3 / r2, -w3 / r2, w1]
    }
}

/// `dΩ₁/dx = Ω₂Ω₃/x`, `dΩ₂/dx = Ω₁Ω₃/(1-x)`, `dΩ₃/dx = Ω₁Ω₂/(x(x-1))`.
pub fn pvi_rhs(state: &OmegaState) -> Result<[C64; 3]> {
    let x = state.x;
    if x.norm() == 0.0 || (x - 1.0).norm() == 0.0 {
        return Err(Error::Pole("x ∈ {0, 1}".into()));
    }
    let [w1, w2, w3] = state.omega;
    let one = C64::new(1.0, 0.0);
    Ok([w2 * w3 / x, w1 * w3 / (one - x), w1 * w2 / (x * (x - one))])
}

fn segment_avoids(x0: C64, x1: C64, p: C64, tol: f64) -> bool {
    let v = x1 - x0;
    let vv = v.norm_sqr();
    let u = if vv > 0.0 { ((p - x0).conj() * v).re / vv } else { 0.0 };
    (x0 + v * u.clamp(0.0, 1.0) - p).norm() > tol
}

fn check_x_path(x0: C64, x1: C64) -> Result<()> {
    for p in [0.0, 1.0] {
        if !segment_avoids(x0, x1, C64::new(p, 0.0), 1e-8) {
            return Err(Error::Pole(format!("path in x passes through {p}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaFlow {
    pub end: OmegaState,
    /// Max `|Q(x) - Q(x₀)|` over accepted steps, `Q = Ω₁² + Ω₂² + Ω₃²`.
    pub quadratic_drift: f64,
    pub stats: OdeStats,
}

/// Integrates the Ω-system along the straight segment `x₀ → x₁`.
pub fn integrate_omega(start: &OmegaState, x1: C64, opts: &OdeOptions) -> Result<OmegaFlow> {
    let x0 = start.x;
    check_x_path(x0, x1)?;
    let q0 = start.quadratic();
    let mut drift: f64 = 0.0;
    let rhs = |t: f64, y: &[C64], dy: &mut [C64]| {
        let x = x0 + (x1 - x0) * t;
        let st = OmegaState {
            omega: [y[0], y[1], y[2]],
            x,
        };
        let d = pvi_rhs(&st).unwrap_or([C64::new(f64::NAN, 0.0); 3]);
        for k in 0..3 {
            dy[k] = d[k] * (x1 - x0);
        }
    };
    let (y, stats) = ode::integrate(rhs, 0.0, 1.0, &start.omega, opts, |_, y| {
        let q: C64 = y.iter().map(|w| w * w).sum();
        drift = drift.max((q - q0).norm());
    })?;
    Ok(OmegaFlow {
        end: OmegaState {
            omega: [y[0], y[1], y[2]],
            x: x1,
        },
        quadratic_drift: drift,
        stats,
    })
}

/// Integrates `dA/dx = [ω̂₂(x), A]` along the straight segment `x₀ → x₁`.
pub fn integrate_reduced_4d(a0: &CMat, x0: C64, x1: C64, opts: &OdeOptions) -> Result<(CMat, OdeStats)> {
    check_x_path(x0, x1)?;
    let rhs = |t: f64, y: &[C64], dy: &mut [C64]| {
        let x = x0 + (x1 - x0) * t;
        let a = CMat::from_column_slice(4, 4, y);
        match reduced_rhs_4d(&a, x) {
            Ok(d) => {
                for (o, v) in dy.iter_mut().zip(d.iter()) {
                    *o = v * (x1 - x0);
                }
            }
            Err(_) => dy.iter_mut().for_each(|v| *v = C64::new(f64::NAN, 0.0)),
        }
    };
    let y0: Vec<C64> = a0.iter().copied().collect();
    let (y, st) = ode::integrate(rhs, 0.0, 1.0, &y0, opts, |_, _| {})?;
    Ok((CMat::from_column_slice(4, 4, &y), st))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, cr, max_abs};

    #[test]
    fn closed_form_at_one() {
        let ex = ThreeDExample::standard();
        let a = ex.closed_form(cr(1.0)).unwrap();
        assert!((a[(0, 1)] - cr(1.0)).norm() < 1e-15);
        assert!((a[(0, 2)] - cr(2.0)).norm() < 1e-15);
        assert!((a[(1, 0)] - cr(1.0)).norm() < 1e-15);
        assert!((a[(2, 0)] - cr(0.5)).norm() < 1e-15);
    }

    #[test]
    fn reduced_system_matches_display() {
        let a = CMat::from_fn(4, 4, |i, j| if (i < 2 && j < 2) || i == j { cr(0.0) } else { c(0.1 * (i + 2 * j) as f64, 0.3 - 0.1 * i as f64) });
        let x = c(0.4, 0.2);
        let d = reduced_rhs_4d(&a, x).unwrap();
        let one = cr(1.0);
        // dA_{[1,2]}/dx = A_{[1,3]}A_{[3,2]}/(1 - x)
        for i in 0..2 {
            assert!((d[(i, 2)] - a[(i, 3)] * a[(3, 2)] / (one - x)).norm() < 1e-14);
            assert!((d[(2, i)] - a[(3, i)] * a[(2, 3)] / (x - one)).norm() < 1e-14);
            assert!((d[(i, 3)] - a[(i, 2)] * a[(2, 3)] / (x * (one - x))).norm() < 1e-14);
            assert!((d[(3, i)] - (a[(2, i)] * a[(3, 2)]) / (x * (x - one))).norm() < 1e-14);
        }
        let a21a13 = a[(2, 0)] * a[(0, 3)] + a[(2, 1)] * a[(1, 3)];
        assert!((d[(2, 3)] - a21a13 / x).norm() < 1e-14);
        let a31a12 = a[(3, 0)] * a[(0, 2)] + a[(3, 1)] * a[(1, 2)];
        assert!((d[(3, 2)] + a31a12 / x).norm() < 1e-14);
        assert_eq!(max_abs(&omega_hat_4d(&linalg::zeros(4, 4), x).unwrap()), 0.0);
    }

    #[test]
    fn phi_rhs_matches_matrix_flow() {
        let phi = [c(0.3, 0.1), c(-0.2, 0.4), c(0.5, 0.0), c(0.1, -0.3), c(0.7, 0.2)];
        let x = c(0.35, -0.1);
        let d = reduced_rhs_4d(&skew_from_phi(&phi), x).unwrap();
        let dp = phi_rhs(&phi, x);
        let from_mat = phi_from_skew(&d);
        for k in 0..5 {
            assert!((dp[k] - from_mat[k]).norm() < 1e-14, "{k}");
        }
    }

    #[test]
    fn omega_maps_on_reduced_flow() {
        let phi = [c(0.3, 0.1), c(0.3, 0.1), c(0.5, -0.2), c(0.5, -0.2), c(0.7, 0.2)];
        let x = c(0.45, 0.1);
        let dp = phi_rhs(&phi, x);
        let good = OmegaState::from_phi_flow(&phi, x);
        let dgood = pvi_rhs(&good).unwrap();
        let pushed = OmegaState::from_phi_flow(&dp, x).omega;
        for k in 0..3 {
            assert!((pushed[k] - dgood[k]).norm() < 1e-14);
        }
        let bad = OmegaState::from_phi(&phi, x);
        let dbad = pvi_rhs(&bad).unwrap();
        let pushed = OmegaState::from_phi(&dp, x).omega;
        assert!((0..3).any(|k| (pushed[k] - dbad[k]).norm() > 1e-3));
        assert_eq!(OmegaState::from_phi_flow(&good.to_phi_flow(), x), good);
    }
}
