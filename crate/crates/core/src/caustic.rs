//! Local model of a Frobenius manifold near a generic caustic point where
//! two canonical coordinates merge: coordinates `(t₁, t₂, u₃, …, u_n)`,
//! the diagonalizing frame `Ψ`, the limit of `𝒱 = Ψ⁻¹VΨ` at `t₂ = 0` and
//! the restricted system on the caustic.
//!
//! The metric enters through `η̃₁₁` and `η̃₁₂` (with `η̃₂₂ = t₂^{m-2}η̃₁₁`),
//! supplied as polynomials in `(t₂, t₁)` plus linear terms in `u`.
//! Fractional powers of `t₂` share one principal logarithm.

use serde::{Deserialize, Serialize};

use crate::blocks::{BlockPartition, Lambda};
use crate::error::{Error, Result};
use crate::linalg::{self, max_abs, CMat, C64, I};
use crate::pfaffian::{build_form, build_omega, check_linear_constraints, CoalescedSystem, ConstraintReport, PfaffianForm};

/// `Σ_{k,l} c[k][l] t₂^k t₁^l + Σ_j u_lin[j] u_{j+3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoly {
    pub coeffs: Vec<Vec<C64>>,
    #[serde(default)]
    pub u_lin: Vec<C64>,
}

impl MetricPoly {
    pub fn constant(c: C64) -> Self {
        MetricPoly {
            coeffs: vec![vec![c]],
            u_lin: vec![],
        }
    }

    /// `c₀ + c₁ t₂`.
    pub fn linear_t2(c0: C64, c1: C64) -> Self {
        MetricPoly {
            coeffs: vec![vec![c0], vec![c1]],
            u_lin: vec![],
        }
    }

    fn horner(&self, t1: C64, t2: C64, dk: usize, dl: usize) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (k, row) in self.coeffs.iter().enumerate() {
            if k < dk {
                continue;
            }
            for (l, c) in row.iter().enumerate() {
                if l < dl {
                    continue;
                }
                let fk = (0..dk).fold(1.0, |acc, q| acc * (k - q) as f64);
                let fl = (0..dl).fold(1.0, |acc, q| acc * (l - q) as f64);
                s += c * fk * fl * t2.powu((k - dk) as u32) * t1.powu((l - dl) as u32);
            }
        }
        s
    }

    pub fn eval(&self, t1: C64, t2: C64, u: &[C64]) -> C64 {
        let lin: C64 = self.u_lin.iter().zip(u).map(|(a, b)| a * b).sum();
        self.horner(t1, t2, 0, 0) + lin
    }

    pub fn d_t1(&self, t1: C64, t2: C64) -> C64 {
        self.horner(t1, t2, 0, 1)
    }

    pub fn d_t2(&self, t1: C64, t2: C64) -> C64 {
        self.horner(t1, t2, 1, 0)
    }

    /// `∂/∂u_{j+3}`.
    pub fn d_u(&self, j: usize) -> C64 {
        self.u_lin.get(j).copied().unwrap_or(C64::new(0.0, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausticModel {
    pub m: u32,
    pub n: usize,
    pub eta11: MetricPoly,
    pub eta12: MetricPoly,
    /// `V̊₁₂ = lim V₁₂(u)` as `u₁ - u₂ → 0`.
    pub v12: C64,
}

/// `V̊₁₂ = i(m-2)/(2m)`.
pub fn v12_expected(m: u32) -> C64 {
    I * ((m as f64 - 2.0) / (2.0 * m as f64))
}

impl CausticModel {
    pub fn new(m: u32, n: usize, eta11: MetricPoly, eta12: MetricPoly, v12: C64) -> Result<Self> {
        if m < 2 {
            return Err(Error::Invalid("the caustic model needs m ≥ 2".into()));
        }
        if n < 2 {
            return Err(Error::Dimension("the caustic model needs n ≥ 2".into()));
        }
        Ok(CausticModel { m, n, eta11, eta12, v12 })
    }

    /// `η̃₁₁ = 0.3 + 0.2t₂`, `η̃₁₂ = 1 + 0.1t₂` and the expected `V̊₁₂`.
    pub fn standard(m: u32, n: usize) -> Result<Self> {
        Self::new(
            m,
            n,
            MetricPoly::linear_t2(C64::new(0.3, 0.0), C64::new(0.2, 0.0)),
            MetricPoly::linear_t2(C64::new(1.0, 0.0), C64::new(0.1, 0.0)),
            v12_expected(m),
        )
    }

    pub fn with_v12(&self, v12: C64) -> Self {
        CausticModel { v12, ..self.clone() }
    }

    pub fn etas(&self, t1: C64, t2: C64, u: &[C64]) -> (C64, C64) {
        (self.eta11.eval(t1, t2, u), self.eta12.eval(t1, t2, u))
    }

    /// Non-degeneracy of the metric at `t₂ = 0`.
    pub fn check_nondegenerate(&self, t1: C64, u: &[C64]) -> Result<()> {
        let (e11, e12) = self.etas(t1, C64::new(0.0, 0.0), u);
        let det = if self.m >= 3 { e12 * e12 } else { e12 * e12 - e11 * e11 };
        if det.norm() < 1e-14 {
            return Err(Error::Invalid("metric degenerate at t₂ = 0".into()));
        }
        Ok(())
    }

    fn t2_power(&self, t2: C64, p: f64) -> C64 {
        if t2.norm() == 0.0 {
            return if p == 0.0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
        }
        (t2.ln() * p).exp()
    }
}

/// `u₁ = t₁ + (2/m)t₂^{m/2}`, `u₂ = t₁ - (2/m)t₂^{m/2}`.
pub fn caustic_coords(t1: C64, t2: C64, m: u32) -> (C64, C64) {
    let w = if t2.norm() == 0.0 {
        C64::new(0.0, 0.0)
    } else {
        (t2.ln() * (m as f64 / 2.0)).exp() * (2.0 / m as f64)
    };
    (t1 + w, t1 - w)
}

/// `t₁ = (u₁ + u₂)/2`, `t₂ = ((m/4)(u₁ - u₂))^{2/m}` on the principal branch.
pub fn caustic_coords_inverse(u1: C64, u2: C64, m: u32) -> (C64, C64) {
    let d = (u1 - u2) * (m as f64 / 4.0);
    let t2 = if d.norm() == 0.0 {
        C64::new(0.0, 0.0)
    } else {
        (d.ln() * (2.0 / m as f64)).exp()
    };
    ((u1 + u2) * 0.5, t2)
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiData {
    #[serde(with = "linalg::pairs")]
    pub psi: CMat,
    pub a: [f64; 2],
    pub b: [f64; 2],
    /// `‖ΨᵀΨ - Gram‖`.
    pub gram_residual: f64,
    /// `‖ΨΦΨ⁻¹ - diag(u)‖` with `Φ` the matrix of `E∘`.
    pub diag_residual: f64,
}

/// `a² = η̃₁₂ + t₂^{(m-2)/2}η̃₁₁`, `b² = η̃₁₂ - t₂^{(m-2)/2}η̃₁₁` (principal roots).
fn ab(model: &CausticModel, t1: C64, t2: C64, u: &[C64]) -> (C64, C64) {
    let (e11, e12) = model.etas(t1, t2, u);
    let s = model.t2_power(t2, (model.m as f64 - 2.0) / 2.0);
    ((e12 + s * e11).sqrt(), (e12 - s * e11).sqrt())
}

fn psi_hat_with(model: &CausticModel, t2: C64, a: C64, b: C64) -> CMat {
    let p = (model.m as f64 - 2.0) / 4.0;
    let lo = model.t2_power(t2, -p);
    let hi = model.t2_power(t2, p);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    linalg::from_rows(2, 2, &[a * r * lo, a * r * hi, I * b * r * lo, -I * b * r * hi])
}

/// The 2×2 block `Ψ̂`.
pub fn psi_hat(model: &CausticModel, t1: C64, t2: C64, u: &[C64]) -> CMat {
    let (a, b) = ab(model, t1, t2, u);
    psi_hat_with(model, t2, a, b)
}

/// `∂Ψ̂/∂t₂`.
fn psi_hat_dt2(model: &CausticModel, t1: C64, t2: C64, u: &[C64]) -> CMat {
    let m = model.m as f64;
    let (e11, _) = model.etas(t1, t2, u);
    let (d11, d12) = (model.eta11.d_t2(t1, t2), model.eta12.d_t2(t1, t2));
    let (a, b) = ab(model, t1, t2, u);
    let s = model.t2_power(t2, (m - 2.0) / 2.0);
    let ds = model.t2_power(t2, (m - 4.0) / 2.0) * ((m - 2.0) / 2.0);
    let da = (d12 + ds * e11 + s * d11) / (a * 2.0);
    let db = (d12 - ds * e11 - s * d11) / (b * 2.0);
    let p = (m - 2.0) / 4.0;
    let lo = model.t2_power(t2, -p);
    let hi = model.t2_power(t2, p);
    let dlo = model.t2_power(t2, -p - 1.0) * (-p);
    let dhi = model.t2_power(t2, p - 1.0) * p;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    linalg::from_rows(
        2,
        2,
        &[
            (da * lo + a * dlo) * r,
            (da * hi + a * dhi) * r,
            I * (db * lo + b * dlo) * r,
            -I * (db * hi + b * dhi) * r,
        ],
    )
}

fn embed(hat: &CMat, n: usize) -> CMat {
    let mut m = linalg::eye(n);
    m.view_mut((0, 0), (2, 2)).copy_from(hat);
    m
}

/// Matrix of `E∘` on `(∂_{t₁}, ∂_{t₂}, f₃, …, f_n)`.
pub fn euler_matrix(model: &CausticModel, t1: C64, t2: C64, u: &[C64]) -> CMat {
    let m = model.m as f64;
    let mut d = vec![t1, t1];
    d.extend_from_slice(u);
    let mut e = linalg::diag(&d);
    e[(0, 1)] = model.t2_power(t2, m - 1.0) * (2.0 / m);
    e[(1, 0)] = t2 * (2.0 / m);
    e
}

/// Gram matrix `[[η̃₁₁, η̃₁₂], [η̃₁₂, t₂^{m-2}η̃₁₁]] ⊕ I`.
pub fn gram(model: &CausticModel, t1: C64, t2: C64, u: &[C64]) -> CMat {
    let (e11, e12) = model.etas(t1, t2, u);
    let hat = linalg::from_rows(2, 2, &[e11, e12, e12, model.t2_power(t2, model.m as f64 - 2.0) * e11]);
    embed(&hat, model.n)
}

fn check_u(model: &CausticModel, u: &[C64]) -> Result<()> {
    if u.len() != model.n - 2 {
        return Err(Error::Dimension(format!("expected {} values u₃…u_n, got {}", model.n - 2, u.len())));
    }
    Ok(())
}

/// `Ψ = Ψ̂ ⊕ I_{n-2}` with its Gram and diagonalization certificates.
pub fn caustic_psi(model: &CausticModel, t1: C64, t2: C64, u: &[C64]) -> Result<PsiData> {
    check_u(model, u)?;
    if t2.norm() == 0.0 && model.m >= 3 {
        return Err(Error::Pole("Ψ is singular at t₂ = 0 for m ≥ 3".into()));
    }
    let (a, b) = ab(model, t1, t2, u);
    let psi = embed(&psi_hat_with(model, t2, a, b), model.n);
    let g = gram(model, t1, t2, u);
    let gram_residual = max_abs(&(psi.transpose() * &psi - &g)) / max_abs(&g).max(1.0);
    let (u1, u2) = caustic_coords(t1, t2, model.m);
    let mut d = vec![u1, u2];
    d.extend_from_slice(u);
    let e = euler_matrix(model, t1, t2, u);
    let diag_residual = max_abs(&(linalg::solve(&psi.transpose(), &(&psi * &e).transpose())?.transpose() - linalg::diag(&d)))
        / max_abs(&e).max(1.0);
    Ok(PsiData {
        psi,
        a: [a.re, a.im],
        b: [b.re, b.im],
        gram_residual,
        diag_residual,
    })
}

/// `𝒱_{[1,1]}` at `t₂`:
/// `iV₁₂/√(η̃₁₂² - η̃₁₁²t₂^{m-2}) · [[η̃₁₂, η̃₁₁t₂^{m-2}], [-η̃₁₁, -η̃₁₂]]`.
pub fn v11_block(model: &CausticModel, t1: C64, t2: C64, u: &[C64]) -> CMat {
    let (e11, e12) = model.etas(t1, t2, u);
    let s = model.t2_power(t2, model.m as f64 - 2.0);
    let pref = I * model.v12 / (e12 * e12 - e11 * e11 * s).sqrt();
    linalg::from_rows(2, 2, &[e12, e11 * s, -e11, -e12]) * pref
}

/// `𝒱_{[1,1]}|_{t₂=0}`, with its separate `m ≥ 3` and `m = 2` forms.
pub fn caustic_v11_limit(model: &CausticModel, t1: C64, u: &[C64]) -> Result<CMat> {
    model.check_nondegenerate(t1, u)?;
    let (e11, e12) = model.etas(t1, C64::new(0.0, 0.0), u);
    let (pref, top) = if model.m >= 3 {
        (I * model.v12 / (e12 * e12).sqrt(), C64::new(0.0, 0.0))
    } else {
        (I * model.v12 / (e12 * e12 - e11 * e11).sqrt(), e11)
    };
    Ok(linalg::from_rows(2, 2, &[e12, top, -e11, -e12]) * pref)
}

/// Off-diagonal data of `𝒱`: the `2 × (n-2)` block `𝒱_{α k}` and the
/// skew-symmetric `(n-2) × (n-2)` tail. The `(n-2) × 2` block follows from
/// skew-symmetry of `V = Ψ𝒱Ψ⁻¹`, i.e. of `Gram · 𝒱`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffBlocks {
    pub upper: CMat,
    pub tail: CMat,
}

impl OffBlocks {
    pub fn zero(n: usize) -> Self {
        OffBlocks {
            upper: linalg::zeros(2, n - 2),
            tail: linalg::zeros(n - 2, n - 2),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.upper.nrows() != 2 || self.upper.ncols() != n - 2 || self.tail.nrows() != n - 2 || self.tail.ncols() != n - 2 {
            return Err(Error::Dimension("off-block shapes".into()));
        }
        if max_abs(&(&self.tail + self.tail.transpose())) > 1e-14 * max_abs(&self.tail).max(1.0) {
            return Err(Error::Invalid("tail of 𝒱 must be skew-symmetric".into()));
        }
        Ok(())
    }
}

/// `𝒱(t₂)` with `𝒱_{[1,1]}` from [`v11_block`] and the given off-blocks.
pub fn cal_v(model: &CausticModel, t1: C64, t2: C64, u: &[C64], off: &OffBlocks) -> Result<CMat> {
    check_u(model, u)?;
    off.check(model.n)?;
    let n = model.n;
    let mut v = linalg::zeros(n, n);
    v.view_mut((0, 0), (2, 2)).copy_from(&v11_block(model, t1, t2, u));
    v.view_mut((0, 2), (2, n - 2)).copy_from(&off.upper);
    v.view_mut((2, 2), (n - 2, n - 2)).copy_from(&off.tail);
    let g = gram(model, t1, t2, u);
    let ghat = g.view((0, 0), (2, 2)).into_owned();
    let lower = -(ghat * &off.upper).transpose();
    v.view_mut((2, 0), (n - 2, 2)).copy_from(&lower);
    Ok(v)
}

/// `V = Ψ𝒱Ψ⁻¹` in the normalized idempotent frame.
pub fn v_canonical(model: &CausticModel, t1: C64, t2: C64, u: &[C64], off: &OffBlocks) -> Result<CMat> {
    let psi = caustic_psi(model, t1, t2, u)?.psi;
    let cv = cal_v(model, t1, t2, u, off)?;
    Ok(&psi * cv * linalg::inverse(&psi)?)
}

/// `V_j` with entries `V_{ab}(δ_{aj} - δ_{bj})/(u_a - u_b)` (0-based `j`).
pub fn v_j(v: &CMat, uvals: &[C64], j: usize) -> CMat {
    let n = v.nrows();
    CMat::from_fn(n, n, |a, b| {
        if a == b || (a != j && b != j) {
            C64::new(0.0, 0.0)
        } else {
            let s = if a == j { 1.0 } else { -1.0 };
            v[(a, b)] * s / (uvals[a] - uvals[b])
        }
    })
}

/// `V₁ + V₂`, whose `(1,2)` entries cancel identically.
fn v_sum12(v: &CMat, uvals: &[C64]) -> CMat {
    let mut s = v_j(v, uvals, 0) + v_j(v, uvals, 1);
    s[(0, 1)] = C64::new(0.0, 0.0);
    s[(1, 0)] = C64::new(0.0, 0.0);
    s
}

fn all_u(model: &CausticModel, t1: C64, t2: C64, u: &[C64]) -> Vec<C64> {
    let (u1, u2) = caustic_coords(t1, t2, model.m);
    let mut all = vec![u1, u2];
    all.extend_from_slice(u);
    all
}

/// `s = t₂^{(m-2)/2}`, `u = (u₁, u₂, u₃, …)`, `a²b² = η̃₁₂² - s²η̃₁₁²`.
struct Frame {
    m: f64,
    t2: C64,
    s: C64,
    uv: Vec<C64>,
    w: C64,
}

impl Frame {
    fn new(model: &CausticModel, t1: C64, t2: C64, u: &[C64]) -> Self {
        let w = model.t2_power(t2, model.m as f64 / 2.0) * (2.0 / model.m as f64);
        let mut uv = vec![t1 + w, t1 - w];
        uv.extend_from_slice(u);
        Frame {
            m: model.m as f64,
            t2,
            s: model.t2_power(t2, (model.m as f64 - 2.0) / 2.0),
            uv,
            w,
        }
    }

    /// `scale · Ψ̂⁻¹ diag(d₁, d₂) Ψ̂` from `d₁ + d₂` and `d₁ - d₂`, using
    /// `Ψ̂⁻¹σ₃Ψ̂ = [[0, s], [1/s, 0]]`.
    fn sandwich(&self, sum: C64, diff: C64, scale: C64) -> CMat {
        let h = scale * 0.5;
        linalg::from_rows(2, 2, &[h * sum, h * diff * self.s, h * diff / self.s, h * sum])
    }

    /// `Ψ̂⁻¹ diag(1/(c - u₁), 1/(c - u₂)) Ψ̂` for `c = u_k`, with scale.
    fn toward(&self, k: usize, scale: C64) -> CMat {
        let (d1, d2) = (self.uv[k] - self.uv[0], self.uv[k] - self.uv[1]);
        let sum = (d1 + d2) / (d1 * d2);
        let diff = self.w * 2.0 / (d1 * d2);
        self.sandwich(sum, diff, scale)
    }
}

/// `𝒱₂ = Ψ⁻¹(V₁ + V₂)Ψ` and `𝒱_j = Ψ⁻¹V_jΨ` (`j ≥ 3`) at `t₂`, evaluated
/// blockwise so that no large entries of `Ψ` cancel.
pub fn conjugated_fields(model: &CausticModel, t1: C64, t2: C64, u: &[C64], off: &OffBlocks) -> Result<Vec<CMat>> {
    check_u(model, u)?;
    if t2.norm() == 0.0 {
        return Err(Error::Pole("t₂ = 0".into()));
    }
    let cv = cal_v(model, t1, t2, u, off)?;
    let f = Frame::new(model, t1, t2, u);
    let n = model.n;
    let one = C64::new(1.0, 0.0);
    let mut out = Vec::with_capacity(n - 1);
    // V₁ + V₂: weights 1/(u_α - u_k) on column k and row k of the coupling
    let mut v2 = linalg::zeros(n, n);
    for k in 2..n {
        let sw = f.toward(k, -one);
        let col = &sw * cv.view((0, k), (2, 1));
        let row = cv.view((k, 0), (1, 2)) * &sw;
        v2.view_mut((0, k), (2, 1)).copy_from(&col);
        v2.view_mut((k, 0), (1, 2)).copy_from(&row);
    }
    out.push(v2);
    for j in 2..n {
        let mut vj = linalg::zeros(n, n);
        let sw = f.toward(j, one);
        let col = &sw * cv.view((0, j), (2, 1));
        let row = cv.view((j, 0), (1, 2)) * &sw;
        vj.view_mut((0, j), (2, 1)).copy_from(&col);
        vj.view_mut((j, 0), (1, 2)).copy_from(&row);
        for l in 2..n {
            if l != j {
                let d = f.uv[j] - f.uv[l];
                vj[(j, l)] = cv[(j, l)] / d;
                vj[(l, j)] = cv[(l, j)] / d;
            }
        }
        out.push(vj);
    }
    Ok(out)
}

/// `t₂^{(m-2)/2}Ψ⁻¹(V₁ - V₂)Ψ - Ψ⁻¹∂Ψ/∂t₂` at `t₂` with `V₁₂ ≡ V̊₁₂`.
/// The `[1,1]` block uses `Ψ̂⁻¹JΨ̂ = JΨ̂ᵀΨ̂/det Ψ̂` and the logarithmic
/// derivatives of `a`, `b`; the coupling uses [`Frame::sandwich`].
pub fn holomorphy_term(model: &CausticModel, t1: C64, t2: C64, u: &[C64], off: &OffBlocks) -> Result<CMat> {
    check_u(model, u)?;
    if t2.norm() == 0.0 {
        return Err(Error::Pole("t₂ = 0".into()));
    }
    let f = Frame::new(model, t1, t2, u);
    let (m, t, s) = (f.m, f.t2, f.s);
    let (ff, e) = model.etas(t1, t2, u);
    let (dff, de) = (model.eta11.d_t2(t1, t2), model.eta12.d_t2(t1, t2));
    let (a, b) = ab(model, t1, t2, u);
    let a2b2 = e * e - s * s * ff * ff;
    let p = (m - 2.0) / 4.0;
    // G = sF, G' = s((m-2)F/(2t) + F')
    let g = s * ff;
    let gp = s * (ff * ((m - 2.0) / 2.0) / t + dff);
    let apb = (e * de - g * gp) / a2b2;
    // (α - β)/s
    let amb_s = (ff * e * ((m - 2.0) / 2.0) / t + dff * e - de * ff) / a2b2;
    let vpart = I * model.v12 * m / (t * a * b * 2.0);
    let mut x = linalg::zeros(model.n, model.n);
    x[(0, 0)] = vpart * e - apb * 0.5 + p / t;
    x[(0, 1)] = vpart * s * s * ff - amb_s * s * s * 0.5;
    x[(1, 0)] = -vpart * ff - amb_s * 0.5;
    x[(1, 1)] = -vpart * e - apb * 0.5 - p / t;
    let cv = cal_v(model, t1, t2, u, off)?;
    for k in 2..model.n {
        // diag(1/(u₁ - u_k), -1/(u₂ - u_k)) = diag(-1/(u_k - u₁), 1/(u_k - u₂)), scaled by s
        let (d1, d2) = (f.uv[k] - f.uv[0], f.uv[k] - f.uv[1]);
        let sum = (d1 - d2) / (d1 * d2);
        let diff = -(d1 + d2) / (d1 * d2);
        let sw = f.sandwich(sum, diff, s);
        let col = &sw * cv.view((0, k), (2, 1));
        let row = cv.view((k, 0), (1, 2)) * &sw;
        x.view_mut((0, k), (2, 1)).copy_from(&col);
        x.view_mut((k, 0), (1, 2)).copy_from(&row);
    }
    Ok(x)
}

/// The `t₂ → 0` limit of [`holomorphy_term`] when `V̊₁₂` is the bounded
/// value: coupling `X_{2k} = A_{1k}/(t₁ - u_k)`, `X_{k1} = A_{k2}/(t₁ - u_k)`
/// (plus `X_{1k}`, `X_{k2}` for `m = 2`) and the `[1,1]` block from the
/// regular part of `-Ψ̂⁻¹∂Ψ̂/∂t₂`.
pub fn holomorphy_limit(model: &CausticModel, t1: C64, u: &[C64], off: &OffBlocks) -> Result<CMat> {
    check_u(model, u)?;
    model.check_nondegenerate(t1, u)?;
    let z = C64::new(0.0, 0.0);
    let (ff, e) = model.etas(t1, z, u);
    let (dff, de) = (model.eta11.d_t2(t1, z), model.eta12.d_t2(t1, z));
    let n = model.n;
    let mut x = linalg::zeros(n, n);
    let blk = match model.m {
        2 => {
            let den = (e * e - ff * ff) * 2.0;
            let dg = (e * de - ff * dff) / den;
            let od = (dff * e - de * ff) / den;
            [-dg, -od, -od, -dg]
        }
        3 => {
            let r = ff / e;
            [
                -de / (e * 2.0) + r * r / 8.0,
                -r / 2.0,
                -(dff / e - ff * de / (e * e)) / 2.0 - r * r * r / 8.0,
                -de / (e * 2.0) + r * r * 3.0 / 8.0,
            ]
        }
        _ => [-de / (e * 2.0), z, -(dff / e - ff * de / (e * e)) / 2.0, -de / (e * 2.0)],
    };
    x.view_mut((0, 0), (2, 2)).copy_from(&linalg::from_rows(2, 2, &blk));
    let a = cal_v(model, t1, z, u, off)?;
    let s2 = if model.m == 2 { C64::new(1.0, 0.0) } else { z };
    for k in 2..n {
        let d = t1 - u[k - 2];
        x[(0, k)] = s2 * a[(1, k)] / d;
        x[(1, k)] = a[(0, k)] / d;
        x[(k, 0)] = a[(k, 1)] / d;
        x[(k, 1)] = s2 * a[(k, 0)] / d;
    }
    Ok(x)
}

/// Two-point Richardson extrapolation to `t₂ = 0` assuming an `O(t₂)` error.
pub fn richardson(xa: &CMat, ta: f64, xb: &CMat, tb: f64) -> CMat {
    (xb * C64::new(ta, 0.0) - xa * C64::new(tb, 0.0)) / C64::new(ta - tb, 0.0)
}

/// [`conjugated_fields`] by explicit conjugation with `Ψ`; loses about
/// `t₂^{-(m-2)/2}` in relative accuracy.
pub fn conjugated_fields_direct(model: &CausticModel, t1: C64, t2: C64, u: &[C64], off: &OffBlocks) -> Result<Vec<CMat>> {
    let psi = caustic_psi(model, t1, t2, u)?.psi;
    let pinv = linalg::inverse(&psi)?;
    let v = &psi * cal_v(model, t1, t2, u, off)? * &pinv;
    let uv = all_u(model, t1, t2, u);
    let mut out = vec![&pinv * v_sum12(&v, &uv) * &psi];
    for j in 2..model.n {
        out.push(&pinv * v_j(&v, &uv, j) * &psi);
    }
    Ok(out)
}

/// `-Ψ̂⁻¹ ∂Ψ̂/∂ξ` at `t₂ = 0` for `ξ = t₁` (`xi = None`) or `ξ = u_{j+3}`.
pub fn minus_psi_log_derivative(model: &CausticModel, t1: C64, u: &[C64], xi: Option<usize>) -> Result<CMat> {
    model.check_nondegenerate(t1, u)?;
    let z = C64::new(0.0, 0.0);
    let (e11, e12) = model.etas(t1, z, u);
    let (d11, d12) = match xi {
        None => (model.eta11.d_t1(t1, z), model.eta12.d_t1(t1, z)),
        Some(j) => (model.eta11.d_u(j), model.eta12.d_u(j)),
    };
    let s = if model.m == 2 { C64::new(1.0, 0.0) } else { z };
    let den = (e12 * e12 - s * e11 * e11) * 2.0;
    let diag = e12 * d12 - e11 * d11 * s;
    let off = e12 * d11 - e11 * d12;
    Ok(-linalg::from_rows(2, 2, &[diag, s * off, off, diag]) / den)
}

/// `𝒯₁` for `m ≥ 3`: `[[c₁/√η̃₁₂, 0], [-(c₁/2)η̃₁₁/η̃₁₂^{3/2}, c₂/√η̃₁₂]]` at `t₂ = 0`;
/// for `m = 2`, `Ψ̂⁻¹(t₁, 0) C` with `C = [[c₁, 0], [0, c₂]]`.
pub fn t1_formula(model: &CausticModel, t1: C64, u: &[C64], c1: C64, c2: C64) -> Result<CMat> {
    model.check_nondegenerate(t1, u)?;
    let (e11, e12) = model.etas(t1, C64::new(0.0, 0.0), u);
    if model.m >= 3 {
        let r = e12.sqrt();
        Ok(linalg::from_rows(2, 2, &[c1 / r, C64::new(0.0, 0.0), -c1 * 0.5 * e11 / (r * e12), c2 / r]))
    } else {
        let hat = psi_hat(model, t1, C64::new(0.0, 0.0), u);
        Ok(linalg::inverse(&hat)? * linalg::diag(&[c1, c2]))
    }
}

/// `𝒯 = 𝒯₁ ⊕ diag(h₂, …, h_{n-1})`.
pub fn t_formula(model: &CausticModel, t1: C64, u: &[C64], c1: C64, c2: C64, h: &[C64]) -> Result<CMat> {
    if h.len() != model.n - 2 {
        return Err(Error::Dimension("need n - 2 constants h".into()));
    }
    let t = t1_formula(model, t1, u, c1, c2)?;
    let mut d = vec![C64::new(1.0, 0.0); 2];
    d.extend_from_slice(h);
    let mut out = linalg::diag(&d);
    out.view_mut((0, 0), (2, 2)).copy_from(&t);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RestrictedSystem {
    pub system: CoalescedSystem,
    pub form: PfaffianForm,
    pub constraints: ConstraintReport,
    /// Max over `j` of `‖lim 𝒱_j - ω_{j-1}‖`, limits by Richardson.
    pub omega_limit_residual: f64,
}

/// `Λ = diag(t₁, t₁, u₃, …, u_n)`, `A = 𝒱|_{t₂=0}` on partition `(2, 1, …, 1)`.
pub fn caustic_restricted_system(model: &CausticModel, t1: C64, u: &[C64], off: &OffBlocks) -> Result<RestrictedSystem> {
    check_u(model, u)?;
    let n = model.n;
    let mut sizes = vec![2];
    sizes.extend(std::iter::repeat(1).take(n - 2));
    let part = BlockPartition::new(&sizes)?;
    let mut lam = vec![t1];
    lam.extend_from_slice(u);
    let lambda = Lambda::new(lam, part, 1e-10)?;
    let mut a = cal_v(model, t1, C64::new(0.0, 0.0), u, off)?;
    a.view_mut((0, 0), (2, 2)).copy_from(&caustic_v11_limit(model, t1, u)?);
    let system = CoalescedSystem::new(lambda, a)?;
    let omegas = build_omega(&system)?;
    let (ta, tb) = (1e-4, 1e-5);
    let fa = conjugated_fields(model, t1, C64::new(ta, 0.0), u, off)?;
    let fb = conjugated_fields(model, t1, C64::new(tb, 0.0), u, off)?;
    let scale = omegas.iter().map(max_abs).fold(1.0, f64::max);
    let mut res: f64 = 0.0;
    for (k, om) in omegas.iter().enumerate() {
        let lim = richardson(&fa[k], ta, &fb[k], tb);
        res = res.max(max_abs(&(lim - om)) / scale);
    }
    let form = build_form(&system)?;
    let constraints = check_linear_constraints(&form, crate::tolerances::CONSTRAINT_TOL);
    Ok(RestrictedSystem {
        system,
        form,
        constraints,
        omega_limit_residual: res,
    })
}

/// [`holomorphy_term`] by explicit conjugation; loses about
/// `t₂^{-m/2}` in absolute accuracy.
pub fn holomorphy_term_direct(model: &CausticModel, t1: C64, t2: C64, u: &[C64], off: &OffBlocks) -> Result<CMat> {
    let psi = caustic_psi(model, t1, t2, u)?.psi;
    let pinv = linalg::inverse(&psi)?;
    let v = &psi * cal_v(model, t1, t2, u, off)? * &pinv;
    let uv = all_u(model, t1, t2, u);
    let diff = v_j(&v, &uv, 0) - v_j(&v, &uv, 1);
    let pre = model.t2_power(t2, (model.m as f64 - 2.0) / 2.0);
    let mut dpsi = linalg::zeros(model.n, model.n);
    dpsi.view_mut((0, 0), (2, 2)).copy_from(&psi_hat_dt2(model, t1, t2, u));
    Ok(&pinv * diff * &psi * pre - &pinv * dpsi)
}

/// The `t₂ = 0` value of [`holomorphy_term`] when the divergences cancel:
/// zero `[1,1]` block and off-blocks `±A_{αk}/(λ₁ - λ_{k-1})`.
pub fn displayed_limit(sys: &CoalescedSystem) -> CMat {
    let n = sys.n();
    let lam = &sys.lambda.values;
    let mut x = linalg::zeros(n, n);
    for k in 2..n {
        let d = lam[0] - lam[k - 1];
        x[(0, k)] = sys.a[(0, k)] / d;
        x[(1, k)] = -sys.a[(1, k)] / d;
        x[(k, 0)] = sys.a[(k, 0)] / d;
        x[(k, 1)] = -sys.a[(k, 1)] / d;
    }
    x
}

#[derive(Debug, Clone, Serialize)]
pub struct VringEntry {
    pub v12: [f64; 2],
    pub grid: Vec<f64>,
    pub norms: Vec<f64>,
    /// Slope of `log‖X‖` against `log t₂` on the last decade of the grid.
    pub slope: f64,
    /// `-slope`: `‖X‖ ~ t₂^{-growth}`.
    pub growth: f64,
    pub bounded: bool,
    /// Sign flips of `a` or `b` along the grid when continued from the
    /// largest `t₂`.
    pub sign_flips: usize,
    /// Richardson limit of `X` for bounded candidates.
    #[serde(serialize_with = "linalg::opt_pairs::serialize")]
    pub limit: Option<CMat>,
    /// `‖limit - holomorphy_limit‖`.
    pub limit_mismatch: Option<f64>,
    /// `‖limit - displayed_limit‖` split into the `[1,1]` block and the coupling.
    pub displayed_mismatch: Option<[f64; 2]>,
}

/// Growth of `t₂^{(m-2)/2}Ψ⁻¹(V₁ - V₂)Ψ - Ψ⁻¹∂Ψ/∂t₂` as `t₂ → 0` for
/// each candidate `V̊₁₂` (holding `V₁₂ ≡ V̊₁₂`).
pub fn vring_scan(
    model: &CausticModel,
    t1: C64,
    u: &[C64],
    off: &OffBlocks,
    candidates: &[C64],
    grid: &[f64],
) -> Result<Vec<VringEntry>> {
    if grid.len() < 3 || grid.iter().any(|&t| t <= 0.0) {
        return Err(Error::Invalid("the t₂ grid needs at least 3 positive points".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    let zero = C64::new(0.0, 0.0);
    std::thread::scope(|sc| {
        let hs: Vec<_> = candidates
            .iter()
            .map(|&v| {
                let grid = &grid;
                sc.spawn(move || -> Result<VringEntry> {
                    let md = model.with_v12(v);
                    let mut norms = Vec::with_capacity(grid.len());
                    let mut xs = Vec::with_capacity(grid.len());
                    let mut flips = 0;
                    let mut prev: Option<(C64, C64)> = None;
                    for &t in grid {
                        let (a, b) = ab(&md, t1, C64::new(t, 0.0), u);
                        if let Some((pa, pb)) = prev {
                            flips += usize::from((a - pa).norm() > (a + pa).norm());
                            flips += usize::from((b - pb).norm() > (b + pb).norm());
                        }
                        prev = Some((a, b));
                        let x = holomorphy_term(&md, t1, C64::new(t, 0.0), u, off)?;
                        norms.push(max_abs(&x));
                        xs.push(x);
                    }
                    let k = grid.len();
                    let tail = grid.iter().position(|&t| t <= grid[k - 1] * 10.0).unwrap_or(0).min(k - 2);
                    let slope = linalg::loglog_slope(&grid[tail..], &norms[tail..]);
                    let growth = -slope;
                    let bounded = growth <= 0.1;
                    let (limit, mismatch, disp_mismatch) = if bounded {
                        let lim = richardson(&xs[k - 2], grid[k - 2], &xs[k - 1], grid[k - 1]);
                        let mut a0 = cal_v(&md, t1, zero, u, off)?;
                        a0.view_mut((0, 0), (2, 2)).copy_from(&caustic_v11_limit(&md, t1, u)?);
                        let mut lam = vec![t1];
                        lam.extend_from_slice(u);
                        let mut sizes = vec![2];
                        sizes.extend(std::iter::repeat(1).take(md.n - 2));
                        let sys = CoalescedSystem::new(Lambda::new(lam, BlockPartition::new(&sizes)?, 1e-10)?, a0)?;
                        let disp = displayed_limit(&sys);
                        let d = &lim - &disp;
                        let blk = max_abs(&d.view((0, 0), (2, 2)).into_owned());
                        let mut rest = d.clone();
                        rest.view_mut((0, 0), (2, 2)).fill(zero);
                        let derived = max_abs(&(&lim - holomorphy_limit(&md, t1, u, off)?));
                        (Some(lim), Some(derived), Some([blk, max_abs(&rest)]))
                    } else {
                        (None, None, None)
                    };
                    Ok(VringEntry {
                        v12: [v.re, v.im],
                        grid: grid.clone(),
                        norms,
                        slope,
                        growth,
                        bounded,
                        sign_flips: flips,
                        limit,
                        limit_mismatch: mismatch,
                        displayed_mismatch: disp_mismatch,
                    })
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().expect("scan worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, cr};

    #[test]
    fn coords_examples() {
        let (u1, u2) = caustic_coords(cr(0.0), cr(1.0), 2);
        assert!((u1 - cr(1.0)).norm() < 1e-15 && (u2 + cr(1.0)).norm() < 1e-15);
        let (u1, u2) = caustic_coords(c(0.3, 0.1), cr(0.0), 5);
        assert_eq!(u1, u2);
    }

    #[test]
    fn flat_m2_psi_is_constant() {
        let md = CausticModel::new(2, 3, MetricPoly::constant(cr(0.0)), MetricPoly::constant(cr(1.0)), cr(0.0)).unwrap();
        let p1 = caustic_psi(&md, cr(0.2), cr(0.3), &[cr(2.0)]).unwrap();
        let p2 = caustic_psi(&md, cr(-0.5), cr(0.01), &[cr(2.0)]).unwrap();
        assert_eq!(p1.a, [1.0, 0.0]);
        assert_eq!(p1.b, [1.0, 0.0]);
        assert!(max_abs(&(&p1.psi - &p2.psi)) < 1e-15);
    }

    #[test]
    fn log_derivative_matches_finite_difference() {
        let md = CausticModel::new(
            3,
            3,
            MetricPoly {
                coeffs: vec![vec![cr(0.3), cr(0.2)], vec![cr(0.1)]],
                u_lin: vec![cr(0.05)],
            },
            MetricPoly {
                coeffs: vec![vec![cr(1.0), c(0.1, 0.1)], vec![cr(0.2)]],
                u_lin: vec![],
            },
            v12_expected(3),
        )
        .unwrap();
        let (t1, u) = (c(0.2, 0.1), [cr(1.5)]);
        let t2 = 1e-7;
        let h = 1e-6;
        let p = psi_hat(&md, t1, cr(t2), &u);
        let dp = (psi_hat(&md, t1 + h, cr(t2), &u) - psi_hat(&md, t1 - h, cr(t2), &u)) / cr(2.0 * h);
        let num = -linalg::inverse(&p).unwrap() * dp;
        let exact = minus_psi_log_derivative(&md, t1, &u, None).unwrap();
        assert!(max_abs(&(num - exact)) < 1e-6);
    }
}
