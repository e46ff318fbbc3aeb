//! The deformation one-form: `ω_j`, `ω̃_j = ω_j + 𝒟_j`, the full Pfaffian
//! coefficients, the linear constraints, the curl (integrability) residuals
//! and the variant where the Fuchsian pole moves.

use serde::Serialize;

use crate::blocks::{get_block, set_block, BlockPartition, JordanizationResult, Lambda};
use crate::error::{Error, Result};
use crate::levelt::{self, LeveltOptions};
use crate::linalg::{self, commutator, max_abs, CMat, C64};
use crate::tolerances;

/// `dY/dz = (Λ + A/z) Y` together with optional reducer and block-diagonal
/// gauge terms `𝒟_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalescedSystem {
    pub lambda: Lambda,
    pub a: CMat,
    pub reducer: Option<JordanizationResult>,
    pub dblocks: Option<Vec<CMat>>,
}

impl CoalescedSystem {
    pub fn new(lambda: Lambda, a: CMat) -> Result<Self> {
        let n = lambda.partition.n();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, partition has n = {n}",
                a.nrows(),
                a.ncols()
            )));
        }
        if !linalg::is_finite(&a) {
            return Err(Error::NonFinite("A".into()));
        }
        Ok(CoalescedSystem {
            lambda,
            a,
            reducer: None,
            dblocks: None,
        })
    }

    pub fn with_reducer(mut self, r: JordanizationResult) -> Self {
        self.reducer = Some(r);
        self
    }

    pub fn with_dblocks(mut self, d: Vec<CMat>) -> Result<Self> {
        let p = &self.lambda.partition;
        if d.len() != p.s() {
            return Err(Error::Dimension(format!("{} D-blocks for s = {}", d.len(), p.s())));
        }
        for (j, m) in d.iter().enumerate() {
            if m.nrows() != p.n() || m.ncols() != p.n() {
                return Err(Error::Dimension(format!("D_{} has wrong shape", j + 1)));
            }
            if !p.is_block_diagonal(m, 0.0) {
                return Err(Error::Invalid(format!("D_{} is not block-diagonal", j + 1)));
            }
        }
        self.dblocks = Some(d);
        Ok(self)
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.lambda.partition
    }

    pub fn n(&self) -> usize {
        self.lambda.partition.n()
    }

    pub fn s(&self) -> usize {
        self.lambda.partition.s()
    }

    /// The reducer, computing one numerically when none was supplied.
    pub fn reducer_or_compute(&self, tol: &tolerances::Tolerances) -> Result<JordanizationResult> {
        match &self.reducer {
            Some(r) => Ok(r.clone()),
            None => crate::blocks::jordanize_diag_blocks(&self.a, self.partition(), &tol.jordan()),
        }
    }
}

/// `ω_j` with blocks `A_{[a,b]}(δ_{aj} - δ_{bj})/(λ_a - λ_b)`.
pub fn build_omega(sys: &CoalescedSystem) -> Result<Vec<CMat>> {
    build_omega_with_tol(sys, tolerances::EIG_SEP_TOL)
}

pub fn build_omega_with_tol(sys: &CoalescedSystem, eig_sep_tol: f64) -> Result<Vec<CMat>> {
    sys.lambda.check_separation(eig_sep_tol)?;
    let p = sys.partition();
    let s = p.s();
    let lam = &sys.lambda.values;
    let mut out = vec![linalg::zeros(p.n(), p.n()); s];
    for a in 0..s {
        for b in 0..s {
            if a == b {
                continue;
            }
            let blk = get_block(&sys.a, p, a, b)? / (lam[a] - lam[b]);
            // δ_{aj} - δ_{bj}: +1 in ω_a, -1 in ω_b
            set_block(&mut out[a], p, a, b, &blk)?;
            set_block(&mut out[b], p, a, b, &(-blk))?;
        }
    }
    Ok(out)
}

/// Coefficients of the Pfaffian one-form `ω(z, λ)`.
#[derive(Debug, Clone)]
pub struct PfaffianForm {
    pub system: CoalescedSystem,
    pub omegas: Vec<CMat>,
    pub omega_tildes: Vec<CMat>,
    pub e_projectors: Vec<CMat>,
}

pub fn build_form(sys: &CoalescedSystem) -> Result<PfaffianForm> {
    let omegas = build_omega(sys)?;
    let p = sys.partition();
    let omega_tildes = match &sys.dblocks {
        None => omegas.clone(),
        Some(d) => omegas.iter().zip(d).map(|(w, d)| w + d).collect(),
    };
    Ok(PfaffianForm {
        system: sys.clone(),
        e_projectors: (0..p.s()).map(|a| p.projector(a)).collect(),
        omegas,
        omega_tildes,
    })
}

/// Coefficient of `dz` (`direction = 0`) or of `dλ_j` (`direction = j ≥ 1`).
pub fn assemble_oneform(form: &PfaffianForm, z: C64, direction: usize) -> Result<CMat> {
    let s = form.omegas.len();
    if direction == 0 {
        if z.norm() == 0.0 {
            return Err(Error::Pole("dz coefficient at z = 0".into()));
        }
        return Ok(form.system.lambda.matrix() + &form.system.a / z);
    }
    if direction > s {
        return Err(Error::BlockIndex { a: direction, b: direction, s });
    }
    Ok(&form.e_projectors[direction - 1] * z + &form.omega_tildes[direction - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    /// max_j ‖[Λ, ω̃_j] - [E_{p_j}, A]‖_max
    pub lambda_commutator: f64,
    /// max_{j,k} ‖[E_{p_j}, ω̃_k] - [E_{p_k}, ω̃_j]‖_max
    pub projector_symmetry: f64,
    /// max ‖Σ_j ω_j‖_max
    pub omega_sum: f64,
    /// max_{j,k} ‖([ω_j, ω_k])_{[a,a]}‖ over diagonal blocks
    pub omega_bracket_diagonal: f64,
    /// Scale used to make the residuals relative.
    pub scale: f64,
    pub max_relative: f64,
    pub tol: f64,
    pub pass: bool,
}

pub fn check_linear_constraints(form: &PfaffianForm, tol: f64) -> ConstraintReport {
    let sys = &form.system;
    let lam = sys.lambda.matrix();
    let s = form.omegas.len();
    let mut lc: f64 = 0.0;
    let mut ps: f64 = 0.0;
    let mut ob: f64 = 0.0;
    for j in 0..s {
        let r = commutator(&lam, &form.omega_tildes[j]) - commutator(&form.e_projectors[j], &sys.a);
        lc = lc.max(max_abs(&r));
        for k in 0..s {
            let r = commutator(&form.e_projectors[j], &form.omega_tildes[k])
                - commutator(&form.e_projectors[k], &form.omega_tildes[j]);
            ps = ps.max(max_abs(&r));
            let br = commutator(&form.omegas[j], &form.omegas[k]);
            ob = ob.max(max_abs(&sys.partition().block_diagonal(&br)));
        }
    }
    let sum = form.omegas.iter().fold(linalg::zeros(sys.n(), sys.n()), |acc, w| acc + w);
    let omega_sum = max_abs(&sum);
    let w = form.omega_tildes.iter().map(max_abs).fold(0.0, f64::max);
    let scale = (max_abs(&sys.a) + max_abs(&lam) * w).max(f64::MIN_POSITIVE);
    let max_relative = lc.max(ps).max(omega_sum) / scale;
    ConstraintReport {
        lambda_commutator: lc,
        projector_symmetry: ps,
        omega_sum,
        omega_bracket_diagonal: ob,
        scale,
        max_relative,
        tol,
        pass: max_relative <= tol,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurlEstimate {
    pub h: f64,
    /// max over pairs of ‖∂_kω̃_j - ∂_jω̃_k + [ω̃_j, ω̃_k]‖
    pub lambda_curl: f64,
    /// max over pairs of ‖∂_i𝒟_j - ∂_j𝒟_i - [𝒟_i, 𝒟_j]‖ (0 when 𝒟 is absent)
    pub d_curl: f64,
    /// max_j ‖∂_jA - [ω̃_j, A]‖: the `dz ∧ dλ_j` components of the curl
    pub z_lambda_curl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurlReport {
    pub at_h: CurlEstimate,
    pub at_half_h: CurlEstimate,
    /// total(h) / total(h/2); ≈ 4 for a consistent O(h²) difference scheme
    pub richardson_ratio: f64,
    pub lambda_ratio: f64,
    pub z_lambda_ratio: f64,
    pub d_ratio: f64,
}

fn shifted(l0: &[C64], k: usize, h: f64) -> Vec<C64> {
    let mut l = l0.to_vec();
    l[k] += h;
    l
}

fn curl_at<F>(field: &F, l0: &[C64], h: f64) -> Result<CurlEstimate>
where
    F: Fn(&[C64]) -> Result<PfaffianForm>,
{
    let s = l0.len();
    let base = field(l0)?;
    let mut plus = Vec::with_capacity(s);
    let mut minus = Vec::with_capacity(s);
    for k in 0..s {
        plus.push(field(&shifted(l0, k, h))?);
        minus.push(field(&shifted(l0, k, -h))?);
    }
    let d = |k: usize, f: &dyn Fn(&PfaffianForm) -> CMat| (f(&plus[k]) - f(&minus[k])) / C64::new(2.0 * h, 0.0);
    let mut lc: f64 = 0.0;
    let mut dc: f64 = 0.0;
    let mut zc: f64 = 0.0;
    for j in 0..s {
        let dja = d(j, &|f: &PfaffianForm| f.system.a.clone());
        let r = dja - commutator(&base.omega_tildes[j], &base.system.a);
        zc = zc.max(max_abs(&r));
        for k in j + 1..s {
            let dk_wj = d(k, &|f: &PfaffianForm| f.omega_tildes[j].clone());
            let dj_wk = d(j, &|f: &PfaffianForm| f.omega_tildes[k].clone());
            let r = dk_wj - dj_wk + commutator(&base.omega_tildes[j], &base.omega_tildes[k]);
            lc = lc.max(max_abs(&r));
            if let Some(db) = &base.system.dblocks {
                let get = |f: &PfaffianForm, i: usize| f.system.dblocks.as_ref().map(|v| v[i].clone()).unwrap();
                let dj_dk = d(j, &|f: &PfaffianForm| get(f, k));
                let dk_dj = d(k, &|f: &PfaffianForm| get(f, j));
                let r = dj_dk - dk_dj - commutator(&db[j], &db[k]);
                dc = dc.max(max_abs(&r));
            }
        }
    }
    Ok(CurlEstimate {
        h,
        lambda_curl: lc,
        d_curl: dc,
        z_lambda_curl: zc,
        total: lc.max(dc).max(zc),
    })
}

/// Central-difference integrability residuals of a `λ ↦ PfaffianForm` field
/// at `λ0`, at steps `h` and `h/2`.
pub fn curl_residual<F>(field: F, lambda0: &[C64], h: f64) -> Result<CurlReport>
where
    F: Fn(&[C64]) -> Result<PfaffianForm>,
{
    if h.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Invalid("finite-difference step must be positive".into()));
    }
    let a = curl_at(&field, lambda0, h)?;
    let b = curl_at(&field, lambda0, h / 2.0)?;
    let ratio = |x: f64, y: f64| if y > 0.0 { x / y } else { f64::NAN };
    Ok(CurlReport {
        richardson_ratio: ratio(a.total, b.total),
        lambda_ratio: ratio(a.lambda_curl, b.lambda_curl),
        z_lambda_ratio: ratio(a.z_lambda_curl, b.z_lambda_curl),
        d_ratio: ratio(a.d_curl, b.d_curl),
        at_h: a,
        at_half_h: b,
    })
}

/// `𝒟_j = ∂_jT·T⁻¹` by central differences of a holomorphic `T(λ)`.
pub fn dblocks_from_t<F>(t: F, lambda: &[C64], h: f64) -> Result<Vec<CMat>>
where
    F: Fn(&[C64]) -> Result<CMat>,
{
    let t0 = t(lambda)?;
    let tinv = linalg::inverse(&t0)?;
    let mut out = Vec::with_capacity(lambda.len());
    for k in 0..lambda.len() {
        let tp = t(&shifted(lambda, k, h))?;
        let tm = t(&shifted(lambda, k, -h))?;
        out.push((tp - tm) / C64::new(2.0 * h, 0.0) * &tinv);
    }
    Ok(out)
}

/// The one-form when the Fuchsian pole sits at `z = a` and `a` is itself a
/// deformation parameter.
#[derive(Debug, Clone)]
pub struct PoleShiftedForm {
    pub form: PfaffianForm,
    pub pole: C64,
    /// Holomorphic part `ω₀` of the `da` coefficient (`-Λ` in the gauge where
    /// `A` does not depend on `a`).
    pub omega0: CMat,
    /// `G⁽⁰⁾(F₁ + [F₁, J] + R₁)G⁽⁰⁾⁻¹`.
    pub phi: CMat,
}

impl PoleShiftedForm {
    fn zeta(&self, z: C64) -> Result<C64> {
        let w = z - self.pole;
        if w.norm() == 0.0 {
            return Err(Error::Pole("z = a".into()));
        }
        Ok(w)
    }

    /// `Λ + A/(z - a)`.
    pub fn dz(&self, z: C64) -> Result<CMat> {
        let w = self.zeta(z)?;
        Ok(self.form.system.lambda.matrix() + &self.form.system.a / w)
    }

    /// `(z - a)E_{p_j} + ω̃_j`, `j` zero-based.
    pub fn dlambda(&self, j: usize, z: C64) -> Result<CMat> {
        if j >= self.form.omegas.len() {
            return Err(Error::BlockIndex { a: j, b: j, s: self.form.omegas.len() });
        }
        Ok(&self.form.e_projectors[j] * (z - self.pole) + &self.form.omega_tildes[j])
    }

    /// `ω₀ - A/(z - a)`.
    pub fn da(&self, z: C64) -> Result<CMat> {
        let w = self.zeta(z)?;
        Ok(&self.omega0 - &self.form.system.a / w)
    }
}

pub fn build_pole_shifted(sys: &CoalescedSystem, pole: C64, opts: &LeveltOptions) -> Result<PoleShiftedForm> {
    let form = build_form(sys)?;
    // in ζ = z - a the system has the unshifted shape, so the Levelt data at
    // the pole is that of (Λ, A)
    let lev = levelt::levelt_series(sys, opts)?;
    let phi = levelt::phi_term(&lev)?;
    Ok(PoleShiftedForm {
        omega0: -sys.lambda.matrix(),
        form,
        pole,
        phi,
    })
}
