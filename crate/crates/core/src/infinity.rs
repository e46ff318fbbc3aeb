//! Data at the irregular point `z = ∞`: Stokes rays, admissible directions,
//! the formal solution `Y_F = T(I + Σ F_j z^{-j}) z^D z^L e^{Λz}` and the
//! actual sector solutions `Y_ν`.
//!
//! With `𝒜 = T⁻¹AT` the formal coefficients satisfy, at order `z^{-j}`,
//! `-jF_j + F_jJ + Σ_{ℓ=1}^{j} F_{j-ℓ}R_ℓ - 𝒜F_j - [Λ, F_{j+1}] = 0`.
//! Off-diagonal blocks of `F_{j+1}` follow by division by `λ_a - λ_b`;
//! diagonal blocks of `F_j` solve a Sylvester equation whose kernel
//! (`μ_q - μ_p = j`) feeds `R_j`.
//!
//! Sector solutions are integrated in the frame `W = Y e^{-Λz}`, which
//! satisfies `dW/dz = (Λ + A/z)W - WΛ` and stays free of exponential growth.

use std::f64::consts::PI;

use serde::Serialize;

use crate::blocks::{get_block, near_positive_integer, set_block, BlockPartition, JordanizationResult, Lambda};
use crate::error::{Error, Result};
use crate::levelt::levelt_exponents;
use crate::linalg::{self, max_abs, CMat, C64};
use crate::ode::{self, OdeOptions, OdeStats};
use crate::pfaffian::CoalescedSystem;

/// A Stokes ray `arg z = theta` for the ordered block pair `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StokesRay {
    pub theta: f64,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StokesGeometry {
    pub rays: Vec<StokesRay>,
    pub tau: f64,
    pub margin: f64,
}

/// Rays `θ_ij = -arg(λ_i - λ_j) - π/2 (mod 2π)`, sorted by angle.
pub fn stokes_rays(lambda: &Lambda) -> Vec<StokesRay> {
    let v = &lambda.values;
    let mut out = Vec::new();
    for i in 0..v.len() {
        for j in 0..v.len() {
            if i != j {
                let theta = linalg::wrap_2pi(-(v[i] - v[j]).arg() - PI / 2.0);
                out.push(StokesRay { theta, i, j });
            }
        }
    }
    out.sort_by(|a, b| a.theta.total_cmp(&b.theta).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j)));
    out
}

fn mod_pi(x: f64) -> f64 {
    let r = x.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// The direction maximizing the smallest distance from `{τ + kπ}` to every
/// ray of every sample; ties go to the candidate closest to `preferred`.
pub fn choose_admissible_tau(samples: &[Vec<StokesRay>], preferred: f64, min_margin: f64) -> Result<StokesGeometry> {
    let mut angles: Vec<f64> = samples.iter().flatten().map(|r| mod_pi(r.theta)).collect();
    if angles.is_empty() {
        return Ok(StokesGeometry {
            rays: vec![],
            tau: preferred,
            margin: PI / 2.0,
        });
    }
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let m = angles.len();
    let mut best: Option<(f64, f64)> = None;
    for k in 0..m {
        let lo = angles[k];
        let hi = if k + 1 < m { angles[k + 1] } else { angles[0] + PI };
        let margin = (hi - lo) / 2.0;
        let mid = lo + margin;
        // representative of mid + kπ closest to `preferred`
        let cand = mid + PI * ((preferred - mid) / PI).round();
        let better = match best {
            None => true,
            Some((bm, bt)) => {
                margin > bm + 1e-12 || ((margin - bm).abs() <= 1e-12 && (cand - preferred).abs() < (bt - preferred).abs())
            }
        };
        if better {
            best = Some((margin, cand));
        }
    }
    let (margin, tau) = best.unwrap();
    if margin < min_margin {
        return Err(Error::NoAdmissibleDirection { margin, min: min_margin });
    }
    Ok(StokesGeometry {
        rays: samples.first().cloned().unwrap_or_default(),
        tau,
        margin,
    })
}

pub fn geometry(lambda: &Lambda, preferred: f64, min_margin: f64) -> Result<StokesGeometry> {
    choose_admissible_tau(&[stokes_rays(lambda)], preferred, min_margin)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticCertificate {
    pub k: usize,
    pub radii: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Slope of `log residual` against `log(1/|z|)`.
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct FormalInfinityData {
    pub t: CMat,
    pub t_inv: CMat,
    pub j: CMat,
    /// `𝒜 = T⁻¹AT`.
    pub cal_a: CMat,
    pub partition: BlockPartition,
    /// Diagonal of `Λ`.
    pub lam: Vec<C64>,
    /// `F_0 = I, …, F_K`, then possibly further terms used only for `R`.
    pub f: Vec<CMat>,
    /// Off-diagonal blocks of `F_{K+1}`.
    pub f_next: CMat,
    pub k: usize,
    pub mu: Vec<C64>,
    pub d: Vec<i64>,
    pub s: CMat,
    pub r_terms: Vec<CMat>,
    pub r: CMat,
    pub l: CMat,
    pub certificate: AsymptoticCertificate,
}

fn resonant_in_block(part: &BlockPartition, mu: &[C64], p: usize, q: usize, j: usize, int_tol: f64) -> bool {
    part.block_of(p) == part.block_of(q) && near_positive_integer(mu[q] - mu[p], int_tol) == Some(j as i64)
}

/// Formal solution at infinity truncated at order `k`.
pub fn formal_series(sys: &CoalescedSystem, red: &JordanizationResult, k: usize, int_tol: f64) -> Result<FormalInfinityData> {
    let part = sys.partition().clone();
    let n = part.n();
    let s = part.s();
    sys.lambda.check_separation(0.0)?;
    let t = red.t.clone();
    let t_inv = linalg::inverse(&t)?;
    let cal_a = &t_inv * &sys.a * &t;
    let j = red.j.clone();
    let lam: Vec<C64> = (0..n).map(|i| sys.lambda.values[part.block_of(i)]).collect();
    let mu: Vec<C64> = (0..n).map(|i| j[(i, i)]).collect();
    let (d, _) = levelt_exponents(&mu);
    let diagonal = red.is_diagonal();

    let max_gap = (0..n)
        .flat_map(|p| (0..n).map(move |q| (p, q)))
        .filter(|&(p, q)| part.block_of(p) == part.block_of(q))
        .filter_map(|(p, q)| near_positive_integer(mu[q] - mu[p], int_tol))
        .max()
        .unwrap_or(0) as usize;
    let k_total = k.max(max_gap);

    let mut f: Vec<CMat> = vec![CMat::identity(n, n)];
    let mut r_terms = vec![linalg::zeros(n, n)];
    // F_1 off-diagonal blocks
    let mut next = linalg::zeros(n, n);
    for a in 0..s {
        for b in 0..s {
            if a != b {
                let blk = get_block(&cal_a, &part, a, b)? / (sys.lambda.values[b] - sys.lambda.values[a]);
                set_block(&mut next, &part, a, b, &blk)?;
            }
        }
    }
    for jj in 1..=k_total {
        let mut fj = next.clone();
        let mut rj = linalg::zeros(n, n);
        // diagonal blocks of F_j
        for a in 0..s {
            let ja = get_block(&j, &part, a, a)?;
            let mut q = linalg::zeros(part.size(a), part.size(a));
            for b in 0..s {
                if b != a {
                    q += get_block(&cal_a, &part, a, b)? * get_block(&fj, &part, b, a)?;
                }
            }
            for ell in 1..jj {
                let rl = get_block(&r_terms[ell], &part, a, a)?;
                if max_abs(&rl) > 0.0 {
                    q -= get_block(&f[jj - ell], &part, a, a)? * rl;
                }
            }
            let off = part.offset(a);
            let pa = part.size(a);
            let mut x = linalg::zeros(pa, pa);
            let mut rblk = linalg::zeros(pa, pa);
            let any_res = (0..pa)
                .flat_map(|p| (0..pa).map(move |qq| (p, qq)))
                .find(|&(p, qq)| resonant_in_block(&part, &mu, off + p, off + qq, jj, int_tol));
            if diagonal {
                for p in 0..pa {
                    for qq in 0..pa {
                        if resonant_in_block(&part, &mu, off + p, off + qq, jj, int_tol) {
                            rblk[(p, qq)] = q[(p, qq)];
                        } else {
                            x[(p, qq)] = q[(p, qq)] / (mu[off + qq] - mu[off + p] - jj as f64);
                        }
                    }
                }
            } else {
                if let Some((p, qq)) = any_res {
                    return Err(Error::UnsupportedResonance(format!(
                        "partial resonance μ_{} - μ_{} = {jj} in block {} with a non-diagonal Jordan form",
                        off + qq + 1,
                        off + p + 1,
                        a + 1
                    )));
                }
                // (J_a + j) X - X J_a = -Q
                let am = &ja + CMat::identity(pa, pa) * C64::new(jj as f64, 0.0);
                x = linalg::solve_sylvester(&am, &ja, &(-q))?;
            }
            set_block(&mut fj, &part, a, a, &x)?;
            set_block(&mut rj, &part, a, a, &rblk)?;
        }
        // off-diagonal blocks of F_{j+1}
        let mut e = -&fj * C64::new(jj as f64, 0.0) + &fj * &j - &cal_a * &fj + &rj;
        for ell in 1..jj {
            if max_abs(&r_terms[ell]) > 0.0 {
                e += &f[jj - ell] * &r_terms[ell];
            }
        }
        next = linalg::zeros(n, n);
        for a in 0..s {
            for b in 0..s {
                if a != b {
                    let blk = get_block(&e, &part, a, b)? / (sys.lambda.values[a] - sys.lambda.values[b]);
                    set_block(&mut next, &part, a, b, &blk)?;
                }
            }
        }
        if !linalg::is_finite(&fj) {
            return Err(Error::NonFinite(format!("formal coefficient F_{jj}")));
        }
        f.push(fj);
        r_terms.push(rj);
    }
    // keep F_{K+1} off-diagonal blocks for the certificate and the error model
    let f_next = if k_total == k { next } else { part.off_diagonal(&f[k + 1]) };
    let dmat = linalg::diag(&d.iter().map(|&x| C64::new(x as f64, 0.0)).collect::<Vec<_>>());
    let s_mat = &j - &dmat;
    let r = r_terms.iter().fold(linalg::zeros(n, n), |acc, m| acc + m);
    let l = &s_mat + &r;
    let mut data = FormalInfinityData {
        t,
        t_inv,
        j,
        cal_a,
        partition: part,
        lam,
        f,
        f_next,
        k,
        mu,
        d,
        s: s_mat,
        r_terms,
        r,
        l,
        certificate: AsymptoticCertificate {
            k,
            radii: vec![],
            residuals: vec![],
            slope: f64::NAN,
        },
    };
    data.certificate = data.certificate_decade(None, 0.0);
    Ok(data)
}

impl FormalInfinityData {
    pub fn n(&self) -> usize {
        self.j.nrows()
    }

    pub fn lambda_matrix(&self) -> CMat {
        linalg::diag(&self.lam)
    }

    /// `Σ_{j ≤ terms} F_j z^{-j}` and its `z`-derivative.
    pub fn hat(&self, z: C64, terms: usize) -> (CMat, CMat) {
        let terms = terms.min(self.f.len() - 1);
        let w = C64::new(1.0, 0.0) / z;
        let mut y = self.f[terms].clone();
        let mut dy = &self.f[terms] * C64::new(terms as f64, 0.0);
        for k in (0..terms).rev() {
            y = y * w + &self.f[k];
            dy = dy * w + &self.f[k] * C64::new(k as f64, 0.0);
        }
        // dy currently holds Σ k F_k w^k
        (y, -dy * w)
    }

    fn dmat(&self) -> CMat {
        linalg::diag(&self.d.iter().map(|&x| C64::new(x as f64, 0.0)).collect::<Vec<_>>())
    }

    /// `z^D z^L` at `z = r e^{iθ}` on the universal cover.
    pub fn z_power(&self, r: f64, theta: f64) -> CMat {
        let logz = C64::new(r.ln(), theta);
        linalg::exp_scaled(&self.dmat(), logz) * linalg::exp_scaled(&self.l, logz)
    }

    /// Truncated `Y_F e^{-Λz} = T Ŷ z^D z^L` at `r e^{iθ}`.
    pub fn w_polar(&self, r: f64, theta: f64) -> CMat {
        let z = C64::from_polar(r, theta);
        let (y, _) = self.hat(z, self.k);
        &self.t * y * self.z_power(r, theta)
    }

    /// Truncated `Y_F(r e^{iθ})`.
    pub fn evaluate_polar(&self, r: f64, theta: f64) -> CMat {
        let z = C64::from_polar(r, theta);
        self.w_polar(r, theta) * exp_lambda(&self.lam, z)
    }

    /// Residual of the truncated series in the frame of `T`:
    /// `Ŷ' + Ŷ(J/z + Σ R_j z^{-j-1}) + ŶΛ - (Λ + 𝒜/z)Ŷ`.
    pub fn truncated_residual(&self, z: C64, terms: usize) -> f64 {
        let (y, dy) = self.hat(z, terms);
        let w = C64::new(1.0, 0.0) / z;
        let n = self.n();
        let mut rz = &self.j * w;
        let mut wk = w;
        for rj in self.r_terms.iter().skip(1) {
            wk *= w;
            if max_abs(rj) > 0.0 {
                rz += rj * wk;
            }
        }
        let mut res = dy + &y * rz - &self.cal_a * &y * w;
        // ŶΛ - ΛŶ entrywise to avoid cancellation
        for p in 0..n {
            for q in 0..n {
                res[(p, q)] += y[(p, q)] * (self.lam[q] - self.lam[p]);
            }
        }
        max_abs(&res)
    }

    /// Certificate over one decade of `|z|`. By default the decade is placed
    /// so that the leading residual `‖[Λ, F_{K+1}]‖|z|^{-K-1}` is about
    /// `1e-11` at its top, and never starts below `2/min gap`.
    pub fn certificate_decade(&self, r_lo: Option<f64>, tau: f64) -> AsymptoticCertificate {
        let n = self.n();
        let mut lead: f64 = 0.0;
        for p in 0..n {
            for q in 0..n {
                lead = lead.max((self.f_next[(p, q)] * (self.lam[p] - self.lam[q])).norm());
            }
        }
        let mut gap = f64::INFINITY;
        for a in 0..self.lam.len() {
            for b in 0..self.lam.len() {
                let g = (self.lam[a] - self.lam[b]).norm();
                if g > 0.0 {
                    gap = gap.min(g);
                }
            }
        }
        let scale = if gap.is_finite() { 1.0 / gap } else { 1.0 };
        let r_lo = r_lo.unwrap_or_else(|| {
            let auto = if lead > 0.0 {
                (lead / 1e-11).powf(1.0 / (self.k as f64 + 1.0)) / 10.0
            } else {
                0.0
            };
            auto.max(2.0 * scale)
        });
        let radii: Vec<f64> = (0..7).map(|i| r_lo * 10f64.powf(i as f64 / 6.0)).collect();
        let residuals: Vec<f64> = radii
            .iter()
            .map(|&r| {
                (0..4)
                    .map(|q| self.truncated_residual(C64::from_polar(r, tau + 0.3 + q as f64 * 1.4), self.k))
                    .fold(0.0, f64::max)
            })
            .collect();
        let slope = if residuals.iter().all(|&x| x < 1e-280) {
            f64::INFINITY
        } else {
            let inv: Vec<f64> = radii.iter().map(|r| 1.0 / r).collect();
            linalg::loglog_slope(&inv, &residuals)
        };
        AsymptoticCertificate {
            k: self.k,
            radii,
            residuals,
            slope,
        }
    }
}

/// `e^{Λz}` for diagonal `Λ` given by its entries.
pub fn exp_lambda(lam: &[C64], z: C64) -> CMat {
    linalg::diag(&lam.iter().map(|l| (l * z).exp()).collect::<Vec<_>>())
}

/// A piece of a path on the universal cover of `ℂ∖{0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Radial { theta: f64, r0: f64, r1: f64 },
    Arc { r: f64, theta0: f64, theta1: f64 },
}

/// Propagates `W = Y e^{-Λz}` for `dY/dz = (Λ + A/z)Y` along `segments`.
pub fn propagate_w(lam: &[C64], a: &CMat, w0: &CMat, segments: &[Segment], opts: &OdeOptions) -> Result<(CMat, OdeStats)> {
    let n = a.nrows();
    let mut w: Vec<C64> = w0.iter().copied().collect();
    let mut stats = OdeStats::default();
    for seg in segments {
        let (t0, t1) = match *seg {
            Segment::Radial { r0, r1, .. } => (r0, r1),
            Segment::Arc { theta0, theta1, .. } => (theta0, theta1),
        };
        let seg = *seg;
        let rhs = |t: f64, y: &[C64], dy: &mut [C64]| {
            let (z, dz) = match seg {
                Segment::Radial { theta, .. } => {
                    let e = C64::from_polar(1.0, theta);
                    (e * t, e)
                }
                Segment::Arc { r, .. } => {
                    let z = C64::from_polar(r, t);
                    (z, C64::new(0.0, 1.0) * z)
                }
            };
            let wm = nalgebra::DMatrixView::<C64>::from_slice(y, n, n);
            let aw = a * wm;
            let inv_z = dz / z;
            for q in 0..n {
                for p in 0..n {
                    dy[p + q * n] = dz * (lam[p] - lam[q]) * y[p + q * n] + inv_z * aw[(p, q)];
                }
            }
        };
        let (out, st) = ode::integrate(rhs, t0, t1, &w, opts, |_, _| {})?;
        w = out;
        stats.absorb(&st);
    }
    Ok((CMat::from_column_slice(n, n, &w), stats))
}

/// Radial propagation of `W` on the ray `arg z = theta` from `r0` inward to
/// `r1`, in chunks of length `chunk`. After each chunk every column is
/// projected off the span of the columns that are more recessive on the
/// ray. That only adds recessive solutions to dominant ones, which the
/// asymptotics on a single ray leave free, and it stops the growth of
/// those modes during inward integration.
#[allow(clippy::too_many_arguments)]
pub fn propagate_ray_projected(
    lam: &[C64],
    a: &CMat,
    w0: &CMat,
    theta: f64,
    r0: f64,
    r1: f64,
    chunk: f64,
    opts: &OdeOptions,
) -> Result<(CMat, OdeStats)> {
    let n = a.nrows();
    let e = C64::from_polar(1.0, theta);
    let key: Vec<f64> = lam.iter().map(|l| (l * e).re).collect();
    let scale = lam.iter().map(|l| l.norm()).fold(1.0, f64::max);
    let tie = 1e-9 * scale;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| key[p].total_cmp(&key[q]));
    let mut w = w0.clone();
    let mut stats = OdeStats::default();
    let steps = ((r0 - r1).abs() / chunk.max(1e-300)).ceil().max(1.0) as usize;
    for k in 0..steps {
        let ra = r0 + (r1 - r0) * k as f64 / steps as f64;
        let rb = r0 + (r1 - r0) * (k + 1) as f64 / steps as f64;
        let seg = [Segment::Radial { theta, r0: ra, r1: rb }];
        let (out, st) = propagate_w(lam, a, &w, &seg, opts)?;
        stats.absorb(&st);
        w = out;
        for (pos, &b) in order.iter().enumerate() {
            let lower: Vec<usize> = order[..pos].iter().copied().filter(|&p| key[p] < key[b] - tie).collect();
            if lower.is_empty() {
                continue;
            }
            let basis = CMat::from_fn(n, lower.len(), |i, j| w[(i, lower[j])]);
            let q = basis.qr().q();
            let col = w.column(b).into_owned();
            let proj = &q * (q.adjoint() * &col);
            w.set_column(b, &(col - proj));
        }
    }
    Ok((w, stats))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorOptions {
    /// `R_match = r_match_factor / min gap`.
    pub r_match_factor: f64,
    /// Base radius `r_b = r_base_factor / max gap`.
    pub r_base_factor: f64,
    pub ode: OdeOptions,
}

impl Default for SectorOptions {
    fn default() -> Self {
        SectorOptions {
            r_match_factor: 1e3,
            r_base_factor: 1.0,
            ode: OdeOptions::with_tol(1e-11),
        }
    }
}

/// `Y_ν` represented by its value at the base point `r_b e^{iθ_b}`.
#[derive(Debug, Clone)]
pub struct SectorSolution {
    pub nu: i32,
    pub tau: f64,
    pub base_r: f64,
    pub base_theta: f64,
    /// `W_ν = Y_ν e^{-Λz}` at the base point.
    pub w_base: CMat,
    pub lam: Vec<C64>,
    pub a: CMat,
    pub r_match: f64,
    pub k: usize,
    /// Matching rays used (unwrapped arguments inside the sector core).
    pub rays: Vec<f64>,
    /// Estimated relative initialization error from truncation.
    pub eps_init: f64,
    pub stats: OdeStats,
    pub ode: OdeOptions,
}

fn gaps(lambda: &Lambda) -> (f64, f64) {
    let v = &lambda.values;
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for a in 0..v.len() {
        for b in a + 1..v.len() {
            let g = (v[a] - v[b]).norm();
            lo = lo.min(g);
            hi = hi.max(g);
        }
    }
    if lo.is_infinite() {
        (1.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Core of the sector: `(τ + (ν-1)π, τ + νπ)`.
pub fn sector_core(tau: f64, nu: i32) -> (f64, f64) {
    (tau + (nu as f64 - 1.0) * PI, tau + nu as f64 * PI)
}

/// Unwrapped argument of the Stokes ray of the pair `{a, b}` inside the core.
fn pair_ray_in_core(lambda: &Lambda, a: usize, b: usize, core: (f64, f64)) -> f64 {
    let v = &lambda.values;
    let th = -(v[a] - v[b]).arg() - PI / 2.0;
    // θ_ab and θ_ab + π are the two rays of the pair; exactly one lies in the core
    let mut x = th + PI * ((core.0 - th) / PI).ceil();
    if x <= core.0 {
        x += PI;
    }
    x
}

/// Builds `Y_ν` by matching the truncated formal solution on the Stokes rays
/// of each block pair inside the sector (where that pair is neutral) and
/// integrating inward.
pub fn sector_solution(
    sys: &CoalescedSystem,
    geom: &StokesGeometry,
    fdata: &FormalInfinityData,
    nu: i32,
    opts: &SectorOptions,
) -> Result<SectorSolution> {
    let part = sys.partition();
    let s = part.s();
    let n = part.n();
    let (gmin, gmax) = gaps(&sys.lambda);
    let r_match = opts.r_match_factor / gmin;
    let base_r = opts.r_base_factor / gmax;
    let core = sector_core(geom.tau, nu);
    let base_theta = geom.tau + (nu as f64 - 0.5) * PI;

    // distinct matching rays, and which ray serves each pair
    let mut rays: Vec<f64> = Vec::new();
    let mut ray_of = vec![vec![usize::MAX; s]; s];
    for a in 0..s {
        for b in a + 1..s {
            let th = pair_ray_in_core(&sys.lambda, a, b, core);
            let idx = match rays.iter().position(|&x| (x - th).abs() < 1e-12) {
                Some(i) => i,
                None => {
                    rays.push(th);
                    rays.len() - 1
                }
            };
            ray_of[a][b] = idx;
            ray_of[b][a] = idx;
        }
    }
    if rays.is_empty() {
        rays.push(base_theta);
    }
    for (a, row) in ray_of.iter_mut().enumerate() {
        // diagonal blocks: any ray through this block
        row[a] = (0..s).find(|&b| b != a).map(|b| row[b]).unwrap_or(0);
        if row[a] == usize::MAX {
            row[a] = 0;
        }
    }

    let mut stats = OdeStats::default();
    let mut q_inv = Vec::with_capacity(rays.len());
    for &th in &rays {
        let w0 = fdata.w_polar(r_match, th);
        let (wr, st) = propagate_ray_projected(&fdata.lam, &sys.a, &w0, th, r_match, base_r, 4.0 / gmax, &opts.ode)?;
        stats.absorb(&st);
        let arc = [Segment::Arc {
            r: base_r,
            theta0: th,
            theta1: base_theta,
        }];
        let (wb, st) = propagate_w(&fdata.lam, &sys.a, &wr, &arc, &opts.ode)?;
        stats.absorb(&st);
        q_inv.push(linalg::inverse(&wb)?);
    }

    let w_base = if rays.len() == 1 {
        linalg::inverse(&q_inv[0])?
    } else {
        let mut z = linalg::zeros(n, n);
        for a in 0..s {
            let mut m = linalg::zeros(n, n);
            let mut rhs = linalg::zeros(n, part.size(a));
            for b in 0..s {
                let qi = &q_inv[ray_of[a][b]];
                for (ri, r) in part.range(b).enumerate() {
                    for c in 0..n {
                        m[(r, c)] = qi[(r, c)];
                    }
                    if a == b {
                        rhs[(r, ri)] = C64::new(1.0, 0.0);
                    }
                }
            }
            let col = linalg::solve(&m, &rhs)?;
            for (ci, c) in part.range(a).enumerate() {
                for r in 0..n {
                    z[(r, c)] = col[(r, ci)];
                }
            }
        }
        z
    };
    let eps_init = max_abs(&fdata.f_next) * r_match.powi(-(fdata.k as i32 + 1)) * gmin.max(1.0);
    Ok(SectorSolution {
        nu,
        tau: geom.tau,
        base_r,
        base_theta,
        w_base,
        lam: fdata.lam.clone(),
        a: sys.a.clone(),
        r_match,
        k: fdata.k,
        rays,
        eps_init,
        stats,
        ode: opts.ode,
    })
}

impl SectorSolution {
    /// `W_ν = Y_ν e^{-Λz}` at `r e^{iθ}` reached from the base point along
    /// the arc `|z| = r_b` and then radially.
    pub fn w_at(&self, r: f64, theta: f64) -> Result<CMat> {
        let segs = [
            Segment::Arc {
                r: self.base_r,
                theta0: self.base_theta,
                theta1: theta,
            },
            Segment::Radial {
                theta,
                r0: self.base_r,
                r1: r,
            },
        ];
        Ok(propagate_w(&self.lam, &self.a, &self.w_base, &segs, &self.ode)?.0)
    }

    /// `Y_ν(r e^{iθ})`.
    pub fn evaluate(&self, r: f64, theta: f64) -> Result<CMat> {
        Ok(self.w_at(r, theta)? * exp_lambda(&self.lam, C64::from_polar(r, theta)))
    }

    /// Values on a grid of `(r, θ)` points.
    pub fn samples(&self, grid: &[(f64, f64)]) -> Result<Vec<CMat>> {
        grid.iter().map(|&(r, t)| self.evaluate(r, t)).collect()
    }

    /// `‖Y_ν e^{-Λz} z^{-L} z^{-D} T⁻¹ - Ŷ_K‖` on a ray, against `|z|`.
    pub fn asymptotic_check(&self, fdata: &FormalInfinityData, theta: f64, radii: &[f64]) -> Result<Vec<f64>> {
        radii
            .iter()
            .map(|&r| {
                let w = self.w_at(r, theta)?;
                let zp = fdata.z_power(r, theta);
                let hat_num = &fdata.t_inv * w * linalg::inverse(&zp)?;
                let (hat, _) = fdata.hat(C64::from_polar(r, theta), fdata.k);
                Ok(max_abs(&(hat_num - hat)))
            })
            .collect()
    }
}
