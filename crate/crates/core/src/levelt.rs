//! Fundamental solution at the Fuchsian point `z = 0`:
//! `Y⁽⁰⁾ = G (I + Σ F_k z^k) z^D z^L` with `G⁻¹AG = J = D + S`, `L = S + R`.
//!
//! In the frame of `G` the coefficients solve
//! `k F_k + F_k J - J F_k + R_k + Σ_{ℓ<k} F_{k-ℓ} R_ℓ = Λ̃ F_{k-1}`
//! with `Λ̃ = G⁻¹ΛG`; `R_k` lives on the entries with `μ_i - μ_j = k`.

use serde::Serialize;

use crate::blocks::{self, near_positive_integer};
use crate::error::{Error, Result};
use crate::linalg::{self, max_abs, CMat, C64, I};
use crate::pfaffian::CoalescedSystem;
use crate::tolerances;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeveltOptions {
    /// Truncation used by the certificate.
    pub k: usize,
    /// Branch direction: `arg z ∈ (τ - π, τ + π]`.
    pub tau: f64,
    pub cluster_rel: f64,
    pub int_tol: f64,
    /// Radius up to which `evaluate` must converge to roundoff.
    pub eval_radius: f64,
}

impl Default for LeveltOptions {
    fn default() -> Self {
        LeveltOptions {
            k: 12,
            tau: 0.0,
            cluster_rel: tolerances::CLUSTER_REL,
            int_tol: tolerances::INT_TOL,
            eval_radius: 1.0,
        }
    }
}

/// `μ = d + ρ` with `d ∈ ℤ` and `0 ≤ Re ρ < 1`.
pub fn levelt_exponents(eigs: &[C64]) -> (Vec<i64>, Vec<C64>) {
    eigs.iter()
        .map(|&mu| {
            let mut d = mu.re.floor();
            // guard against roundoff pushing Re ρ to 1
            if mu.re - d >= 1.0 {
                d += 1.0;
            }
            (d as i64, mu - d)
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesCertificate {
    pub k: usize,
    pub radii: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Least-squares slope of log residual against log radius.
    pub slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProperForm {
    /// `permutation[i]` is the original index placed at position `i`.
    pub permutation: Vec<usize>,
    #[serde(skip)]
    pub delta: CMat,
    #[serde(skip)]
    pub n: CMat,
    #[serde(skip)]
    pub sigma: CMat,
}

#[derive(Debug, Clone)]
pub struct LeveltData {
    pub g0: CMat,
    pub g0_inv: CMat,
    pub j: CMat,
    pub lambda_tilde: CMat,
    /// `F_0 = I, F_1, …`; the first `k + 1` entries form the truncation,
    /// the rest extend the series for evaluation.
    pub f: Vec<CMat>,
    pub k: usize,
    pub mu: Vec<C64>,
    pub d0: Vec<i64>,
    pub rho: Vec<C64>,
    pub s0: CMat,
    /// `R_k` by `k` (index 0 unused).
    pub r_terms: Vec<CMat>,
    pub r0: CMat,
    pub l0: CMat,
    pub proper: ProperForm,
    pub tau: f64,
    pub certificate: SeriesCertificate,
}

fn f_recursion_step(
    k: usize,
    j: &CMat,
    lt: &CMat,
    f: &[CMat],
    r_terms: &mut Vec<CMat>,
    diagonal: bool,
    int_tol: f64,
) -> Result<CMat> {
    let n = j.nrows();
    let mut rhs = lt * &f[k - 1];
    for ell in 1..k {
        if max_abs(&r_terms[ell]) > 0.0 {
            rhs -= &f[k - ell] * &r_terms[ell];
        }
    }
    let mu: Vec<C64> = (0..n).map(|i| j[(i, i)]).collect();
    let kf = k as f64;
    let mut rk = linalg::zeros(n, n);
    let resonant: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|&(a, b)| near_positive_integer(mu[a] - mu[b], int_tol) == Some(k as i64))
        .collect();
    let fk = if diagonal {
        let mut fk = linalg::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                if resonant.contains(&(a, b)) {
                    rk[(a, b)] = rhs[(a, b)];
                } else {
                    fk[(a, b)] = rhs[(a, b)] / (kf + mu[b] - mu[a]);
                }
            }
        }
        fk
    } else {
        if let Some(&(a, b)) = resonant.first() {
            return Err(Error::UnsupportedResonance(format!(
                "μ_{} - μ_{} = {k} with a non-diagonal Jordan form",
                a + 1,
                b + 1
            )));
        }
        // (J - k) F - F J = -rhs
        let jm = j - CMat::identity(n, n) * C64::new(kf, 0.0);
        linalg::solve_sylvester(&jm, j, &(-rhs))?
    };
    r_terms.push(rk);
    Ok(fk)
}

/// Levelt data with `G⁽⁰⁾` and `J` computed from `A`.
pub fn levelt_series(sys: &CoalescedSystem, opts: &LeveltOptions) -> Result<LeveltData> {
    let scale = linalg::norm_inf(&sys.a).max(1.0);
    let (g, j, _, _) = blocks::jordan_basis(&sys.a, opts.cluster_rel * scale)?;
    levelt_series_with_basis(sys, g, j, opts)
}

/// Levelt data for a supplied basis `G` with `G⁻¹AG = J`.
pub fn levelt_series_with_basis(sys: &CoalescedSystem, g: CMat, j: CMat, opts: &LeveltOptions) -> Result<LeveltData> {
    let n = sys.n();
    if g.nrows() != n || j.nrows() != n {
        return Err(Error::Dimension("Levelt basis".into()));
    }
    let g_inv = linalg::inverse(&g)?;
    let scale = linalg::norm_inf(&sys.a).max(1.0);
    let basis_res = max_abs(&(&g_inv * &sys.a * &g - &j)) / scale;
    if basis_res > 1e-6 {
        return Err(Error::Invalid(format!("G⁻¹AG differs from J by {basis_res:e}")));
    }
    let diagonal = (0..n.saturating_sub(1)).all(|i| j[(i, i + 1)].norm() == 0.0);
    let lt = &g_inv * sys.lambda.matrix() * &g;
    let mu: Vec<C64> = (0..n).map(|i| j[(i, i)]).collect();
    let (d0, rho) = levelt_exponents(&mu);

    let mut f = vec![CMat::identity(n, n)];
    let mut r_terms = vec![linalg::zeros(n, n)];
    let max_gap = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter_map(|(a, b)| near_positive_integer(mu[a] - mu[b], opts.int_tol))
        .max()
        .unwrap_or(0) as usize;
    let lnorm = max_abs(&lt).max(1e-300);
    let r = opts.eval_radius.max(0.0);
    let mut small_run = 0;
    let cap = 600;
    let mut k = 1;
    loop {
        let fk = f_recursion_step(k, &j, &lt, &f, &mut r_terms, diagonal, opts.int_tol)?;
        let term = max_abs(&fk) * r.powi(k as i32);
        let fin = linalg::is_finite(&fk);
        f.push(fk);
        if !fin {
            return Err(Error::NonFinite(format!("F_{k}")));
        }
        if k >= opts.k.max(max_gap) {
            // stop once terms are negligible for a few consecutive orders and
            // the factorial decay has set in
            if term < 1e-18 && (k as f64) > lnorm * r {
                small_run += 1;
            } else {
                small_run = 0;
            }
            if small_run >= 3 {
                break;
            }
        }
        if k >= cap {
            return Err(Error::Invalid(format!(
                "Levelt series did not settle by order {cap} at radius {r}"
            )));
        }
        k += 1;
    }

    let dmat = linalg::diag(&d0.iter().map(|&d| C64::new(d as f64, 0.0)).collect::<Vec<_>>());
    let s0 = &j - &dmat;
    let r0 = r_terms.iter().fold(linalg::zeros(n, n), |acc, m| acc + m);
    let l0 = &s0 + &r0;
    let proper = proper_levelt(&d0, &rho, &l0, opts.cluster_rel.max(1e-12))?;
    let mut data = LeveltData {
        g0: g,
        g0_inv: g_inv,
        j,
        lambda_tilde: lt,
        f,
        k: opts.k,
        mu,
        d0,
        rho,
        s0,
        r_terms,
        r0,
        l0,
        proper,
        tau: opts.tau,
        certificate: SeriesCertificate {
            k: opts.k,
            radii: vec![],
            residuals: vec![],
            slope: f64::NAN,
        },
    };
    data.certificate = data.certificate_decade(None);
    Ok(data)
}

/// `φ = G(F₁ + [F₁, J] + R₁)G⁻¹`.
pub fn phi_term(data: &LeveltData) -> Result<CMat> {
    let f1 = data.f.get(1).ok_or_else(|| Error::Invalid("series has no F_1".into()))?;
    let r1 = data.r_terms.get(1).cloned().unwrap_or_else(|| linalg::zeros(f1.nrows(), f1.nrows()));
    Ok(&data.g0 * (f1 + linalg::commutator(f1, &data.j) + r1) * &data.g0_inv)
}

impl LeveltData {
    pub fn n(&self) -> usize {
        self.j.nrows()
    }

    fn dmat(&self) -> CMat {
        linalg::diag(&self.d0.iter().map(|&d| C64::new(d as f64, 0.0)).collect::<Vec<_>>())
    }

    /// `Ŷ(z)` and `Ŷ'(z)` from the first `terms + 1` coefficients.
    pub fn hat(&self, z: C64, terms: usize) -> (CMat, CMat) {
        let terms = terms.min(self.f.len() - 1);
        let n = self.n();
        // Horner in z
        let mut y = self.f[terms].clone();
        let mut dy = self.f[terms].clone() * C64::new(terms as f64, 0.0);
        for k in (0..terms).rev() {
            y = y * z + &self.f[k];
            if k >= 1 {
                dy = dy * z + &self.f[k] * C64::new(k as f64, 0.0);
            }
        }
        if terms == 0 {
            dy = linalg::zeros(n, n);
        }
        (y, dy)
    }

    /// `log z` on the branch `arg ∈ (τ - π, τ + π]`.
    pub fn branch_arg(&self, z: C64) -> f64 {
        let a = z.arg();
        let mut d = a - self.tau;
        let two_pi = 2.0 * std::f64::consts::PI;
        d -= two_pi * (d / two_pi).round();
        if d <= -std::f64::consts::PI {
            d += two_pi;
        }
        self.tau + d
    }

    /// `z^D z^L` at `z = r e^{iθ}` on the universal cover.
    pub fn z_power(&self, r: f64, theta: f64) -> CMat {
        let logz = C64::new(r.ln(), theta);
        let zd = linalg::exp_scaled(&self.dmat(), logz);
        let zl = linalg::exp_scaled(&self.l0, logz);
        zd * zl
    }

    /// `Y⁽⁰⁾(r e^{iθ})` with the full series and an unwrapped argument.
    pub fn evaluate_polar(&self, r: f64, theta: f64) -> CMat {
        let z = C64::new(0.0, theta).exp() * r;
        let (y, _) = self.hat(z, self.f.len() - 1);
        &self.g0 * y * self.z_power(r, theta)
    }

    /// `Y⁽⁰⁾(z)` on the principal branch about `τ`.
    pub fn evaluate(&self, z: C64) -> Result<CMat> {
        if z.norm() == 0.0 {
            return Err(Error::Pole("Levelt solution at z = 0".into()));
        }
        Ok(self.evaluate_polar(z.norm(), self.branch_arg(z)))
    }

    /// Residual of the truncated series in the frame of `G`:
    /// `zŶ' + Ŷ J + Ŷ Σ z^k R_k - (zΛ̃ + J)Ŷ`.
    pub fn truncated_residual(&self, z: C64, terms: usize) -> f64 {
        let (y, dy) = self.hat(z, terms);
        let mut zr = linalg::zeros(self.n(), self.n());
        let mut zk = C64::new(1.0, 0.0);
        for rk in self.r_terms.iter().skip(1) {
            zk *= z;
            if max_abs(rk) > 0.0 {
                zr += rk * zk;
            }
        }
        let res = dy * z + &y * &self.j + &y * zr - (&self.lambda_tilde * z + &self.j) * &y;
        max_abs(&res)
    }

    /// Certificate on the decade `[r_hi/10, r_hi]`. By default `r_hi` is
    /// placed so that the leading residual term `‖Λ̃F_K‖ r^{K+1}` is about
    /// `1e-10` at the bottom of the decade, keeping it above roundoff.
    pub fn certificate_decade(&self, r_hi: Option<f64>) -> SeriesCertificate {
        let lead = max_abs(&(&self.lambda_tilde * &self.f[self.k.min(self.f.len() - 1)]));
        let r_hi = r_hi.unwrap_or_else(|| {
            if lead > 0.0 {
                10.0 * (1e-10 / lead).powf(1.0 / (self.k as f64 + 1.0))
            } else {
                0.5
            }
        });
        let radii: Vec<f64> = (0..7).map(|i| r_hi * 10f64.powf(-(i as f64) / 6.0)).collect();
        // sample several arguments and keep the worst case per radius
        let residuals: Vec<f64> = radii
            .iter()
            .map(|&r| {
                (0..4)
                    .map(|q| {
                        let z = (I * (self.tau + 0.4 + q as f64 * 1.3)).exp() * r;
                        self.truncated_residual(z, self.k)
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let slope = if residuals.iter().all(|&x| x < 1e-280) {
            f64::INFINITY
        } else {
            linalg::loglog_slope(&radii, &residuals)
        };
        SeriesCertificate {
            k: self.k,
            radii,
            residuals,
            slope,
        }
    }

    /// `e^{2πiL⁽⁰⁾}`, the monodromy of `Y⁽⁰⁾` around `z = 0`.
    pub fn monodromy_exact(&self) -> CMat {
        linalg::exp_scaled(&self.l0, C64::new(0.0, 2.0 * std::f64::consts::PI))
    }
}

/// Reorders `(D, L)` into the proper form `Δ = D + Σ`, `N = L - Σ` with
/// equal-`ρ` eigenvalues grouped and integer parts non-increasing.
pub fn proper_levelt(d: &[i64], rho: &[C64], l: &CMat, rho_tol: f64) -> Result<ProperForm> {
    let n = d.len();
    if rho.len() != n || l.nrows() != n || l.ncols() != n {
        return Err(Error::Dimension("proper_levelt inputs".into()));
    }
    // representative ρ per class, in order of first appearance
    let mut classes: Vec<C64> = Vec::new();
    let class_of: Vec<usize> = rho
        .iter()
        .map(|r| match classes.iter().position(|c| (c - r).norm() <= rho_tol) {
            Some(k) => k,
            None => {
                classes.push(*r);
                classes.len() - 1
            }
        })
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| {
        linalg::lex_cmp(&classes[class_of[a]], &classes[class_of[b]]).then(d[b].cmp(&d[a]))
    });
    let sigma = linalg::diag(&perm.iter().map(|&i| classes[class_of[i]]).collect::<Vec<_>>());
    let delta = linalg::diag(
        &perm
            .iter()
            .map(|&i| classes[class_of[i]] + C64::new(d[i] as f64, 0.0))
            .collect::<Vec<_>>(),
    );
    let lp = CMat::from_fn(n, n, |i, j| l[(perm[i], perm[j])]);
    let nmat = &lp - &sigma;
    // N must connect only equal-ρ positions so that [Σ, N] = 0
    for i in 0..n {
        for j in 0..n {
            if class_of[perm[i]] != class_of[perm[j]] && nmat[(i, j)].norm() > 1e-10 * (1.0 + max_abs(l)) {
                return Err(Error::Invalid(format!(
                    "L couples exponents with different ρ at ({}, {})",
                    perm[i] + 1,
                    perm[j] + 1
                )));
            }
        }
    }
    let mut nmat = nmat;
    for i in 0..n {
        for j in 0..n {
            if class_of[perm[i]] != class_of[perm[j]] {
                nmat[(i, j)] = C64::new(0.0, 0.0);
            }
        }
    }
    Ok(ProperForm {
        permutation: perm,
        delta,
        n: nmat,
        sigma,
    })
}
