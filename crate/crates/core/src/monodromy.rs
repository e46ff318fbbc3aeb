//! Monodromy data of `dY/dz = (Λ + A/z)Y`: the monodromy at `0`, exponents at
//! `0` and `∞`, the Stokes matrices `𝕊₀, 𝕊₁` and the central connection
//! matrix `C₀`, plus the audit of their constancy along a deformation.
//!
//! Conventions: `Y⁽⁰⁾` follows the Levelt basis supplied (or computed) for
//! `A`, and `Y_ν` the reducer `T` at infinity. Changing either conjugates
//! `C₀` and `𝕊_ν` accordingly.

use std::f64::consts::PI;

use serde::Serialize;

use crate::blocks::{BlockPartition, JordanizationResult};
use crate::error::{Error, Result};
use crate::flow::FlowResult;
use crate::infinity::{
    self, choose_admissible_tau, formal_series, sector_solution, stokes_rays, FormalInfinityData, SectorOptions,
    SectorSolution, Segment, StokesGeometry,
};
use crate::levelt::{levelt_series, levelt_series_with_basis, LeveltData, LeveltOptions};
use crate::linalg::{self, max_abs, CMat, C64};
use crate::ode::OdeOptions;
use crate::pfaffian::CoalescedSystem;
use crate::tolerances::Tolerances;

#[derive(Debug, Clone)]
pub struct MonodromyOptions {
    /// Truncation order of the series at `0` and `∞`.
    pub k: usize,
    pub sector: SectorOptions,
    /// Preferred admissible direction; the nearest admissible one is used.
    pub preferred_tau: f64,
    /// Fixed admissible direction (overrides `preferred_tau`).
    pub tau: Option<f64>,
    pub tol: Tolerances,
    pub ode: OdeOptions,
}

impl Default for MonodromyOptions {
    fn default() -> Self {
        MonodromyOptions {
            k: 8,
            sector: SectorOptions::default(),
            preferred_tau: 0.0,
            tau: None,
            tol: Tolerances::default(),
            ode: OdeOptions::with_tol(1e-12),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroData {
    /// Monodromy of `Y⁽⁰⁾` obtained by continuation around `|z| = r`.
    #[serde(with = "linalg::pairs")]
    pub m0: CMat,
    /// `e^{2πiL⁽⁰⁾}`.
    #[serde(with = "linalg::pairs")]
    pub m0_exact: CMat,
    pub m0_residual: f64,
    /// Hausdorff distance between spec(M₀) and `{e^{2πiμ_j}}`.
    pub spectrum_residual: f64,
    #[serde(with = "linalg::pairs")]
    pub l0: CMat,
    pub d0: Vec<i64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StokesData {
    pub tau: f64,
    #[serde(with = "linalg::pairs")]
    pub s0: CMat,
    #[serde(with = "linalg::pairs")]
    pub s1: CMat,
    /// Max deviation between overlap points, per matrix.
    pub spread: [f64; 2],
    /// `max ‖(𝕊_ν)_{[a,a]} - I‖`.
    pub unipotency: f64,
    /// Largest entry at a structurally vanishing position.
    pub structural_zero: f64,
    /// Blocks ordered by increasing `Re(λ e^{iτ})`: `𝕊₀` is block
    /// upper-triangular and `𝕊₁` block lower-triangular in this order.
    pub dominance_order: Vec<usize>,
    #[serde(with = "linalg::pairs")]
    pub l: CMat,
    pub d: Vec<i64>,
    /// `ε_init + ε_ode · path length`.
    pub eps_total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectionData {
    #[serde(with = "linalg::pairs")]
    pub c0: CMat,
    pub spread: f64,
    /// `‖Y₁ - Y⁽⁰⁾C₀𝕊₀‖` relative, at points of the sector `S₁`.
    pub relation_residual: f64,
    /// `‖C₀⁻¹e^{2πiL⁽⁰⁾}C₀ - e^{2πiL}(𝕊₀𝕊₁)⁻¹‖` relative.
    pub cyclic_residual: f64,
    pub radius: f64,
}

/// Monodromy data at one point `λ`; each part fails independently.
#[derive(Debug, Clone, Serialize)]
pub struct MonodromyData {
    #[serde(serialize_with = "linalg::vec_pairs::serialize")]
    pub lambda: Vec<C64>,
    pub tau: f64,
    pub zero: std::result::Result<ZeroData, String>,
    pub stokes: std::result::Result<StokesData, String>,
    pub connection: std::result::Result<ConnectionData, String>,
}

/// `M₀ = Y⁽⁰⁾(z₀)⁻¹ Y⁽⁰⁾(z₀ e^{2πi})` by continuation on `|z| = r`.
pub fn monodromy_at_zero(sys: &CoalescedSystem, lev: &LeveltData, r: f64, theta0: f64, ode: &OdeOptions) -> Result<CMat> {
    let lam: Vec<C64> = (0..sys.n()).map(|i| sys.lambda.values[sys.partition().block_of(i)]).collect();
    let z0 = C64::from_polar(r, theta0);
    let y0 = lev.evaluate_polar(r, theta0);
    let w0 = &y0 * infinity::exp_lambda(&lam, -z0);
    let seg = [Segment::Arc {
        r,
        theta0,
        theta1: theta0 + 2.0 * PI,
    }];
    let (w1, _) = infinity::propagate_w(&lam, &sys.a, &w0, &seg, ode)?;
    let y1 = w1 * infinity::exp_lambda(&lam, z0);
    Ok(linalg::inverse(&y0)? * y1)
}

fn zero_data(sys: &CoalescedSystem, lev: &LeveltData, r: f64, theta0: f64, ode: &OdeOptions) -> Result<ZeroData> {
    let m0 = monodromy_at_zero(sys, lev, r, theta0, ode)?;
    let m0_exact = lev.monodromy_exact();
    let ev = linalg::eigenvalues(&m0)?;
    let want: Vec<C64> = lev.mu.iter().map(|m| (C64::new(0.0, 2.0 * PI) * m).exp()).collect();
    Ok(ZeroData {
        m0_residual: max_abs(&(&m0 - &m0_exact)) / max_abs(&m0_exact).max(1.0),
        spectrum_residual: linalg::hausdorff(&ev, &want),
        m0,
        m0_exact,
        l0: lev.l0.clone(),
        d0: lev.d0.clone(),
        radius: r,
    })
}

fn overlap_points(center: f64, r: f64, half_width: f64) -> [(f64, f64); 3] {
    [(r, center), (1.4 * r, center + 0.3 * half_width), (0.7 * r, center - 0.3 * half_width)]
}

fn ratio_over(ya: &SectorSolution, yb: &SectorSolution, pts: &[(f64, f64)]) -> Result<(CMat, f64)> {
    let mut first: Option<CMat> = None;
    let mut spread: f64 = 0.0;
    for &(r, th) in pts {
        let s = linalg::solve(&ya.evaluate(r, th)?, &yb.evaluate(r, th)?)?;
        match &first {
            None => first = Some(s),
            Some(f) => spread = spread.max(max_abs(&(&s - f)) / max_abs(f).max(1.0)),
        }
    }
    Ok((first.expect("at least one point"), spread))
}

/// Blocks sorted by increasing `Re(λ_a e^{iτ})`.
pub fn dominance_order(lambda: &[C64], tau: f64) -> Vec<usize> {
    let e = C64::from_polar(1.0, tau);
    let mut idx: Vec<usize> = (0..lambda.len()).collect();
    idx.sort_by(|&a, &b| (lambda[a] * e).re.total_cmp(&(lambda[b] * e).re));
    idx
}

/// Structural defects of `(𝕊₀, 𝕊₁)`: diagonal blocks away from `I`, and
/// entries where `(𝕊₀)_{[a,b]}` must vanish (`Re((λ_a - λ_b)e^{iτ}) > 0`)
/// or `(𝕊₁)_{[a,b]}` must vanish (`Re((λ_a - λ_b)e^{iτ}) < 0`).
pub fn stokes_structure(s0: &CMat, s1: &CMat, part: &BlockPartition, lambda: &[C64], tau: f64) -> (f64, f64) {
    let e = C64::from_polar(1.0, tau);
    let mut unip: f64 = 0.0;
    let mut zero: f64 = 0.0;
    for a in 0..part.s() {
        for b in 0..part.s() {
            for i in part.range(a) {
                for j in part.range(b) {
                    if a == b {
                        let id = if i == j { 1.0 } else { 0.0 };
                        unip = unip.max((s0[(i, j)] - id).norm()).max((s1[(i, j)] - id).norm());
                    } else {
                        let w = ((lambda[a] - lambda[b]) * e).re;
                        let m = if w > 0.0 { s0[(i, j)] } else { s1[(i, j)] };
                        zero = zero.max(m.norm());
                    }
                }
            }
        }
    }
    (unip, zero)
}

fn path_factor(sec: &SectorSolution, lam: &[C64]) -> f64 {
    let gmax = lam
        .iter()
        .flat_map(|a| lam.iter().map(move |b| (a - b).norm()))
        .fold(0.0, f64::max)
        .max(1.0);
    sec.r_match * gmax
}

/// `𝕊₀ = Y₀⁻¹Y₁` near `arg z = τ` and `𝕊₁ = Y₁⁻¹Y₂` near `τ + π`.
pub fn stokes_matrices(
    sys: &CoalescedSystem,
    geom: &StokesGeometry,
    fdata: &FormalInfinityData,
    opts: &SectorOptions,
) -> Result<(StokesData, [SectorSolution; 3])> {
    let y0 = sector_solution(sys, geom, fdata, 0, opts)?;
    let y1 = sector_solution(sys, geom, fdata, 1, opts)?;
    let y2 = sector_solution(sys, geom, fdata, 2, opts)?;
    let w = geom.margin.min(PI / 2.0);
    let (s0, sp0) = ratio_over(&y0, &y1, &overlap_points(geom.tau, y0.base_r, w))?;
    let (s1, sp1) = ratio_over(&y1, &y2, &overlap_points(geom.tau + PI, y0.base_r, w))?;
    let (unip, zero) = stokes_structure(&s0, &s1, sys.partition(), &sys.lambda.values, geom.tau);
    let eps = [&y0, &y1, &y2]
        .iter()
        .map(|y| y.eps_init + y.ode.rtol * path_factor(y, &fdata.lam))
        .fold(0.0, f64::max);
    let data = StokesData {
        tau: geom.tau,
        s0,
        s1,
        spread: [sp0, sp1],
        unipotency: unip,
        structural_zero: zero,
        dominance_order: dominance_order(&sys.lambda.values, geom.tau),
        l: fdata.l.clone(),
        d: fdata.d.clone(),
        eps_total: eps,
    };
    Ok((data, [y0, y1, y2]))
}

/// Radius of the annulus where `Y⁽⁰⁾` and `Y₀` are compared.
pub fn annulus_radius(sec: &SectorSolution) -> f64 {
    sec.base_r.min(1.0)
}

/// `C₀ = Y⁽⁰⁾(z)⁻¹Y₀(z)` over 8 points of the core `(τ - π, τ)` of `S₀`.
pub fn central_connection(lev: &LeveltData, sector0: &SectorSolution) -> Result<(CMat, f64)> {
    let r = annulus_radius(sector0);
    let (lo, hi) = infinity::sector_core(sector0.tau, 0);
    let mut first: Option<CMat> = None;
    let mut spread: f64 = 0.0;
    for q in 0..8 {
        let th = lo + (hi - lo) * (q as f64 + 0.5) / 8.0;
        let rr = if q % 2 == 0 { r } else { 0.6 * r };
        let c0 = linalg::solve(&lev.evaluate_polar(rr, th), &sector0.evaluate(rr, th)?)?;
        match &first {
            None => first = Some(c0),
            Some(f) => spread = spread.max(max_abs(&(&c0 - f)) / max_abs(f).max(1.0)),
        }
    }
    Ok((first.expect("eight points"), spread))
}

fn connection_data(lev: &LeveltData, st: &StokesData, secs: &[SectorSolution; 3]) -> Result<ConnectionData> {
    let (c0, spread) = central_connection(lev, &secs[0])?;
    let r = annulus_radius(&secs[0]);
    let mut rel: f64 = 0.0;
    let (lo, hi) = infinity::sector_core(secs[1].tau, 1);
    for q in 0..3 {
        let th = lo + (hi - lo) * (q as f64 + 0.5) / 3.0;
        let y1 = secs[1].evaluate(r, th)?;
        let pred = lev.evaluate_polar(r, th) * &c0 * &st.s0;
        rel = rel.max(max_abs(&(&y1 - pred)) / max_abs(&y1).max(1e-300));
    }
    let lhs = linalg::solve(&c0, &(lev.monodromy_exact() * &c0))?;
    let ml = linalg::exp_scaled(&st.l, C64::new(0.0, 2.0 * PI));
    let rhs = ml * linalg::inverse(&(&st.s0 * &st.s1))?;
    Ok(ConnectionData {
        c0,
        spread,
        relation_residual: rel,
        cyclic_residual: max_abs(&(&lhs - &rhs)) / max_abs(&rhs).max(1.0),
        radius: r,
    })
}

/// Inputs fixing the normalization of the data at one `λ`.
#[derive(Debug, Clone)]
pub struct Normalization {
    /// `G⁽⁰⁾` and `J⁽⁰⁾`.
    pub levelt_basis: Option<(CMat, CMat)>,
    pub reducer: Option<JordanizationResult>,
}

/// All monodromy data at one system with a fixed admissible direction `τ`.
pub fn monodromy_data(sys: &CoalescedSystem, tau: f64, norm: &Normalization, opts: &MonodromyOptions) -> MonodromyData {
    let lev_opts = LeveltOptions {
        k: opts.k,
        tau: tau - PI / 2.0,
        cluster_rel: opts.tol.cluster_rel,
        int_tol: opts.tol.int_tol,
        eval_radius: 1.0,
    };
    let lev = match &norm.levelt_basis {
        Some((g, j)) => levelt_series_with_basis(sys, g.clone(), j.clone(), &lev_opts),
        None => levelt_series(sys, &lev_opts),
    };
    let zero = lev
        .as_ref()
        .map_err(|e| e.to_string())
        .and_then(|l| zero_data(sys, l, 0.5, tau - PI / 2.0, &opts.ode).map_err(|e| e.to_string()));
    let red = match &norm.reducer {
        Some(r) => Ok(r.clone()),
        None => sys.reducer_or_compute(&opts.tol),
    };
    let geom = StokesGeometry {
        rays: stokes_rays(&sys.lambda),
        tau,
        margin: ray_margin(&sys.lambda, tau),
    };
    let stokes = red
        .and_then(|r| formal_series(sys, &r, opts.k, opts.tol.int_tol))
        .and_then(|fd| stokes_matrices(sys, &geom, &fd, &opts.sector));
    let connection = match (&lev, &stokes) {
        (Ok(l), Ok((st, secs))) => connection_data(l, st, secs).map_err(|e| e.to_string()),
        (Err(e), _) => Err(format!("Levelt data: {e}")),
        (_, Err(e)) => Err(format!("sector solutions: {e}")),
    };
    MonodromyData {
        lambda: sys.lambda.values.clone(),
        tau,
        zero,
        stokes: stokes.map(|(s, _)| s).map_err(|e| e.to_string()),
        connection,
    }
}

fn ray_margin(lambda: &crate::blocks::Lambda, tau: f64) -> f64 {
    stokes_rays(lambda)
        .iter()
        .map(|r| {
            let d = (r.theta - tau).rem_euclid(PI);
            d.min(PI - d)
        })
        .fold(PI / 2.0, f64::min)
}

/// Admissible direction for a single system.
pub fn admissible_tau(sys: &CoalescedSystem, opts: &MonodromyOptions) -> Result<f64> {
    match opts.tau {
        Some(t) => Ok(t),
        None => Ok(infinity::geometry(&sys.lambda, opts.preferred_tau, opts.tol.tau_min_margin)?.tau),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditItem {
    pub name: String,
    /// Max relative deviation from the first sample of its segment.
    pub deviation: Option<f64>,
    pub budget: f64,
    pub pass: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IsomonodromyAudit {
    pub tau: f64,
    pub sample_t: Vec<f64>,
    pub data: Vec<MonodromyData>,
    pub items: Vec<AuditItem>,
    /// Sample indices at which `D` or `D⁽⁰⁾` jumps; comparisons restart there.
    pub d_jumps: Vec<usize>,
    pub pass: bool,
}

impl IsomonodromyAudit {
    pub fn item(&self, name: &str) -> Option<&AuditItem> {
        self.items.iter().find(|i| i.name == name)
    }
}

fn rel_dev(a: &CMat, b: &CMat) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(1.0)
}

type Getter = fn(&MonodromyData) -> std::result::Result<CMat, String>;

fn items() -> Vec<(&'static str, Getter)> {
    fn ok<T: Clone, E: Clone + ToString>(r: &std::result::Result<T, E>) -> std::result::Result<T, String> {
        r.clone().map_err(|e| e.to_string())
    }
    fn ivec(d: &[i64]) -> CMat {
        linalg::diag(&d.iter().map(|&x| C64::new(x as f64, 0.0)).collect::<Vec<_>>())
    }
    vec![
        ("S0", |m| ok(&m.stokes).map(|s| s.s0)),
        ("S1", |m| ok(&m.stokes).map(|s| s.s1)),
        ("C0", |m| ok(&m.connection).map(|c| c.c0)),
        ("L", |m| ok(&m.stokes).map(|s| s.l)),
        ("D", |m| ok(&m.stokes).map(|s| ivec(&s.d))),
        ("L0", |m| ok(&m.zero).map(|z| z.l0)),
        ("D0", |m| ok(&m.zero).map(|z| ivec(&z.d0))),
        ("M0", |m| ok(&m.zero).map(|z| z.m0)),
    ]
}

/// Audits constancy of `𝕊₀, 𝕊₁, C₀, L, D, L⁽⁰⁾, D⁽⁰⁾, M₀` at
/// `sample_count` points of the flow, in the normalization transported by
/// the flow (`G` and `T` of each sample).
pub fn verify_strong_isomonodromy(flow: &FlowResult, sample_count: usize, opts: &MonodromyOptions) -> Result<IsomonodromyAudit> {
    if sample_count == 0 || flow.samples.is_empty() {
        return Err(Error::Invalid("audit needs at least one sample".into()));
    }
    let t_end = flow.samples.last().map(|s| s.t).unwrap_or(0.0);
    let mut idx: Vec<usize> = (0..sample_count)
        .map(|q| {
            let t = if sample_count == 1 {
                0.0
            } else {
                t_end * q as f64 / (sample_count - 1) as f64
            };
            flow.nearest(t)
        })
        .collect();
    idx.dedup();
    let systems: Vec<CoalescedSystem> = idx.iter().map(|&i| flow.system_at(i)).collect::<Result<_>>()?;
    let tau = match opts.tau {
        Some(t) => t,
        None => {
            let rays: Vec<_> = systems.iter().map(|s| stokes_rays(&s.lambda)).collect();
            choose_admissible_tau(&rays, opts.preferred_tau, opts.tol.tau_min_margin)?.tau
        }
    };
    let norms: Vec<Normalization> = idx
        .iter()
        .zip(&systems)
        .map(|(&i, sys)| {
            let smp = &flow.samples[i];
            let red = JordanizationResult::from_explicit(
                &sys.a,
                sys.partition(),
                smp.tmat.clone(),
                flow.j_reducer.clone(),
                &opts.tol.jordan(),
            )
            .ok();
            Normalization {
                levelt_basis: Some((smp.g.clone(), flow.j_levelt.clone())),
                reducer: red,
            }
        })
        .collect();
    let data: Vec<MonodromyData> = std::thread::scope(|sc| {
        let hs: Vec<_> = systems
            .iter()
            .zip(&norms)
            .map(|(sys, nm)| sc.spawn(move || monodromy_data(sys, tau, nm, opts)))
            .collect();
        hs.into_iter().map(|h| h.join().expect("audit worker panicked")).collect()
    });
    Ok(assemble_audit(tau, idx.iter().map(|&i| flow.samples[i].t).collect(), data, opts))
}

fn assemble_audit(tau: f64, sample_t: Vec<f64>, data: Vec<MonodromyData>, opts: &MonodromyOptions) -> IsomonodromyAudit {
    // segments split where an integer exponent jumps
    let mut d_jumps = Vec::new();
    for q in 1..data.len() {
        let dz = |m: &MonodromyData| m.zero.as_ref().ok().map(|z| z.d0.clone());
        let di = |m: &MonodromyData| m.stokes.as_ref().ok().map(|s| s.d.clone());
        if dz(&data[q]) != dz(&data[q - 1]) || di(&data[q]) != di(&data[q - 1]) {
            d_jumps.push(q);
        }
    }
    let eps = data
        .iter()
        .filter_map(|m| m.stokes.as_ref().ok().map(|s| s.eps_total))
        .fold(0.0, f64::max);
    let budget = opts.tol.audit_tol.max(3.0 * eps);
    let mut out = Vec::new();
    for (name, get) in items() {
        let vals: Vec<_> = data.iter().map(get).collect();
        if let Some(e) = vals.iter().find_map(|v| v.as_ref().err()) {
            out.push(AuditItem {
                name: name.into(),
                deviation: None,
                budget,
                pass: false,
                error: Some(e.clone()),
            });
            continue;
        }
        let vals: Vec<CMat> = vals.into_iter().map(|v| v.expect("checked")).collect();
        let mut dev: f64 = 0.0;
        let mut start = 0;
        for q in 1..vals.len() {
            if d_jumps.contains(&q) {
                start = q;
                continue;
            }
            dev = dev.max(rel_dev(&vals[q], &vals[start]));
        }
        out.push(AuditItem {
            name: name.into(),
            deviation: Some(dev),
            budget,
            pass: dev <= budget,
            error: None,
        });
    }
    let pass = out.iter().all(|i| i.pass);
    IsomonodromyAudit {
        tau,
        sample_t,
        data,
        items: out,
        d_jumps,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{BlockPartition, Lambda};
    use crate::linalg::{c, cr};

    fn sys2() -> CoalescedSystem {
        let p = BlockPartition::new(&[1, 1]).unwrap();
        let l = Lambda::new(vec![cr(0.0), cr(1.0)], p, 1e-10).unwrap();
        let a = linalg::from_rows(2, 2, &[c(0.3, 0.1), c(0.7, -0.2), c(-0.4, 0.5), c(-0.15, 0.05)]);
        CoalescedSystem::new(l, a).unwrap()
    }

    #[test]
    fn diagonal_a_monodromy() {
        let p = BlockPartition::new(&[1, 1]).unwrap();
        let l = Lambda::new(vec![cr(0.0), c(1.0, 0.5)], p, 1e-10).unwrap();
        let a = linalg::diag(&[cr(0.3), c(-0.2, 0.1)]);
        let sys = CoalescedSystem::new(l, a.clone()).unwrap();
        let lev = levelt_series(&sys, &LeveltOptions::default()).unwrap();
        let m = monodromy_at_zero(&sys, &lev, 0.5, 0.3, &OdeOptions::with_tol(1e-12)).unwrap();
        let want = linalg::exp_scaled(&a, C64::new(0.0, 2.0 * PI));
        // the Levelt basis orders eigenvalues lexicographically
        let in_a_frame = &lev.g0 * &m * &lev.g0_inv;
        assert!(max_abs(&(in_a_frame - want)) < 1e-9);
        assert!(max_abs(&(m - lev.monodromy_exact())) < 1e-9);
    }

    #[test]
    fn data_of_generic_2x2() {
        let sys = sys2();
        let opts = MonodromyOptions::default();
        let tau = admissible_tau(&sys, &opts).unwrap();
        let md = monodromy_data(&sys, tau, &Normalization { levelt_basis: None, reducer: None }, &opts);
        let z = md.zero.unwrap();
        assert!(z.m0_residual < 1e-8, "{}", z.m0_residual);
        assert!(z.spectrum_residual < 1e-8);
        let st = md.stokes.unwrap();
        assert!(st.unipotency < 1e-7 && st.structural_zero < 1e-7, "{st:?}");
        assert!(st.spread[0] < 1e-8 && st.spread[1] < 1e-8);
        let cd = md.connection.unwrap();
        assert!(cd.spread < 1e-8, "{}", cd.spread);
        assert!(cd.relation_residual < 1e-6);
        assert!(cd.cyclic_residual < 1e-6, "{}", cd.cyclic_residual);
    }
}
