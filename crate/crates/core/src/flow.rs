//! The deformation equations `dA = [Σ_j ω̃_j dλ_j, A]` along paths in `λ`,
//! co-integrated with the Levelt basis `dG = (Σ ω̃_j dλ_j)G` and the reducer
//! `dT = (Σ 𝒟_j dλ_j)T`.

use std::sync::Arc;

use serde::Serialize;

use crate::blocks::{self, BlockPartition, Lambda};
use crate::error::{Error, Result};
use crate::linalg::{self, max_abs, CMat, C64};
use crate::ode::{self, OdeOptions, OdeStats};
use crate::pfaffian::{self, CoalescedSystem};
use crate::tolerances;

/// Piecewise-linear path through waypoints in `ℂˢ`; the parameter runs over
/// `[0, segments]` with one unit per segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeformationPath {
    pub waypoints: Vec<Vec<C64>>,
}

impl DeformationPath {
    pub fn new(waypoints: Vec<Vec<C64>>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Invalid("a path needs at least two waypoints".into()));
        }
        let s = waypoints[0].len();
        if s == 0 || waypoints.iter().any(|w| w.len() != s) {
            return Err(Error::Dimension("waypoints must share one length s ≥ 1".into()));
        }
        Ok(DeformationPath { waypoints })
    }

    /// Straight segment from `a` to `b`.
    pub fn segment(a: Vec<C64>, b: Vec<C64>) -> Result<Self> {
        Self::new(vec![a, b])
    }

    pub fn segments(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn s(&self) -> usize {
        self.waypoints[0].len()
    }

    pub fn point(&self, t: f64) -> Vec<C64> {
        let k = (t.floor().max(0.0) as usize).min(self.segments() - 1);
        let u = t - k as f64;
        let (a, b) = (&self.waypoints[k], &self.waypoints[k + 1]);
        a.iter().zip(b).map(|(x, y)| x + (y - x) * u).collect()
    }

    pub fn velocity(&self, seg: usize) -> Vec<C64> {
        let (a, b) = (&self.waypoints[seg], &self.waypoints[seg + 1]);
        a.iter().zip(b).map(|(x, y)| y - x).collect()
    }

    /// Exact minimum of `|λ_a(t) - λ_b(t)|` over the path.
    pub fn stratum_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        let s = self.s();
        for k in 0..self.segments() {
            let (p, q) = (&self.waypoints[k], &self.waypoints[k + 1]);
            for a in 0..s {
                for b in a + 1..s {
                    let d0 = p[a] - p[b];
                    let d1 = q[a] - q[b];
                    let v = d1 - d0;
                    let vv = v.norm_sqr();
                    let u = if vv > 0.0 { (-(d0.conj() * v).re / vv).clamp(0.0, 1.0) } else { 0.0 };
                    m = m.min((d0 + v * u).norm());
                }
            }
        }
        m
    }

    /// Euclidean length in `ℂˢ`.
    pub fn length(&self) -> f64 {
        (0..self.segments())
            .map(|k| self.velocity(k).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
            .sum()
    }
}

type DField = Arc<dyn Fn(&[C64]) -> Result<Vec<CMat>> + Send + Sync>;
type TField = Arc<dyn Fn(&[C64]) -> Result<CMat> + Send + Sync>;

/// How the block-diagonal terms `𝒟_j` are obtained.
#[derive(Clone)]
pub enum DSpec {
    Zero,
    /// Fixed matrices `𝒟_1, …, 𝒟_s`.
    Constant(Vec<CMat>),
    /// `λ ↦ (𝒟_1, …, 𝒟_s)`.
    Field(DField),
    /// `𝒟_j = ∂_jT·T⁻¹` from a reducer `T(λ)`, by central differences with step `h`.
    FromT(TField, f64),
}

impl std::fmt::Debug for DSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.kind())
    }
}

impl DSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DSpec::Zero => "zero",
            DSpec::Constant(_) => "constant",
            DSpec::Field(_) => "field",
            DSpec::FromT(..) => "t-derived",
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DSpec::Zero)
    }

    /// `𝒟_j` at `λ`, or `None` for the zero specification.
    pub fn eval(&self, lambda: &[C64]) -> Result<Option<Vec<CMat>>> {
        match self {
            DSpec::Zero => Ok(None),
            DSpec::Constant(d) => Ok(Some(d.clone())),
            DSpec::Field(f) => f(lambda).map(Some),
            DSpec::FromT(t, h) => pfaffian::dblocks_from_t(|l| t(l), lambda, *h).map(Some),
        }
    }
}

/// `Σ_j ω_j dλ_j`: blocks `A_{[a,b]}(dλ_a - dλ_b)/(λ_a - λ_b)`.
pub fn omega_contracted(a: &CMat, part: &BlockPartition, lambda: &[C64], dlam: &[C64]) -> Result<CMat> {
    let n = part.n();
    let mut out = linalg::zeros(n, n);
    for i in 0..n {
        let bi = part.block_of(i);
        for j in 0..n {
            let bj = part.block_of(j);
            if bi != bj {
                let gap = lambda[bi] - lambda[bj];
                if gap.norm() == 0.0 {
                    return Err(Error::Stratum {
                        a: bi + 1,
                        b: bj + 1,
                        tol: 0.0,
                    });
                }
                out[(i, j)] = a[(i, j)] * (dlam[bi] - dlam[bj]) / gap;
            }
        }
    }
    Ok(out)
}

/// `Σ_j ω̃_j dλ_j` and `Σ_j 𝒟_j dλ_j`.
pub fn connection(a: &CMat, part: &BlockPartition, lambda: &[C64], dlam: &[C64], dspec: &DSpec) -> Result<(CMat, CMat)> {
    let w = omega_contracted(a, part, lambda, dlam)?;
    let n = part.n();
    let mut d = linalg::zeros(n, n);
    if let Some(ds) = dspec.eval(lambda)? {
        if ds.len() != dlam.len() {
            return Err(Error::Dimension(format!("{} D-blocks for s = {}", ds.len(), dlam.len())));
        }
        for (dj, v) in ds.iter().zip(dlam) {
            d += dj * *v;
        }
    }
    Ok((w + &d, d))
}

/// `[Σ_j ω̃_j dλ_j, A]`.
pub fn deformation_rhs(a: &CMat, lambda: &Lambda, dlam: &[C64], dspec: &DSpec) -> Result<CMat> {
    lambda.check_separation(tolerances::EIG_SEP_TOL)?;
    let (om, _) = connection(a, &lambda.partition, &lambda.values, dlam, dspec)?;
    Ok(linalg::commutator(&om, a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSample {
    pub t: f64,
    pub lambda: Vec<C64>,
    #[serde(skip)]
    pub a: CMat,
    #[serde(skip)]
    pub g: CMat,
    #[serde(skip)]
    pub tmat: CMat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowMonitors {
    /// Max Hausdorff distance between `spectrum(A(t))` and `spectrum(A(0))`.
    pub spectrum_drift: f64,
    /// Max over `t, k` of `‖A_{[k,k]}(t) - A_{[k,k]}(0)‖_max`.
    pub diag_block_drift: f64,
    /// Max `‖T⁻¹A_D T - J(0)‖_max`.
    pub reducer_drift: f64,
    /// Max `‖G⁻¹AG - J⁽⁰⁾(0)‖_max`.
    pub levelt_basis_drift: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub partition: BlockPartition,
    pub path: DeformationPath,
    pub dspec: DSpec,
    pub samples: Vec<FlowSample>,
    pub monitors: FlowMonitors,
    pub stats: OdeStats,
    pub rtol: f64,
    /// Jordan form of `A_D` for the reducer, constant along the flow.
    pub j_reducer: CMat,
    /// Jordan form of `A` for the Levelt basis.
    pub j_levelt: CMat,
}

impl FlowResult {
    pub fn last(&self) -> &FlowSample {
        self.samples.last().expect("flow has samples")
    }

    pub fn system_at(&self, idx: usize) -> Result<CoalescedSystem> {
        let smp = &self.samples[idx];
        let lam = Lambda::new(smp.lambda.clone(), self.partition.clone(), 0.0)?;
        CoalescedSystem::new(lam, smp.a.clone())
    }

    /// Sample closest to path parameter `t`.
    pub fn nearest(&self, t: f64) -> usize {
        (0..self.samples.len())
            .min_by(|&a, &b| (self.samples[a].t - t).abs().total_cmp(&(self.samples[b].t - t).abs()))
            .unwrap_or(0)
    }

    /// A "flow" that keeps `A`, `G` and `T` fixed while `λ` moves. It does
    /// not solve the deformation equations; used as a negative control.
    pub fn frozen(a: CMat, partition: BlockPartition, path: DeformationPath, tol: &tolerances::Tolerances) -> Result<Self> {
        let scale = linalg::norm_inf(&a).max(1.0);
        let (g, jl, _, _) = blocks::jordan_basis(&a, tol.cluster_rel * scale)?;
        let red = blocks::jordanize_diag_blocks(&a, &partition, &tol.jordan())?;
        let samples = (0..=path.segments())
            .map(|k| FlowSample {
                t: k as f64,
                lambda: path.waypoints[k].clone(),
                a: a.clone(),
                g: g.clone(),
                tmat: red.t.clone(),
            })
            .collect();
        Ok(FlowResult {
            partition,
            dspec: DSpec::Zero,
            path,
            samples,
            monitors: FlowMonitors {
                spectrum_drift: 0.0,
                diag_block_drift: 0.0,
                reducer_drift: 0.0,
                levelt_basis_drift: 0.0,
                flagged: false,
            },
            stats: OdeStats::default(),
            rtol: 0.0,
            j_reducer: red.j,
            j_levelt: jl,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub ode: OdeOptions,
    pub monitor_fail: f64,
    pub tol: tolerances::Tolerances,
    /// Initial Levelt basis and its Jordan form; computed from `A0` if absent.
    pub levelt_basis: Option<(CMat, CMat)>,
    /// Initial reducer; computed from `A0` if absent.
    pub reducer: Option<blocks::JordanizationResult>,
    /// Record every accepted step (otherwise only waypoints).
    pub record_steps: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            ode: OdeOptions::with_tol(1e-12),
            monitor_fail: tolerances::MONITOR_FAIL,
            tol: tolerances::Tolerances::default(),
            levelt_basis: None,
            reducer: None,
            record_steps: true,
        }
    }
}

fn pack(mats: &[&CMat]) -> Vec<C64> {
    mats.iter().flat_map(|m| m.iter().copied()).collect()
}

fn unpack(y: &[C64], n: usize, k: usize) -> CMat {
    CMat::from_column_slice(n, n, &y[k * n * n..(k + 1) * n * n])
}

/// Integrates `dA/dt = [Σ_j ω̃_j λ̇_j, A]` along `path`.
pub fn integrate_flow(a0: &CMat, part: &BlockPartition, path: &DeformationPath, dspec: &DSpec, opts: &FlowOptions) -> Result<FlowResult> {
    let n = part.n();
    if a0.nrows() != n || a0.ncols() != n {
        return Err(Error::Dimension("A0 does not match the partition".into()));
    }
    if path.s() != part.s() {
        return Err(Error::Dimension(format!("path has s = {}, partition s = {}", path.s(), part.s())));
    }
    let margin = path.stratum_margin();
    if margin < opts.tol.eig_sep_tol {
        return Err(Error::Stratum {
            a: 0,
            b: 0,
            tol: margin,
        });
    }
    let scale = linalg::norm_inf(a0).max(1.0);
    let (g0, jl) = match &opts.levelt_basis {
        Some(gj) => gj.clone(),
        None => {
            let (g, j, _, _) = blocks::jordan_basis(a0, opts.tol.cluster_rel * scale)?;
            (g, j)
        }
    };
    let red = match &opts.reducer {
        Some(r) => r.clone(),
        None => blocks::jordanize_diag_blocks(a0, part, &opts.tol.jordan())?,
    };
    let t0 = red.t.clone();
    let jr = red.j.clone();
    let eig0: Vec<C64> = linalg::eigenvalues(a0)?;
    let ad0 = part.block_diagonal(a0);

    let mut samples = vec![FlowSample {
        t: 0.0,
        lambda: path.waypoints[0].clone(),
        a: a0.clone(),
        g: g0.clone(),
        tmat: t0.clone(),
    }];
    let mut mon = FlowMonitors {
        spectrum_drift: 0.0,
        diag_block_drift: 0.0,
        reducer_drift: 0.0,
        levelt_basis_drift: 0.0,
        flagged: false,
    };
    let mut y = pack(&[a0, &g0, &t0]);
    let mut stats = OdeStats::default();
    let mut err: Option<Error> = None;
    for seg in 0..path.segments() {
        let vel = path.velocity(seg);
        let base = seg as f64;
        let rhs = |t: f64, y: &[C64], dy: &mut [C64]| {
            let lam = path.point(base + t);
            let a = unpack(y, n, 0);
            let g = unpack(y, n, 1);
            let tm = unpack(y, n, 2);
            match connection(&a, part, &lam, &vel, dspec) {
                Ok((om, d)) => {
                    let da = linalg::commutator(&om, &a);
                    let dg = &om * g;
                    let dt = d * tm;
                    dy[..n * n].copy_from_slice(da.as_slice());
                    dy[n * n..2 * n * n].copy_from_slice(dg.as_slice());
                    dy[2 * n * n..].copy_from_slice(dt.as_slice());
                }
                Err(_) => dy.iter_mut().for_each(|v| *v = C64::new(f64::NAN, 0.0)),
            }
        };
        let mut on_step = |t: f64, y: &[C64]| {
            let a = unpack(y, n, 0);
            let g = unpack(y, n, 1);
            let tm = unpack(y, n, 2);
            match linalg::eigenvalues(&a) {
                Ok(ev) => mon.spectrum_drift = mon.spectrum_drift.max(linalg::hausdorff(&ev, &eig0)),
                Err(e) => err = Some(e),
            }
            let ad = part.block_diagonal(&a);
            mon.diag_block_drift = mon.diag_block_drift.max(max_abs(&(&ad - &ad0)));
            if let (Ok(ti), Ok(gi)) = (linalg::inverse(&tm), linalg::inverse(&g)) {
                mon.reducer_drift = mon.reducer_drift.max(max_abs(&(ti * &ad * &tm - &jr)));
                mon.levelt_basis_drift = mon.levelt_basis_drift.max(max_abs(&(gi * &a * &g - &jl)));
            }
            let at_end = (t - 1.0).abs() < 1e-15;
            if opts.record_steps || at_end {
                samples.push(FlowSample {
                    t: base + t,
                    lambda: path.point(base + t),
                    a,
                    g,
                    tmat: tm,
                });
            }
        };
        let (out, st) = ode::integrate(rhs, 0.0, 1.0, &y, &opts.ode, &mut on_step)?;
        if let Some(e) = err.take() {
            return Err(e);
        }
        y = out;
        stats.absorb(&st);
    }
    let fin = samples.last().map(|s| linalg::is_finite(&s.a)).unwrap_or(false);
    if !fin {
        return Err(Error::NonFinite("A along the flow".into()));
    }
    mon.flagged = mon.spectrum_drift > opts.monitor_fail
        || (dspec.is_zero() && mon.diag_block_drift > opts.monitor_fail)
        || mon.reducer_drift > opts.monitor_fail * scale;
    Ok(FlowResult {
        partition: part.clone(),
        path: path.clone(),
        dspec: dspec.clone(),
        samples,
        monitors: mon,
        stats,
        rtol: opts.ode.rtol,
        j_reducer: jr,
        j_levelt: jl,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaugeReport {
    /// `‖Ǎ_D - A_D‖_max`; zero when `T` and `Ť` reduce the same `A_D`.
    pub block_diagonal_mismatch: f64,
    /// `‖Ť⁻¹Ǎ_DŤ - T⁻¹A_DT‖_max`.
    pub jordan_mismatch: f64,
}

/// `Ǎ = Ť(T⁻¹AT)Ť⁻¹` and `ω̌_j` by the same conjugation.
pub fn gauge_transform(
    a: &CMat,
    omegas: &[CMat],
    part: &BlockPartition,
    t: &CMat,
    t_check: &CMat,
) -> Result<(CMat, Vec<CMat>, GaugeReport)> {
    for (m, name) in [(t, "T"), (t_check, "Ť")] {
        if !part.is_block_diagonal(m, 0.0) {
            return Err(Error::Invalid(format!("{name} is not block-diagonal")));
        }
    }
    let ti = linalg::inverse(t)?;
    let tci = linalg::inverse(t_check)?;
    let m = t_check * &ti;
    let mi = t * &tci;
    let ac = &m * a * &mi;
    let om = omegas.iter().map(|w| &m * w * &mi).collect();
    let ad = part.block_diagonal(a);
    let acd = part.block_diagonal(&ac);
    let rep = GaugeReport {
        block_diagonal_mismatch: max_abs(&(&acd - &ad)),
        jordan_mismatch: max_abs(&(&tci * &acd * t_check - &ti * &ad * t)),
    };
    Ok((ac, om, rep))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TFlowResult {
    pub ts: Vec<f64>,
    #[serde(skip)]
    pub tmats: Vec<CMat>,
    /// Max over samples of `‖[T⁻¹ dT/dt, J]‖_max`.
    pub commutator_residual: f64,
    /// Max `‖T⁻¹A_D T - J‖_max` when `A_D(λ)` is supplied.
    pub jordan_residual: Option<f64>,
    pub stats: OdeStats,
}

/// Integrates `dT/dt = (Σ_j 𝒟_j λ̇_j)T` and certifies `[T⁻¹dT, J] = 0`.
pub fn t_flow(
    t0: &CMat,
    j: &CMat,
    path: &DeformationPath,
    dspec: &DSpec,
    a_d: Option<&dyn Fn(&[C64]) -> CMat>,
    ode_opts: &OdeOptions,
) -> Result<TFlowResult> {
    let n = t0.nrows();
    let mut y: Vec<C64> = t0.iter().copied().collect();
    let mut ts = vec![0.0];
    let mut tmats = vec![t0.clone()];
    let mut stats = OdeStats::default();
    for seg in 0..path.segments() {
        let vel = path.velocity(seg);
        let base = seg as f64;
        let dmat = |t: f64| -> CMat {
            let lam = path.point(base + t);
            let mut d = linalg::zeros(n, n);
            if let Ok(Some(ds)) = dspec.eval(&lam) {
                for (dj, v) in ds.iter().zip(&vel) {
                    d += dj * *v;
                }
            }
            d
        };
        let rhs = |t: f64, y: &[C64], dy: &mut [C64]| {
            let tm = CMat::from_column_slice(n, n, y);
            dy.copy_from_slice((dmat(t) * tm).as_slice());
        };
        let (out, st) = ode::integrate(rhs, 0.0, 1.0, &y, ode_opts, |t, y| {
            ts.push(base + t);
            tmats.push(CMat::from_column_slice(n, n, y));
        })?;
        y = out;
        stats.absorb(&st);
    }
    let mut comm: f64 = 0.0;
    let mut jres: Option<f64> = None;
    for (t, tm) in ts.iter().zip(&tmats) {
        let seg = (t.floor() as usize).min(path.segments() - 1);
        let vel = path.velocity(seg);
        let lam = path.point(*t);
        let mut d = linalg::zeros(n, n);
        if let Some(ds) = dspec.eval(&lam)? {
            for (dj, v) in ds.iter().zip(&vel) {
                d += dj * *v;
            }
        }
        let ti = linalg::inverse(tm)?;
        comm = comm.max(max_abs(&linalg::commutator(&(&ti * d * tm), j)));
        if let Some(f) = a_d {
            let r = max_abs(&(&ti * f(&lam) * tm - j));
            jres = Some(jres.unwrap_or(0.0).max(r));
        }
    }
    Ok(TFlowResult {
        ts,
        tmats,
        commutator_residual: comm,
        jordan_residual: jres,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosureReport {
    pub closure_error: f64,
    pub relative: f64,
}

/// Flows around a closed path and compares the end point with the start.
pub fn loop_closure(a0: &CMat, part: &BlockPartition, path: &DeformationPath, dspec: &DSpec, opts: &FlowOptions) -> Result<ClosureReport> {
    let first = &path.waypoints[0];
    let last = path.waypoints.last().unwrap();
    if first.iter().zip(last).any(|(a, b)| (a - b).norm() > 1e-14) {
        return Err(Error::Invalid("loop path must end where it starts".into()));
    }
    let mut o = opts.clone();
    o.record_steps = false;
    let fr = integrate_flow(a0, part, path, dspec, &o)?;
    let e = max_abs(&(&fr.last().a - a0));
    Ok(ClosureReport {
        closure_error: e,
        relative: e / max_abs(a0).max(f64::MIN_POSITIVE),
    })
}
