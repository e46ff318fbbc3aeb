//! The system specification document and its presets.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use stratum::blocks::{BlockPartition, JordanizationResult, Lambda};
use stratum::caustic::{self, CausticModel, MetricPoly, OffBlocks};
use stratum::flow::{DSpec, DeformationPath};
use stratum::linalg::{self, CMat};
use stratum::pfaffian::CoalescedSystem;
use stratum::showcase::{self, OmegaState, ThreeDExample};
use stratum::tolerances::Tolerances;

use crate::CliError;

pub type Pair = [f64; 2];
pub type MatrixSpec = Vec<Vec<Pair>>;

pub const PRESETS: [&str; 3] = ["3d-example", "4d-omega", "caustic"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<Pair>>,
    #[serde(default, rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<MatrixSpec>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<MatrixSpec>,
    #[serde(default, rename = "J", skip_serializing_if = "Option::is_none")]
    pub j: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dspec: Option<DSpecSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
    /// Waypoints of the deformation path, each a list of `s` values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<Vec<Pair>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caustic: Option<CausticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DSpecSpec {
    Zero,
    /// Constant `𝒟_1, …, 𝒟_s`.
    Explicit { d: Vec<MatrixSpec> },
    /// `𝒟_j = ∂_jT·T⁻¹` from a built-in reducer: `3d-example` (analytic) or
    /// `3d-example-fd` (central differences with step `h`).
    TDerived {
        evaluator: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausticSpec {
    pub m: u32,
    pub n: usize,
    pub eta11: MetricPoly,
    pub eta12: MetricPoly,
    /// Defaults to `i(m-2)/(2m)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v12: Option<C64>,
    pub t1: C64,
    /// `u₃, …, u_n`.
    pub u: Vec<C64>,
    /// The `2 × (n-2)` block of `𝒱`.
    pub upper: MatrixSpec,
    /// Skew-symmetric `(n-2) × (n-2)` tail of `𝒱`.
    pub tail: MatrixSpec,
}

/// A validated specification.
pub struct Resolved {
    pub name: String,
    pub canonical: SystemSpec,
    pub system: CoalescedSystem,
    pub dspec: DSpec,
    pub tolerances: Tolerances,
    pub path: Option<DeformationPath>,
    pub reducer: Option<JordanizationResult>,
    pub three_d: Option<ThreeDExample>,
    pub caustic: Option<CausticData>,
}

pub struct CausticData {
    pub model: CausticModel,
    pub t1: C64,
    pub u: Vec<C64>,
    pub off: OffBlocks,
}

fn input(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("field `{field}`: {msg}"))
}

fn pairs(m: &CMat) -> MatrixSpec {
    linalg::to_pairs(m)
}

fn cplx(p: &Pair) -> C64 {
    C64::new(p[0], p[1])
}

fn matrix(field: &str, m: &MatrixSpec) -> Result<CMat, CliError> {
    if m.iter().flatten().flatten().any(|x| !x.is_finite()) {
        return Err(input(field, "entries must be finite"));
    }
    linalg::from_pairs(m).map_err(|e| input(field, e))
}

fn square(field: &str, m: &MatrixSpec, n: usize) -> Result<CMat, CliError> {
    let out = matrix(field, m)?;
    if out.nrows() != n || out.ncols() != n {
        return Err(input(field, format!("expected {n}×{n}, got {}×{}", out.nrows(), out.ncols())));
    }
    Ok(out)
}

fn values(field: &str, v: &[Pair]) -> Result<Vec<C64>, CliError> {
    if v.iter().flatten().any(|x| !x.is_finite()) {
        return Err(input(field, "entries must be finite"));
    }
    Ok(v.iter().map(cplx).collect())
}

fn segment_path(a: &[C64], b: &[C64]) -> Vec<Vec<Pair>> {
    [a, b].iter().map(|w| w.iter().map(|z| [z.re, z.im]).collect()).collect()
}

/// The default metric data of the caustic preset.
pub fn caustic_spec(m: u32, n: usize) -> CausticSpec {
    let k = n.saturating_sub(2);
    let std = CausticModel::standard(m.max(2), n.max(2)).expect("valid standard model");
    let upper = CMat::from_fn(2, k, |i, j| C64::new(0.4 - 0.7 * i as f64 + 0.1 * j as f64, 0.1 + 0.1 * (i + j) as f64));
    let tail = CMat::from_fn(k, k, |i, j| {
        let x = C64::new(0.25, 0.05 * (i + j) as f64);
        match i.cmp(&j) {
            std::cmp::Ordering::Less => x,
            std::cmp::Ordering::Greater => -C64::new(0.25, 0.05 * (i + j) as f64),
            std::cmp::Ordering::Equal => C64::new(0.0, 0.0),
        }
    });
    CausticSpec {
        m,
        n,
        eta11: std.eta11,
        eta12: std.eta12,
        v12: None,
        t1: C64::new(0.1, 0.05),
        u: (0..k).map(|j| C64::new(1.5 + j as f64, 0.2 - 0.3 * j as f64)).collect(),
        upper: pairs(&upper),
        tail: pairs(&tail),
    }
}

/// The fully expanded document of a preset.
pub fn preset(name: &str) -> Result<SystemSpec, CliError> {
    let tol = Tolerances {
        ode_rtol: 1e-12,
        ..Tolerances::default()
    };
    match name {
        "3d-example" => {
            let ex = ThreeDExample::standard();
            let one = C64::new(1.0, 0.0);
            let zero = C64::new(0.0, 0.0);
            Ok(SystemSpec {
                preset: Some(name.into()),
                partition: Some(vec![1, 2]),
                lambda: Some(vec![[1.0, 0.0], [0.0, 0.0]]),
                a: Some(pairs(&ex.closed_form(one).map_err(crate::commands::classify)?)),
                t: Some(pairs(&ex.t0())),
                j: Some(pairs(&ex.jordan())),
                dspec: Some(DSpecSpec::Zero),
                tolerances: Some(tol),
                path: Some(segment_path(&[one, zero], &[C64::new(2.0, 0.0), zero])),
                caustic: None,
            })
        }
        "4d-omega" => {
            let phi = four_d_phi();
            let a = showcase::skew_from_phi(&phi);
            let l = |x: f64| vec![C64::new(0.0, 0.0), C64::new(x, 0.0), C64::new(1.0, 0.0)];
            Ok(SystemSpec {
                preset: Some(name.into()),
                partition: Some(vec![2, 1, 1]),
                lambda: Some(l(0.5).iter().map(|z| [z.re, z.im]).collect()),
                a: Some(pairs(&a)),
                t: None,
                j: None,
                dspec: Some(DSpecSpec::Zero),
                tolerances: Some(tol),
                path: Some(segment_path(&l(0.5), &l(0.9))),
                caustic: None,
            })
        }
        "caustic" => Ok(SystemSpec {
            preset: Some(name.into()),
            tolerances: Some(tol),
            caustic: Some(caustic_spec(3, 3)),
            ..Default::default()
        }),
        other => Err(CliError::Input(format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")))),
    }
}

/// `φ` of the 4D preset at `x = 0.5`, on the invariant set `φ₁ = φ₂`,
/// `φ₃ = φ₄` where the flow maps onto the Ω-system.
pub fn four_d_phi() -> [C64; 5] {
    [
        C64::new(0.3, 0.1),
        C64::new(0.3, 0.1),
        C64::new(-0.2, 0.25),
        C64::new(-0.2, 0.25),
        C64::new(-0.35, 0.2),
    ]
}

/// `Σ Ω²` of the 4D flow for a skew-symmetric `A` at `λ₂ = x`.
pub fn omega_quadratic(a: &CMat, x: C64) -> C64 {
    OmegaState::from_phi_flow(&showcase::phi_from_skew(a), x).quadratic()
}

impl SystemSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("spec: {e}")))
    }

    /// Fields given here override those of the named preset.
    pub fn merged(&self) -> Result<SystemSpec, CliError> {
        let Some(name) = &self.preset else {
            return Ok(self.clone());
        };
        let base = preset(name)?;
        Ok(SystemSpec {
            preset: Some(name.clone()),
            partition: self.partition.clone().or(base.partition),
            lambda: self.lambda.clone().or(base.lambda),
            a: self.a.clone().or(base.a),
            t: self.t.clone().or(base.t),
            j: self.j.clone().or(base.j),
            dspec: self.dspec.clone().or(base.dspec),
            tolerances: self.tolerances.or(base.tolerances),
            path: self.path.clone().or(base.path),
            caustic: self.caustic.clone().or(base.caustic),
        })
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let spec = self.merged()?;
        let tolerances = spec.tolerances.unwrap_or_default();
        let name = spec.preset.clone().unwrap_or_else(|| "custom".into());

        let caustic = match &spec.caustic {
            Some(c) => Some(caustic_data(c)?),
            None => None,
        };
        let (system, reducer) = match (&spec.a, &caustic) {
            (Some(_), _) => explicit_system(&spec, &tolerances)?,
            (None, Some(cd)) => {
                let rs = caustic::caustic_restricted_system(&cd.model, cd.t1, &cd.u, &cd.off).map_err(|e| input("caustic", e))?;
                (rs.system, None)
            }
            (None, None) => return Err(input("A", "missing (give A or a preset)")),
        };
        let part = system.partition().clone();
        let s = part.s();
        let three_d = (spec.preset.as_deref() == Some("3d-example")).then(ThreeDExample::standard);

        let dspec = match spec.dspec.clone().unwrap_or(DSpecSpec::Zero) {
            DSpecSpec::Zero => DSpec::Zero,
            DSpecSpec::Explicit { d } => {
                if d.len() != s {
                    return Err(input("dspec.d", format!("expected {s} matrices, got {}", d.len())));
                }
                let mats = d
                    .iter()
                    .enumerate()
                    .map(|(k, m)| square(&format!("dspec.d[{k}]"), m, part.n()))
                    .collect::<Result<Vec<_>, _>>()?;
                for (k, m) in mats.iter().enumerate() {
                    if !part.is_block_diagonal(m, 0.0) {
                        return Err(input(&format!("dspec.d[{k}]"), "must be block-diagonal"));
                    }
                }
                DSpec::Constant(mats)
            }
            DSpecSpec::TDerived { evaluator, h } => {
                if part.sizes() != [1, 2] {
                    return Err(input("dspec.evaluator", "the built-in reducers need partition [1, 2]"));
                }
                let ex = ThreeDExample::standard();
                match evaluator.as_str() {
                    "3d-example" => ex.dspec_t_derived(),
                    "3d-example-fd" => {
                        let h = h.unwrap_or(1e-4);
                        if !(h > 0.0 && h.is_finite()) {
                            return Err(input("dspec.h", "must be positive"));
                        }
                        ex.dspec_from_t(h)
                    }
                    other => return Err(input("dspec.evaluator", format!("unknown evaluator `{other}`"))),
                }
            }
        };

        let path = match &spec.path {
            Some(w) => Some(path_from(w, s)?),
            None => None,
        };
        Ok(Resolved {
            name,
            canonical: spec,
            system,
            dspec,
            tolerances,
            path,
            reducer,
            three_d,
            caustic,
        })
    }
}

pub fn path_from(w: &[Vec<Pair>], s: usize) -> Result<DeformationPath, CliError> {
    let pts = w
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if p.len() != s {
                return Err(input(&format!("path[{k}]"), format!("expected {s} values, got {}", p.len())));
            }
            values(&format!("path[{k}]"), p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    DeformationPath::new(pts).map_err(|e| input("path", e))
}

fn explicit_system(spec: &SystemSpec, tol: &Tolerances) -> Result<(CoalescedSystem, Option<JordanizationResult>), CliError> {
    let sizes = spec.partition.as_ref().ok_or_else(|| input("partition", "missing"))?;
    let part = BlockPartition::new(sizes).map_err(|e| input("partition", e))?;
    let lam = values("lambda", spec.lambda.as_ref().ok_or_else(|| input("lambda", "missing"))?)?;
    if lam.len() != part.s() {
        return Err(input("lambda", format!("expected {} values, got {}", part.s(), lam.len())));
    }
    let lambda = Lambda::new(lam, part.clone(), tol.eig_sep_tol).map_err(|e| input("lambda", e))?;
    let a = square("A", spec.a.as_ref().expect("checked by caller"), part.n())?;
    let system = CoalescedSystem::new(lambda, a.clone()).map_err(|e| input("A", e))?;
    let reducer = match (&spec.t, &spec.j) {
        (Some(t), Some(j)) => {
            let t = square("T", t, part.n())?;
            let j = square("J", j, part.n())?;
            Some(JordanizationResult::from_explicit(&a, &part, t, j, &tol.jordan()).map_err(|e| input("T", e))?)
        }
        (None, None) => None,
        _ => return Err(input("T", "T and J must be given together")),
    };
    Ok((system, reducer))
}

fn caustic_data(c: &CausticSpec) -> Result<CausticData, CliError> {
    let v12 = c.v12.unwrap_or_else(|| caustic::v12_expected(c.m));
    let model = CausticModel::new(c.m, c.n, c.eta11.clone(), c.eta12.clone(), v12).map_err(|e| input("caustic", e))?;
    if c.u.len() + 2 != c.n {
        return Err(input("caustic.u", format!("expected {} values, got {}", c.n.saturating_sub(2), c.u.len())));
    }
    model.check_nondegenerate(c.t1, &c.u).map_err(|e| input("caustic.eta12", e))?;
    let k = c.n - 2;
    let upper = matrix("caustic.upper", &c.upper)?;
    let tail = matrix("caustic.tail", &c.tail)?;
    if upper.nrows() != 2 || upper.ncols() != k {
        return Err(input("caustic.upper", format!("expected 2×{k}")));
    }
    if tail.nrows() != k || tail.ncols() != k {
        return Err(input("caustic.tail", format!("expected {k}×{k}")));
    }
    Ok(CausticData {
        model,
        t1: c.t1,
        u: c.u.clone(),
        off: OffBlocks { upper, tail },
    })
}
