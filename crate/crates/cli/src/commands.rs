//! The subcommands. Each returns a report and, for `flow`, a CSV trajectory.

use std::time::Instant;

use num_complex::Complex64 as C64;
use serde_json::json;
use stratum::blocks::Lambda;
use stratum::caustic::{self, vring_scan};
use stratum::flow::{integrate_flow, DSpec, DeformationPath, FlowOptions, FlowResult};
use stratum::linalg::{self, max_abs};
use stratum::monodromy::{verify_strong_isomonodromy, MonodromyOptions};
use stratum::ode::OdeOptions;
use stratum::pfaffian::{build_form, check_linear_constraints, curl_residual, CoalescedSystem, PfaffianForm};

use crate::report::{digest, Check, Inputs, Report};
use crate::spec::{self, CausticData, Pair, Resolved};
use crate::CliError;

/// Options shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Integrator relative tolerance; overrides `tolerances.ode_rtol`.
    pub tol: Option<f64>,
    /// Series truncation for the monodromy data.
    pub k: Option<usize>,
    pub samples: usize,
    /// Path waypoints overriding those of the spec.
    pub path: Option<Vec<Vec<Pair>>>,
    /// Finite-difference step of the curl check.
    pub h: f64,
}

pub struct Output {
    pub report: Report,
    pub csv: Option<String>,
}

/// Structural failures are input errors, the rest are numerical.
pub fn classify(e: stratum::Error) -> CliError {
    use stratum::Error as E;
    match e {
        E::BlockIndex { .. } | E::Dimension(_) | E::Partition(_) | E::Stratum { .. } | E::Invalid(_) => CliError::Input(e.to_string()),
        _ => CliError::Numerical(e.to_string()),
    }
}

fn inputs(command: &str, source: &str, res: &Resolved, opts: &Options) -> Inputs {
    let doc = serde_json::to_string(&res.canonical).expect("spec serializes");
    let o = format!("{:?}|{:?}|{}|{:?}|{:e}", opts.tol, opts.k, opts.samples, opts.path, opts.h);
    Inputs {
        source: source.into(),
        digest: digest(&[command, &doc, &o]),
    }
}

fn rtol(res: &Resolved, opts: &Options) -> f64 {
    opts.tol.unwrap_or(res.tolerances.ode_rtol)
}

fn path_of(res: &Resolved, opts: &Options) -> Result<DeformationPath, CliError> {
    match &opts.path {
        Some(w) => spec::path_from(w, res.system.s()),
        None => res.path.clone().ok_or_else(|| CliError::Input("field `path`: missing (give it in the spec or with --path)".into())),
    }
}

fn flow_options(res: &Resolved, opts: &Options) -> FlowOptions {
    FlowOptions {
        ode: OdeOptions::with_tol(rtol(res, opts)),
        monitor_fail: res.tolerances.monitor_fail,
        tol: res.tolerances,
        reducer: res.reducer.clone(),
        ..FlowOptions::default()
    }
}

fn with_d(sys: CoalescedSystem, dspec: &DSpec) -> stratum::Result<CoalescedSystem> {
    match dspec.eval(&sys.lambda.values)? {
        Some(d) => sys.with_dblocks(d),
        None => Ok(sys),
    }
}

pub fn check(res: &Resolved, source: &str, opts: &Options) -> Result<Output, CliError> {
    let start = Instant::now();
    let sys0 = with_d(res.system.clone(), &res.dspec).map_err(classify)?;
    let form = build_form(&sys0).map_err(classify)?;
    let cons = check_linear_constraints(&form, res.tolerances.constraint_tol);

    // A(λ) near λ₀ by flowing along the straight segment
    let part = res.system.partition().clone();
    let l0 = res.system.lambda.values.clone();
    let fopts = FlowOptions {
        record_steps: false,
        ..flow_options(res, opts)
    };
    let field = |l: &[C64]| -> stratum::Result<PfaffianForm> {
        let a = if l == l0.as_slice() {
            res.system.a.clone()
        } else {
            let p = DeformationPath::segment(l0.clone(), l.to_vec())?;
            integrate_flow(&res.system.a, &part, &p, &res.dspec, &fopts)?.last().a.clone()
        };
        let sys = CoalescedSystem::new(Lambda::new(l.to_vec(), part.clone(), 0.0)?, a)?;
        build_form(&with_d(sys, &res.dspec)?)
    };
    let curl = curl_residual(field, &l0, opts.h).map_err(classify)?;

    // an identity holds when its residual is O(h²) or already at roundoff
    let exact = 1e-9;
    let identity = |name: &str, at_half: f64, ratio: f64| {
        if at_half <= exact {
            Check::within(name, at_half, exact)
        } else {
            Check::within(name, (ratio - 4.0).abs(), 0.5).with_note(format!("|Richardson ratio - 4|; residual at h/2 {at_half:.3e}"))
        }
    };
    let checks = vec![
        Check::within("linear_constraints", cons.max_relative, cons.tol),
        identity("curl.lambda_lambda", curl.at_half_h.lambda_curl, curl.lambda_ratio),
        identity("curl.d_blocks", curl.at_half_h.d_curl, curl.d_ratio),
        identity("curl.z_lambda", curl.at_half_h.z_lambda_curl, curl.z_lambda_ratio),
    ];
    let details = json!({
        "preset": res.name,
        "partition": part.sizes(),
        "dspec": res.dspec.kind(),
        "constraints": cons,
        "curl": curl,
    });
    Ok(Output {
        report: Report::new("check", inputs("check", source, res, opts), checks, details, start.elapsed().as_secs_f64()),
        csv: None,
    })
}

/// Per-sample drift columns of a flow.
struct Trajectory {
    spectrum: Vec<f64>,
    diag: Vec<f64>,
    delta: Vec<f64>,
}

fn trajectory(fr: &FlowResult) -> Result<Trajectory, CliError> {
    let a0 = &fr.samples[0].a;
    let mu0 = linalg::eigenvalues(a0).map_err(classify)?;
    let d0 = fr.partition.block_diagonal(a0);
    let mut t = Trajectory {
        spectrum: vec![],
        diag: vec![],
        delta: vec![],
    };
    for s in &fr.samples {
        let mu = linalg::eigenvalues(&s.a).map_err(classify)?;
        t.spectrum.push(linalg::hausdorff(&mu, &mu0));
        t.diag.push(max_abs(&(fr.partition.block_diagonal(&s.a) - &d0)));
        t.delta.push(max_abs(&(&s.a - a0)));
    }
    Ok(t)
}

fn csv_of(fr: &FlowResult, tr: &Trajectory) -> Result<String, CliError> {
    let n = fr.partition.n();
    let s = fr.partition.s();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["t".to_string()];
    for k in 1..=s {
        head.push(format!("lambda{k}_re"));
        head.push(format!("lambda{k}_im"));
    }
    for i in 1..=n {
        for j in 1..=n {
            head.push(format!("a{i}_{j}_re"));
            head.push(format!("a{i}_{j}_im"));
        }
    }
    head.extend(["spectrum_drift", "diag_block_drift", "delta_a"].map(String::from));
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(&head).map_err(io)?;
    let f = |x: f64| format!("{x:.16e}");
    for (k, smp) in fr.samples.iter().enumerate() {
        let mut row = vec![f(smp.t)];
        for l in &smp.lambda {
            row.push(f(l.re));
            row.push(f(l.im));
        }
        for i in 0..n {
            for j in 0..n {
                row.push(f(smp.a[(i, j)].re));
                row.push(f(smp.a[(i, j)].im));
            }
        }
        row.extend([f(tr.spectrum[k]), f(tr.diag[k]), f(tr.delta[k])]);
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

fn run_flow(res: &Resolved, opts: &Options) -> Result<FlowResult, CliError> {
    let path = path_of(res, opts)?;
    integrate_flow(&res.system.a, res.system.partition(), &path, &res.dspec, &flow_options(res, opts)).map_err(classify)
}

pub fn flow(res: &Resolved, source: &str, opts: &Options) -> Result<Output, CliError> {
    let start = Instant::now();
    let fr = run_flow(res, opts)?;
    let tr = trajectory(&fr)?;
    let r = rtol(res, opts);
    let mut checks = vec![
        Check::within("spectrum_drift", fr.monitors.spectrum_drift, (10.0 * r).max(1e-9)),
        Check::within("monitors_unflagged", f64::from(u8::from(fr.monitors.flagged)), 0.0),
    ];
    if res.dspec.is_zero() {
        checks.push(Check::within("diag_block_drift", fr.monitors.diag_block_drift, (10.0 * r).max(1e-10)));
    } else {
        checks.push(Check::within("reducer_drift", fr.monitors.reducer_drift, res.tolerances.monitor_fail));
    }
    let last = fr.last();
    let mut extra = serde_json::Map::new();
    if let (Some(ex), true) = (res.three_d, res.dspec.is_zero()) {
        let x = last.lambda[0] - last.lambda[1];
        let want = ex.closed_form(x).map_err(classify)?;
        let rel = max_abs(&(&last.a - &want)) / max_abs(&want);
        checks.push(Check::within("closed_form_relative", rel, 1e-8));
    }
    if res.name == "4d-omega" && res.dspec.is_zero() {
        let q0 = spec::omega_quadratic(&fr.samples[0].a, fr.samples[0].lambda[1]);
        let drift = fr
            .samples
            .iter()
            .map(|s| (spec::omega_quadratic(&s.a, s.lambda[1]) - q0).norm())
            .fold(0.0, f64::max);
        checks.push(Check::within("omega_quadratic_drift", drift, 1e-9));
        extra.insert("omega_quadratic".into(), json!([q0.re, q0.im]));
    }
    let closed = fr.path.waypoints.first() == fr.path.waypoints.last() && fr.path.segments() > 1;
    if closed {
        checks.push(Check::within("loop_closure", *tr.delta.last().unwrap(), 1e-8));
    }
    let details = json!({
        "preset": res.name,
        "dspec": res.dspec.kind(),
        "samples": fr.samples.len(),
        "final_lambda": last.lambda.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "final_A": linalg::to_pairs(&last.a),
        "monitors": fr.monitors,
        "max_delta_a": tr.delta.iter().copied().fold(0.0, f64::max),
        "integrator": fr.stats,
        "rtol": fr.rtol,
        "extra": extra,
    });
    let csv = csv_of(&fr, &tr)?;
    Ok(Output {
        report: Report::new("flow", inputs("flow", source, res, opts), checks, details, start.elapsed().as_secs_f64()),
        csv: Some(csv),
    })
}

pub fn monodromy(res: &Resolved, source: &str, opts: &Options, frozen: bool) -> Result<Output, CliError> {
    let start = Instant::now();
    let fr = if frozen {
        FlowResult::frozen(res.system.a.clone(), res.system.partition().clone(), path_of(res, opts)?, &res.tolerances).map_err(classify)?
    } else {
        run_flow(res, opts)?
    };
    let mo = MonodromyOptions {
        k: opts.k.unwrap_or(8),
        tol: res.tolerances,
        ode: OdeOptions::with_tol(rtol(res, opts)),
        ..MonodromyOptions::default()
    };
    let audit = verify_strong_isomonodromy(&fr, opts.samples.max(2), &mo).map_err(classify)?;
    let mut checks: Vec<Check> = audit
        .items
        .iter()
        .map(|it| {
            let c = Check::within(&it.name, it.deviation.unwrap_or(f64::NAN), it.budget).forced(it.pass);
            match &it.error {
                Some(e) => c.with_note(e.clone()),
                None => c,
            }
        })
        .collect();
    checks.push(Check::within("audit", 0.0, 0.0).forced(audit.pass));
    let per_sample: Vec<_> = audit
        .data
        .iter()
        .map(|d| {
            json!({
                "lambda": d.lambda.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
                "zero": d.zero.as_ref().map(|z| json!({"m0_residual": z.m0_residual, "spectrum_residual": z.spectrum_residual})).unwrap_or_else(|e| json!({"error": e})),
                "stokes": d.stokes.as_ref().map(|s| json!({"S0": linalg::to_pairs(&s.s0), "S1": linalg::to_pairs(&s.s1), "unipotency": s.unipotency, "eps_total": s.eps_total})).unwrap_or_else(|e| json!({"error": e})),
                "connection": d.connection.as_ref().map(|c| json!({"C0": linalg::to_pairs(&c.c0), "relation_residual": c.relation_residual, "cyclic_residual": c.cyclic_residual})).unwrap_or_else(|e| json!({"error": e})),
            })
        })
        .collect();
    let details = json!({
        "preset": res.name,
        "frozen": frozen,
        "tau": audit.tau,
        "sample_t": audit.sample_t,
        "d_jumps": audit.d_jumps,
        "samples": per_sample,
    });
    Ok(Output {
        report: Report::new("monodromy", inputs("monodromy", source, res, opts), checks, details, start.elapsed().as_secs_f64()),
        csv: None,
    })
}

/// Candidates of the scan: the expected value, two neighbours and zero.
pub fn scan_candidates(m: u32) -> Vec<C64> {
    let v = caustic::v12_expected(m);
    let mut c = vec![v, v + 0.05, v - 0.05];
    if v.norm() > 0.0 {
        c.push(C64::new(0.0, 0.0));
    }
    c
}

pub fn caustic_cmd(res: &Resolved, source: &str, opts: &Options, scan: bool) -> Result<Output, CliError> {
    let start = Instant::now();
    let CausticData { model, t1, u, off } = res.caustic.as_ref().ok_or_else(|| CliError::Input("field `caustic`: missing".into()))?;
    let i = C64::new(0.0, 1.0);
    let lim = caustic::caustic_v11_limit(model, *t1, u).map_err(classify)?;
    let eig = linalg::eigenvalues(&lim).map_err(classify)?;
    let want = [i * model.v12, -i * model.v12];
    let mut checks = vec![Check::within("v11_eigenvalues", linalg::hausdorff(&eig, &want), 1e-12)];
    let mut psi_worst: f64 = 0.0;
    for t2 in [1e-3, 1e-2, 1e-1] {
        let p = caustic::caustic_psi(model, *t1, C64::new(t2, 0.0), u).map_err(classify)?;
        psi_worst = psi_worst.max(p.gram_residual).max(p.diag_residual);
    }
    checks.push(Check::within("psi_certificates", psi_worst, 1e-10));
    let rs = caustic::caustic_restricted_system(model, *t1, u, off).map_err(classify)?;
    checks.push(Check::within("omega_limit", rs.omega_limit_residual, 1e-8));
    checks.push(Check::within("restricted_constraints", rs.constraints.max_relative, rs.constraints.tol));
    let expected = caustic::v12_expected(model.m);
    let mut scan_json = serde_json::Value::Null;
    if scan {
        let grid: Vec<f64> = (0..=25).map(|k| 10f64.powf(-1.0 - 0.2 * k as f64)).collect();
        let cands = scan_candidates(model.m);
        let entries = vring_scan(model, *t1, u, off, &cands, &grid).map_err(classify)?;
        let wrong = entries
            .iter()
            .zip(&cands)
            .filter(|(e, c)| e.bounded != ((**c - expected).norm() < 1e-14))
            .count();
        checks.push(
            Check::within("scan_bounded_exactly_at_expected", wrong as f64, 0.0)
                .with_note(format!("expected V̊₁₂ = {:+.6}i", expected.im)),
        );
        scan_json = serde_json::to_value(&entries).expect("scan serializes");
    }
    let details = json!({
        "m": model.m,
        "n": model.n,
        "v12_model": [model.v12.re, model.v12.im],
        "v12_expected": [expected.re, expected.im],
        "v11_limit": linalg::to_pairs(&lim),
        "v11_eigenvalues": eig.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "omega_limit_residual": rs.omega_limit_residual,
        "scan": scan_json,
    });
    Ok(Output {
        report: Report::new("caustic", inputs("caustic", source, res, opts), checks, details, start.elapsed().as_secs_f64()),
        csv: None,
    })
}
