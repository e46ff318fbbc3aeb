use stratum::blocks::{BlockPartition, Lambda};
use stratum::flow::{integrate_flow, DSpec, DeformationPath, FlowOptions, FlowResult};
use stratum::linalg::{self, c, cr, max_abs, CMat, C64};
use stratum::monodromy::*;
use stratum::pfaffian::CoalescedSystem;
use stratum::showcase::ThreeDExample;
use stratum::tolerances::Tolerances;

fn path_3d() -> DeformationPath {
    DeformationPath::segment(vec![cr(1.0), cr(0.0)], vec![cr(2.0), cr(0.0)]).unwrap()
}

fn report(a: &IsomonodromyAudit) -> String {
    a.items
        .iter()
        .map(|i| format!("{}: {:?} {:?}", i.name, i.deviation, i.error))
        .collect::<Vec<_>>()
        .join("; ")
}

#[test]
fn three_d_flow_is_strongly_isomonodromic() {
    let ex = ThreeDExample::standard();
    let a = ex.closed_form(cr(1.0)).unwrap();
    let fr = integrate_flow(&a, &ThreeDExample::partition(), &path_3d(), &DSpec::Zero, &FlowOptions::default()).unwrap();
    let audit = verify_strong_isomonodromy(&fr, 3, &MonodromyOptions::default()).unwrap();
    assert_eq!(audit.data.len(), 3);
    assert!(audit.pass, "{}", report(&audit));
    for d in &audit.data {
        let z = d.zero.as_ref().unwrap();
        assert!(z.spectrum_residual < 1e-8);
        let cn = d.connection.as_ref().unwrap();
        assert!(cn.cyclic_residual < 1e-6, "{}", cn.cyclic_residual);
        assert!(cn.relation_residual < 1e-6);
    }
}

#[test]
fn frozen_control_fails() {
    let part = ThreeDExample::partition();
    let a = linalg::from_rows(
        3,
        3,
        &[c(0.1, 0.2), c(0.5, -0.3), c(0.2, 0.4), c(-0.3, 0.1), c(0.25, 0.0), c(0.6, 0.1), c(0.4, -0.2), c(0.1, 0.3), c(-0.35, 0.15)],
    );
    let fr = FlowResult::frozen(a.clone(), part.clone(), path_3d(), &Tolerances::default()).unwrap();
    let audit = verify_strong_isomonodromy(&fr, 3, &MonodromyOptions::default()).unwrap();
    assert!(!audit.pass);
    let s0 = audit.item("S0").unwrap();
    let c0 = audit.item("C0").unwrap();
    assert!(!s0.pass || !c0.pass, "{}", report(&audit));
    // the same A transported by the flow passes
    let fr = integrate_flow(&a, &part, &path_3d(), &DSpec::Zero, &FlowOptions::default()).unwrap();
    let audit = verify_strong_isomonodromy(&fr, 3, &MonodromyOptions::default()).unwrap();
    assert!(audit.pass, "{}", report(&audit));
}

#[test]
fn block_diagonal_is_trivial() {
    let part = BlockPartition::new(&[1, 2]).unwrap();
    let a = linalg::from_rows(3, 3, &[cr(0.3), cr(0.0), cr(0.0), cr(0.0), cr(0.1), cr(0.5), cr(0.0), cr(0.2), c(-0.4, 0.1)]);
    let p = DeformationPath::segment(vec![cr(1.0), cr(0.0)], vec![c(1.5, 0.5), cr(0.0)]).unwrap();
    let fr = FlowResult::frozen(a, part, p, &Tolerances::default()).unwrap();
    let audit = verify_strong_isomonodromy(&fr, 3, &MonodromyOptions::default()).unwrap();
    assert!(audit.pass, "{}", report(&audit));
    for d in &audit.data {
        let st = d.stokes.as_ref().unwrap();
        assert!(max_abs(&(&st.s0 - linalg::eye(3))) < 1e-8);
        assert!(max_abs(&(&st.s1 - linalg::eye(3))) < 1e-8);
    }
}

#[test]
fn monodromy_spectrum_matches_exponents() {
    let ex = ThreeDExample::standard();
    for x in [1.0, 1.7] {
        let sys = ex.system(cr(x)).unwrap();
        let opts = MonodromyOptions::default();
        let tau = admissible_tau(&sys, &opts).unwrap();
        let md = monodromy_data(&sys, tau, &Normalization { levelt_basis: None, reducer: None }, &opts);
        let z = md.zero.unwrap();
        let mu = linalg::eigenvalues(&sys.a).unwrap();
        let want: Vec<C64> = mu.iter().map(|m| (C64::new(0.0, 2.0 * std::f64::consts::PI) * m).exp()).collect();
        assert!(linalg::hausdorff(&linalg::eigenvalues(&z.m0).unwrap(), &want) < 1e-8);
    }
}

#[test]
fn stokes_robust_under_tau_perturbation() {
    let p = BlockPartition::new(&[1, 1]).unwrap();
    let l = Lambda::new(vec![cr(0.0), c(1.0, 0.3)], p, 1e-10).unwrap();
    let a = linalg::from_rows(2, 2, &[c(0.2, 0.1), c(0.6, -0.1), c(-0.5, 0.4), c(-0.1, 0.2)]);
    let sys = CoalescedSystem::new(l, a).unwrap();
    let nm = Normalization { levelt_basis: None, reducer: None };
    let base = MonodromyOptions::default();
    let tau = admissible_tau(&sys, &base).unwrap();
    let get = |t: f64| -> CMat {
        let md = monodromy_data(&sys, t, &nm, &base);
        let st = md.stokes.unwrap();
        &st.s0 + &st.s1
    };
    let s = get(tau);
    let s_pert = get(tau + 0.2);
    assert!(max_abs(&(&s - &s_pert)) < 1e-6);
}
