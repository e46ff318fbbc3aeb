use std::time::Instant;

use stratum::flow::{integrate_flow, DSpec, DeformationPath, FlowOptions};
use stratum::linalg::{self, c, cr, max_abs, CMat};
use stratum::ode::OdeOptions;
use stratum::showcase::*;

fn path_3d(x0: f64, x1: f64) -> DeformationPath {
    DeformationPath::segment(vec![cr(x0), cr(0.0)], vec![cr(x1), cr(0.0)]).unwrap()
}

fn rel(a: &CMat, b: &CMat) -> f64 {
    max_abs(&(a - b)) / max_abs(b)
}

#[test]
fn closed_form_reproduced_by_flow() {
    let ex = ThreeDExample::standard();
    let a1 = ex.closed_form(cr(1.0)).unwrap();
    let start = Instant::now();
    let fr = integrate_flow(&a1, &ThreeDExample::partition(), &path_3d(1.0, 2.0), &DSpec::Zero, &FlowOptions::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let want = ex.closed_form(cr(2.0)).unwrap();
    assert!((want[(0, 1)] - cr(2f64.sqrt())).norm() < 1e-15);
    assert!((want[(1, 0)] - cr(1.0 / 2f64.sqrt())).norm() < 1e-15);
    let e = rel(&fr.last().a, &want);
    assert!(e < 1e-8, "rel {e:e}");
    assert!(elapsed < 1.0);
    assert!(fr.monitors.spectrum_drift < 1e-9);
    assert!(fr.monitors.diag_block_drift < 1e-10);
    assert!(!fr.monitors.flagged);
}

#[test]
fn closed_form_complex_path_and_constants() {
    let ex = ThreeDExample::new(c(0.7, 0.2), c(-0.3, 0.5), [c(0.2, 0.1), c(-0.4, 0.3), c(1.0, 0.0), c(0.1, -0.6)]).unwrap();
    let a = ex.closed_form(c(1.0, 0.2)).unwrap();
    let p = DeformationPath::new(vec![
        vec![c(1.0, 0.2), cr(0.0)],
        vec![c(1.5, 0.8), cr(0.0)],
        vec![c(0.8, 1.1), cr(0.0)],
    ])
    .unwrap();
    let fr = integrate_flow(&a, &ThreeDExample::partition(), &p, &DSpec::Zero, &FlowOptions::default()).unwrap();
    let e = rel(&fr.last().a, &ex.closed_form(c(0.8, 1.1)).unwrap());
    assert!(e < 1e-9, "rel {e:e}");
}

#[test]
fn constant_a_with_variable_reducer() {
    let ex = ThreeDExample::standard();
    let a = ex.closed_form(cr(1.0)).unwrap();
    for x in [0.7, 1.3] {
        let omega = CMat::from_fn(3, 3, |i, j| if (i == 0) != (j == 0) { a[(i, j)] / cr(x) } else { cr(0.0) });
        let r = linalg::commutator(&(omega + ex.dt_t_inv(cr(x)).unwrap()), &a);
        assert!(max_abs(&r) < 1e-11);
    }
    let mut opts = FlowOptions::default();
    opts.reducer = Some(ex.reducer(cr(1.0)).unwrap());
    let fr = integrate_flow(&a, &ThreeDExample::partition(), &path_3d(1.0, 1.8), &ex.dspec_t_derived(), &opts).unwrap();
    assert!(max_abs(&(&fr.last().a - &a)) < 1e-10);
    assert!(rel(&fr.last().tmat, &ex.t_of_x(cr(1.8)).unwrap()) < 1e-9);
    assert!(fr.monitors.reducer_drift < 1e-9);
    let fd = integrate_flow(&a, &ThreeDExample::partition(), &path_3d(1.0, 1.8), &ex.dspec_from_t(1e-4), &opts).unwrap();
    assert!(max_abs(&(&fd.last().a - &a)) < 1e-7);
}

#[test]
fn gauge_form_equals_closed_form() {
    let ex = ThreeDExample::standard();
    for x in [0.5, 1.0, 2.0, 3.7] {
        let g = ex.gauge_form(cr(x)).unwrap();
        assert!(rel(&g, &ex.closed_form(cr(x)).unwrap()) < 1e-13);
    }
}

#[test]
fn omega_conservation_and_fixed_point() {
    let opts = OdeOptions::with_tol(1e-12);
    let s = OmegaState {
        omega: [cr(0.3), cr(0.2), cr(0.1)],
        x: cr(0.5),
    };
    let f = integrate_omega(&s, cr(0.9), &opts).unwrap();
    assert!(f.quadratic_drift < 1e-10);
    assert!((f.end.quadratic() - s.quadratic()).norm() < 1e-10);
    let fp = OmegaState {
        omega: [cr(0.0), cr(0.0), c(0.4, 0.1)],
        x: cr(0.5),
    };
    assert_eq!(pvi_rhs(&fp).unwrap(), [cr(0.0); 3]);
    let g = integrate_omega(&fp, cr(0.9), &opts).unwrap();
    for k in 0..3 {
        assert!((g.end.omega[k] - fp.omega[k]).norm() < 1e-13);
    }
}

#[test]
fn skew_flow_embeds_into_omega_system() {
    let opts = OdeOptions::with_tol(1e-12);
    let phi = [c(0.3, 0.1), c(0.3, 0.1), c(-0.2, 0.2), c(-0.2, 0.2), c(0.5, -0.1)];
    let a0 = skew_from_phi(&phi);
    let (a1, _) = integrate_reduced_4d(&a0, cr(0.3), c(0.6, 0.2), &opts).unwrap();
    let phi1 = phi_from_skew(&a1);
    assert!(max_abs(&(&a1 + a1.transpose())) < 1e-13);
    assert!((phi1[0] - phi1[1]).norm() < 1e-13 && (phi1[2] - phi1[3]).norm() < 1e-13);
    let s0 = OmegaState::from_phi_flow(&phi, cr(0.3));
    let direct = integrate_omega(&s0, c(0.6, 0.2), &opts).unwrap();
    let mapped = OmegaState::from_phi_flow(&phi1, c(0.6, 0.2));
    for k in 0..3 {
        assert!((mapped.omega[k] - direct.end.omega[k]).norm() < 1e-9);
    }
    let bad0 = OmegaState::from_phi(&phi, cr(0.3));
    let bad = integrate_omega(&bad0, c(0.6, 0.2), &opts).unwrap();
    let bad_mapped = OmegaState::from_phi(&phi1, c(0.6, 0.2));
    assert!((0..3).any(|k| (bad_mapped.omega[k] - bad.end.omega[k]).norm() > 1e-4));
}

#[test]
fn full_flow_matches_reduced_flow() {
    let a0 = CMat::from_fn(4, 4, |i, j| {
        if (i < 2 && j < 2) || i == j {
            cr(0.0)
        } else {
            c(0.1 * (1 + i + 2 * j) as f64, 0.05 * (i as f64 - j as f64))
        }
    });
    let p = DeformationPath::segment(vec![cr(0.0), cr(0.3), cr(1.0)], vec![cr(0.0), c(0.6, 0.1), cr(1.0)]).unwrap();
    let fr = integrate_flow(&a0, &partition_4d(), &p, &DSpec::Zero, &FlowOptions::default()).unwrap();
    let (red, _) = integrate_reduced_4d(&a0, cr(0.3), c(0.6, 0.1), &OdeOptions::with_tol(1e-12)).unwrap();
    assert!(max_abs(&(&fr.last().a - &red)) < 1e-10);
}

#[test]
fn flow_at_fixed_cross_ratio_is_trivial() {
    let a0 = skew_from_phi(&[c(0.3, 0.1), c(0.3, 0.1), c(-0.2, 0.2), c(-0.2, 0.2), c(0.5, -0.1)]);
    let l0 = [cr(0.2), c(0.5, 0.1), cr(1.3)];
    let shift = DeformationPath::segment(l0.to_vec(), l0.iter().map(|l| l + c(0.4, -0.3)).collect()).unwrap();
    let scale = DeformationPath::segment(l0.to_vec(), l0.iter().map(|l| l * c(1.6, 0.4)).collect()).unwrap();
    for p in [shift, scale] {
        let fr = integrate_flow(&a0, &partition_4d(), &p, &DSpec::Zero, &FlowOptions::default()).unwrap();
        assert!(max_abs(&(&fr.last().a - &a0)) < 1e-9);
    }
}
