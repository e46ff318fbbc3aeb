mod common;

use proptest::prelude::*;
use stratum::blocks::{BlockPartition, Lambda};
use stratum::levelt::{levelt_series, levelt_series_with_basis, phi_term, LeveltOptions};
use stratum::linalg::{self, c, cr, max_abs, CMat, C64};
use stratum::pfaffian::*;
use stratum::showcase::ThreeDExample;

fn three_d_form(l: &[C64]) -> stratum::Result<PfaffianForm> {
    let ex = ThreeDExample::standard();
    let a = ex.closed_form(l[0] - l[1])?;
    build_form(&CoalescedSystem::new(Lambda::new(l.to_vec(), ThreeDExample::partition(), 1e-10)?, a)?)
}

#[test]
fn three_d_omegas() {
    let ex = ThreeDExample::standard();
    let x = cr(1.3);
    let sys = ex.system(x).unwrap();
    let om = build_omega(&sys).unwrap();
    let a = &sys.a;
    let want = CMat::from_fn(3, 3, |i, j| if (i == 0) != (j == 0) { a[(i, j)] / x } else { cr(0.0) });
    assert!(max_abs(&(&om[0] - &want)) < 1e-15);
    assert!(max_abs(&(&om[1] + &want)) < 1e-15);
}

#[test]
fn single_block_gives_zero_omega() {
    let p = BlockPartition::new(&[3]).unwrap();
    let mut g = common::rng(1);
    let sys = CoalescedSystem::new(Lambda::new(vec![cr(0.5)], p, 1e-10).unwrap(), common::cmat(&mut g, 3, 3)).unwrap();
    let om = build_omega(&sys).unwrap();
    assert_eq!(om.len(), 1);
    assert_eq!(max_abs(&om[0]), 0.0);
}

#[test]
fn random_four_by_four_identities() {
    let mut g = common::rng(7);
    let p = BlockPartition::new(&[2, 1, 1]).unwrap();
    let sys = CoalescedSystem::new(Lambda::new(vec![cr(0.0), c(1.0, 0.5), c(-0.7, 1.2)], p.clone(), 1e-10).unwrap(), common::cmat(&mut g, 4, 4)).unwrap();
    let form = build_form(&sys).unwrap();
    let sum = form.omegas.iter().fold(linalg::zeros(4, 4), |acc, w| acc + w);
    assert_eq!(max_abs(&sum), 0.0);
    let lam = sys.lambda.matrix();
    for (w, e) in form.omegas.iter().zip(&form.e_projectors) {
        let r = linalg::commutator(&lam, w) - linalg::commutator(e, &sys.a);
        assert!(max_abs(&r) < 1e-14);
        for a in 0..3 {
            assert_eq!(max_abs(&stratum::blocks::get_block(w, &p, a, a).unwrap()), 0.0);
        }
    }
}

#[test]
fn oneform_assembly() {
    let ex = ThreeDExample::standard();
    let sys = ex.system(cr(1.0)).unwrap();
    let form = build_form(&sys).unwrap();
    let d0 = assemble_oneform(&form, cr(1.0), 0).unwrap();
    assert_eq!(d0, sys.lambda.matrix() + &sys.a);
    assert_eq!(assemble_oneform(&form, cr(0.0), 1).unwrap(), form.omega_tildes[0]);
    assert!(assemble_oneform(&form, cr(0.0), 0).is_err());
    assert!(assemble_oneform(&form, cr(1.0), 3).is_err());
    // hand assembly: 2E₁ + ω₁ with E₁ = diag(1, 0, 0)
    let a = &sys.a;
    let mut want = CMat::from_fn(3, 3, |i, j| if (i == 0) != (j == 0) { a[(i, j)] } else { cr(0.0) });
    want[(0, 0)] = cr(2.0);
    assert!(max_abs(&(assemble_oneform(&form, cr(2.0), 1).unwrap() - want)) < 1e-15);
}

#[test]
fn block_diagonal_a_has_zero_residuals() {
    let p = BlockPartition::new(&[1, 2]).unwrap();
    let a = linalg::from_rows(3, 3, &[cr(0.3), cr(0.0), cr(0.0), cr(0.0), cr(0.1), cr(0.5), cr(0.0), cr(0.2), c(-0.4, 0.1)]);
    let sys = CoalescedSystem::new(Lambda::new(vec![cr(0.0), cr(1.0)], p, 1e-10).unwrap(), a).unwrap();
    let form = build_form(&sys).unwrap();
    let rep = check_linear_constraints(&form, 1e-12);
    assert_eq!(rep.lambda_commutator, 0.0);
    assert_eq!(rep.projector_symmetry, 0.0);
    assert!(form.omegas.iter().all(|w| max_abs(w) == 0.0));
    let field = |l: &[C64]| build_form(&CoalescedSystem::new(Lambda::new(l.to_vec(), BlockPartition::new(&[1, 2]).unwrap(), 1e-10)?, sys.a.clone())?);
    let curl = curl_residual(field, &[cr(0.0), cr(1.0)], 1e-3).unwrap();
    assert_eq!(curl.at_h.total, 0.0);
}

#[test]
fn curl_on_three_d_flow_converges_quadratically() {
    let l0 = [cr(1.0), cr(0.0)];
    let coarse = curl_residual(three_d_form, &l0, 1e-2).unwrap();
    assert!((3.5..=4.5).contains(&coarse.richardson_ratio), "ratio {}", coarse.richardson_ratio);
    let fine = curl_residual(three_d_form, &l0, 1e-5).unwrap();
    assert!(fine.at_h.total <= 1e-7, "{:e}", fine.at_h.total);
    // s = 2 and translation invariance: the λλ curl vanishes identically
    assert!(coarse.at_h.lambda_curl < 1e-12);
}

#[test]
fn curl_detects_inconsistent_d() {
    let ex = ThreeDExample::standard();
    let d1 = ThreeDExample::partition().block_diagonal(&linalg::from_rows(3, 3, &[cr(0.0), cr(0.0), cr(0.0), cr(0.0), cr(0.3), cr(1.0), cr(0.0), cr(0.2), cr(-0.1)]));
    let d2 = ThreeDExample::partition().block_diagonal(&linalg::from_rows(3, 3, &[cr(0.0), cr(0.0), cr(0.0), cr(0.0), cr(0.5), cr(-0.4), cr(0.7), cr(0.0), cr(0.1)]));
    let field = |l: &[C64]| -> stratum::Result<PfaffianForm> {
        let a = ex.closed_form(l[0] - l[1])?;
        let sys = CoalescedSystem::new(Lambda::new(l.to_vec(), ThreeDExample::partition(), 1e-10)?, a)?.with_dblocks(vec![d1.clone(), d2.clone()])?;
        build_form(&sys)
    };
    let curl = curl_residual(field, &[cr(1.0), cr(0.0)], 1e-4).unwrap();
    let want = max_abs(&linalg::commutator(&d1, &d2));
    assert!((curl.at_h.d_curl - want).abs() < 1e-10 && want > 0.1);
}

/// Block-diagonal polynomial `T(λ)` for partition (2, 1, 1).
fn t_poly(l: &[C64]) -> CMat {
    let mut t = linalg::eye(4);
    t[(0, 0)] = cr(1.0) + l[0] * l[1];
    t[(0, 1)] = l[2];
    t[(1, 0)] = l[0] * l[0];
    t[(1, 1)] = cr(2.0) + l[1] * l[2];
    t
}

fn t_poly_d(l: &[C64]) -> Vec<CMat> {
    let z = cr(0.0);
    let m = |a: C64, b: C64, cc: C64, d: C64| {
        let mut x = linalg::zeros(4, 4);
        x[(0, 0)] = a;
        x[(0, 1)] = b;
        x[(1, 0)] = cc;
        x[(1, 1)] = d;
        x
    };
    let ti = linalg::inverse(&t_poly(l)).unwrap();
    vec![
        m(l[1], z, l[0] * 2.0, z) * &ti,
        m(l[0], z, z, l[2]) * &ti,
        m(z, cr(1.0), z, l[1]) * &ti,
    ]
}

#[test]
fn t_derived_d_has_vanishing_d_curl() {
    let mut g = common::rng(3);
    let a = common::cmat(&mut g, 4, 4);
    let p = BlockPartition::new(&[2, 1, 1]).unwrap();
    let field = |l: &[C64]| -> stratum::Result<PfaffianForm> {
        let sys = CoalescedSystem::new(Lambda::new(l.to_vec(), p.clone(), 1e-10)?, a.clone())?.with_dblocks(t_poly_d(l))?;
        build_form(&sys)
    };
    let l0 = [c(0.2, 0.1), c(1.1, -0.3), c(-0.6, 0.8)];
    let coarse = curl_residual(field, &l0, 1e-2).unwrap();
    let fine = curl_residual(field, &l0, 1e-4).unwrap();
    assert!(fine.at_h.d_curl < 1e-7, "{:e}", fine.at_h.d_curl);
    assert!((3.5..=4.5).contains(&coarse.d_ratio), "{}", coarse.d_ratio);
    // finite-difference 𝒟 agrees with the analytic one
    let fd = dblocks_from_t(|l| Ok(t_poly(l)), &l0, 1e-5).unwrap();
    for (x, y) in fd.iter().zip(t_poly_d(&l0)) {
        assert!(max_abs(&(x - y)) < 1e-9);
    }
}

#[test]
fn corrupted_omega_is_reported() {
    let ex = ThreeDExample::standard();
    let mut form = build_form(&ex.system(cr(1.0)).unwrap()).unwrap();
    form.omega_tildes[0][(0, 1)] = cr(0.0);
    let rep = check_linear_constraints(&form, 1e-12);
    assert!(!rep.pass);
    assert!(rep.lambda_commutator > 0.1);
}

#[test]
fn pole_shift_at_origin_reduces_to_plain_form() {
    let mut g = common::rng(11);
    let p = BlockPartition::new(&[2, 1]).unwrap();
    let a = common::cmat(&mut g, 3, 3) * cr(0.4);
    let sys = CoalescedSystem::new(Lambda::new(vec![cr(0.0), c(1.0, 0.4)], p, 1e-10).unwrap(), a).unwrap();
    let opts = LeveltOptions::default();
    let ps = build_pole_shifted(&sys, cr(0.0), &opts).unwrap();
    let form = build_form(&sys).unwrap();
    let z = c(0.3, -0.2);
    assert!(max_abs(&(ps.dz(z).unwrap() - assemble_oneform(&form, z, 0).unwrap())) < 1e-15);
    for j in 0..2 {
        assert!(max_abs(&(ps.dlambda(j, z).unwrap() - assemble_oneform(&form, z, j + 1).unwrap())) < 1e-15);
    }
    let lev = levelt_series(&sys, &opts).unwrap();
    assert!(max_abs(&(&ps.phi - phi_term(&lev).unwrap())) < 1e-15);
    assert!(max_abs(&lev.r_terms[1]) == 0.0);
    // rescaling eigenvector columns leaves φ unchanged
    let kdiag = linalg::diag(&[c(2.0, 1.0), c(-0.5, 0.3), cr(3.0)]);
    let lev2 = levelt_series_with_basis(&sys, &lev.g0 * &kdiag, lev.j.clone(), &opts).unwrap();
    assert!(max_abs(&(phi_term(&lev2).unwrap() - &ps.phi)) < 1e-12);
    // shifted pole: the da coefficient is ω₀ - A/(z - a)
    let ps2 = build_pole_shifted(&sys, c(0.1, 0.1), &opts).unwrap();
    let w = z - c(0.1, 0.1);
    assert!(max_abs(&(ps2.da(z).unwrap() - (-sys.lambda.matrix() - &sys.a / w))) < 1e-14);
    assert!(ps2.dz(c(0.1, 0.1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn linear_constraints_on_random_systems(seed in 0u64..1_000_000, n in 2usize..=8, with_d in any::<bool>()) {
        let mut g = common::rng(seed);
        let mut sys = common::system(&mut g, n);
        if with_d {
            let d = common::dblocks(&mut g, sys.partition());
            sys = sys.with_dblocks(d).unwrap();
        }
        let form = build_form(&sys).unwrap();
        let rep = check_linear_constraints(&form, 1e-12);
        prop_assert!(rep.pass, "{:?}", rep);
        prop_assert!(rep.omega_bracket_diagonal <= 1e-13 * rep.scale.max(1.0));
    }
}
