mod common;

use proptest::prelude::*;
use stratum::blocks::{BlockPartition, Lambda};
use stratum::error::Error;
use stratum::levelt::*;
use stratum::linalg::{self, c, cr, from_rows, max_abs, CMat, C64};
use stratum::ode::{self, OdeOptions};
use stratum::pfaffian::CoalescedSystem;
use stratum::showcase::ThreeDExample;

fn sys(lam: Vec<C64>, sizes: &[usize], a: CMat) -> CoalescedSystem {
    let p = BlockPartition::new(sizes).unwrap();
    CoalescedSystem::new(Lambda::new(lam, p, 1e-10).unwrap(), a).unwrap()
}

fn opts(k: usize) -> LeveltOptions {
    LeveltOptions { k, ..Default::default() }
}

/// Solves `Y' = M(t, Y)` for an `n × n` matrix state from `t0` to `t1`.
fn propagate(n: usize, y0: &CMat, t0: f64, t1: f64, rhs: impl Fn(f64, &CMat) -> CMat) -> CMat {
    let o = OdeOptions::with_tol(1e-12);
    let (y, _) = ode::integrate(
        |t, y: &[C64], dy: &mut [C64]| {
            let m = CMat::from_column_slice(n, n, y);
            dy.copy_from_slice(rhs(t, &m).as_slice());
        },
        t0,
        t1,
        y0.as_slice(),
        &o,
        |_, _| {},
    )
    .unwrap();
    CMat::from_column_slice(n, n, &y)
}

#[test]
fn exponent_split_examples() {
    let (d, r) = levelt_exponents(&[cr(2.5), c(-0.25, 1.0), cr(3.0)]);
    assert_eq!(d, vec![2, -1, 3]);
    assert_eq!(r[0], cr(0.5));
    assert_eq!(r[1], c(0.75, 1.0));
    assert_eq!(r[2], cr(0.0));
}

#[test]
fn euler_system_is_exact() {
    let a = from_rows(2, 2, &[cr(0.3), cr(1.0), cr(0.0), cr(-0.2)]);
    let s = sys(vec![cr(0.0)], &[2], a.clone());
    let l = levelt_series(&s, &LeveltOptions::default()).unwrap();
    assert!(l.f.iter().skip(1).all(|f| max_abs(f) == 0.0));
    // Y = G z^J G⁻¹ conjugates to z^A
    let z = c(0.7, 0.4);
    let y = l.evaluate(z).unwrap() * &l.g0_inv;
    let want = linalg::exp_scaled(&a, z.ln());
    assert!(max_abs(&(y - want)) < 1e-13);
}

#[test]
fn non_resonant_has_no_r() {
    let a = from_rows(3, 3, &[c(0.2, 0.1), cr(0.5), cr(-0.3), cr(0.4), c(-0.6, 0.2), cr(0.1), cr(0.2), cr(0.3), c(1.3, -0.4)]);
    let s = sys(vec![cr(0.0), cr(1.0), c(0.2, 0.9)], &[1, 1, 1], a);
    let l = levelt_series(&s, &LeveltOptions::default()).unwrap();
    assert_eq!(max_abs(&l.r0), 0.0);
    assert!(max_abs(&(&l.l0 - &l.s0)) == 0.0);
    let off = CMat::from_fn(3, 3, |i, j| if i == j { cr(0.0) } else { l.l0[(i, j)] });
    assert_eq!(max_abs(&off), 0.0);
    assert_eq!(l.proper.n.iter().map(|x| x.norm()).fold(0.0, f64::max), 0.0);
}

#[test]
fn truncation_slope_k6() {
    let mut rng = common::rng(11);
    for _ in 0..5 {
        let lam = common::lambda_values(&mut rng, 3);
        let a = common::cmat(&mut rng, 3, 3);
        let s = sys(lam, &[1, 1, 1], a);
        let l = levelt_series(&s, &opts(6)).unwrap();
        assert!(l.certificate.slope >= 5.5, "{:?}", l.certificate);
    }
}

#[test]
fn truncation_slope_k8_three_d() {
    let ex = ThreeDExample::standard();
    for x in [1.0, 2.0] {
        let l = levelt_series(&ex.system(cr(x)).unwrap(), &opts(8)).unwrap();
        assert!(l.certificate.slope >= 7.5, "{:?}", l.certificate);
    }
}

#[test]
fn series_solves_the_system() {
    let mut rng = common::rng(5);
    let s = common::system(&mut rng, 4);
    let l = levelt_series(&s, &LeveltOptions::default()).unwrap();
    let lam = s.lambda.matrix();
    // radial propagation from r = 0.2 to r = 0.9 on a fixed ray
    let th = 0.6;
    let e = C64::from_polar(1.0, th);
    let y0 = l.evaluate_polar(0.2, th);
    let y1 = propagate(4, &y0, 0.2, 0.9, |r, y| (&lam * e + &s.a * C64::new(1.0 / r, 0.0)) * y);
    let want = l.evaluate_polar(0.9, th);
    assert!(max_abs(&(&y1 - &want)) / max_abs(&want) < 1e-9);
}

#[test]
fn loop_monodromy_is_exp_l() {
    let mut rng = common::rng(9);
    for resonant in [false, true] {
        let (s, l) = if resonant {
            let a = from_rows(2, 2, &[cr(1.0), cr(-1.0), cr(0.0), cr(0.0)]);
            let s = sys(vec![cr(0.0), cr(1.0)], &[1, 1], a);
            let l = levelt_series(&s, &LeveltOptions::default()).unwrap();
            assert!(max_abs(&l.r0) > 0.0);
            (s, l)
        } else {
            let s = common::system(&mut rng, 3);
            let l = levelt_series(&s, &LeveltOptions::default()).unwrap();
            (s, l)
        };
        let n = s.n();
        let lam = s.lambda.matrix();
        let r = 0.3;
        let th0 = 0.2;
        let y0 = l.evaluate_polar(r, th0);
        // dY/dθ = iz(Λ + A/z)Y around |z| = r
        let y1 = propagate(n, &y0, th0, th0 + 2.0 * std::f64::consts::PI, |th, y| {
            let z = C64::from_polar(r, th);
            (&lam * (linalg::I * z) + &s.a * linalg::I) * y
        });
        let want = &y0 * l.monodromy_exact();
        assert!(max_abs(&(&y1 - &want)) / max_abs(&want) < 1e-8, "resonant {resonant}");
    }
}

#[test]
fn resonant_gap_two() {
    // μ = (2, 0)
    let a = from_rows(2, 2, &[cr(2.0), cr(0.7), cr(0.0), cr(0.0)]);
    let s = sys(vec![cr(0.0), c(0.5, 1.0)], &[1, 1], a);
    let l = levelt_series(&s, &LeveltOptions::default()).unwrap();
    assert_eq!(max_abs(&l.r_terms[1]), 0.0);
    let r2 = &l.r_terms[2];
    let (i, j) = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).find(|&(i, j)| r2[(i, j)].norm() > 0.0).unwrap();
    assert!((l.mu[i] - l.mu[j] - cr(2.0)).norm() < 1e-8);
    assert!(l.certificate.slope >= 11.5, "{:?}", l.certificate);
    assert!(max_abs(&linalg::commutator(&l.proper.sigma, &l.proper.n)) == 0.0);
}

#[test]
fn jordan_resonance_is_unsupported() {
    let z = cr(0.0);
    let o = cr(1.0);
    let a = from_rows(3, 3, &[z, o, z, z, z, z, z, z, o]);
    let s = sys(vec![cr(0.0), cr(1.0), c(0.0, 1.0)], &[1, 1, 1], a);
    match levelt_series(&s, &LeveltOptions::default()) {
        Err(Error::UnsupportedResonance(msg)) => assert!(msg.contains('μ')),
        other => panic!("expected unsupported resonance, got {:?}", other.map(|d| d.mu)),
    }
}

#[test]
fn proper_form_diagonal_l() {
    let l = linalg::diag(&[cr(0.25), c(0.5, 0.1)]);
    let p = proper_levelt(&[3, -1], &[cr(0.25), c(0.5, 0.1)], &l, 1e-12).unwrap();
    assert_eq!(p.permutation, vec![0, 1]);
    assert_eq!(max_abs(&p.n), 0.0);
    assert!(max_abs(&(&p.delta - linalg::diag(&[cr(3.25), c(-0.5, 0.1)]))) < 1e-15);
}

#[test]
fn proper_form_resonant_pair() {
    let l = from_rows(2, 2, &[cr(0.5), cr(0.7), cr(0.0), cr(0.5)]);
    let p = proper_levelt(&[1, 0], &[cr(0.5), cr(0.5)], &l, 1e-12).unwrap();
    assert!(max_abs(&(&p.delta - linalg::diag(&[cr(1.5), cr(0.5)]))) < 1e-15);
    assert!(max_abs(&(&p.n - from_rows(2, 2, &[cr(0.0), cr(0.7), cr(0.0), cr(0.0)]))) < 1e-15);
    assert_eq!(max_abs(&linalg::commutator(&p.sigma, &p.n)), 0.0);
}

#[test]
fn proper_form_orders_integer_parts() {
    let l = linalg::diag(&[cr(0.5), cr(0.0), cr(0.5)]);
    let p = proper_levelt(&[0, 2, 3], &[cr(0.5), cr(0.0), cr(0.5)], &l, 1e-12).unwrap();
    // equal ρ grouped, integer parts non-increasing inside a group
    assert_eq!(p.permutation, vec![1, 2, 0]);
}

#[test]
fn proper_form_rejects_cross_coupling() {
    let l = from_rows(2, 2, &[cr(0.5), cr(0.3), cr(0.0), cr(0.25)]);
    assert!(proper_levelt(&[0, 0], &[cr(0.5), cr(0.25)], &l, 1e-12).is_err());
}

#[test]
fn commuting_power_is_exponential() {
    let delta = linalg::diag(&[cr(1.5), cr(1.5), cr(0.25)]);
    let nmat = from_rows(3, 3, &[cr(0.0), c(0.4, 0.2), cr(0.0), cr(0.0), cr(0.0), cr(0.0), cr(0.0), cr(0.0), cr(0.0)]);
    assert_eq!(max_abs(&linalg::commutator(&delta, &nmat)), 0.0);
    let e = std::f64::consts::E;
    let lhs = linalg::pow_matrix(&delta, e, 0.0) * linalg::pow_matrix(&nmat, e, 0.0);
    let want = linalg::exp_scaled(&(&delta + &nmat), cr(1.0));
    assert!(max_abs(&(lhs - want)) < 1e-14);
}

#[test]
fn factored_power_solves_ode() {
    // z^D z^L solves Y' = ((D + z^D L z^{-D})/z) Y for non-commuting D, L
    let d = linalg::diag(&[cr(1.0), cr(0.0), cr(-2.0)]);
    let l = from_rows(3, 3, &[cr(0.3), cr(0.5), cr(0.0), cr(0.2), c(-0.1, 0.2), cr(0.4), cr(0.0), cr(0.1), cr(0.25)]);
    assert!(max_abs(&linalg::commutator(&d, &l)) > 0.1);
    let e = std::f64::consts::E;
    let y = propagate(3, &linalg::eye(3), 1.0, e, |t, y| {
        let zd = linalg::pow_matrix(&d, t, 0.0);
        let zdi = linalg::pow_matrix(&(-&d), t, 0.0);
        (&d + zd * &l * zdi) * C64::new(1.0 / t, 0.0) * y
    });
    let want = linalg::exp_scaled(&d, cr(1.0)) * linalg::exp_scaled(&l, cr(1.0));
    assert!(max_abs(&(&y - &want)) / max_abs(&want) < 1e-10);
}

proptest! {
    #[test]
    fn split_is_unique_and_idempotent(re in -20.0f64..20.0, im in -5.0f64..5.0) {
        let mu = c(re, im);
        let (d, r) = levelt_exponents(&[mu]);
        prop_assert!(r[0].re >= 0.0 && r[0].re < 1.0);
        prop_assert!((cr(d[0] as f64) + r[0] - mu).norm() < 1e-14);
        let (d2, r2) = levelt_exponents(&r);
        prop_assert_eq!(d2[0], 0);
        prop_assert_eq!(r2[0], r[0]);
    }
}
