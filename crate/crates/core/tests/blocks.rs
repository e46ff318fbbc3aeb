mod common;

use proptest::prelude::*;
use stratum::blocks::*;
use stratum::linalg::{self, c, cr, max_abs, CMat, C64};
use stratum::showcase::ThreeDExample;

#[test]
fn top_right_block() {
    let m = CMat::from_fn(3, 3, |i, j| cr((3 * i + j) as f64));
    let p = BlockPartition::new(&[1, 2]).unwrap();
    let b = get_block(&m, &p, 0, 1).unwrap();
    assert_eq!(b, linalg::from_rows(1, 2, &[cr(1.0), cr(2.0)]));
    assert!(get_block(&m, &p, 2, 0).is_err());
}

#[test]
fn identity_diagonal_blocks() {
    let p = BlockPartition::new(&[2, 1, 3]).unwrap();
    let e = linalg::eye(6);
    for a in 0..3 {
        assert_eq!(get_block(&e, &p, a, a).unwrap(), linalg::eye(p.size(a)));
    }
}

#[test]
fn invalid_partitions() {
    assert!(BlockPartition::new(&[]).is_err());
    assert!(BlockPartition::new(&[2, 0]).is_err());
}

#[test]
fn spectrum_clusters_close_eigenvalues() {
    let m = linalg::diag(&[cr(1.0), cr(1.0 + 1e-14), cr(2.0)]);
    let sp = spectrum(&m, 1e-10).unwrap();
    assert_eq!(sp.len(), 2);
    assert!((sp[0].0 - cr(1.0)).norm() < 1e-13 && sp[0].1 == 2);
    assert!((sp[1].0 - cr(2.0)).norm() < 1e-13 && sp[1].1 == 1);
}

#[test]
fn nilpotent_spectrum_and_jordan() {
    let m = linalg::from_rows(2, 2, &[cr(0.0), cr(1.0), cr(0.0), cr(0.0)]);
    let sp = spectrum(&m, 1e-10).unwrap();
    assert_eq!(sp.len(), 1);
    assert_eq!(sp[0].1, 2);
    let p = BlockPartition::new(&[2]).unwrap();
    let r = jordanize_diag_blocks(&m, &p, &JordanTolerances::default()).unwrap();
    assert_eq!(r.jordan_block_sizes, vec![vec![2]]);
    assert!(r.mu().iter().all(|m| m.norm() < 1e-12));
}

#[test]
fn three_d_spectrum_is_constant() {
    let ex = ThreeDExample::standard();
    let s1 = spectrum(&ex.closed_form(cr(1.0)).unwrap(), 1e-8).unwrap();
    let s2 = spectrum(&ex.closed_form(cr(2.0)).unwrap(), 1e-8).unwrap();
    assert_eq!(s1.len(), s2.len());
    for (a, b) in s1.iter().zip(&s2) {
        assert!((a.0 - b.0).norm() < 1e-12 && a.1 == b.1);
    }
}

#[test]
fn diagonal_blocks_give_scaled_identity_reducer() {
    let p = BlockPartition::new(&[2, 1]).unwrap();
    let a = linalg::from_rows(3, 3, &[c(0.3, 0.1), cr(0.0), cr(0.7), cr(0.0), cr(-0.4), cr(0.2), cr(0.5), cr(0.1), cr(0.9)]);
    let r = jordanize_diag_blocks(&a, &p, &JordanTolerances::default()).unwrap();
    assert!(p.is_block_diagonal(&r.t, 0.0));
    // columns are scaled unit vectors, ordered lexicographically by eigenvalue
    for j in 0..3 {
        assert_eq!((0..3).filter(|&i| r.t[(i, j)].norm() > 1e-14).count(), 1);
    }
    assert!(linalg::hausdorff(&r.mu(), &[c(0.3, 0.1), cr(-0.4), cr(0.9)]) < 1e-14);
}

#[test]
fn three_d_block_matches_particular_reducer() {
    let ex = ThreeDExample::standard();
    let rho = ex.rho();
    let a = ex.closed_form(cr(1.0)).unwrap();
    let p = ThreeDExample::partition();
    let r = jordanize_diag_blocks(&a, &p, &JordanTolerances::default()).unwrap();
    assert!(linalg::hausdorff(&r.mu()[1..], &[rho, -rho]) < 1e-12);
    let tp = ex.t0_particular();
    // each computed column is proportional to the particular column with the same eigenvalue
    for k in 1..3 {
        let mu = r.j[(k, k)];
        let col = (1..3).find(|&q| (ex.jordan()[(q, q)] - mu).norm() < 1e-10).unwrap();
        let u = r.t.column(k).into_owned();
        let v = tp.column(col).into_owned();
        let ratio = u[1] / v[1];
        assert!((u[2] - ratio * v[2]).norm() < 1e-12);
    }
    let rep = detect_resonances(&r, 1e-7);
    assert_eq!(rep.partial.len(), 1);
    assert_eq!(rep.partial[0].ell, 1);
}

#[test]
fn resonance_examples() {
    let p = BlockPartition::new(&[2]).unwrap();
    let tol = JordanTolerances::default();
    let r = jordanize_diag_blocks(&linalg::diag(&[cr(0.3), c(0.3, 1.0)]), &p, &tol).unwrap();
    assert!(detect_resonances(&r, 1e-7).partial.is_empty());
    let r = jordanize_diag_blocks(&linalg::diag(&[cr(0.0), cr(1.0)]), &p, &tol).unwrap();
    let rep = detect_resonances(&r, 1e-7);
    assert_eq!(rep.partial.len(), 1);
    assert_eq!(rep.partial[0].ell, 1);
    assert_eq!(global_resonances(&[cr(2.0), cr(0.0), c(0.5, 0.1)], 1e-7), vec![(0, 1, 2)]);
}

#[test]
fn lambda_separation_enforced() {
    let p = BlockPartition::new(&[1, 1]).unwrap();
    assert!(Lambda::new(vec![cr(1.0), cr(1.0 + 1e-12)], p.clone(), 1e-10).is_err());
    assert!(Lambda::new(vec![cr(1.0), cr(2.0)], p, 1e-10).is_ok());
}

proptest! {
    #[test]
    fn block_round_trip(seed in 0u64..10_000, n in 1usize..7) {
        let mut g = common::rng(seed);
        let m = common::cmat(&mut g, n, n);
        let p = common::partition(&mut g, n);
        let mut out = linalg::zeros(n, n);
        for a in 0..p.s() {
            for b in 0..p.s() {
                set_block(&mut out, &p, a, b, &get_block(&m, &p, a, b).unwrap()).unwrap();
            }
        }
        prop_assert_eq!(out, m);
    }

    #[test]
    fn spectrum_permutation_invariant(seed in 0u64..10_000, n in 1usize..7) {
        let mut g = common::rng(seed);
        let m = common::cmat(&mut g, n, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(seed as usize % n);
        let pm = CMat::from_fn(n, n, |i, j| m[(perm[i], perm[j])]);
        let a = spectrum(&m, 1e-8).unwrap();
        let b = spectrum(&pm, 1e-8).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.0 - y.0).norm() < 1e-9);
            prop_assert_eq!(x.1, y.1);
        }
    }

    #[test]
    fn clustering_monotone(vals in proptest::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 1..10), t1 in 1e-6..0.5f64, t2 in 1e-6..0.5f64) {
        let ev: Vec<C64> = vals.iter().map(|&(a, b)| c(a, b)).collect();
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(cluster(ev.clone(), hi).len() <= cluster(ev, lo).len());
    }

    #[test]
    fn jordanize_reconstructs(seed in 0u64..10_000, n in 1usize..7) {
        let mut g = common::rng(seed);
        let m = common::cmat(&mut g, n, n);
        let p = common::partition(&mut g, n);
        let r = jordanize_diag_blocks(&m, &p, &JordanTolerances::default()).unwrap();
        let ad = p.block_diagonal(&m);
        let res = max_abs(&(linalg::inverse(&r.t).unwrap() * &ad * &r.t - &r.j));
        prop_assert!(res <= 1e-10 * linalg::norm_inf(&ad).max(1.0));
        prop_assert!(p.is_block_diagonal(&r.t, 0.0));
    }

    #[test]
    fn exponent_split_is_idempotent(re in -5.0..5.0f64, im in -5.0..5.0f64) {
        let (d, rho) = stratum::levelt::levelt_exponents(&[c(re, im)]);
        prop_assert!(rho[0].re >= 0.0 && rho[0].re < 1.0);
        let (d2, rho2) = stratum::levelt::levelt_exponents(&rho);
        prop_assert_eq!(d2[0], 0);
        prop_assert_eq!(rho2[0], rho[0]);
        prop_assert!((cr(d[0] as f64) + rho[0] - c(re, im)).norm() < 1e-12);
    }
}
