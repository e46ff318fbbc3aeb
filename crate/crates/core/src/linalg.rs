//! Dense complex matrix helpers on top of `nalgebra`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    CMat::zeros(r, c)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn diag(d: &[C64]) -> CMat {
    let n = d.len();
    let mut m = zeros(n, n);
    for (i, v) in d.iter().enumerate() {
        m[(i, i)] = *v;
    }
    m
}

/// Builds a matrix from row-major real/imag pairs.
pub fn from_rows(n: usize, m: usize, data: &[C64]) -> CMat {
    CMat::from_row_slice(n, m, data)
}

/// Largest entry modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Induced infinity norm (max row sum).
pub fn norm_inf(m: &CMat) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn inverse(m: &CMat) -> Result<CMat> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "inverse of {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("inverse".into()))?;
    if !is_finite(&inv) {
        return Err(Error::Singular("inverse".into()));
    }
    Ok(inv)
}

pub fn solve(a: &CMat, b: &CMat) -> Result<CMat> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("linear solve".into()))?;
    if !is_finite(&x) {
        return Err(Error::Singular("linear solve".into()));
    }
    Ok(x)
}

/// `exp(w * m)`.
pub fn exp_scaled(m: &CMat, w: C64) -> CMat {
    (m * w).exp()
}

/// `z^m = exp(m log z)` with `log z = ln|z| + i arg`, the argument supplied
/// explicitly so callers can stay on any sheet.
pub fn pow_matrix(m: &CMat, modulus: f64, arg: f64) -> CMat {
    exp_scaled(m, c(modulus.ln(), arg))
}

/// Eigenvalues via complex Schur decomposition, unsorted.
pub fn eigenvalues(m: &CMat) -> Result<Vec<C64>> {
    if m.nrows() == 0 {
        return Ok(vec![]);
    }
    if !is_finite(m) {
        return Err(Error::NonFinite("eigenvalue input".into()));
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 20_000)
        .ok_or(Error::EigenSolver)?;
    let ev = schur.eigenvalues().ok_or(Error::EigenSolver)?;
    let v: Vec<C64> = ev.iter().copied().collect();
    if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigenSolver);
    }
    Ok(v)
}

/// Lexicographic order on (re, im).
pub fn lex_cmp(a: &C64, b: &C64) -> std::cmp::Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Numerical rank: singular values above `tol`.
pub fn rank(m: &CMat, tol: f64) -> usize {
    singular_values(m).iter().filter(|s| **s > tol).count()
}

/// 2-norm condition number.
pub fn cond(m: &CMat) -> f64 {
    let s = singular_values(m);
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Orthonormal basis of the right null space (columns), using singular
/// values below `tol`.
pub fn null_space(m: &CMat, tol: f64) -> CMat {
    let n = m.ncols();
    let r = m.nrows();
    // pad to square so the SVD returns a full V
    let mut sq = zeros(n.max(r), n);
    sq.view_mut((0, 0), (r, n)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let sv = &svd.singular_values;
    let cols: Vec<usize> = (0..n).filter(|&k| sv[k] <= tol).collect();
    let mut out = zeros(n, cols.len());
    for (j, &k) in cols.iter().enumerate() {
        for i in 0..n {
            out[(i, j)] = vt[(k, i)].conj();
        }
    }
    out
}

/// Solves `A X - X B = C` through the Kronecker form.
pub fn solve_sylvester(a: &CMat, b: &CMat, cm: &CMat) -> Result<CMat> {
    let p = a.nrows();
    let q = b.nrows();
    if cm.nrows() != p || cm.ncols() != q {
        return Err(Error::Dimension("sylvester right-hand side".into()));
    }
    if p == 0 || q == 0 {
        return Ok(zeros(p, q));
    }
    // column-major vec: vec(AX) = (I_q kron A) vec X, vec(XB) = (B^T kron I_p) vec X
    let mut k = zeros(p * q, p * q);
    for j in 0..q {
        for i in 0..p {
            let row = j * p + i;
            for l in 0..p {
                k[(row, j * p + l)] += a[(i, l)];
            }
            for l in 0..q {
                k[(row, l * p + i)] -= b[(l, j)];
            }
        }
    }
    let rhs = CMat::from_iterator(p * q, 1, cm.iter().copied());
    let x = solve(&k, &rhs)?;
    Ok(CMat::from_iterator(p, q, x.iter().copied()))
}

/// Hausdorff distance between two finite point sets in the plane.
pub fn hausdorff(a: &[C64], b: &[C64]) -> f64 {
    let d = |x: &C64, set: &[C64]| set.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min);
    let ab = a.iter().map(|x| d(x, b)).fold(0.0, f64::max);
    let ba = b.iter().map(|x| d(x, a)).fold(0.0, f64::max);
    if a.is_empty() && b.is_empty() {
        0.0
    } else {
        ab.max(ba)
    }
}

/// Block-diagonal direct sum.
pub fn direct_sum(blocks: &[CMat]) -> CMat {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = zeros(n, n);
    let mut o = 0;
    for b in blocks {
        out.view_mut((o, o), (b.nrows(), b.ncols())).copy_from(b);
        o += b.nrows();
    }
    out
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_2pi(x: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let r = x.rem_euclid(t);
    if r >= t {
        0.0
    } else {
        r
    }
}

/// Rows of `[re, im]` pairs: the JSON layout of matrices.
pub fn to_pairs(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn from_pairs(rows: &[Vec<[f64; 2]>]) -> Result<CMat> {
    let n = rows.len();
    let m = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(CMat::from_fn(n, m, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

/// `serialize_with` adapter for matrices in the pairs layout.
pub mod pairs {
    use serde::{Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &super::CMat, s: S) -> Result<S::Ok, S::Error> {
        super::to_pairs(m).serialize(s)
    }
}

/// `serialize_with` adapter for optional matrices.
pub mod opt_pairs {
    use serde::{Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<super::CMat>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(super::to_pairs).serialize(s)
    }
}

/// Complex vectors as `[re, im]` pairs.
pub mod vec_pairs {
    use serde::{Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[super::C64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sylvester_roundtrip() {
        let a = from_rows(2, 2, &[cr(1.0), c(0.0, 2.0), cr(0.5), cr(3.0)]);
        let b = from_rows(1, 1, &[cr(-1.0)]);
        let x0 = from_rows(2, 1, &[c(1.0, 1.0), cr(2.0)]);
        let cm = &a * &x0 - &x0 * &b;
        let x = solve_sylvester(&a, &b, &cm).unwrap();
        assert!(max_abs(&(x - x0)) < 1e-13);
    }

    #[test]
    fn null_space_of_nilpotent() {
        let m = from_rows(2, 2, &[cr(0.0), cr(1.0), cr(0.0), cr(0.0)]);
        let ns = null_space(&m, 1e-12);
        assert_eq!(ns.ncols(), 1);
        assert!(max_abs(&(&m * &ns)) < 1e-14);
    }

    #[test]
    fn complex_eigenvalues() {
        let m = from_rows(2, 2, &[cr(0.0), cr(-1.0), cr(1.0), cr(0.0)]);
        let mut ev = eigenvalues(&m).unwrap();
        ev.sort_by(lex_cmp);
        assert!((ev[0] - c(0.0, -1.0)).norm() < 1e-14);
        assert!((ev[1] - c(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-2.5)).collect();
        assert!((loglog_slope(&x, &y) + 2.5).abs() < 1e-12);
    }
}
