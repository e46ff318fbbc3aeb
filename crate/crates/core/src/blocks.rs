//! Block partitions, block views, clustered spectra, Jordanization of the
//! diagonal blocks and resonance detection.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, cr, lex_cmp, CMat, C64};

/// Block sizes `(p_1, ..., p_s)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockPartition {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Partition("at least one block is required".into()));
        }
        if let Some(k) = sizes.iter().position(|&p| p == 0) {
            return Err(Error::Partition(format!("block {} has size 0", k + 1)));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut o = 0;
        for &p in sizes {
            offsets.push(o);
            o += p;
        }
        offsets.push(o);
        Ok(BlockPartition {
            sizes: sizes.to_vec(),
            offsets,
        })
    }

    /// One block per index (the generic, non-coalesced case).
    pub fn trivial(n: usize) -> Self {
        Self::new(&vec![1; n]).expect("n >= 1")
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn s(&self) -> usize {
        self.sizes.len()
    }

    pub fn n(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Zero-based index range of block `a` (zero-based).
    pub fn range(&self, a: usize) -> std::ops::Range<usize> {
        self.offsets[a]..self.offsets[a + 1]
    }

    pub fn offset(&self, a: usize) -> usize {
        self.offsets[a]
    }

    pub fn size(&self, a: usize) -> usize {
        self.sizes[a]
    }

    /// Block containing row `i`.
    pub fn block_of(&self, i: usize) -> usize {
        (0..self.s()).find(|&a| self.range(a).contains(&i)).expect("index within n")
    }

    fn check(&self, m: &CMat, a: usize, b: usize) -> Result<()> {
        if a >= self.s() || b >= self.s() {
            return Err(Error::BlockIndex { a, b, s: self.s() });
        }
        if m.nrows() != self.n() || m.ncols() != self.n() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, partition has n = {}",
                m.nrows(),
                m.ncols(),
                self.n()
            )));
        }
        Ok(())
    }

    /// The projector `E_{p_a}` onto block `a`.
    pub fn projector(&self, a: usize) -> CMat {
        let mut e = linalg::zeros(self.n(), self.n());
        for i in self.range(a) {
            e[(i, i)] = cr(1.0);
        }
        e
    }

    /// Block-diagonal part of `m`.
    pub fn block_diagonal(&self, m: &CMat) -> CMat {
        let mut out = linalg::zeros(self.n(), self.n());
        for a in 0..self.s() {
            let r = self.range(a);
            out.view_mut((r.start, r.start), (r.len(), r.len()))
                .copy_from(&m.view((r.start, r.start), (r.len(), r.len())));
        }
        out
    }

    /// Off-diagonal-block part of `m`.
    pub fn off_diagonal(&self, m: &CMat) -> CMat {
        m - self.block_diagonal(m)
    }

    pub fn is_block_diagonal(&self, m: &CMat, tol: f64) -> bool {
        linalg::max_abs(&self.off_diagonal(m)) <= tol
    }
}

/// Returns block `(a, b)` (zero-based) of `m`.
pub fn get_block(m: &CMat, part: &BlockPartition, a: usize, b: usize) -> Result<CMat> {
    part.check(m, a, b)?;
    let (ra, rb) = (part.range(a), part.range(b));
    Ok(m.view((ra.start, rb.start), (ra.len(), rb.len())).into_owned())
}

/// Overwrites block `(a, b)` (zero-based) of `m`.
pub fn set_block(m: &mut CMat, part: &BlockPartition, a: usize, b: usize, block: &CMat) -> Result<()> {
    part.check(m, a, b)?;
    let (ra, rb) = (part.range(a), part.range(b));
    if block.nrows() != ra.len() || block.ncols() != rb.len() {
        return Err(Error::Dimension(format!(
            "block ({a},{b}) is {}x{}, got {}x{}",
            ra.len(),
            rb.len(),
            block.nrows(),
            block.ncols()
        )));
    }
    m.view_mut((ra.start, rb.start), (ra.len(), rb.len())).copy_from(block);
    Ok(())
}

/// Distinct eigenvalues of `Λ` with the partition they act on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lambda {
    pub values: Vec<C64>,
    pub partition: BlockPartition,
}

impl Lambda {
    pub fn new(values: Vec<C64>, partition: BlockPartition, eig_sep_tol: f64) -> Result<Self> {
        if values.len() != partition.s() {
            return Err(Error::Dimension(format!(
                "{} eigenvalues for {} blocks",
                values.len(),
                partition.s()
            )));
        }
        let l = Lambda { values, partition };
        l.check_separation(eig_sep_tol)?;
        Ok(l)
    }

    pub fn check_separation(&self, tol: f64) -> Result<()> {
        for a in 0..self.values.len() {
            for b in a + 1..self.values.len() {
                if (self.values[a] - self.values[b]).norm() < tol {
                    return Err(Error::Stratum { a, b, tol });
                }
            }
        }
        Ok(())
    }

    /// Smallest `|λ_a - λ_b|`, or `None` when `s = 1`.
    pub fn min_gap(&self) -> Option<f64> {
        let mut g: Option<f64> = None;
        for a in 0..self.values.len() {
            for b in a + 1..self.values.len() {
                let d = (self.values[a] - self.values[b]).norm();
                g = Some(g.map_or(d, |x| x.min(d)));
            }
        }
        g
    }

    pub fn with_values(&self, values: Vec<C64>) -> Lambda {
        Lambda {
            values,
            partition: self.partition.clone(),
        }
    }

    /// The diagonal matrix `λ_1 I_{p_1} ⊕ … ⊕ λ_s I_{p_s}`.
    pub fn matrix(&self) -> CMat {
        let p = &self.partition;
        let mut m = linalg::zeros(p.n(), p.n());
        for a in 0..p.s() {
            for i in p.range(a) {
                m[(i, i)] = self.values[a];
            }
        }
        m
    }
}

/// Eigenvalues with cluster multiplicities, in lexicographic order.
pub fn spectrum(m: &CMat, cluster_tol: f64) -> Result<Vec<(C64, usize)>> {
    let ev = linalg::eigenvalues(m)?;
    Ok(cluster(ev, cluster_tol))
}

/// Groups values closer than `tol` (single linkage); each cluster is
/// represented by its mean.
pub fn cluster(mut ev: Vec<C64>, tol: f64) -> Vec<(C64, usize)> {
    ev.sort_by(lex_cmp);
    let n = ev.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(l: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while l[r] != r {
            r = l[r];
        }
        let mut i = i;
        while l[i] != r {
            let nx = l[i];
            l[i] = r;
            i = nx;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (ev[i] - ev[j]).norm() <= tol {
                let (ri, rj) = (find(&mut label, i), find(&mut label, j));
                if ri != rj {
                    label[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<(usize, C64, usize)> = Vec::new();
    for i in 0..n {
        let r = find(&mut label, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => {
                g.1 += ev[i];
                g.2 += 1;
            }
            None => groups.push((r, ev[i], 1)),
        }
    }
    let mut out: Vec<(C64, usize)> = groups.into_iter().map(|(_, s, k)| (s / k as f64, k)).collect();
    out.sort_by(|a, b| lex_cmp(&a.0, &b.0));
    out
}

/// A resonance `μ_j - μ_i = ℓ` inside diagonal block `block` (indices local
/// to the block, `ℓ ≥ 1`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resonance {
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub ell: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JordanTolerances {
    /// Relative clustering tolerance (scaled by the block norm).
    pub cluster_rel: f64,
    pub int_tol: f64,
    pub cond_max: f64,
}

impl Default for JordanTolerances {
    fn default() -> Self {
        JordanTolerances {
            cluster_rel: 1e-8,
            int_tol: 1e-7,
            cond_max: 1e10,
        }
    }
}

/// Block-diagonal `T` with `T⁻¹ A_D T = J` in Jordan form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JordanizationResult {
    #[serde(skip)]
    pub t: CMat,
    #[serde(skip)]
    pub j: CMat,
    pub partition: BlockPartition,
    /// Per block: eigenvalue clusters with algebraic multiplicity.
    pub block_eigenvalues: Vec<Vec<(C64, usize)>>,
    /// Per block: sizes of the Jordan blocks in the order they appear in `J`.
    pub jordan_block_sizes: Vec<Vec<usize>>,
    pub resonant_pairs: Vec<Resonance>,
    pub residual: f64,
    pub condition: f64,
    pub warnings: Vec<String>,
}

impl JordanizationResult {
    /// Diagonal of `J` (the ordered eigenvalues `μ`).
    pub fn mu(&self) -> Vec<C64> {
        (0..self.j.nrows()).map(|i| self.j[(i, i)]).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        self.jordan_block_sizes.iter().flatten().all(|&k| k == 1)
    }

    /// Builds a result from explicitly supplied `T` and `J`, bypassing the
    /// numerical path.
    pub fn from_explicit(a: &CMat, part: &BlockPartition, t: CMat, j: CMat, tol: &JordanTolerances) -> Result<Self> {
        let n = part.n();
        if t.nrows() != n || j.nrows() != n || t.ncols() != n || j.ncols() != n {
            return Err(Error::Dimension("explicit T/J".into()));
        }
        if !part.is_block_diagonal(&t, 0.0) || !part.is_block_diagonal(&j, 0.0) {
            return Err(Error::Invalid("explicit T and J must be block-diagonal".into()));
        }
        let tinv = linalg::inverse(&t)?;
        let ad = part.block_diagonal(a);
        let scale = linalg::norm_inf(&ad).max(1.0);
        let residual = linalg::norm_inf(&(&tinv * &ad * &t - &j)) / scale;
        let mut block_eigenvalues = Vec::new();
        let mut sizes = Vec::new();
        for k in 0..part.s() {
            let r = part.range(k);
            let mu: Vec<C64> = r.clone().map(|i| j[(i, i)]).collect();
            block_eigenvalues.push(cluster(mu, tol.cluster_rel * scale));
            let mut s = Vec::new();
            let mut run = 1;
            for i in r.start..r.end {
                if i + 1 < r.end && j[(i, i + 1)].norm() > 0.5 {
                    run += 1;
                } else {
                    s.push(run);
                    run = 1;
                }
            }
            sizes.push(s);
        }
        let mut res = JordanizationResult {
            condition: linalg::cond(&t),
            t,
            j,
            partition: part.clone(),
            block_eigenvalues,
            jordan_block_sizes: sizes,
            resonant_pairs: vec![],
            residual,
            warnings: vec![],
        };
        res.resonant_pairs = detect_resonances(&res, tol.int_tol).partial;
        if residual > 1e-8 {
            res.warnings.push(format!("explicit T/J reconstruction residual {residual:e}"));
        }
        Ok(res)
    }
}

/// Jordan basis of a single square matrix: returns `(P, J, sizes)` with
/// `P⁻¹ M P = J`, eigenvalues lexicographically ordered.
pub fn jordan_basis(m: &CMat, cluster_tol: f64) -> Result<(CMat, CMat, Vec<(C64, usize)>, Vec<usize>)> {
    let n = m.nrows();
    let scale = linalg::norm_inf(m).max(1.0);
    let clusters = spectrum(m, cluster_tol)?;
    let rank_tol = (cluster_tol.sqrt() * scale).max(1e-10 * scale);
    let mut cols: Vec<nalgebra::DVector<C64>> = Vec::with_capacity(n);
    let mut jd = linalg::zeros(n, n);
    let mut sizes_all = Vec::new();
    let mut pos = 0;
    for &(mu, mult) in &clusters {
        let nm = m - CMat::identity(n, n) * mu;
        if mult == 1 {
            let v = smallest_singular_vector(&nm);
            cols.push(normalize_column(v));
            jd[(pos, pos)] = mu;
            sizes_all.push(1);
            pos += 1;
            continue;
        }
        // ranks of powers determine the Jordan structure
        let mut powers = vec![CMat::identity(n, n)];
        let mut ranks = vec![n];
        for k in 1..=mult {
            let p = &powers[k - 1] * &nm;
            ranks.push(linalg::rank(&p, rank_tol * (k as f64)));
            powers.push(p);
        }
        // geometric count of blocks of size >= k is ranks[k-1] - ranks[k]
        let at_least: Vec<usize> = (1..=mult).map(|k| ranks[k - 1].saturating_sub(ranks[k])).collect();
        let total: usize = at_least.iter().sum();
        if total != mult {
            return Err(Error::Invalid(format!(
                "inconsistent Jordan structure for eigenvalue {mu}: ranks {ranks:?}"
            )));
        }
        let kmax = at_least.iter().rposition(|&c| c > 0).map(|i| i + 1).unwrap_or(1);
        // chains: (length, top vector)
        let mut chains: Vec<(usize, nalgebra::DVector<C64>)> = Vec::new();
        for k in (1..=kmax).rev() {
            let ge = at_least[k - 1];
            let gt = if k < mult { at_least[k] } else { 0 };
            let new = ge - gt;
            if new == 0 {
                continue;
            }
            let ker_k = linalg::null_space(&powers[k], rank_tol * (k as f64));
            let ker_km1 = if k > 1 {
                linalg::null_space(&powers[k - 1], rank_tol * ((k - 1) as f64))
            } else {
                linalg::zeros(n, 0)
            };
            // level-k vectors of existing chains
            let mut span: Vec<nalgebra::DVector<C64>> = ker_km1.column_iter().map(|c| c.into_owned()).collect();
            for (len, top) in &chains {
                let mut v = top.clone();
                for _ in 0..(len - k) {
                    v = &nm * v;
                }
                span.push(v);
            }
            let mut added = 0;
            for cand in ker_k.column_iter() {
                if added == new {
                    break;
                }
                let mut trial = span.clone();
                trial.push(cand.into_owned());
                let mat = CMat::from_columns(&trial);
                if linalg::rank(&mat, 1e-8) == trial.len() {
                    span.push(cand.into_owned());
                    chains.push((k, cand.into_owned()));
                    added += 1;
                }
            }
            if added != new {
                return Err(Error::Invalid(format!("could not build Jordan chains for eigenvalue {mu}")));
            }
        }
        for (len, top) in chains {
            let top = normalize_column(top);
            let mut chain = vec![top];
            for _ in 1..len {
                let next = &nm * chain.last().unwrap();
                chain.push(next);
            }
            chain.reverse();
            for (i, v) in chain.into_iter().enumerate() {
                cols.push(v);
                jd[(pos + i, pos + i)] = mu;
                if i + 1 < len {
                    jd[(pos + i, pos + i + 1)] = cr(1.0);
                }
            }
            sizes_all.push(len);
            pos += len;
        }
    }
    let p = CMat::from_columns(&cols);
    Ok((p, jd, clusters, sizes_all))
}

fn smallest_singular_vector(m: &CMat) -> nalgebra::DVector<C64> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let sv = &svd.singular_values;
    let k = (0..n).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap();
    nalgebra::DVector::from_iterator(n, (0..n).map(|i| vt[(k, i)].conj()))
}

/// Unit 2-norm with the first non-negligible component real positive.
pub fn normalize_column(v: nalgebra::DVector<C64>) -> nalgebra::DVector<C64> {
    let nrm = v.norm();
    if nrm == 0.0 {
        return v;
    }
    let v = v / cr(nrm);
    let thr = 1e-8;
    let first = v.iter().find(|z| z.norm() > thr).copied().unwrap_or(cr(1.0));
    let phase = first / first.norm();
    v / phase
}

/// Jordanizes every diagonal block `A_{[k,k]}` separately.
pub fn jordanize_diag_blocks(a: &CMat, part: &BlockPartition, tol: &JordanTolerances) -> Result<JordanizationResult> {
    let n = part.n();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension("jordanize input".into()));
    }
    let mut tb = Vec::new();
    let mut jb = Vec::new();
    let mut eigs = Vec::new();
    let mut sizes = Vec::new();
    for k in 0..part.s() {
        let blk = get_block(a, part, k, k)?;
        let scale = linalg::norm_inf(&blk).max(1.0);
        let (p, j, cl, sz) = jordan_basis(&blk, tol.cluster_rel * scale)?;
        tb.push(p);
        jb.push(j);
        eigs.push(cl);
        sizes.push(sz);
    }
    let t = linalg::direct_sum(&tb);
    let j = linalg::direct_sum(&jb);
    let ad = part.block_diagonal(a);
    let tinv = linalg::inverse(&t)?;
    let scale = linalg::norm_inf(&ad).max(1.0);
    let residual = linalg::norm_inf(&(&tinv * &ad * &t - &j)) / scale;
    let condition = tb.iter().map(linalg::cond).fold(1.0, f64::max);
    let mut res = JordanizationResult {
        t,
        j,
        partition: part.clone(),
        block_eigenvalues: eigs,
        jordan_block_sizes: sizes,
        resonant_pairs: vec![],
        residual,
        condition,
        warnings: vec![],
    };
    if condition > tol.cond_max {
        res.warnings.push(format!(
            "eigenvector basis condition number {condition:e} exceeds {:e}; degraded accuracy",
            tol.cond_max
        ));
    }
    res.resonant_pairs = detect_resonances(&res, tol.int_tol).partial;
    Ok(res)
}

/// Resonances inside diagonal blocks and across the full spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResonanceReport {
    pub partial: Vec<Resonance>,
}

/// Nonzero integer closest to `x` when within `tol`.
pub fn near_positive_integer(x: C64, tol: f64) -> Option<i64> {
    let r = x.re.round();
    if r >= 1.0 && (x - cr(r)).norm() <= tol {
        Some(r as i64)
    } else {
        None
    }
}

pub fn detect_resonances(j: &JordanizationResult, int_tol: f64) -> ResonanceReport {
    let mut partial = Vec::new();
    let part = &j.partition;
    for k in 0..part.s() {
        let r = part.range(k);
        let mu: Vec<C64> = r.clone().map(|i| j.j[(i, i)]).collect();
        for a in 0..mu.len() {
            for b in 0..mu.len() {
                if let Some(ell) = near_positive_integer(mu[b] - mu[a], int_tol) {
                    partial.push(Resonance {
                        block: k,
                        i: a,
                        j: b,
                        ell,
                    });
                }
            }
        }
    }
    ResonanceReport { partial }
}

/// Pairs `(i, j, ℓ)` with `μ_i - μ_j = ℓ ∈ ℕ∖{0}` across the whole list.
pub fn global_resonances(mu: &[C64], int_tol: f64) -> Vec<(usize, usize, i64)> {
    let mut out = Vec::new();
    for i in 0..mu.len() {
        for j in 0..mu.len() {
            if let Some(ell) = near_positive_integer(mu[i] - mu[j], int_tol) {
                out.push((i, j, ell));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, from_rows};

    #[test]
    fn get_block_top_right() {
        let m = from_rows(3, 3, &(0..9).map(|k| cr(k as f64)).collect::<Vec<_>>());
        let p = BlockPartition::new(&[1, 2]).unwrap();
        let b = get_block(&m, &p, 0, 1).unwrap();
        assert_eq!(b.nrows(), 1);
        assert_eq!(b[(0, 0)], cr(1.0));
        assert_eq!(b[(0, 1)], cr(2.0));
        assert!(get_block(&m, &p, 2, 0).is_err());
    }

    #[test]
    fn identity_blocks() {
        let p = BlockPartition::new(&[2, 1, 3]).unwrap();
        let id = linalg::eye(6);
        for a in 0..3 {
            assert_eq!(get_block(&id, &p, a, a).unwrap(), linalg::eye(p.size(a)));
        }
    }

    #[test]
    fn clustering() {
        let m = linalg::diag(&[cr(1.0), cr(1.0 + 1e-14), cr(2.0)]);
        let s = spectrum(&m, 1e-10).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].1, 2);
        assert!((s[0].0 - cr(1.0)).norm() < 1e-13);
        assert_eq!(s[1].1, 1);
    }

    #[test]
    fn nilpotent_spectrum() {
        let m = from_rows(2, 2, &[cr(0.0), cr(1.0), cr(0.0), cr(0.0)]);
        let s = spectrum(&m, 1e-8).unwrap();
        assert_eq!(s, vec![(cr(0.0), 2)]);
    }

    #[test]
    fn nilpotent_jordan_block() {
        let m = from_rows(2, 2, &[cr(0.0), cr(1.0), cr(0.0), cr(0.0)]);
        let p = BlockPartition::new(&[2]).unwrap();
        let r = jordanize_diag_blocks(&m, &p, &JordanTolerances::default()).unwrap();
        assert_eq!(r.jordan_block_sizes, vec![vec![2]]);
        assert!(r.residual < 1e-12);
        assert_eq!(r.j[(0, 1)], cr(1.0));
    }

    #[test]
    fn already_diagonal_block() {
        let m = linalg::diag(&[cr(3.0), cr(-1.0), c(0.0, 2.0)]);
        let p = BlockPartition::new(&[1, 2]).unwrap();
        let r = jordanize_diag_blocks(&m, &p, &JordanTolerances::default()).unwrap();
        // lexicographic order inside block 2: -1 then 2i
        assert!((r.j[(1, 1)] - cr(-1.0)).norm() < 1e-14);
        assert!((r.j[(2, 2)] - c(0.0, 2.0)).norm() < 1e-14);
        assert!((r.t.map(|z| z.norm()) - linalg::eye(3).map(|z| z.norm())).amax() < 1e-12);
    }

    #[test]
    fn resonance_flags() {
        let p = BlockPartition::new(&[2]).unwrap();
        let m = linalg::diag(&[cr(0.3), c(0.3, 1.0)]);
        let r = jordanize_diag_blocks(&m, &p, &JordanTolerances::default()).unwrap();
        assert!(r.resonant_pairs.is_empty());
        let m = linalg::diag(&[cr(0.0), cr(1.0)]);
        let r = jordanize_diag_blocks(&m, &p, &JordanTolerances::default()).unwrap();
        assert_eq!(r.resonant_pairs.len(), 1);
        assert_eq!(r.resonant_pairs[0].ell, 1);
    }
}
