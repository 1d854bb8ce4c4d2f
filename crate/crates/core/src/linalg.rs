//! Dense complex linear algebra on top of `faer`: Kronecker products, norms and
//! Hermitian eigensolvers that split the matrix into its decoupled blocks first.

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Mat<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    Mat::zeros(r, c)
}

pub fn eye(n: usize) -> CMat {
    Mat::identity(n, n)
}

pub fn from_fn(r: usize, c: usize, f: impl FnMut(usize, usize) -> C64) -> CMat {
    Mat::from_fn(r, c, f)
}

/// Matrix from row-major nested data.
pub fn from_rows(rows: &[Vec<C64>]) -> CMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    from_fn(n, m, |i, j| rows[i][j])
}

pub fn diag_real(d: &[f64]) -> CMat {
    let n = d.len();
    from_fn(n, n, |i, j| if i == j { re(d[i]) } else { ZERO })
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (br, bc) = (b.nrows(), b.ncols());
    let mut out = zeros(a.nrows() * br, a.ncols() * bc);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

pub fn dagger(a: &CMat) -> CMat {
    a.adjoint().to_owned()
}

pub fn mul(a: &CMat, b: &CMat) -> CMat {
    a * b
}

/// `a * b * c`.
pub fn mul3(a: &CMat, b: &CMat, c: &CMat) -> CMat {
    &(a * b) * c
}

pub fn comm(a: &CMat, b: &CMat) -> CMat {
    &(a * b) - &(b * a)
}

pub fn anticomm(a: &CMat, b: &CMat) -> CMat {
    &(a * b) + &(b * a)
}

pub fn scale(a: &CMat, s: C64) -> CMat {
    from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn add_scaled(acc: &mut CMat, a: &CMat, s: C64) {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc[(i, j)] += a[(i, j)] * s;
        }
    }
}

pub fn trace(a: &CMat) -> C64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn frobenius(a: &CMat) -> f64 {
    a.norm_l2()
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    max_abs(&(a - b))
}

pub fn hermitian_defect(a: &CMat) -> f64 {
    if a.nrows() != a.ncols() {
        return f64::INFINITY;
    }
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..=j {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

pub fn hermitian_part(a: &CMat) -> CMat {
    from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// Operator (spectral) norm. Hermitian input takes the eigenvalue route.
pub fn op_norm(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let scale = max_abs(a);
    if scale == 0.0 {
        return 0.0;
    }
    if a.nrows() == a.ncols() && hermitian_defect(a) <= 1e-14 * scale {
        if let Ok(ev) = eigvalsh(a) {
            return ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        }
    }
    a.singular_values().map(|s| s[0]).unwrap_or_else(|_| frobenius(a))
}

/// Connected components of the nonzero pattern of a square matrix.
/// Each component is returned as an ascending index list; components are
/// ordered by their smallest index.
pub fn components(a: &CMat) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for j in 0..n {
        for i in 0..n {
            if i != j && a[(i, j)] != ZERO {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

fn submatrix(a: &CMat, idx: &[usize]) -> CMat {
    from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}

fn dense_eigh(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(format!("{e:?}")))?;
    let s = e.S();
    let vals = (0..a.nrows()).map(|i| s[i].re).collect();
    Ok((vals, e.U().to_owned()))
}

fn dense_eigvalsh(a: &CMat) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(format!("{e:?}")))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl Eigh {
    /// `V diag(f(λ)) V*`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> C64) -> CMat {
        let n = self.values.len();
        let fv: Vec<C64> = self.values.iter().map(|&l| f(l)).collect();
        let scaled = from_fn(n, n, |i, j| self.vectors[(i, j)] * fv[j]);
        &scaled * self.vectors.adjoint()
    }

    /// Projector onto the span of eigenvectors `idx`.
    pub fn projector(&self, idx: impl IntoIterator<Item = usize>) -> CMat {
        let cols: Vec<usize> = idx.into_iter().collect();
        let n = self.vectors.nrows();
        let v = from_fn(n, cols.len(), |i, k| self.vectors[(i, cols[k])]);
        &v * v.adjoint()
    }

    /// Rotate `a` into the eigenbasis: `V* a V`.
    pub fn to_eigenbasis(&self, a: &CMat) -> CMat {
        &(self.vectors.adjoint() * a) * &self.vectors
    }

    /// Rotate back: `V a V*`.
    pub fn from_eigenbasis(&self, a: &CMat) -> CMat {
        &(&self.vectors * a) * self.vectors.adjoint()
    }
}

/// Hermitian eigendecomposition, splitting into decoupled blocks when the
/// sparsity pattern allows it. The input is assumed Hermitian.
pub fn eigh(a: &CMat) -> Result<Eigh> {
    let n = a.nrows();
    let comps = components(a);
    if comps.len() == 1 {
        let (values, vectors) = dense_eigh(a)?;
        return Ok(Eigh { values, vectors });
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(comps.len());
    for (bi, idx) in comps.iter().enumerate() {
        let (vals, vecs) = dense_eigh(&submatrix(a, idx))?;
        for (k, v) in vals.iter().enumerate() {
            pairs.push((*v, bi, k));
        }
        blocks.push(vecs);
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut vectors = zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (col, &(v, bi, k)) in pairs.iter().enumerate() {
        values.push(v);
        for (r, &row) in comps[bi].iter().enumerate() {
            vectors[(row, col)] = blocks[bi][(r, k)];
        }
    }
    Ok(Eigh { values, vectors })
}

/// Eigenvalues of a Hermitian matrix, ascending, using the block split.
pub fn eigvalsh(a: &CMat) -> Result<Vec<f64>> {
    let comps = components(a);
    if comps.len() == 1 {
        return dense_eigvalsh(a);
    }
    let mut all = Vec::with_capacity(a.nrows());
    for idx in &comps {
        if idx.len() == 1 {
            all.push(a[(idx[0], idx[0])].re);
        } else {
            all.extend(dense_eigvalsh(&submatrix(a, idx))?);
        }
    }
    all.sort_by(f64::total_cmp);
    Ok(all)
}

/// Full singular value decomposition `A = U diag(s) V*`, singular values descending.
///
/// The iterative solver occasionally fails to converge on benign inputs; we
/// then retry on `A*` and finally fall back to the eigenvectors of `A*A`.
pub fn svd(a: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    let k = a.nrows().min(a.ncols());
    if let Ok(d) = a.svd() {
        let s = d.S();
        return Ok((d.U().to_owned(), (0..k).map(|i| s[i].re).collect(), d.V().to_owned()));
    }
    if let Ok(d) = a.adjoint().to_owned().svd() {
        let s = d.S();
        return Ok((d.V().to_owned(), (0..k).map(|i| s[i].re).collect(), d.U().to_owned()));
    }
    gram_svd(a)
}

fn gram_svd(a: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    let (m, n) = (a.nrows(), a.ncols());
    let e = eigh(&mul(&a.adjoint().to_owned(), a))?;
    let v = from_fn(n, n, |i, j| e.vectors[(i, n - 1 - j)]);
    let av = mul(a, &v);
    let k = m.min(n);
    let vals: Vec<f64> = (0..k).map(|j| (0..m).map(|i| av[(i, j)].norm_sqr()).sum::<f64>().sqrt()).collect();
    let tol = 1e-12 * vals.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(m);
    let candidates = (0..k)
        .filter(|&j| vals[j] > tol)
        .map(|j| (0..m).map(|i| av[(i, j)]).collect::<Vec<_>>())
        .chain((0..m).map(|c| (0..m).map(|i| if i == c { ONE } else { ZERO }).collect()));
    for mut c in candidates {
        if cols.len() == m {
            break;
        }
        for _ in 0..2 {
            for q in &cols {
                let dot: C64 = q.iter().zip(&c).map(|(x, y)| x.conj() * y).sum();
                c.iter_mut().zip(q).for_each(|(y, x)| *y -= dot * x);
            }
        }
        let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(c.into_iter().map(|z| z / norm).collect());
        }
    }
    let u = from_fn(m, m, |i, j| cols[j][i]);
    Ok((u, vals, v))
}

/// `exp(i t H)` for Hermitian `H`.
pub fn expi_hermitian(h: &CMat, t: f64) -> Result<CMat> {
    let e = eigh(h)?;
    Ok(e.apply_fn(|l| C64::from_polar(1.0, t * l)))
}

/// Unitary factor of the polar decomposition `A = U |A|` for invertible `A`.
pub fn polar_unitary(a: &CMat) -> Result<CMat> {
    let ata = hermitian_part(&(a.adjoint() * a));
    let e = eigh(&ata)?;
    if e.values[0] <= 0.0 {
        return Err(Error::Linalg("polar decomposition of a singular matrix".into()));
    }
    let inv_sqrt = e.apply_fn(|l| re(1.0 / l.sqrt()));
    Ok(a * &inv_sqrt)
}

/// `‖U*U - 1‖` in max-entry norm.
pub fn unitarity_defect(u: &CMat) -> f64 {
    max_abs(&(&(u.adjoint() * u) - &eye(u.ncols())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_herm(n: usize, seed: u64) -> CMat {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let g = from_fn(n, n, |_, _| C64::new(next(), next()));
        hermitian_part(&g)
    }

    #[test]
    fn block_eigh_matches_dense() {
        let a = rand_herm(6, 1);
        let b = rand_herm(5, 2);
        let mut m = zeros(11, 11);
        // interleave the two blocks through a permutation
        let perm = [0usize, 6, 1, 7, 2, 8, 3, 9, 4, 10, 5];
        for i in 0..6 {
            for j in 0..6 {
                m[(perm[i], perm[j])] = a[(i, j)];
            }
        }
        for i in 0..5 {
            for j in 0..5 {
                m[(perm[6 + i], perm[6 + j])] = b[(i, j)];
            }
        }
        assert_eq!(components(&m).len(), 2);
        let e = eigh(&m).unwrap();
        let (dv, _) = dense_eigh(&m).unwrap();
        for (x, y) in e.values.iter().zip(dv.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let recon = e.apply_fn(re);
        assert!(max_abs_diff(&recon, &m) < 1e-12);
        let ev = eigvalsh(&m).unwrap();
        for (x, y) in ev.iter().zip(dv.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kron_dimensions_and_mixed_product() {
        let a = rand_herm(2, 3);
        let b = rand_herm(3, 4);
        let c = rand_herm(2, 5);
        let d = rand_herm(3, 6);
        let lhs = mul(&kron(&a, &b), &kron(&c, &d));
        let rhs = kron(&mul(&a, &c), &mul(&b, &d));
        assert!(max_abs_diff(&lhs, &rhs) < 1e-13);
    }

    #[test]
    fn op_norm_of_hermitian_and_general() {
        let d = diag_real(&[1.0, -3.0, 2.0]);
        assert!((op_norm(&d) - 3.0).abs() < 1e-12);
        let mut n = zeros(2, 2);
        n[(0, 1)] = re(2.0);
        assert!((op_norm(&n) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn polar_recovers_unitary() {
        let h = rand_herm(5, 9);
        let u = expi_hermitian(&h, 0.7).unwrap();
        let noisy = &u + &scale(&rand_herm(5, 10), re(1e-4));
        let p = polar_unitary(&noisy).unwrap();
        assert!(unitarity_defect(&p) < 1e-12);
        assert!(max_abs_diff(&p, &u) < 1e-3);
    }

    #[test]
    fn gram_fallback_matches_direct_svd() {
        let h = rand_herm(7, 11);
        let a = from_fn(7, 5, |i, j| h[(i, j)] * C64::new(1.0, 0.3 * j as f64));
        let (u, s, v) = gram_svd(&a).unwrap();
        let (_, s_ref, _) = svd(&a).unwrap();
        for (x, y) in s.iter().zip(&s_ref) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(unitarity_defect(&u) < 1e-12 && unitarity_defect(&v) < 1e-12);
        let sm = from_fn(7, 5, |i, j| if i == j { re(s[i]) } else { ZERO });
        assert!(max_abs_diff(&mul3(&u, &sm, &v.adjoint().to_owned()), &a) < 1e-10);
    }
}
