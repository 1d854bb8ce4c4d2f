//! Dense operators tagged with their support interval: spin tensor embeddings,
//! the CAR algebra on Fock space, parity, partial traces, Δ layers and the
//! Jordan-Wigner map.
//!
//! Basis conventions. Tensor factors are ordered left to right by site, so the
//! leftmost site is the most significant digit of a basis index. The Fock
//! basis is the occupation basis ordered the same way, and `a*(x)` carries the
//! sign `(-1)^{#occupied sites left of x}`. A spin-1/2 basis state `0` is
//! identified with an empty mode and `1` with an occupied one, which makes the
//! Jordan-Wigner unitary the identity matrix in these coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::lattice::{Interval, Site};
use crate::linalg::{self, CMat, C64, ONE, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    /// Spin chain with local dimension `d`.
    Spin(usize),
    /// Spinless fermions (local dimension 2).
    Fermion,
}

impl Kind {
    pub fn local_dim(&self) -> usize {
        match self {
            Kind::Spin(d) => *d,
            Kind::Fermion => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityGrade {
    Even,
    Odd,
    Mixed,
}

/// Dense operator acting on the tensor/Fock space of `support`.
#[derive(Clone, Debug)]
pub struct LocalOperator {
    pub matrix: CMat,
    pub support: Interval,
    pub kind: Kind,
}

pub fn space_dim(kind: Kind, iv: &Interval) -> usize {
    kind.local_dim().pow(iv.len() as u32)
}

impl LocalOperator {
    pub fn new(matrix: CMat, support: Interval, kind: Kind) -> Result<Self> {
        let n = space_dim(kind, &support);
        if matrix.nrows() != n || matrix.ncols() != n {
            return domain(format!(
                "matrix is {}x{}, support {support} needs dimension {n}",
                matrix.nrows(),
                matrix.ncols()
            ));
        }
        Ok(LocalOperator { matrix, support, kind })
    }

    pub fn identity(support: Interval, kind: Kind) -> Self {
        LocalOperator { matrix: linalg::eye(space_dim(kind, &support)), support, kind }
    }

    pub fn zero(support: Interval, kind: Kind) -> Self {
        let n = space_dim(kind, &support);
        LocalOperator { matrix: linalg::zeros(n, n), support, kind }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn norm(&self) -> f64 {
        linalg::op_norm(&self.matrix)
    }

    pub fn hermitian_defect(&self) -> f64 {
        linalg::hermitian_defect(&self.matrix)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_defect() <= 1e-12 * linalg::max_abs(&self.matrix).max(1e-300)
    }

    pub fn adjoint(&self) -> Self {
        LocalOperator { matrix: linalg::dagger(&self.matrix), ..self.clone() }
    }

    pub fn scaled(&self, s: C64) -> Self {
        LocalOperator { matrix: linalg::scale(&self.matrix, s), ..self.clone() }
    }

    /// Tensor with the identity on `target \ support`. Fermionic operators must be even.
    pub fn embed(&self, target: &Interval) -> Result<LocalOperator> {
        if !target.contains_interval(&self.support) {
            return domain(format!("cannot embed operator on {} into {target}", self.support));
        }
        if *target == self.support {
            return Ok(self.clone());
        }
        if self.kind == Kind::Fermion && parity_grade(self) != ParityGrade::Even {
            return Err(Error::Parity(format!(
                "only even fermionic operators embed support-preservingly (support {})",
                self.support
            )));
        }
        Ok(LocalOperator {
            matrix: embed_matrix(&self.matrix, self.kind.local_dim(), &self.support, target),
            support: *target,
            kind: self.kind,
        })
    }

    fn aligned(&self, other: &LocalOperator) -> Result<(CMat, CMat, Interval)> {
        if self.kind != other.kind {
            return domain("operators of different kinds");
        }
        let hull = self.support.hull(&other.support);
        Ok((self.embed(&hull)?.matrix, other.embed(&hull)?.matrix, hull))
    }

    pub fn add(&self, other: &LocalOperator) -> Result<LocalOperator> {
        let (a, b, s) = self.aligned(other)?;
        Ok(LocalOperator { matrix: &a + &b, support: s, kind: self.kind })
    }

    pub fn sub(&self, other: &LocalOperator) -> Result<LocalOperator> {
        let (a, b, s) = self.aligned(other)?;
        Ok(LocalOperator { matrix: &a - &b, support: s, kind: self.kind })
    }

    pub fn mul(&self, other: &LocalOperator) -> Result<LocalOperator> {
        let (a, b, s) = self.aligned(other)?;
        Ok(LocalOperator { matrix: &a * &b, support: s, kind: self.kind })
    }
}

/// Embeds `m` (acting on `from`) into the space of `to ⊇ from`.
pub fn embed_matrix(m: &CMat, d: usize, from: &Interval, to: &Interval) -> CMat {
    if from == to {
        return m.clone();
    }
    let dl = d.pow((from.a - to.a) as u32);
    let dr = d.pow((to.b - from.b) as u32);
    let dm = m.nrows();
    let n = dl * dm * dr;
    let mut out = linalg::zeros(n, n);
    add_embedded(&mut out, m, ONE, dl, dr);
    out
}

/// `acc += s · (1_{dl} ⊗ m ⊗ 1_{dr})` without forming the Kronecker product.
pub fn add_embedded(acc: &mut CMat, m: &CMat, s: C64, dl: usize, dr: usize) {
    let dm = m.nrows();
    debug_assert_eq!(acc.nrows(), dl * dm * dr);
    for j in 0..dm {
        for i in 0..dm {
            let v = m[(i, j)] * s;
            if v == ZERO {
                continue;
            }
            for l in 0..dl {
                let base_i = (l * dm + i) * dr;
                let base_j = (l * dm + j) * dr;
                for r in 0..dr {
                    acc[(base_i + r, base_j + r)] += v;
                }
            }
        }
    }
}

/// Adds `s · op` (embedded) into a matrix acting on `target`.
pub fn accumulate(acc: &mut CMat, target: &Interval, op: &LocalOperator, s: C64) -> Result<()> {
    if !target.contains_interval(&op.support) {
        return domain(format!("term on {} escapes {target}", op.support));
    }
    let d = op.kind.local_dim();
    let dl = d.pow((op.support.a - target.a) as u32);
    let dr = d.pow((target.b - op.support.b) as u32);
    add_embedded(acc, &op.matrix, s, dl, dr);
    Ok(())
}

// ---------------------------------------------------------------------------
// Single-site matrices

pub fn sigma_x() -> CMat {
    linalg::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]])
}

pub fn sigma_y() -> CMat {
    linalg::from_rows(&[vec![ZERO, -linalg::I], vec![linalg::I, ZERO]])
}

/// `exp(-iπ S⁺S⁻) = diag(1, -1)`.
pub fn sigma_z() -> CMat {
    linalg::diag_real(&[1.0, -1.0])
}

/// Raising operator `|1⟩⟨0|`.
pub fn s_plus() -> CMat {
    linalg::from_rows(&[vec![ZERO, ZERO], vec![ONE, ZERO]])
}

/// Lowering operator `|0⟩⟨1|`.
pub fn s_minus() -> CMat {
    linalg::from_rows(&[vec![ZERO, ONE], vec![ZERO, ZERO]])
}

/// A single-site matrix placed at `x` in the spin space of `lam`.
pub fn site_operator(lam: &Interval, x: Site, m: &CMat) -> Result<LocalOperator> {
    let d = m.nrows();
    let op = LocalOperator::new(m.clone(), Interval::point(x), Kind::Spin(d))?;
    op.embed(lam)
}

// ---------------------------------------------------------------------------
// Fock space

fn occupation(state: usize, lam: &Interval, x: Site) -> bool {
    let shift = (lam.b - x) as usize;
    (state >> shift) & 1 == 1
}

/// Number of occupied sites of `lam` strictly left of `x`.
fn occupied_before(state: usize, lam: &Interval, x: Site) -> u32 {
    let shift = (lam.b - x) as usize + 1;
    if shift >= usize::BITS as usize {
        0
    } else {
        (state >> shift).count_ones()
    }
}

/// `a(x)` on the Fock space of `lam`.
pub fn annihilation(lam: &Interval, x: Site) -> Result<LocalOperator> {
    lam.offset(x)?;
    let n = 1usize << lam.len();
    let mut m = linalg::zeros(n, n);
    let bit = 1usize << (lam.b - x);
    for s in 0..n {
        if occupation(s, lam, x) {
            let sign = if occupied_before(s, lam, x) % 2 == 0 { 1.0 } else { -1.0 };
            m[(s ^ bit, s)] = linalg::re(sign);
        }
    }
    LocalOperator::new(m, *lam, Kind::Fermion)
}

/// `a*(x)` on the Fock space of `lam`.
pub fn creation(lam: &Interval, x: Site) -> Result<LocalOperator> {
    Ok(annihilation(lam, x)?.adjoint())
}

/// `N_X = Σ_{x∈X} a*(x)a(x)`; sites of `xs` outside `lam` are a domain error.
pub fn number_operator(lam: &Interval, xs: &[Site]) -> Result<LocalOperator> {
    for &x in xs {
        lam.offset(x)?;
    }
    let n = 1usize << lam.len();
    let d: Vec<f64> = (0..n)
        .map(|s| xs.iter().filter(|&&x| occupation(s, lam, x)).count() as f64)
        .collect();
    LocalOperator::new(linalg::diag_real(&d), *lam, Kind::Fermion)
}

/// `exp(iπ N_Λ)`.
pub fn parity_operator(lam: &Interval) -> LocalOperator {
    let n = 1usize << lam.len();
    let d: Vec<f64> = (0..n).map(|s| if s.count_ones() % 2 == 0 { 1.0 } else { -1.0 }).collect();
    LocalOperator { matrix: linalg::diag_real(&d), support: *lam, kind: Kind::Fermion }
}

/// Even and odd parts of a fermionic (or spin-1/2) matrix under `exp(iπN)`.
pub fn parity_parts(m: &CMat) -> (CMat, CMat) {
    let n = m.nrows();
    let mut even = linalg::zeros(n, n);
    let mut odd = linalg::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            if (i.count_ones() + j.count_ones()) % 2 == 0 {
                even[(i, j)] = m[(i, j)];
            } else {
                odd[(i, j)] = m[(i, j)];
            }
        }
    }
    (even, odd)
}

pub fn parity_grade_matrix(m: &CMat) -> ParityGrade {
    let (e, o) = parity_parts(m);
    let tol = 1e-12 * linalg::max_abs(m).max(1.0);
    match (linalg::max_abs(&e) > tol, linalg::max_abs(&o) > tol) {
        (_, false) => ParityGrade::Even,
        (false, true) => ParityGrade::Odd,
        (true, true) => ParityGrade::Mixed,
    }
}

/// Grade under the parity automorphism. Spin-1/2 operators are graded through
/// the identification with Fock space; other spins are reported even.
pub fn parity_grade(op: &LocalOperator) -> ParityGrade {
    match op.kind {
        Kind::Fermion | Kind::Spin(2) => parity_grade_matrix(&op.matrix),
        Kind::Spin(_) => ParityGrade::Even,
    }
}

// ---------------------------------------------------------------------------
// Partial traces and Δ layers

/// Normalized partial trace `θ_keep`: traces out `support \ keep` and divides
/// by its dimension. Fermionic operators must be even.
pub fn partial_trace(op: &LocalOperator, keep: &Interval) -> Result<LocalOperator> {
    if !op.support.contains_interval(keep) {
        return domain(format!("keep {keep} not inside support {}", op.support));
    }
    if op.kind == Kind::Fermion && parity_grade(op) != ParityGrade::Even {
        return Err(Error::Parity("partial trace of a non-even fermionic operator".into()));
    }
    let d = op.kind.local_dim();
    let dl = d.pow((keep.a - op.support.a) as u32);
    let dr = d.pow((op.support.b - keep.b) as u32);
    let dm = d.pow(keep.len() as u32);
    let norm = 1.0 / (dl * dr) as f64;
    let m = &op.matrix;
    let out = linalg::from_fn(dm, dm, |i, j| {
        let mut s = ZERO;
        for l in 0..dl {
            for r in 0..dr {
                s += m[((l * dm + i) * dr + r, (l * dm + j) * dr + r)];
            }
        }
        s * norm
    });
    Ok(LocalOperator { matrix: out, support: *keep, kind: op.kind })
}

/// `tr(A) / dim`.
pub fn normalized_trace(op: &LocalOperator) -> C64 {
    linalg::trace(&op.matrix) / op.dim() as f64
}

/// `θ_Y(A)` embedded back into `Y`, for any `Y` (only `Y ∩ supp A` is traced).
pub fn conditional_expectation(op: &LocalOperator, y: &Interval) -> Result<LocalOperator> {
    match op.support.intersect(y) {
        None => Ok(LocalOperator::identity(*y, op.kind).scaled(normalized_trace(op))),
        Some(keep) => partial_trace(op, &keep)?.embed(y),
    }
}

/// Telescoping layer `Δ_{X(n)} = θ_{X(n)} - θ_{X(n-1)}`, `Δ_{X(0)} = θ_{X(0)}`,
/// where `X(n) = b_Λ(x, n)`. The result is supported on `X(n)`.
pub fn delta_layer(op: &LocalOperator, ambient: &Interval, x: Site, n: u64) -> Result<LocalOperator> {
    if !ambient.contains_interval(&op.support) {
        return domain(format!("operator on {} outside ambient {ambient}", op.support));
    }
    let outer = ambient.ball(x, n)?;
    let cur = conditional_expectation(op, &outer)?;
    if n == 0 {
        return Ok(cur);
    }
    let inner = ambient.ball(x, n - 1)?;
    let prev = conditional_expectation(op, &inner)?.embed(&outer)?;
    Ok(LocalOperator { matrix: &cur.matrix - &prev.matrix, support: outer, kind: op.kind })
}

// ---------------------------------------------------------------------------
// Jordan-Wigner

/// Image of a fermionic operator under the Jordan-Wigner map of `ambient`.
///
/// Even operators keep their support and matrix. Odd or mixed operators are
/// string-attached: the result lives on `[ambient.a, max supp]`.
pub fn jordan_wigner(op: &LocalOperator, ambient: &Interval) -> Result<LocalOperator> {
    if op.kind != Kind::Fermion {
        return domain("Jordan-Wigner map needs a fermionic operator");
    }
    if !ambient.contains_interval(&op.support) {
        return domain(format!("operator on {} outside ambient {ambient}", op.support));
    }
    let (even, odd) = parity_parts(&op.matrix);
    let tol = 1e-12 * linalg::max_abs(&op.matrix).max(1.0);
    if linalg::max_abs(&odd) <= tol {
        return Ok(LocalOperator { matrix: op.matrix.clone(), support: op.support, kind: Kind::Spin(2) });
    }
    let ext = Interval { a: ambient.a, b: op.support.b };
    let nstr = (op.support.a - ext.a) as u32;
    let string = linalg::diag_real(
        &(0..1usize << nstr).map(|s| if s.count_ones() % 2 == 0 { 1.0 } else { -1.0 }).collect::<Vec<_>>(),
    );
    let odd_img = linalg::kron(&string, &odd);
    let even_img = embed_matrix(&even, 2, &op.support, &ext);
    Ok(LocalOperator { matrix: &even_img + &odd_img, support: ext, kind: Kind::Spin(2) })
}
