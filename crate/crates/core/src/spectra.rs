//! Exact diagonalization, continuity tracking of the ground cluster along a
//! perturbation path, local ground-state projectors and the layer
//! decompositions built from them.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::interaction::{kernel_threshold, split_edge_bulk, Interaction};
use crate::lattice::{Interval, Site};
use crate::linalg::{self, CMat, Eigh};
use crate::operator_algebra::{self as oa, LocalOperator};

/// Full eigendecomposition of a Hermitian operator with a residual check.
pub fn diagonalize(h: &LocalOperator) -> Result<Eigh> {
    let scale = linalg::max_abs(&h.matrix);
    let defect = linalg::hermitian_defect(&h.matrix);
    if defect > 1e-12 * scale.max(1.0) {
        return Err(Error::NonHermitian { defect });
    }
    let e = linalg::eigh(&h.matrix)?;
    let hn = e.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let hv = &h.matrix * &e.vectors;
    let n = e.values.len();
    let mut worst = 0.0f64;
    for j in 0..n {
        let mut r = 0.0;
        for i in 0..n {
            r += (hv[(i, j)] - e.vectors[(i, j)] * e.values[j]).norm_sqr();
        }
        worst = worst.max(r.sqrt());
    }
    if worst > 1e-10 * hn.max(1.0) {
        return Err(Error::Linalg(format!("eigen residual {worst:e} exceeds tolerance")));
    }
    Ok(e)
}

fn spectral_radius(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Orthonormal basis (as columns) of the kernel of a positive semidefinite matrix.
pub fn kernel_basis(h: &CMat) -> Result<CMat> {
    let e = linalg::eigh(h)?;
    let thr = kernel_threshold(spectral_radius(&e.values));
    if e.values[0] < -thr {
        return Err(Error::Frustration { threshold: thr, lowest: e.values[0] });
    }
    let k = e.values.iter().take_while(|v| **v <= thr).count();
    if k == 0 {
        return Err(Error::Frustration { threshold: thr, lowest: e.values[0] });
    }
    Ok(e.vectors.subcols(0, k).to_owned())
}

/// Projector onto the eigenvalues of `h` below `tol · max(1, ‖h‖)`.
pub fn ground_projector(h: &LocalOperator, tol: f64) -> Result<LocalOperator> {
    let e = linalg::eigh(&linalg::hermitian_part(&h.matrix))?;
    let thr = tol * spectral_radius(&e.values).max(1.0);
    if e.values[0] < -thr || e.values[0] > thr {
        return Err(Error::Frustration { threshold: thr, lowest: e.values[0] });
    }
    let k = e.values.iter().take_while(|v| **v <= thr).count();
    Ok(LocalOperator { matrix: e.projector(0..k), support: h.support, kind: h.kind })
}

// ---------------------------------------------------------------------------
// Tracking

/// Sorted spectrum at one grid point.
#[derive(Clone, Debug)]
pub struct TrackedPoint {
    pub eps: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSplit {
    pub eps: f64,
    pub sp0: Vec<f64>,
    pub sp1: Vec<f64>,
    pub gamma: f64,
}

impl SpectrumSplit {
    pub fn from_point(p: &TrackedPoint, k: usize) -> Self {
        let sp0 = p.values[..k].to_vec();
        let sp1 = p.values[k..].to_vec();
        let gamma = match (sp0.last(), sp1.first()) {
            (Some(a), Some(b)) => b - a,
            _ => f64::INFINITY,
        };
        SpectrumSplit { eps: p.eps, sp0, sp1, gamma }
    }

    pub fn sp0_diam(&self) -> f64 {
        match (self.sp0.first(), self.sp0.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&0.0) {
        return domain("eps grid must start at 0");
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return domain("eps grid must be strictly increasing");
    }
    Ok(())
}

/// Sorted eigenvalues of `h0 + eps·phi` along `grid`, certifying that sorted
/// order follows the continuous branches across every cut in `cuts`.
///
/// A step `[e, e']` is accepted when the gap at either endpoint exceeds
/// `2 (e' - e) phi_bound`: each eigenvalue moves by at most `|Δε|·‖Φ‖`, so the
/// groups below and above the cut cannot meet inside the step. Otherwise the
/// step is bisected, up to `max_depth` times.
pub fn tracked_spectra(
    h0: &CMat,
    phi: &CMat,
    phi_bound: f64,
    grid: &[f64],
    cuts: &[usize],
    max_depth: u32,
) -> Result<Vec<TrackedPoint>> {
    check_grid(grid)?;
    let n = h0.nrows();
    if cuts.iter().any(|&c| c == 0 || c >= n) {
        return domain("cuts must separate a nonempty lower and upper group");
    }
    let spectrum = |eps: f64| -> Result<Vec<f64>> {
        if eps == 0.0 {
            return linalg::eigvalsh(h0);
        }
        let mut h = h0.clone();
        linalg::add_scaled(&mut h, phi, linalg::re(eps));
        linalg::eigvalsh(&h)
    };
    let mut out = vec![TrackedPoint { eps: 0.0, values: spectrum(0.0)? }];
    for &eps in &grid[1..] {
        let prev = out.last().unwrap().clone();
        let next = TrackedPoint { eps, values: spectrum(eps)? };
        certify_step(&prev, &next, phi_bound, cuts, max_depth, &spectrum)?;
        out.push(next);
    }
    Ok(out)
}

fn certify_step(
    lo: &TrackedPoint,
    hi: &TrackedPoint,
    bound: f64,
    cuts: &[usize],
    depth: u32,
    spectrum: &dyn Fn(f64) -> Result<Vec<f64>>,
) -> Result<()> {
    let budget = 2.0 * (hi.eps - lo.eps) * bound;
    let gap = |p: &TrackedPoint, c: usize| p.values[c] - p.values[c - 1];
    let bad = cuts.iter().find(|&&c| gap(lo, c).max(gap(hi, c)) <= budget);
    let Some(&c) = bad else { return Ok(()) };
    if depth == 0 {
        return Err(Error::TrackingAmbiguity {
            eps_lo: lo.eps,
            eps_hi: hi.eps,
            detail: format!(
                "gap across cut {c} is {:e}/{:e}, Weyl budget {budget:e}",
                gap(lo, c),
                gap(hi, c)
            ),
        });
    }
    let mid_eps = 0.5 * (lo.eps + hi.eps);
    let mid = TrackedPoint { eps: mid_eps, values: spectrum(mid_eps)? };
    certify_step(lo, &mid, bound, cuts, depth - 1, spectrum)?;
    certify_step(&mid, hi, bound, cuts, depth - 1, spectrum)
}

/// Default bisection depth for tracking.
pub const DEFAULT_REFINE_DEPTH: u32 = 8;

/// Matrices and norm bound of the perturbed path restricted to `lam`.
pub struct PerturbedPath {
    pub lam: Interval,
    pub h0: CMat,
    pub phi: CMat,
    /// `Σ_X ‖Φ(X)‖` over terms inside `lam`, an upper bound on `‖Φ_Λ‖`.
    pub phi_bound: f64,
    pub kernel_dim: usize,
}

impl PerturbedPath {
    pub fn new(eta: &Interaction, phi: &Interaction, lam: &Interval) -> Result<Self> {
        if eta.kind.local_dim() != phi.kind.local_dim() {
            return domain("unperturbed and perturbing interactions act on different local spaces");
        }
        let h0 = eta.local_hamiltonian_matrix(lam);
        let phi_m = phi.local_hamiltonian_matrix(lam);
        let phi_bound =
            phi.terms().filter(|t| lam.contains_interval(&t.support())).map(|t| t.norm()).sum();
        let ev = linalg::eigvalsh(&h0)?;
        let thr = kernel_threshold(spectral_radius(&ev));
        if ev[0] < -thr || ev[0] > thr {
            return Err(Error::Frustration { threshold: thr, lowest: ev[0] });
        }
        let kernel_dim = ev.iter().take_while(|v| **v <= thr).count();
        Ok(PerturbedPath { lam: *lam, h0, phi: phi_m, phi_bound, kernel_dim })
    }

    pub fn track(&self, grid: &[f64], extra_cuts: &[usize]) -> Result<Vec<TrackedPoint>> {
        let mut cuts = Vec::new();
        if self.kernel_dim < self.h0.nrows() {
            cuts.push(self.kernel_dim);
        }
        cuts.extend_from_slice(extra_cuts);
        tracked_spectra(&self.h0, &self.phi, self.phi_bound, grid, &cuts, DEFAULT_REFINE_DEPTH)
    }
}

/// `γ(ε)` along `grid` for `H_Λ + εΦ_Λ`.
pub fn gap_curve(eta: &Interaction, phi: &Interaction, lam: &Interval, grid: &[f64]) -> Result<Vec<SpectrumSplit>> {
    let path = PerturbedPath::new(eta, phi, lam)?;
    let pts = path.track(grid, &[])?;
    Ok(pts.iter().map(|p| SpectrumSplit::from_point(p, path.kernel_dim)).collect())
}

/// Number of eigenvalues at or below `nu`, after checking that no unperturbed
/// eigenvalue lies strictly between `nu` and `mu`.
pub fn higher_gap_cut(values0: &[f64], nu: f64, mu: f64) -> Result<usize> {
    if nu >= mu {
        return domain("need nu < mu");
    }
    let tol = 1e-9 * spectral_radius(values0).max(1.0);
    if let Some(v) = values0.iter().find(|&&v| v > nu + tol && v < mu - tol) {
        return domain(format!("eigenvalue {v} lies inside ({nu}, {mu})"));
    }
    let cut = values0.iter().filter(|&&v| v <= nu + tol).count();
    if cut == 0 || cut == values0.len() {
        return domain(format!("({nu}, {mu}) does not split the spectrum"));
    }
    Ok(cut)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HigherGapPoint {
    pub eps: f64,
    pub gamma: f64,
}

/// `γ(ν, μ, ε)`: distance between the branches starting at or below `ν` and
/// those starting at or above `μ`.
pub fn higher_gap_track(
    eta: &Interaction,
    phi: &Interaction,
    lam: &Interval,
    nu: f64,
    mu: f64,
    grid: &[f64],
) -> Result<Vec<HigherGapPoint>> {
    let path = PerturbedPath::new(eta, phi, lam)?;
    let cut = higher_gap_cut(&linalg::eigvalsh(&path.h0)?, nu, mu)?;
    let pts = path.track(grid, &[cut])?;
    Ok(higher_gap_points(&pts, cut))
}

pub fn higher_gap_points(pts: &[TrackedPoint], cut: usize) -> Vec<HigherGapPoint> {
    pts.iter().map(|p| HigherGapPoint { eps: p.eps, gamma: p.values[cut] - p.values[cut - 1] }).collect()
}

/// One row of the gap sweep dataset.
#[derive(Clone, Debug, Serialize)]
pub struct GapRow {
    pub model: String,
    pub length: usize,
    #[serde(rename = "D")]
    pub d: u64,
    pub eps: f64,
    pub gamma: f64,
    pub sp0_min: f64,
    pub sp0_max: f64,
    pub sp0_diam: f64,
    pub sp1_min: f64,
}

impl GapRow {
    pub fn new(model: &str, length: usize, d: u64, s: &SpectrumSplit) -> Self {
        GapRow {
            model: model.to_string(),
            length,
            d,
            eps: s.eps,
            gamma: s.gamma,
            sp0_min: s.sp0.first().copied().unwrap_or(f64::NAN),
            sp0_max: s.sp0.last().copied().unwrap_or(f64::NAN),
            sp0_diam: s.sp0_diam(),
            sp1_min: s.sp1.first().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Sp0Row {
    pub length: usize,
    #[serde(rename = "D")]
    pub d: u64,
    pub eps: f64,
    pub sp0_diam: f64,
    pub gamma: f64,
}

/// `diam sp₀` at a fixed `eps` with the perturbation truncated to its
/// `Int_D` part, for each `(Λ, D)` cell. The path from 0 to `eps` is tracked
/// (with automatic refinement) so the ground cluster is identified by continuity.
pub fn sp0_diameter_scan(
    eta: &Interaction,
    phi_for: &dyn Fn(&Interval) -> Result<Interaction>,
    cells: &[(Interval, u64)],
    eps: f64,
) -> Result<Vec<Sp0Row>> {
    let mut rows = Vec::with_capacity(cells.len());
    for (lam, d) in cells {
        let phi = phi_for(lam)?;
        let bulk = split_edge_bulk(&phi, lam, *d)?.bulk;
        let path = PerturbedPath::new(eta, &bulk, lam)?;
        let grid: Vec<f64> = if eps == 0.0 { vec![0.0] } else { vec![0.0, eps] };
        let pts = path.track(&grid, &[])?;
        let s = SpectrumSplit::from_point(pts.last().unwrap(), path.kernel_dim);
        rows.push(Sp0Row { length: lam.len(), d: *d, eps, sp0_diam: s.sp0_diam(), gamma: s.gamma });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Local projectors and layer families

/// Ground projectors `P_X` of the local Hamiltonians `H_X`, embedded into `Λ`
/// and cached by interval.
pub struct LocalProjectors<'a> {
    eta: &'a Interaction,
    pub lam: Interval,
    full: CMat,
    cache: Mutex<HashMap<Interval, CMat>>,
}

impl<'a> LocalProjectors<'a> {
    pub fn new(eta: &'a Interaction, lam: &Interval) -> Result<Self> {
        let full = Self::projector_on(eta, lam)?;
        Ok(LocalProjectors { eta, lam: *lam, full, cache: Mutex::new(HashMap::new()) })
    }

    fn projector_on(eta: &Interaction, iv: &Interval) -> Result<CMat> {
        let v = kernel_basis(&eta.local_hamiltonian_matrix(iv))?;
        Ok(&v * v.adjoint())
    }

    /// `P_Λ`.
    pub fn full(&self) -> &CMat {
        &self.full
    }

    /// `P_X ⊗ 1_{Λ∖X}`.
    pub fn on(&self, iv: &Interval) -> Result<CMat> {
        if !self.lam.contains_interval(iv) {
            return domain(format!("{iv} is not inside {}", self.lam));
        }
        if *iv == self.lam {
            return Ok(self.full.clone());
        }
        if let Some(p) = self.cache.lock().unwrap().get(iv) {
            return Ok(p.clone());
        }
        let local = Self::projector_on(self.eta, iv)?;
        let p = oa::embed_matrix(&local, self.eta.kind.local_dim(), iv, &self.lam);
        self.cache.lock().unwrap().insert(*iv, p.clone());
        Ok(p)
    }

    /// `P_{b_x(n)}`.
    pub fn ball(&self, x: Site, n: u64) -> Result<CMat> {
        self.on(&self.lam.ball(x, n)?)
    }

    pub fn family(&self, x: Site) -> Result<ProjectorFamily> {
        if !self.lam.in_interior(x, 2) {
            return domain(format!("site {x} is not in Int_2({})", self.lam));
        }
        let r = self.lam.boundary_distances(x)?.r;
        let mut locals = BTreeMap::new();
        for n in 0..=r {
            locals.insert(n, self.ball(x, n)?);
        }
        let dim = self.full.nrows();
        let mut e = Vec::with_capacity(r as usize + 2);
        e.push(&linalg::eye(dim) - &locals[&1]);
        for n in 2..=r {
            e.push(&locals[&(n - 1)] - &locals[&n]);
        }
        e.push(&locals[&r] - &self.full);
        e.push(self.full.clone());
        Ok(ProjectorFamily { x, r, p: self.full.clone(), locals, e })
    }
}

/// `P_Λ`, the ball projectors `P_{b_x(n)}` for `0 ≤ n ≤ r_x`, and the layers
/// `E_1, ..., E_{r_x+2}` (stored zero-based: `e[k-1] = E_k`).
#[derive(Clone, Debug)]
pub struct ProjectorFamily {
    pub x: Site,
    pub r: u64,
    pub p: CMat,
    pub locals: BTreeMap<u64, CMat>,
    pub e: Vec<CMat>,
}

impl ProjectorFamily {
    /// `E_k` with the one-based index used in the definitions.
    pub fn layer(&self, k: usize) -> &CMat {
        &self.e[k - 1]
    }
}

/// The layers `E_k^x` for `x ∈ Int_2(Λ)`.
pub fn resolution_family(eta: &Interaction, lam: &Interval, x: Site) -> Result<Vec<CMat>> {
    Ok(LocalProjectors::new(eta, lam)?.family(x)?.e)
}

/// Classes of `Int_2(Λ)` under `x ~ y ⟺ x - y ∈ (2n+1)ℤ`.
pub fn lattice_parts(lam: &Interval, n: u64) -> Vec<Vec<Site>> {
    let Some(int) = lam.interior(2) else { return Vec::new() };
    let m = 2 * n as Site + 1;
    let mut parts: BTreeMap<Site, Vec<Site>> = BTreeMap::new();
    for x in int.sites() {
        parts.entry(x.rem_euclid(m)).or_default().push(x);
    }
    parts.into_values().collect()
}

/// `S(σ) = Π_x [σ_x Q_{b_x(n)} + (1 - σ_x) P_{b_x(n)}]` over a part with
/// pairwise disjoint balls.
pub fn sigma_projection(projs: &LocalProjectors, part: &[Site], n: u64, sigma: &[bool]) -> Result<CMat> {
    if part.len() != sigma.len() {
        return domain("one bit per site of the part is required");
    }
    let balls: Vec<Interval> = part.iter().map(|&x| projs.lam.ball(x, n)).collect::<Result<_>>()?;
    for (i, bi) in balls.iter().enumerate() {
        for bj in &balls[i + 1..] {
            if bi.intersect(bj).is_some() {
                return Err(Error::Partition(format!("balls {bi} and {bj} overlap")));
            }
        }
    }
    let dim = projs.full().nrows();
    let mut s = linalg::eye(dim);
    for (&x, &bit) in part.iter().zip(sigma) {
        let p = projs.ball(x, n)?;
        let f = if bit { &linalg::eye(dim) - &p } else { p };
        s = &s * &f;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag_real, ONE, ZERO};
    use crate::operator_algebra::{sigma_x, Kind};

    fn op(m: CMat) -> LocalOperator {
        let n = m.nrows();
        let sites = (n as f64).log2().round() as usize;
        LocalOperator::new(m, Interval::chain(sites.max(1)).unwrap(), Kind::Spin(2)).unwrap()
    }

    #[test]
    fn diagonalize_trivial_cases() {
        let e = diagonalize(&op(linalg::eye(4))).unwrap();
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let e = diagonalize(&op(sigma_x())).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonalize_rejects_non_hermitian() {
        let m = linalg::from_rows(&[vec![ZERO, ONE], vec![ZERO, ZERO]]);
        assert!(matches!(diagonalize(&op(m)), Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn ground_projector_cases() {
        let p = ground_projector(&op(linalg::zeros(2, 2)), 1e-9).unwrap();
        assert!(linalg::max_abs_diff(&p.matrix, &linalg::eye(2)) < 1e-14);
        let h = LocalOperator { matrix: diag_real(&[0.0, 0.0, 1.0]), support: Interval::point(0), kind: Kind::Spin(3) };
        let p = ground_projector(&h, 1e-9).unwrap();
        assert!(linalg::max_abs_diff(&p.matrix, &diag_real(&[1.0, 1.0, 0.0])) < 1e-14);
        let h = op(diag_real(&[1.0, 2.0]));
        assert!(matches!(ground_projector(&h, 1e-9), Err(Error::Frustration { .. })));
    }

    #[test]
    fn tracking_refines_and_fails_at_crossings() {
        // Two levels crossing at eps = 0.5.
        let h0 = diag_real(&[0.0, 1.0]);
        let phi = diag_real(&[2.0, 0.0]);
        let pts = tracked_spectra(&h0, &phi, 2.0, &[0.0, 0.1, 0.2], &[1], 4).unwrap();
        assert_eq!(pts.len(), 3);
        let err = tracked_spectra(&h0, &phi, 2.0, &[0.0, 0.4, 0.6], &[1], 4).unwrap_err();
        match err {
            Error::TrackingAmbiguity { eps_lo, eps_hi, .. } => assert!(eps_lo >= 0.4 && eps_hi <= 0.6),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn grid_validation() {
        let h0 = diag_real(&[0.0, 1.0]);
        assert!(tracked_spectra(&h0, &h0, 1.0, &[0.1, 0.2], &[1], 2).is_err());
        assert!(tracked_spectra(&h0, &h0, 1.0, &[0.0, 0.2, 0.1], &[1], 2).is_err());
    }

    #[test]
    fn higher_gap_cut_rejects_interior_eigenvalues() {
        let v = [0.0, 1.0, 1.0, 2.0, 3.0];
        assert_eq!(higher_gap_cut(&v, 1.0, 2.0).unwrap(), 3);
        assert!(higher_gap_cut(&v, 0.5, 2.5).is_err());
        assert!(higher_gap_cut(&v, 3.5, 4.0).is_err());
    }

    #[test]
    fn lattice_parts_are_spaced() {
        let lam = Interval::new(0, 11).unwrap();
        let parts = lattice_parts(&lam, 1);
        assert_eq!(parts.len(), 3);
        let total: usize = parts.iter().map(Vec::len).sum();
        assert_eq!(total, 8);
        for p in &parts {
            assert!(p.windows(2).all(|w| w[1] - w[0] == 3));
        }
    }
}
