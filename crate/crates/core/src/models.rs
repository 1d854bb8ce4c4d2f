//! Model builders: the quasi-free orbital model with its structural checks,
//! the AKLT chain, and seeded random even perturbations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ffunction::{FFunctionSpec, Weight};
use crate::interaction::{split_edge_bulk, EdgeBulkSplit, Interaction, Region};
use crate::lattice::{Interval, Site};
use crate::linalg::{self, CMat, C64, ONE, ZERO};
use crate::ltqo::{GroundState, LtqoProfile, ProbeMap, WitnessOptions};
use crate::operator_algebra::{self as oa, Kind, LocalOperator};

/// A finitely supported vector of `ℓ²(ℤ)` with a designated center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orbital {
    pub center: Site,
    /// Nonzero coefficients, sorted by site.
    pub coeffs: Vec<(Site, C64)>,
}

impl Orbital {
    pub fn new(center: Site, mut coeffs: Vec<(Site, C64)>) -> Result<Self> {
        coeffs.retain(|c| c.1 != ZERO);
        coeffs.sort_by_key(|c| c.0);
        if coeffs.is_empty() || coeffs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Model("orbital needs distinct sites and a nonzero coefficient".into()));
        }
        Ok(Orbital { center, coeffs })
    }

    pub fn support(&self) -> Interval {
        Interval { a: self.coeffs[0].0, b: self.coeffs.last().unwrap().0 }
    }

    pub fn coeff(&self, x: Site) -> C64 {
        self.coeffs.iter().find(|c| c.0 == x).map_or(ZERO, |c| c.1)
    }

    fn inner(&self, other: &Orbital) -> C64 {
        self.coeffs.iter().map(|&(x, c)| c.conj() * other.coeff(x)).sum()
    }
}

/// Two orthonormal orbital families and the model's length scales.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitalModel {
    pub f_orbitals: Vec<Orbital>,
    pub g_orbitals: Vec<Orbital>,
    #[serde(rename = "R")]
    pub range: u64,
    #[serde(rename = "N0")]
    pub n0: u64,
}

impl OrbitalModel {
    /// Bonding orbitals `(|2k⟩ + |2k+1⟩)/√2` centered at `2k` and antibonding
    /// orbitals `(|2k⟩ - |2k+1⟩)/√2` centered at `2k+1`, for every pair
    /// meeting `window`. `R = 1`, `N0 = 2`.
    pub fn default_instance(window: &Interval) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut f_orbitals = Vec::new();
        let mut g_orbitals = Vec::new();
        for k in window.a.div_euclid(2)..=window.b.div_euclid(2) {
            let (x, y) = (2 * k, 2 * k + 1);
            f_orbitals.push(Orbital { center: x, coeffs: vec![(x, linalg::re(h)), (y, linalg::re(h))] });
            g_orbitals.push(Orbital { center: y, coeffs: vec![(x, linalg::re(h)), (y, linalg::re(-h))] });
        }
        OrbitalModel { f_orbitals, g_orbitals, range: 1, n0: 2 }
    }

    /// `D = max(N0, 3R)`.
    pub fn d(&self) -> u64 {
        self.n0.max(3 * self.range)
    }

    fn all(&self) -> impl Iterator<Item = &Orbital> {
        self.f_orbitals.iter().chain(&self.g_orbitals)
    }

    /// Orbitals whose support lies in `lam`: `(𝒳_Λ, 𝒴_Λ)`.
    pub fn in_volume(&self, lam: &Interval) -> (Vec<&Orbital>, Vec<&Orbital>) {
        let inside = |o: &&Orbital| lam.contains_interval(&o.support());
        (self.f_orbitals.iter().filter(inside).collect(), self.g_orbitals.iter().filter(inside).collect())
    }

    /// Checks orthonormality, localization, per-family disjointness of
    /// supports, and that every subinterval of `lam` with diameter above `N0`
    /// holds an orbital of each family.
    pub fn validate(&self, lam: &Interval) -> Result<()> {
        let all: Vec<&Orbital> = self.all().collect();
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate().skip(i) {
                let target = if i == j { ONE } else { ZERO };
                let dev = (a.inner(b) - target).norm();
                if dev > 1e-12 {
                    return Err(Error::Model(format!(
                        "orbitals centered at {} and {} are not orthonormal (deviation {dev:e})",
                        a.center, b.center
                    )));
                }
            }
            let r = self.range as Site;
            let s = a.support();
            if s.a < a.center - r || s.b > a.center + r {
                return Err(Error::Model(format!("orbital at {} leaves its {}-ball", a.center, self.range)));
            }
        }
        for fam in [&self.f_orbitals, &self.g_orbitals] {
            for (i, a) in fam.iter().enumerate() {
                for b in &fam[i + 1..] {
                    if a.center == b.center || a.support().intersect(&b.support()).is_some() {
                        return Err(Error::Model(format!(
                            "orbitals centered at {} and {} overlap",
                            a.center, b.center
                        )));
                    }
                }
            }
        }
        let w = self.n0 as Site + 1;
        for a in lam.a..=lam.b - w {
            let sub = Interval { a, b: a + w };
            let (xs, ys) = self.in_volume(&sub);
            if xs.is_empty() || ys.is_empty() {
                return Err(Error::Model(format!("{sub} holds no orbital of one family")));
            }
        }
        Ok(())
    }
}

/// `a(f) = Σ_x conj(f_x) a(x)` on the Fock space of `lam`.
pub fn mode_annihilation(lam: &Interval, orbital: &Orbital) -> Result<LocalOperator> {
    let n = 1usize << lam.len();
    let mut m = linalg::zeros(n, n);
    for &(x, c) in &orbital.coeffs {
        linalg::add_scaled(&mut m, &oa::annihilation(lam, x)?.matrix, c.conj());
    }
    LocalOperator::new(m, *lam, Kind::Fermion)
}

fn mode_number(lam: &Interval, orbital: &Orbital) -> Result<CMat> {
    let a = mode_annihilation(lam, orbital)?.matrix;
    Ok(a.adjoint() * &a)
}

/// `η(b(x_i,R)) = 1 - a*(f_i)a(f_i)` and `η(b(y_j,R)) = a*(g_j)a(g_j)`, each
/// acting on the support of its orbital.
pub fn orbital_interaction(model: &OrbitalModel) -> Result<Interaction> {
    let mut eta = Interaction::new(Kind::Fermion);
    let radius = model.range;
    for f in &model.f_orbitals {
        let s = f.support();
        let m = &linalg::eye(1 << s.len()) - &mode_number(&s, f)?;
        eta.insert(Region::Ball { center: f.center, radius }, LocalOperator::new(m, s, Kind::Fermion)?)?;
    }
    for g in &model.g_orbitals {
        let s = g.support();
        eta.insert(Region::Ball { center: g.center, radius }, LocalOperator::new(mode_number(&s, g)?, s, Kind::Fermion)?)?;
    }
    eta.range = Some(eta.max_diameter());
    eta.uniform_bound = Some(1.0);
    Ok(eta)
}

/// Orthonormal completion `𝒵(Λ)` of the orbitals inside `lam`; vectors are
/// indexed by offset in `lam`.
pub fn auxiliary_basis(model: &OrbitalModel, lam: &Interval) -> Result<Vec<Vec<C64>>> {
    if lam.diam() <= model.n0 {
        return domain(format!("{lam} has diameter at most N0 = {}", model.n0));
    }
    let (xs, ys) = model.in_volume(lam);
    let n = lam.len();
    let mut q = linalg::eye(n);
    for o in xs.iter().chain(&ys) {
        for &(x, cx) in &o.coeffs {
            for &(y, cy) in &o.coeffs {
                q[(lam.offset(x)?, lam.offset(y)?)] -= cx * cy.conj();
            }
        }
    }
    let e = linalg::eigh(&linalg::hermitian_part(&q))?;
    let vectors: Vec<Vec<C64>> = e
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.5)
        .map(|(j, _)| (0..n).map(|i| e.vectors[(i, j)]).collect())
        .collect();
    let bound = 6 * model.range as usize;
    if vectors.len() > bound {
        return Err(Error::Model(format!("|Z(Λ)| = {} exceeds 6R = {bound}", vectors.len())));
    }
    if let Some(int) = lam.interior(3 * model.range) {
        for v in &vectors {
            for x in int.sites() {
                let c = v[lam.offset(x)?].norm();
                if c > 1e-12 {
                    return Err(Error::Model(format!("auxiliary vector has weight {c:e} at interior site {x}")));
                }
            }
        }
    }
    Ok(vectors)
}

/// Largest deviation between the site operators `a(x)`, `x ∈ Int_{3R}(Λ)`,
/// and their orbital expansions `Σ_e e_x a(e)`, including the even
/// monomials `a*(x)a(y)` and `a(x)a(y)` built from them.
pub fn orbital_calculus_residual(model: &OrbitalModel, lam: &Interval) -> Result<f64> {
    if lam.diam() <= 6 * model.range {
        return domain("the interior Int_{3R} is too small");
    }
    let int = lam.interior(3 * model.range).expect("diameter checked");
    let (xs, ys) = model.in_volume(lam);
    let modes: Vec<(&Orbital, CMat)> =
        xs.into_iter().chain(ys).map(|o| Ok((o, mode_annihilation(lam, o)?.matrix))).collect::<Result<_>>()?;
    let dim = 1usize << lam.len();
    let mut site_ops = Vec::new();
    let mut worst = 0.0f64;
    for x in int.sites() {
        let mut expanded = linalg::zeros(dim, dim);
        for (o, a) in &modes {
            linalg::add_scaled(&mut expanded, a, o.coeff(x));
        }
        let direct = oa::annihilation(lam, x)?.matrix;
        worst = worst.max(linalg::max_abs_diff(&direct, &expanded));
        site_ops.push((direct, expanded));
    }
    for (ax, ex) in &site_ops {
        for (ay, ey) in &site_ops {
            let hop = linalg::max_abs_diff(&(ax.adjoint() * ay), &(ex.adjoint() * ey));
            let pair = linalg::max_abs_diff(&(ax * ay), &(ex * ey));
            worst = worst.max(hop).max(pair);
        }
    }
    Ok(worst)
}

/// All probes `(x, n, k)` of `lam` with `k ≤ max_k`.
pub fn default_probes(lam: &Interval, max_k: u64) -> Result<Vec<(Site, u64, u64)>> {
    let mut out = Vec::new();
    for x in lam.sites() {
        let bd = lam.boundary_distances(x)?;
        for n in 0..=bd.big_r {
            for k in 0..=max_k.min(bd.r).min(n) {
                out.push((x, n, k));
            }
        }
    }
    Ok(out)
}

/// Even-observable LTQO witnesses for the orbital model. Every probe with
/// separation at least `D` must certify an exact zero.
pub fn verify_orbital_ltqo(model: &OrbitalModel, lam: &Interval, probes: &[(Site, u64, u64)]) -> Result<LtqoProfile> {
    let d = model.d();
    if lam.diam() <= 2 * d {
        return domain(format!("{lam} needs diameter above 2D = {}", 2 * d));
    }
    let eta = orbital_interaction(model)?;
    let ground = GroundState::new(&eta, lam)?;
    let mut samples = Vec::with_capacity(probes.len());
    for &(x, n, k) in probes {
        let w = ProbeMap::new(&eta, &ground, x, n, k, true)?.witness(&WitnessOptions::default())?;
        if w.separation >= d && !w.exact_zero {
            return Err(Error::Model(format!(
                "probe (x={x}, n={n}, k={k}) at separation {} is not exactly zero (residual {:e})",
                w.separation, w.basis_residual
            )));
        }
        samples.push(w);
    }
    Ok(LtqoProfile::from_samples(samples))
}

// ---------------------------------------------------------------------------
// AKLT

/// Projector onto total spin 2 of two spin-1 sites, basis `|+1⟩, |0⟩, |-1⟩`
/// per site, assembled from Clebsch-Gordan vectors.
pub fn aklt_pair_projector() -> CMat {
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let s6 = 1.0 / 6f64.sqrt();
    // index of |m1, m2⟩ with m = +1, 0, -1 -> 0, 1, 2
    let idx = |a: usize, b: usize| 3 * a + b;
    let states: [Vec<(usize, f64)>; 5] = [
        vec![(idx(0, 0), 1.0)],
        vec![(idx(0, 1), s2), (idx(1, 0), s2)],
        vec![(idx(0, 2), s6), (idx(1, 1), 2.0 * s6), (idx(2, 0), s6)],
        vec![(idx(1, 2), s2), (idx(2, 1), s2)],
        vec![(idx(2, 2), 1.0)],
    ];
    let mut p = linalg::zeros(9, 9);
    for st in &states {
        for &(i, a) in st {
            for &(j, b) in st {
                p[(i, j)] += linalg::re(a * b);
            }
        }
    }
    p
}

/// Nearest-neighbor AKLT interaction on `lam`.
pub fn aklt_interaction(lam: &Interval) -> Result<Interaction> {
    if lam.len() < 2 {
        return domain("the AKLT chain needs at least two sites");
    }
    let p = aklt_pair_projector();
    let mut eta = Interaction::new(Kind::Spin(3));
    for x in lam.a..lam.b {
        let s = Interval { a: x, b: x + 1 };
        eta.insert(Region::interval(s), LocalOperator::new(p.clone(), s, Kind::Spin(3))?)?;
    }
    eta.range = Some(1);
    eta.uniform_bound = Some(1.0);
    Ok(eta)
}

// ---------------------------------------------------------------------------
// Random perturbations

/// Envelope `A e^{-K n^s}/(1+n)^κ` for terms on balls of radius `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub s: f64,
    pub kappa: f64,
    /// Largest ball radius drawn; caps the dense term size at `d^{2·max_radius+1}`.
    pub max_radius: u64,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        PerturbationParams { amplitude: 1.0, k: 1.0, s: 1.0, kappa: 3.0, max_radius: 4 }
    }
}

impl PerturbationParams {
    pub fn envelope(&self, n: u64) -> f64 {
        let n = n as f64;
        self.amplitude * (-self.k * n.powf(self.s)).exp() / (1.0 + n).powf(self.kappa)
    }

    fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.k > 0.0 && self.kappa > 0.0) {
            return domain("perturbation needs A ≥ 0, K > 0 and κ > 0");
        }
        if !(self.s > 0.0 && self.s <= 1.0) {
            return domain("perturbation needs s in (0, 1]");
        }
        Ok(())
    }

    /// F-function dominating the envelope in terms of pair distance `r ≤ 2n`.
    pub fn decay(&self) -> Option<FFunctionSpec> {
        let w = Weight::StretchedExp { k: self.k / 2f64.powf(self.s), s: self.s };
        FFunctionSpec::new(1.0, 0.5, self.kappa, w).ok()
    }
}

#[derive(Clone, Debug)]
pub struct RandomPerturbation {
    pub whole: Interaction,
    pub split: EdgeBulkSplit,
}

/// Seeded ball-keyed perturbation on `lam`: for each `x` and `n ≤ min(R_x,
/// max_radius)` a Gaussian Hermitian matrix on `b_Λ(x,n)`, projected onto its
/// even part and rescaled to operator norm `envelope(n)`. Draw order is
/// `x` ascending, then `n` ascending.
pub fn random_even_perturbation(
    lam: &Interval,
    d: u64,
    params: &PerturbationParams,
    seed: u64,
    kind: Kind,
) -> Result<RandomPerturbation> {
    params.validate()?;
    if !matches!(kind, Kind::Fermion | Kind::Spin(2)) {
        return domain("even perturbations are defined on two-level sites");
    }
    let mut phi = Interaction::new(kind);
    phi.decay = params.decay();
    if params.amplitude > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in lam.sites() {
            let big_r = lam.boundary_distances(x)?.big_r;
            for n in 0..=big_r.min(params.max_radius) {
                let ball = lam.ball(x, n)?;
                let dim = 1usize << ball.len();
                let raw = linalg::from_fn(dim, dim, |_, _| {
                    C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
                });
                let (even, _) = oa::parity_parts(&linalg::hermitian_part(&raw));
                let norm = linalg::op_norm(&even);
                let m = linalg::scale(&even, linalg::re(params.envelope(n) / norm));
                phi.insert(Region::Ball { center: x, radius: n }, LocalOperator::new(m, ball, kind)?)?;
            }
        }
    }
    phi.range = None;
    let split = split_edge_bulk(&phi, lam, d)?;
    Ok(RandomPerturbation { whole: phi, split })
}
