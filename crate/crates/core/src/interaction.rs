//! Finitely supported interactions on an interval: assembly of local
//! Hamiltonians, hypothesis checks for the unperturbed model, edge/bulk
//! splitting, interval regrouping and the even fermion-to-spin transform.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ffunction::{regroup_decay, DerivedFSpec, FFunctionSpec};
use crate::lattice::{Interval, Site};
use crate::linalg::{self, CMat, C64, ONE};
use crate::operator_algebra::{self as oa, Kind, LocalOperator, ParityGrade};

/// The subset a term is attached to.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    Interval { a: Site, b: Site },
    /// `b_Λ(center, radius)`; the operator's support is the clipped ball.
    Ball { center: Site, radius: u64 },
    /// An arbitrary finite set (sorted); the operator acts on its hull.
    Set { sites: Vec<Site> },
}

impl Region {
    pub fn interval(iv: Interval) -> Region {
        Region::Interval { a: iv.a, b: iv.b }
    }

    pub fn contains(&self, x: Site, support: &Interval) -> bool {
        match self {
            Region::Set { sites } => sites.binary_search(&x).is_ok(),
            _ => support.contains(x),
        }
    }

    /// Site a term is anchored at for the `Φ_x` sums.
    pub fn anchor(&self, support: &Interval) -> Site {
        match self {
            Region::Ball { center, .. } => *center,
            _ => support.ball_key().0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Term {
    pub region: Region,
    pub op: LocalOperator,
    norm: OnceLock<f64>,
}

impl Term {
    pub fn new(region: Region, op: LocalOperator) -> Self {
        Term { region, op, norm: OnceLock::new() }
    }

    pub fn support(&self) -> Interval {
        self.op.support
    }

    pub fn norm(&self) -> f64 {
        *self.norm.get_or_init(|| self.op.norm())
    }
}

#[derive(Clone, Debug)]
pub struct Interaction {
    pub kind: Kind,
    terms: BTreeMap<Region, Term>,
    pub decay: Option<FFunctionSpec>,
    /// Decay inherited from regrouping, when the plain spec no longer applies.
    pub derived_decay: Option<DerivedFSpec>,
    pub range: Option<u64>,
    pub uniform_bound: Option<f64>,
}

impl Interaction {
    pub fn new(kind: Kind) -> Self {
        Interaction {
            kind,
            terms: BTreeMap::new(),
            decay: None,
            derived_decay: None,
            range: None,
            uniform_bound: None,
        }
    }

    pub fn with_decay(mut self, decay: FFunctionSpec) -> Self {
        self.decay = Some(decay);
        self
    }

    /// Adds `op` at `region`, summing with any existing term there.
    pub fn insert(&mut self, region: Region, op: LocalOperator) -> Result<()> {
        if op.kind != self.kind {
            return domain(format!("term kind {:?} in a {:?} interaction", op.kind, self.kind));
        }
        match &region {
            Region::Interval { a, b } if (op.support.a, op.support.b) != (*a, *b) => {
                return domain(format!("interval key [{a},{b}] with support {}", op.support))
            }
            Region::Set { sites } => {
                if sites.is_empty() || sites.windows(2).any(|w| w[0] >= w[1]) {
                    return domain("set key must be sorted and nonempty");
                }
                if (op.support.a, op.support.b) != (sites[0], *sites.last().unwrap()) {
                    return domain("set term must act on the hull of its set");
                }
            }
            Region::Ball { center, radius } => {
                if !op.support.contains(*center) || op.support.a < center - *radius as Site
                    || op.support.b > center + *radius as Site
                {
                    return domain(format!("ball ({center},{radius}) with support {}", op.support));
                }
            }
            _ => {}
        }
        if self.kind == Kind::Fermion && oa::parity_grade(&op) != ParityGrade::Even {
            return Err(Error::Parity(format!("odd term on {} in an even fermionic interaction", op.support)));
        }
        let op = match self.terms.remove(&region) {
            Some(old) => old.op.add(&op)?,
            None => op,
        };
        self.terms.insert(region.clone(), Term::new(region, op));
        Ok(())
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.values()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, region: &Region) -> Option<&Term> {
        self.terms.get(region)
    }

    /// Hull of all supports.
    pub fn window(&self) -> Option<Interval> {
        self.terms().map(|t| t.support()).reduce(|a, b| a.hull(&b))
    }

    pub fn max_diameter(&self) -> u64 {
        self.terms().map(|t| t.support().diam()).max().unwrap_or(0)
    }

    pub fn max_norm(&self) -> f64 {
        self.terms().map(|t| t.norm()).fold(0.0, f64::max)
    }

    pub fn is_ball_supported(&self) -> bool {
        self.terms().all(|t| matches!(t.region, Region::Ball { .. }))
    }

    /// `(support, ‖Φ(Z)‖)` pairs for interval-like regions.
    pub fn support_norms(&self) -> Vec<(Interval, f64)> {
        self.terms().map(|t| (t.support(), t.norm())).collect()
    }

    /// Exact F-norm, honouring set-shaped regions.
    pub fn f_norm(&self, decay: &dyn crate::ffunction::Decay) -> f64 {
        if self.terms().all(|t| !matches!(t.region, Region::Set { .. })) {
            return crate::ffunction::f_norm_of_terms(&self.support_norms(), decay);
        }
        let Some(w) = self.window() else { return 0.0 };
        let mut best = 0.0f64;
        for x in w.sites() {
            for y in x..=w.b {
                let s: f64 = self
                    .terms()
                    .filter(|t| t.region.contains(x, &t.support()) && t.region.contains(y, &t.support()))
                    .map(|t| t.norm())
                    .sum();
                if s > 0.0 {
                    best = best.max(s / decay.eval((y - x) as f64));
                }
            }
        }
        best
    }

    /// `H_Λ = Σ_{X ⊆ Λ} Φ(X)` as a dense matrix; terms not inside `lam` are skipped.
    pub fn local_hamiltonian_matrix(&self, lam: &Interval) -> CMat {
        let n = oa::space_dim(self.kind, lam);
        let mut h = linalg::zeros(n, n);
        for t in self.terms() {
            if lam.contains_interval(&t.support()) {
                oa::accumulate(&mut h, lam, &t.op, ONE).expect("support checked");
            }
        }
        h
    }

    pub fn local_hamiltonian(&self, lam: &Interval) -> LocalOperator {
        LocalOperator { matrix: self.local_hamiltonian_matrix(lam), support: *lam, kind: self.kind }
    }

    /// Total Hamiltonian of a finite-volume interaction; any term escaping `lam` is an error.
    pub fn hamiltonian(&self, lam: &Interval) -> Result<LocalOperator> {
        if let Some(t) = self.terms().find(|t| !lam.contains_interval(&t.support())) {
            return domain(format!("term on {} escapes {lam}", t.support()));
        }
        Ok(self.local_hamiltonian(lam))
    }

    /// `Φ_x`: the terms anchored at each site, each summed and embedded into `lam`.
    pub fn anchored(&self, lam: &Interval) -> Result<BTreeMap<Site, LocalOperator>> {
        let mut out: BTreeMap<Site, LocalOperator> = BTreeMap::new();
        for t in self.terms() {
            if !lam.contains_interval(&t.support()) {
                return domain(format!("term on {} escapes {lam}", t.support()));
            }
            let x = t.region.anchor(&t.support());
            let emb = t.op.embed(lam)?;
            match out.get_mut(&x) {
                Some(acc) => acc.matrix = &acc.matrix + &emb.matrix,
                None => {
                    out.insert(x, emb);
                }
            }
        }
        Ok(out)
    }

    /// Scales every term by a real factor.
    pub fn scaled(&self, s: f64) -> Interaction {
        let mut out = Interaction { terms: BTreeMap::new(), ..self.clone() };
        for t in self.terms() {
            out.terms.insert(t.region.clone(), Term::new(t.region.clone(), t.op.scaled(linalg::re(s))));
        }
        out
    }

    /// Terms satisfying a predicate, keeping metadata.
    pub fn filtered(&self, keep: impl Fn(&Term) -> bool) -> Interaction {
        let mut out = Interaction { terms: BTreeMap::new(), ..self.clone() };
        for t in self.terms().filter(|t| keep(t)) {
            out.terms.insert(t.region.clone(), t.clone());
        }
        out
    }

    /// Merges two interactions of the same kind (terms on equal regions add up).
    pub fn merged(&self, other: &Interaction) -> Result<Interaction> {
        let mut out = self.clone();
        for t in other.terms() {
            out.insert(t.region.clone(), t.op.clone())?;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Hypothesis checks

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeResult {
    pub interval: Interval,
    pub ground_energy: f64,
    pub kernel_dim: usize,
    pub min_nonzero: Option<f64>,
    pub frustration_free: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnperturbedReport {
    pub range: u64,
    pub uniform_bound: f64,
    pub all_hermitian: bool,
    pub all_nonnegative: bool,
    pub frustration_free: bool,
    pub probes: Vec<ProbeResult>,
    /// Minimum nonzero eigenvalue over probes with `b - a ≥ R`.
    pub gamma0: Option<f64>,
    /// Largest probed length; gaps beyond it are not claimed.
    pub max_probed_length: usize,
}

impl UnperturbedReport {
    pub fn passed(&self) -> bool {
        self.all_hermitian && self.all_nonnegative && self.frustration_free && self.gamma0.is_some_and(|g| g > 0.0)
    }
}

/// Kernel threshold used throughout: `1e-9 · max(1, ‖H‖)`.
pub fn kernel_threshold(h_norm: f64) -> f64 {
    1e-9 * h_norm.max(1.0)
}

/// Checks finite range, uniform bound, frustration freeness and local gaps of
/// `eta` on the probe intervals `[a, a+len-1]` (with `a` the left end of the
/// window and, where it fits, one site further to catch sublattice effects).
pub fn validate_unperturbed(eta: &Interaction, lengths: &[usize]) -> Result<UnperturbedReport> {
    let window = eta.window().ok_or_else(|| Error::Domain("empty interaction".into()))?;
    let range = eta.max_diameter();
    let mut all_hermitian = true;
    let mut all_nonnegative = true;
    for t in eta.terms() {
        all_hermitian &= t.op.is_hermitian();
        let ev = linalg::eigvalsh(&linalg::hermitian_part(&t.op.matrix))?;
        all_nonnegative &= ev[0] >= -1e-12 * t.norm().max(1.0);
    }
    let mut probes = Vec::new();
    for &len in lengths {
        if len == 0 {
            return domain("probe length must be positive");
        }
        for shift in 0..2 {
            let a = window.a + shift;
            let b = a + len as Site - 1;
            if b > window.b {
                continue;
            }
            let lam = Interval::new(a, b)?;
            let h = eta.local_hamiltonian_matrix(&lam);
            let ev = linalg::eigvalsh(&h)?;
            let hn = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let thr = kernel_threshold(hn);
            let kernel_dim = ev.iter().filter(|v| v.abs() <= thr).count();
            let min_nonzero = ev.iter().copied().filter(|v| v.abs() > thr).reduce(f64::min);
            probes.push(ProbeResult {
                interval: lam,
                ground_energy: ev[0],
                kernel_dim,
                min_nonzero,
                frustration_free: kernel_dim > 0 && ev[0] >= -thr,
            });
        }
    }
    let frustration_free = !probes.is_empty() && probes.iter().all(|p| p.frustration_free);
    let gamma0 = probes
        .iter()
        .filter(|p| p.interval.diam() >= range && p.frustration_free)
        .filter_map(|p| p.min_nonzero)
        .reduce(f64::min);
    Ok(UnperturbedReport {
        range,
        uniform_bound: eta.max_norm(),
        all_hermitian,
        all_nonnegative,
        frustration_free,
        probes,
        gamma0,
        max_probed_length: lengths.iter().copied().max().unwrap_or(0),
    })
}

// ---------------------------------------------------------------------------
// Edge/bulk splitting

#[derive(Clone, Debug)]
pub struct EdgeBulkSplit {
    pub edge: Interaction,
    pub bulk: Interaction,
    pub d: u64,
}

/// `Φ^D = Σ_{x ∉ Int_D(Λ)} Φ_x` and `Φ^Int = Σ_{x ∈ Int_D(Λ)} Φ_x`.
pub fn split_edge_bulk(phi: &Interaction, lam: &Interval, d: u64) -> Result<EdgeBulkSplit> {
    if !phi.is_ball_supported() {
        return domain("edge/bulk splitting needs a ball-supported interaction");
    }
    let inside = |t: &Term| lam.in_interior(t.region.anchor(&t.support()), d);
    Ok(EdgeBulkSplit { edge: phi.filtered(|t| !inside(t)), bulk: phi.filtered(inside), d })
}

// ---------------------------------------------------------------------------
// Regrouping and re-keying

/// Interval-supported interaction with the same local Hamiltonians: each
/// `Ψ(X)` is moved to its hull `[min X, max X]`.
pub fn regroup_intervals(psi: &Interaction) -> Result<Interaction> {
    let mut out = Interaction::new(psi.kind);
    out.range = psi.range;
    out.uniform_bound = psi.uniform_bound;
    out.decay = psi.decay.clone();
    for t in psi.terms() {
        out.insert(Region::interval(t.support()), t.op.clone())?;
    }
    out.derived_decay = match &psi.decay {
        Some(d) => regroup_decay(d).ok(),
        None => None,
    };
    Ok(out)
}

/// Re-keys interval terms as balls `(⌈(p+q)/2⌉, ⌈(q-p)/2⌉)` clipped to `lam`.
pub fn rekey_as_balls(phi: &Interaction, lam: &Interval) -> Result<Interaction> {
    let mut out = Interaction { terms: BTreeMap::new(), ..phi.clone() };
    for t in regroup_intervals(phi)?.terms() {
        let (c, r) = t.support().ball_key();
        let ball = lam.ball(c, r)?;
        out.insert(Region::Ball { center: c, radius: r }, t.op.embed(&ball)?)?;
    }
    Ok(out)
}

/// Termwise Jordan-Wigner image of an even, interval-supported fermionic interaction.
pub fn fermion_to_spin(psi: &Interaction, ambient: &Interval) -> Result<Interaction> {
    if psi.kind != Kind::Fermion {
        return domain("fermion_to_spin needs a fermionic interaction");
    }
    let mut out = Interaction { kind: Kind::Spin(2), terms: BTreeMap::new(), ..psi.clone() };
    for t in psi.terms() {
        if oa::parity_grade(&t.op) != ParityGrade::Even {
            return Err(Error::Parity(format!("odd term on {}", t.support())));
        }
        let img = oa::jordan_wigner(&t.op, ambient)?;
        out.insert(t.region.clone(), img)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Serialize, Deserialize)]
struct TermRecord {
    region: Region,
    support: Interval,
    kind: Kind,
    /// Row-major `[re, im]` pairs.
    matrix: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct InteractionRecord {
    kind: Kind,
    decay: Option<FFunctionSpec>,
    range: Option<u64>,
    uniform_bound: Option<f64>,
    terms: Vec<TermRecord>,
}

pub fn matrix_to_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<[f64; 2]>]) -> CMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    linalg::from_fn(n, m, |i, j| C64::new(rows[i][j][0], rows[i][j][1]))
}

impl Interaction {
    pub fn to_json(&self) -> Result<String> {
        let rec = InteractionRecord {
            kind: self.kind,
            decay: self.decay.clone(),
            range: self.range,
            uniform_bound: self.uniform_bound,
            terms: self
                .terms()
                .map(|t| TermRecord {
                    region: t.region.clone(),
                    support: t.support(),
                    kind: t.op.kind,
                    matrix: matrix_to_rows(&t.op.matrix),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&rec)?)
    }

    pub fn from_json(s: &str) -> Result<Interaction> {
        let rec: InteractionRecord = serde_json::from_str(s)?;
        let mut out = Interaction::new(rec.kind);
        out.decay = rec.decay;
        out.range = rec.range;
        out.uniform_bound = rec.uniform_bound;
        for t in rec.terms {
            let op = LocalOperator::new(matrix_from_rows(&t.matrix), t.support, t.kind)?;
            out.insert(t.region, op)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: Site, b: Site) -> Interval {
        Interval::new(a, b).unwrap()
    }

    #[test]
    fn zero_interaction_gives_zero_hamiltonian() {
        let phi = Interaction::new(Kind::Spin(2));
        let h = phi.local_hamiltonian(&iv(0, 2));
        assert_eq!(linalg::max_abs(&h.matrix), 0.0);
    }

    #[test]
    fn strict_hamiltonian_rejects_escaping_terms() {
        let mut phi = Interaction::new(Kind::Spin(2));
        let z = LocalOperator::new(oa::sigma_z(), iv(3, 3), Kind::Spin(2)).unwrap();
        phi.insert(Region::interval(iv(3, 3)), z).unwrap();
        assert!(phi.hamiltonian(&iv(0, 2)).is_err());
        assert_eq!(linalg::max_abs(&phi.local_hamiltonian(&iv(0, 2)).matrix), 0.0);
    }

    #[test]
    fn odd_fermion_term_rejected() {
        let mut phi = Interaction::new(Kind::Fermion);
        let a = oa::annihilation(&iv(0, 0), 0).unwrap();
        assert!(matches!(phi.insert(Region::interval(iv(0, 0)), a), Err(Error::Parity(_))));
    }

    #[test]
    fn set_term_regroups_to_hull() {
        let mut psi = Interaction::new(Kind::Spin(2));
        let m = linalg::kron(&linalg::kron(&oa::sigma_z(), &linalg::eye(2)), &oa::sigma_x());
        let op = LocalOperator::new(m, iv(0, 2), Kind::Spin(2)).unwrap();
        psi.insert(Region::Set { sites: vec![0, 2] }, op).unwrap();
        let phi = regroup_intervals(&psi).unwrap();
        assert!(phi.get(&Region::interval(iv(0, 2))).is_some());
        let lam = iv(0, 2);
        assert_eq!(linalg::max_abs_diff(&psi.local_hamiltonian(&lam).matrix, &phi.local_hamiltonian(&lam).matrix), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let mut phi = Interaction::new(Kind::Spin(2));
        let op = LocalOperator::new(oa::sigma_y(), iv(1, 1), Kind::Spin(2)).unwrap();
        phi.insert(Region::Ball { center: 1, radius: 0 }, op).unwrap();
        let s = phi.to_json().unwrap();
        let back = Interaction::from_json(&s).unwrap();
        let t = back.get(&Region::Ball { center: 1, radius: 0 }).unwrap();
        assert_eq!(linalg::max_abs_diff(&t.op.matrix, &oa::sigma_y()), 0.0);
    }
}
