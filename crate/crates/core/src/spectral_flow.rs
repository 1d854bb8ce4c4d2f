//! Quasi-adiabatic spectral flow on a finite chain: the filtered generator
//! `D(ε)`, the unitary path `U(ε)` with `P(ε) = U(ε) P(0) U(ε)*`, the
//! ball-term decomposition of `α_ε(H(ε)) - H` and its regrouping into the
//! `Φ²`, `Φ³`, `ℛ`, `Θ_β`, `Θ_α` pieces.
//!
//! Conventions: `dU/dε = i D(ε) U(ε)`, `α_ε(A) = U(ε)* A U(ε)`, and in the
//! eigenbasis of `H(ε)` the generator is `D_ab = i (1 - ŵ(ω))/ω · Ψ_ab` with
//! `ω = E_a - E_b`, where `ŵ` is a smooth bump supported in `(-γ, γ)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::ffunction::{f_norm_of_terms, Decay};
use crate::interaction::Interaction;
use crate::lattice::{Interval, Site};
use crate::linalg::{self, CMat, Eigh, C64};
use crate::ltqo::OmegaModel;
use crate::operator_algebra::{self as oa, Kind, LocalOperator};
use crate::spectra::{LocalProjectors, ProjectorFamily};

/// `ŵ(ω) = exp(1 - 1/(1 - (ω/γ)²))` on `|ω| < γ`, zero outside; `ŵ(0) = 1`.
pub fn bump(omega: f64, gamma: f64) -> f64 {
    let x = omega / gamma;
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    }
}

/// `(1 - ŵ(ω))/ω`, continuous through `ω = 0`.
pub fn filter(omega: f64, gamma: f64) -> f64 {
    if omega == 0.0 {
        return 0.0;
    }
    (1.0 - bump(omega, gamma)) / omega
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMethod {
    EigenbasisFilter,
    TimeQuadrature,
}

/// Calls `f(k, cos(k x))` for `k = 1..=n`, by repeated rotation with an exact
/// reseed every 64 steps.
fn for_each_cos(x: f64, n: usize, mut f: impl FnMut(usize, f64)) {
    let step = C64::from_polar(1.0, x);
    let mut z = step;
    for k in 1..=n {
        if k % 64 == 0 {
            z = C64::from_polar(1.0, k as f64 * x);
        }
        f(k, z.re);
        z *= step;
    }
}

/// `w` at `t_j = j h` for `j = 0..=count`, by the trapezoidal rule in
/// frequency. The rule sums `w` over images spaced `period` apart, so
/// `period` must exceed `2 count h` by the decay length of `w`.
fn weight_samples(gamma: f64, h: f64, count: usize, period: f64) -> Vec<f64> {
    let dw = 2.0 * std::f64::consts::PI / period;
    let k_max = (gamma / dw).floor() as usize;
    let amps: Vec<f64> = (1..=k_max).map(|k| bump(k as f64 * dw, gamma)).collect();
    let norm = dw / (2.0 * std::f64::consts::PI);
    (0..=count)
        .into_par_iter()
        .map(|j| {
            let mut s = 0.0;
            for_each_cos(dw * j as f64 * h, k_max, |k, c| s += amps[k - 1] * c);
            norm * (1.0 + 2.0 * s)
        })
        .collect()
}

/// Distance beyond which `|w(t)|` is below double precision relative to `w(0)`.
fn decay_length(gamma: f64) -> f64 {
    1000.0 / gamma
}

/// Time-domain weight `w(t) = (1/π) ∫_0^γ ŵ(ω) cos(ωt) dω`, whose Fourier
/// transform is the bump. `∫ w = 1`.
pub fn time_weight(t: f64, gamma: f64) -> f64 {
    let t = t.abs();
    weight_samples(gamma, t, 1, 2.0 * t + decay_length(gamma))[1]
}

/// Quadrature of `(1 - ŵ(ω))/ω = ∫ w(t) (1 - cos ωt)/ω dt` on `[-T, T]`,
/// used to cross-check the eigenbasis filter. The integrand is band limited
/// to `|ξ| ≤ γ + |ω|`, so the trapezoidal rule with step `π/(γ + ω_max)` is
/// exact on the whole line and the only error is truncation at `T`.
#[derive(Clone, Debug)]
pub struct TimeQuadrature {
    pub gamma: f64,
    pub omega_max: f64,
    pub horizon: f64,
    pub step: f64,
    /// Estimated truncation error `2∫_T^{2T} |w(t)| t dt`.
    pub truncation: f64,
    /// `w(j h)` for `j = 1..=T/h`.
    weights: Vec<f64>,
}

impl TimeQuadrature {
    /// Rule exact for `|ω| ≤ omega_max`, truncated once the tail estimate
    /// falls below `tail_tol`.
    pub fn new(gamma: f64, omega_max: f64, tail_tol: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(omega_max >= 0.0) || !(tail_tol > 0.0) {
            return domain("time quadrature needs gamma > 0, omega_max ≥ 0 and a positive tolerance");
        }
        // The tail estimate only needs the envelope, and w oscillates at
        // frequencies up to γ.
        let coarse = std::f64::consts::PI / (2.0 * gamma);
        let tail = |t0: f64| {
            let (j0, j1) = ((t0 / coarse).floor() as usize, (2.0 * t0 / coarse).ceil() as usize);
            let w = weight_samples(gamma, coarse, j1, 4.0 * t0 + decay_length(gamma));
            2.0 * coarse * (j0..=j1).map(|j| w[j].abs() * j as f64 * coarse).sum::<f64>()
        };
        let mut horizon = 50.0 / gamma;
        let mut truncation = tail(horizon);
        while truncation > tail_tol {
            horizon *= 2.0;
            if horizon > 1e5 / gamma {
                return Err(Error::Divergence("time weight tail does not converge".into()));
            }
            truncation = tail(horizon);
        }
        let step = std::f64::consts::PI / (gamma + omega_max);
        let count = (horizon / step).ceil() as usize;
        let mut weights = weight_samples(gamma, step, count, 2.0 * horizon + decay_length(gamma));
        weights.remove(0);
        Ok(TimeQuadrature { gamma, omega_max, horizon, step, truncation, weights })
    }

    /// `(2h/ω) Σ_{j≥1} w(jh) (1 - cos jhω)`, using evenness of `w`. Only valid
    /// for `|ω| ≤ omega_max`.
    pub fn filter(&self, omega: f64) -> f64 {
        if omega == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for_each_cos(self.step * omega, self.weights.len(), |j, c| s += self.weights[j - 1] * (1.0 - c));
        2.0 * self.step * s / omega
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn gap_after(values: &[f64], ground_dim: usize) -> f64 {
    if ground_dim == 0 || ground_dim >= values.len() {
        return f64::INFINITY;
    }
    values[ground_dim] - values[ground_dim - 1]
}

/// `D` from an eigendecomposition of `H(ε)`; the gap above the lowest
/// `ground_dim` levels must be at least `gamma`.
fn generator_from(
    e: &Eigh,
    psi: &CMat,
    gamma: f64,
    ground_dim: usize,
    eps: f64,
    method: GeneratorMethod,
) -> Result<CMat> {
    let gap = gap_after(&e.values, ground_dim);
    if gap < gamma {
        return Err(Error::GapClosed { eps, gap, gamma });
    }
    let n = e.values.len();
    let pe = e.to_eigenbasis(psi);
    let vals = &e.values;
    let f: Box<dyn Fn(f64) -> f64 + Sync> = match method {
        GeneratorMethod::EigenbasisFilter => Box::new(move |w| filter(w, gamma)),
        GeneratorMethod::TimeQuadrature => {
            let spread = vals[n - 1] - vals[0];
            let q = TimeQuadrature::new(gamma, spread, 1e-8)?;
            Box::new(move |w| q.filter(w))
        }
    };
    let scale = linalg::max_abs(&pe);
    let rows: Vec<Vec<C64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    let p = pe[(a, b)];
                    if b < a || p.norm() <= 1e-300 * scale.max(1.0) {
                        C64::new(0.0, 0.0)
                    } else {
                        C64::new(0.0, f(vals[a] - vals[b])) * p
                    }
                })
                .collect()
        })
        .collect();
    let mut d = linalg::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            d[(a, b)] = rows[a][b];
            d[(b, a)] = rows[a][b].conj();
        }
    }
    Ok(linalg::hermitian_part(&e.from_eigenbasis(&d)))
}

/// The generator `D(ε)` for `H(ε)` and perturbation `Ψ`, both on the same
/// volume. `ground_dim` is the size of the tracked lower cluster.
pub fn flow_generator(
    h: &LocalOperator,
    psi: &LocalOperator,
    gamma: f64,
    ground_dim: usize,
    method: GeneratorMethod,
) -> Result<LocalOperator> {
    if h.support != psi.support || h.kind != psi.kind {
        return domain("H and Ψ must act on the same volume");
    }
    if !(gamma > 0.0) {
        return domain("gamma must be positive");
    }
    let e = linalg::eigh(&linalg::hermitian_part(&h.matrix))?;
    let d = generator_from(&e, &psi.matrix, gamma, ground_dim, f64::NAN, method)?;
    Ok(LocalOperator { matrix: d, support: h.support, kind: h.kind })
}

/// `A ↦ Σ_ab ŵ(E_a - E_b) A_ab |a⟩⟨b|` in the eigenbasis of `H(ε)`.
fn bump_filtered(e: &Eigh, a: &CMat, gamma: f64) -> CMat {
    let mut m = e.to_eigenbasis(a);
    let n = e.values.len();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= bump(e.values[i] - e.values[j], gamma);
        }
    }
    e.from_eigenbasis(&m)
}

// ---------------------------------------------------------------------------
// Unitary path

/// Everything the flow needs on a fixed volume: `H = Σ η_x`, `Ψ = Σ Ψ_x`
/// with both interactions restricted to `lam` and anchored at ball centers.
#[derive(Clone, Debug)]
pub struct FlowSetup {
    pub lam: Interval,
    pub kind: Kind,
    pub h0: CMat,
    pub psi: CMat,
    pub eta_x: BTreeMap<Site, CMat>,
    pub psi_x: BTreeMap<Site, CMat>,
    pub ground_dim: usize,
    pub p0: CMat,
    pub gamma: f64,
}

fn anchored_matrices(phi: &Interaction, lam: &Interval) -> Result<BTreeMap<Site, CMat>> {
    let inside = phi.filtered(|t| lam.contains_interval(&t.support()));
    Ok(inside.anchored(lam)?.into_iter().map(|(x, op)| (x, op.matrix)).collect())
}

impl FlowSetup {
    pub fn new(eta: &Interaction, psi: &Interaction, lam: &Interval, gamma: f64) -> Result<Self> {
        if eta.kind != psi.kind {
            return domain("η and Ψ act on different local spaces");
        }
        if !(gamma > 0.0) {
            return domain("gamma must be positive");
        }
        let h0 = eta.local_hamiltonian_matrix(lam);
        let psi_m = psi.local_hamiltonian_matrix(lam);
        let p0_basis = crate::spectra::kernel_basis(&h0)?;
        let ground_dim = p0_basis.ncols();
        let p0 = &p0_basis * p0_basis.adjoint();
        Ok(FlowSetup {
            lam: *lam,
            kind: eta.kind,
            h0,
            psi: psi_m,
            eta_x: anchored_matrices(eta, lam)?,
            psi_x: anchored_matrices(psi, lam)?,
            ground_dim,
            p0,
            gamma,
        })
    }

    pub fn hamiltonian(&self, eps: f64) -> CMat {
        &self.h0 + &linalg::scale(&self.psi, linalg::re(eps))
    }

    pub fn eigh(&self, eps: f64) -> Result<Eigh> {
        linalg::eigh(&self.hamiltonian(eps))
    }

    /// `P(ε)`, the projector onto the lowest `ground_dim` levels of `H(ε)`.
    pub fn projector(&self, e: &Eigh) -> CMat {
        e.projector(0..self.ground_dim)
    }

    pub fn generator(&self, eps: f64, method: GeneratorMethod) -> Result<CMat> {
        let e = self.eigh(eps)?;
        generator_from(&e, &self.psi, self.gamma, self.ground_dim, eps, method)
    }

    /// `‖P(ε) - U P(0) U*‖`.
    pub fn intertwining_residual(&self, eps: f64, u: &CMat) -> Result<f64> {
        let e = self.eigh(eps)?;
        let moved = linalg::mul3(u, &self.p0, &u.adjoint().to_owned());
        Ok(linalg::op_norm(&(&self.projector(&e) - &moved)))
    }

    /// All anchors carrying an `η` or `Ψ` term.
    pub fn anchors(&self) -> Vec<Site> {
        let mut xs: Vec<Site> = self.eta_x.keys().chain(self.psi_x.keys()).copied().collect();
        xs.sort_unstable();
        xs.dedup();
        xs
    }
}

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub method: GeneratorMethod,
    /// Target for the intertwining residual at each grid point.
    pub tol: f64,
    /// Maximum number of step halvings per grid interval.
    pub max_halvings: u32,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { method: GeneratorMethod::EigenbasisFilter, tol: 1e-10, max_halvings: 10 }
    }
}

#[derive(Clone, Debug)]
pub struct FlowResult {
    pub eps_grid: Vec<f64>,
    pub unitaries: Vec<CMat>,
    pub generators: Vec<CMat>,
    /// `‖P(ε) - U P(0) U*‖` per grid point.
    pub residuals: Vec<f64>,
    /// `max |U*U - 1|` per grid point.
    pub unitarity: Vec<f64>,
    /// RK4 substeps used on the interval ending at each grid point.
    pub substeps: Vec<usize>,
}

fn rk4_segment(
    setup: &FlowSetup,
    method: GeneratorMethod,
    u0: &CMat,
    e0: f64,
    e1: f64,
    steps: usize,
    d0: &CMat,
) -> Result<CMat> {
    let h = (e1 - e0) / steps as f64;
    let i = C64::new(0.0, 1.0);
    let mut u = u0.clone();
    let mut d_start = d0.clone();
    for s in 0..steps {
        let e = e0 + s as f64 * h;
        let d_mid = setup.generator(e + 0.5 * h, method)?;
        let d_end = setup.generator(e + h, method)?;
        let k1 = linalg::scale(&(&d_start * &u), i);
        let u2 = &u + &linalg::scale(&k1, linalg::re(0.5 * h));
        let k2 = linalg::scale(&(&d_mid * &u2), i);
        let u3 = &u + &linalg::scale(&k2, linalg::re(0.5 * h));
        let k3 = linalg::scale(&(&d_mid * &u3), i);
        let u4 = &u + &linalg::scale(&k3, linalg::re(h));
        let k4 = linalg::scale(&(&d_end * &u4), i);
        let mut incr = &k1 + &k4;
        incr = &incr + &linalg::scale(&(&k2 + &k3), linalg::re(2.0));
        u = &u + &linalg::scale(&incr, linalg::re(h / 6.0));
        u = linalg::polar_unitary(&u)?;
        d_start = d_end;
    }
    Ok(u)
}

/// Integrates `dU/dε = i D(ε) U` over `eps_grid` (starting at 0) with RK4
/// and polar re-unitarization, halving the step on each interval until the
/// intertwining residual meets `opts.tol`.
pub fn flow_unitaries(setup: &FlowSetup, eps_grid: &[f64], opts: &FlowOptions) -> Result<FlowResult> {
    if eps_grid.first() != Some(&0.0) || eps_grid.windows(2).any(|w| w[1] <= w[0]) {
        return domain("eps grid must start at 0 and increase strictly");
    }
    let dim = setup.h0.nrows();
    let mut out = FlowResult {
        eps_grid: eps_grid.to_vec(),
        unitaries: vec![linalg::eye(dim)],
        generators: vec![setup.generator(0.0, opts.method)?],
        residuals: vec![0.0],
        unitarity: vec![0.0],
        substeps: vec![0],
    };
    for w in eps_grid.windows(2) {
        let (e0, e1) = (w[0], w[1]);
        let u0 = out.unitaries.last().unwrap().clone();
        let d0 = out.generators.last().unwrap().clone();
        let mut steps = 1usize;
        let mut last = f64::INFINITY;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let u = rk4_segment(setup, opts.method, &u0, e0, e1, steps, &d0)?;
            last = setup.intertwining_residual(e1, &u)?;
            if last <= opts.tol {
                accepted = Some(u);
                break;
            }
            steps *= 2;
        }
        let Some(u) = accepted else {
            return Err(Error::FlowAccuracy { eps: e1, residual: last });
        };
        out.unitarity.push(linalg::unitarity_defect(&u));
        out.generators.push(setup.generator(e1, opts.method)?);
        out.unitaries.push(u);
        out.residuals.push(last);
        out.substeps.push(steps);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Ball decomposition

/// `α_ε(H(ε)) - H = Σ_x Σ_{n=1}^{R_x} Φ¹(b_x(n), ε)`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub eps: f64,
    pub lam: Interval,
    pub kind: Kind,
    /// `Φ¹(b_x(n), ε)` on `b_x(n)`, keyed by `(x, n)`.
    pub terms: BTreeMap<(Site, u64), LocalOperator>,
    /// `Φ¹_x(ε)` on `Λ`.
    pub anchors: BTreeMap<Site, CMat>,
    /// `U* H(ε) U - H`.
    pub total: CMat,
    /// `‖Σ_{x,n} Φ¹(b_x(n)) - (U* H(ε) U - H)‖`.
    pub reconstruction: f64,
    /// `‖[P(0), Φ¹_x(ε)]‖` per anchor.
    pub commutators: BTreeMap<Site, f64>,
    /// Largest odd-part entry over all terms (fermions only, else 0).
    pub odd_part: f64,
}

impl Decomposition {
    /// `‖Φ¹(ε)‖_F` over the computed terms.
    pub fn f_norm(&self, decay: &dyn Decay) -> f64 {
        let norms: Vec<(Interval, f64)> = self.terms.values().map(|t| (t.support, t.norm())).collect();
        f_norm_of_terms(&norms, decay)
    }

    pub fn embedded(&self, x: Site, n: u64) -> Option<CMat> {
        self.terms
            .get(&(x, n))
            .map(|t| oa::embed_matrix(&t.matrix, self.kind.local_dim(), &t.support, &self.lam))
    }
}

/// Splits `α_ε(H(ε)) - H` into anchored pieces
/// `Φ¹_x = U* ℱ(η_x + εΨ_x) U - η_x`, where `ℱ` keeps only matrix elements
/// between levels closer than `γ` (weighted by `ŵ`), then into telescoping
/// conditional-expectation layers on the balls `b_x(n)`.
pub fn decompose_phi1(setup: &FlowSetup, eps: f64, u: &CMat) -> Result<Decomposition> {
    let lam = setup.lam;
    let e = setup.eigh(eps)?;
    let gap = gap_after(&e.values, setup.ground_dim);
    if gap < setup.gamma {
        return Err(Error::GapClosed { eps, gap, gamma: setup.gamma });
    }
    let ud = u.adjoint().to_owned();
    let dim = setup.h0.nrows();
    let anchors_list = setup.anchors();
    let pieces: Vec<(Site, CMat)> = anchors_list
        .par_iter()
        .map(|&x| {
            let mut local = setup.eta_x.get(&x).cloned().unwrap_or_else(|| linalg::zeros(dim, dim));
            if let Some(p) = setup.psi_x.get(&x) {
                local = &local + &linalg::scale(p, linalg::re(eps));
            }
            let moved = linalg::mul3(&ud, &bump_filtered(&e, &local, setup.gamma), u);
            let v = match setup.eta_x.get(&x) {
                Some(h) => &moved - h,
                None => moved,
            };
            (x, linalg::hermitian_part(&v))
        })
        .collect();
    let anchors: BTreeMap<Site, CMat> = pieces.into_iter().collect();

    let layered: Vec<Result<Vec<((Site, u64), LocalOperator)>>> = anchors
        .par_iter()
        .map(|(&x, v)| {
            let op = LocalOperator { matrix: v.clone(), support: lam, kind: setup.kind };
            let big_r = lam.boundary_distances(x)?.big_r;
            let mut out = Vec::new();
            for n in 1..=big_r.max(1) {
                let layer = if n == 1 {
                    oa::conditional_expectation(&op, &lam.ball(x, 1)?)?
                } else {
                    oa::delta_layer(&op, &lam, x, n)?
                };
                out.push(((x, n), layer));
            }
            Ok(out)
        })
        .collect();
    let mut terms = BTreeMap::new();
    for l in layered {
        terms.extend(l?);
    }

    let total = &linalg::mul3(&ud, &setup.hamiltonian(eps), u) - &setup.h0;
    let mut sum = linalg::zeros(dim, dim);
    let mut odd_part = 0.0f64;
    for t in terms.values() {
        oa::accumulate(&mut sum, &lam, t, linalg::ONE)?;
        if setup.kind == Kind::Fermion {
            odd_part = odd_part.max(linalg::max_abs(&oa::parity_parts(&t.matrix).1));
        }
    }
    let reconstruction = linalg::op_norm(&(&sum - &total));
    let commutators = anchors.iter().map(|(&x, v)| (x, linalg::op_norm(&linalg::comm(&setup.p0, v)))).collect();
    Ok(Decomposition { eps, lam, kind: setup.kind, terms, anchors, total, reconstruction, commutators, odd_part })
}

/// `ω_Λ(A) = tr(P A)/tr(P)`.
pub fn ground_mean(p: &CMat, a: &CMat) -> f64 {
    linalg::trace(&(p * a)).re / linalg::trace(p).re
}

// ---------------------------------------------------------------------------
// Interior/boundary split

#[derive(Clone, Debug)]
pub struct Phi1Split {
    pub phi2: CMat,
    pub phi3: CMat,
    /// `ω_Λ(Φ̃¹)`.
    pub omega: f64,
    /// `ℛ`: the anchors at the two sites next to each endpoint.
    pub boundary: CMat,
    /// `‖Φ¹ - (Φ² + Φ³ + ω + ℛ)‖`.
    pub reconstruction: f64,
    /// `‖P Φ² P‖` and `‖(1-P) Φ³ (1-P)‖`.
    pub cross: (f64, f64),
    /// `|ω_Λ(Φ² + Φ³)|`.
    pub centering: f64,
}

/// `Φ̃¹ = Σ_{x ∈ Int_2} Φ¹_x`, `Φ² = Q(Φ̃¹ - ω)Q`, `Φ³ = P(Φ̃¹ - ω)P`, `ℛ` the rest.
pub fn split_phi1(dec: &Decomposition, p: &CMat) -> Result<Phi1Split> {
    let lam = dec.lam;
    let dim = p.nrows();
    let mut tilde = linalg::zeros(dim, dim);
    let mut boundary = linalg::zeros(dim, dim);
    for (&x, v) in &dec.anchors {
        if lam.in_interior(x, 2) {
            tilde = &tilde + v;
        } else {
            boundary = &boundary + v;
        }
    }
    let omega = ground_mean(p, &tilde);
    let centered = &tilde - &linalg::scale(&linalg::eye(dim), linalg::re(omega));
    let q = &linalg::eye(dim) - p;
    let phi2 = linalg::mul3(&q, &centered, &q);
    let phi3 = linalg::mul3(p, &centered, p);
    let rebuilt = &(&(&phi2 + &phi3) + &boundary) + &linalg::scale(&linalg::eye(dim), linalg::re(omega));
    let total: CMat = dec.anchors.values().fold(linalg::zeros(dim, dim), |acc, v| &acc + v);
    let reconstruction = linalg::op_norm(&(&total - &rebuilt));
    let cross = (linalg::op_norm(&linalg::mul3(p, &phi2, p)), linalg::op_norm(&linalg::mul3(&q, &phi3, &q)));
    let centering = ground_mean(p, &(&phi2 + &phi3)).abs();
    Ok(Phi1Split { phi2, phi3, omega, boundary, reconstruction, cross, centering })
}

// ---------------------------------------------------------------------------
// Θ assembly

#[derive(Clone, Debug)]
pub struct ThetaAssembly {
    pub x: Site,
    pub r: u64,
    pub big_r: u64,
    /// `Θ_β^x(n, ε)` for `3 ≤ n ≤ r_x`.
    pub beta: BTreeMap<u64, CMat>,
    pub alpha: CMat,
    /// `‖QΦ¹_{x,0}Q - Σ_n Θ_β(n) - Θ_α‖`.
    pub reconstruction: f64,
    /// `max(‖P_{b_x(n)} Θ_β(n)‖, ‖Θ_β(n) P_{b_x(n)}‖)` per `n`.
    pub annihilation: BTreeMap<u64, f64>,
}

impl ThetaAssembly {
    pub fn beta_norms(&self) -> BTreeMap<u64, f64> {
        self.beta.iter().map(|(&n, m)| (n, linalg::op_norm(m))).collect()
    }

    pub fn alpha_norm(&self) -> f64 {
        linalg::op_norm(&self.alpha)
    }
}

/// Centered terms `Φ_k = Φ¹(b_x(k)) - ω_Λ(Φ¹(b_x(k)))` on `Λ`, `k = 1..R_x`.
fn centered_terms(dec: &Decomposition, p: &CMat, x: Site) -> Result<Vec<CMat>> {
    let big_r = dec.lam.boundary_distances(x)?.big_r;
    let dim = p.nrows();
    (1..=big_r)
        .map(|k| {
            let m = dec.embedded(x, k).unwrap_or_else(|| linalg::zeros(dim, dim));
            let w = ground_mean(p, &m);
            Ok(&m - &linalg::scale(&linalg::eye(dim), linalg::re(w)))
        })
        .collect()
}

/// Regroups `Q Φ¹_{x,0} Q` through the layers `E_n` into pieces `Θ_β(n)`
/// killed by `P_{b_x(n)}` and a remainder `Θ_α`:
///
/// * `θ(n,k) = E_n Φ_k Q_{b(n-1)} + Q_{b(n)} Φ_k E_n`
/// * `τ(2k) = Q_{b(2k)} Φ_k Q_{b(2k)}`
/// * `ν(k) = E_{r+1} Φ_k Q_{b(r)} + Q Φ_k E_{r+1}`
/// * `Θ_β(n) = Σ_{k ≤ (n-1)/2} θ(n,k) + τ(n)` (τ only for even `n`)
/// * `Θ_α = Σ_{k > ⌊r/2⌋} QΦ_kQ + Σ_{k ≤ ⌊r/2⌋} ν(k) + τ(2)`
pub fn theta_assembly(dec: &Decomposition, family: &ProjectorFamily) -> Result<ThetaAssembly> {
    let x = family.x;
    let r = family.r;
    let big_r = dec.lam.boundary_distances(x)?.big_r;
    let p = &family.p;
    let dim = p.nrows();
    let id = linalg::eye(dim);
    let q = &id - p;
    let qb = |l: u64| -> CMat { &id - &family.locals[&l] };
    let phis = centered_terms(dec, p, x)?;
    let phi = |k: u64| &phis[(k - 1) as usize];
    let n_x = r / 2;

    let theta = |n: u64, k: u64| -> CMat {
        let e = family.layer(n as usize);
        &linalg::mul3(e, phi(k), &qb(n - 1)) + &linalg::mul3(&qb(n), phi(k), e)
    };
    let tau = |m: u64| -> CMat {
        let qm = qb(m);
        linalg::mul3(&qm, phi(m / 2), &qm)
    };

    let mut beta = BTreeMap::new();
    for n in 3..=r {
        let mut acc = linalg::zeros(dim, dim);
        for k in 1..=(n - 1) / 2 {
            acc = &acc + &theta(n, k);
        }
        if n % 2 == 0 {
            acc = &acc + &tau(n);
        }
        beta.insert(n, acc);
    }

    let e_last = family.layer(r as usize + 1);
    let q_r = qb(r);
    let mut alpha = linalg::zeros(dim, dim);
    for k in (n_x + 1)..=big_r {
        alpha = &alpha + &linalg::mul3(&q, phi(k), &q);
    }
    for k in 1..=n_x {
        alpha = &alpha + &(&linalg::mul3(e_last, phi(k), &q_r) + &linalg::mul3(&q, phi(k), e_last));
    }
    if r >= 2 {
        alpha = &alpha + &tau(2);
    }

    let mut lhs = linalg::zeros(dim, dim);
    for m in &phis {
        lhs = &lhs + m;
    }
    let lhs = linalg::mul3(&q, &lhs, &q);
    let rhs = beta.values().fold(alpha.clone(), |acc, b| &acc + b);
    let reconstruction = linalg::op_norm(&(&lhs - &rhs));
    let annihilation = beta
        .iter()
        .map(|(&n, b)| {
            let pb = &family.locals[&n];
            (n, linalg::op_norm(&(pb * b)).max(linalg::op_norm(&(b * pb))))
        })
        .collect();
    Ok(ThetaAssembly { x, r, big_r, beta, alpha, reconstruction, annihilation })
}

// ---------------------------------------------------------------------------
// One-sided lemma checks

#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub x: Site,
    pub m: u64,
    pub n: Option<u64>,
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-12
    }
}

/// `‖P(Φ¹_x - ω(Φ¹_x))P‖ ≤ ‖Φ¹‖_F (Ω(r_x - m) + 2F(m))` for `1 ≤ m ≤ r_x`.
pub fn ground_block_checks(
    dec: &Decomposition,
    p: &CMat,
    x: Site,
    omega: &OmegaModel,
    decay: &dyn Decay,
    phi1_norm: f64,
) -> Result<Vec<BoundCheck>> {
    let r = dec.lam.boundary_distances(x)?.r;
    let dim = p.nrows();
    let v = dec.anchors.get(&x).cloned().unwrap_or_else(|| linalg::zeros(dim, dim));
    let w = ground_mean(p, &v);
    let centered = &v - &linalg::scale(&linalg::eye(dim), linalg::re(w));
    let lhs = linalg::op_norm(&linalg::mul3(p, &centered, p));
    Ok((1..=r)
        .map(|m| BoundCheck {
            x,
            m,
            n: None,
            lhs,
            rhs: phi1_norm * (omega.eval((r - m) as f64) + 2.0 * decay.eval(m as f64)),
        })
        .collect())
}

/// `‖Σ_{k ≤ m} Φ_k P_{b_x(n)}‖ ≤ ‖Φ¹‖_F (5Ω(z_x(n) - m)^{1/2} + 4F(m))`
/// for `1 ≤ m ≤ r_x`, `m ≤ n ≤ R_x`.
pub fn ball_block_checks(
    dec: &Decomposition,
    projs: &LocalProjectors,
    x: Site,
    omega: &OmegaModel,
    decay: &dyn Decay,
    phi1_norm: f64,
) -> Result<Vec<BoundCheck>> {
    let bd = dec.lam.boundary_distances(x)?;
    let p = projs.full();
    let phis = centered_terms(dec, p, x)?;
    let dim = p.nrows();
    let mut out = Vec::new();
    let mut partial = linalg::zeros(dim, dim);
    for m in 1..=bd.r {
        partial = &partial + &phis[(m - 1) as usize];
        for n in m..=bd.big_r {
            let pb = projs.ball(x, n)?;
            let z = n.min(bd.r);
            let lhs = linalg::op_norm(&(&partial * &pb));
            let rhs =
                phi1_norm * (5.0 * omega.eval(z as f64 - m as f64).sqrt() + 4.0 * decay.eval(m as f64));
            out.push(BoundCheck { x, m, n: Some(n), lhs, rhs });
        }
    }
    Ok(out)
}

/// `20 ‖Φ¹‖_F [Ω((n-1)/2)^{1/2} + F((n-3)/2)]`.
pub fn kappa_measured(n: u64, phi1_norm: f64, omega: &OmegaModel, decay: &dyn Decay) -> f64 {
    let n = n as f64;
    20.0 * phi1_norm * (omega.eval((n - 1.0) / 2.0).sqrt() + decay.eval((n - 3.0) / 2.0))
}

// ---------------------------------------------------------------------------
// Diagnostics

/// One CSV row per `(ε, x, n)`.
#[derive(Clone, Debug, Serialize)]
pub struct FlowRow {
    pub eps: f64,
    pub x: Site,
    pub n: u64,
    pub term_norm: f64,
    pub theta_norm: Option<f64>,
    pub kappa: Option<f64>,
    pub annihilation: Option<f64>,
    pub anchor_commutator: f64,
}

/// Per-ε summary of the whole pipeline.
#[derive(Clone, Debug, Serialize)]
pub struct FlowPointReport {
    pub eps: f64,
    pub intertwining: f64,
    pub unitarity: f64,
    pub substeps: usize,
    pub decomposition_residual: f64,
    pub max_anchor_commutator: f64,
    pub odd_part: f64,
    pub split_residual: f64,
    pub split_cross: f64,
    pub split_centering: f64,
    pub theta_residual: f64,
    pub theta_annihilation: f64,
    pub phi1_f_norm: f64,
    pub kappa_violations: usize,
    pub lemma_violations: usize,
}

pub struct FlowAnalysis {
    pub points: Vec<FlowPointReport>,
    pub rows: Vec<FlowRow>,
    pub decompositions: Vec<Decomposition>,
    pub splits: Vec<Phi1Split>,
}

/// Runs decomposition, split, Θ assembly and the one-sided checks at every
/// grid point of a computed flow.
pub fn analyze_flow(
    setup: &FlowSetup,
    eta: &Interaction,
    flow: &FlowResult,
    omega: &OmegaModel,
    decay: &dyn Decay,
) -> Result<FlowAnalysis> {
    let lam = setup.lam;
    let projs = LocalProjectors::new(eta, &lam)?;
    let interior: Vec<Site> = lam.interior(2).map(|i| i.sites().collect()).unwrap_or_default();
    let families: Vec<ProjectorFamily> = interior.iter().map(|&x| projs.family(x)).collect::<Result<_>>()?;
    let mut out = FlowAnalysis { points: Vec::new(), rows: Vec::new(), decompositions: Vec::new(), splits: Vec::new() };
    for (i, &eps) in flow.eps_grid.iter().enumerate() {
        let dec = decompose_phi1(setup, eps, &flow.unitaries[i])?;
        let split = split_phi1(&dec, &setup.p0)?;
        let fnorm = dec.f_norm(decay);
        let mut theta_residual = 0.0f64;
        let mut theta_annihilation = 0.0f64;
        let mut kappa_violations = 0;
        let mut lemma_violations = 0;
        let mut thetas = BTreeMap::new();
        for fam in &families {
            let th = theta_assembly(&dec, fam)?;
            theta_residual = theta_residual.max(th.reconstruction);
            theta_annihilation = th.annihilation.values().fold(theta_annihilation, |m, v| m.max(*v));
            for (n, nb) in th.beta_norms() {
                if nb > kappa_measured(n, fnorm, omega, decay) * (1.0 + 1e-12) + 1e-12 {
                    kappa_violations += 1;
                }
            }
            let checks = ground_block_checks(&dec, &setup.p0, fam.x, omega, decay, fnorm)?
                .into_iter()
                .chain(ball_block_checks(&dec, &projs, fam.x, omega, decay, fnorm)?);
            lemma_violations += checks.filter(|c| !c.holds()).count();
            thetas.insert(fam.x, th);
        }
        for (&(x, n), t) in &dec.terms {
            let th = thetas.get(&x).and_then(|th| th.beta.get(&n).map(|b| (th, b)));
            out.rows.push(FlowRow {
                eps,
                x,
                n,
                term_norm: t.norm(),
                theta_norm: th.map(|(_, b)| linalg::op_norm(b)),
                kappa: th.map(|_| kappa_measured(n, fnorm, omega, decay)),
                annihilation: th.map(|(th, _)| th.annihilation[&n]),
                anchor_commutator: dec.commutators[&x],
            });
        }
        out.points.push(FlowPointReport {
            eps,
            intertwining: flow.residuals[i],
            unitarity: flow.unitarity[i],
            substeps: flow.substeps[i],
            decomposition_residual: dec.reconstruction,
            max_anchor_commutator: dec.commutators.values().fold(0.0, |m, v| m.max(*v)),
            odd_part: dec.odd_part,
            split_residual: split.reconstruction,
            split_cross: split.cross.0.max(split.cross.1),
            split_centering: split.centering,
            theta_residual,
            theta_annihilation,
            phi1_f_norm: fnorm,
            kappa_violations,
            lemma_violations,
        });
        out.decompositions.push(dec);
        out.splits.push(split);
    }
    Ok(out)
}
