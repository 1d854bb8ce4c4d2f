//! Witnesses for local topological quantum order: exact-zero certificates,
//! lower bounds on the LTQO supremum, and decay-profile fitting.
//!
//! For a probe `(x, n, k)` let `B = b(x,n)`, `K = b(x,k)` and let `V` be an
//! isometry onto `ker H_B`. The map `A ↦ V*(A - ω_Λ(A))V` is linear in `A`,
//! so it is stored through its values `M_ij = V*(E_ij ⊗ 1)V - ρ_ji·1` on
//! matrix units of `K`, with `ρ` the reduced ground state of `Λ` on `K`.
//! The supremum over the unit ball is
//! `sup_{u,v} ‖C(u,v)‖_tr` with `C(u,v)_ji = ⟨u, M_ij v⟩` (trace-norm duality),
//! and for fixed `(u, v)` the best unitary is the polar factor of `C`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::interaction::Interaction;
use crate::lattice::{Interval, Site};
use crate::linalg::{self, CMat, C64, ZERO};
use crate::operator_algebra::{Kind, LocalOperator};
use crate::spectra::kernel_basis;

/// Tolerance below which every `M_ij` counts as zero.
pub const EXACT_ZERO_TOL: f64 = 1e-11;

/// Ground space of `H_Λ`, used for `ω_Λ`.
pub struct GroundState {
    pub lam: Interval,
    pub kind: Kind,
    /// Orthonormal kernel vectors as columns.
    pub vectors: CMat,
}

impl GroundState {
    pub fn new(eta: &Interaction, lam: &Interval) -> Result<Self> {
        let vectors = kernel_basis(&eta.local_hamiltonian_matrix(lam))?;
        Ok(GroundState { lam: *lam, kind: eta.kind, vectors })
    }

    pub fn degeneracy(&self) -> usize {
        self.vectors.ncols()
    }

    /// `tr_{Λ∖K}(P_Λ)/tr P_Λ`, the reduced state on `K`.
    pub fn reduced(&self, k: &Interval) -> Result<CMat> {
        reduce(&self.vectors, self.kind.local_dim(), &self.lam, k, true)
    }

    /// `ω_Λ(A) = tr(P_Λ A)/tr P_Λ`.
    pub fn expectation(&self, a: &LocalOperator) -> Result<C64> {
        let rho = self.reduced(&a.support)?;
        Ok(linalg::trace(&(&rho * &a.matrix)))
    }
}

/// `Σ_j tr_{outer∖inner} |v_j⟩⟨v_j|`, optionally divided by the number of columns.
fn reduce(v: &CMat, d: usize, outer: &Interval, inner: &Interval, normalize: bool) -> Result<CMat> {
    let (dl, dm, dr) = split_dims(d, outer, inner)?;
    let mut rho = linalg::zeros(dm, dm);
    for j in 0..v.ncols() {
        for l in 0..dl {
            for r in 0..dr {
                for a in 0..dm {
                    let va = v[((l * dm + a) * dr + r, j)];
                    if va == ZERO {
                        continue;
                    }
                    for b in 0..dm {
                        rho[(a, b)] += va * v[((l * dm + b) * dr + r, j)].conj();
                    }
                }
            }
        }
    }
    if normalize {
        rho = linalg::scale(&rho, linalg::re(1.0 / v.ncols() as f64));
    }
    Ok(rho)
}

fn split_dims(d: usize, outer: &Interval, inner: &Interval) -> Result<(usize, usize, usize)> {
    if !outer.contains_interval(inner) {
        return domain(format!("{inner} is not inside {outer}"));
    }
    Ok((d.pow((inner.a - outer.a) as u32), d.pow(inner.len() as u32), d.pow((outer.b - inner.b) as u32)))
}

#[derive(Clone, Debug)]
pub struct WitnessOptions {
    pub restarts: usize,
    pub seed: u64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Starting pair `(u, v)` in the ball-kernel space, tried before the random restarts.
    pub warm_start: Option<(Vec<C64>, Vec<C64>)>,
}

impl Default for WitnessOptions {
    fn default() -> Self {
        WitnessOptions { restarts: 20, seed: 0, rel_tol: 1e-8, max_iter: 1000, warm_start: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub x: Site,
    pub n: u64,
    pub k: u64,
    pub separation: u64,
    pub lower_bound: f64,
    pub exact_zero: bool,
    /// `max_ij ‖M_ij‖` over the (even) matrix units.
    pub basis_residual: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub best_pair: Option<(Vec<C64>, Vec<C64>)>,
    #[serde(skip)]
    pub maximizer: Option<CMat>,
}

/// The linear map of one probe, tabulated on matrix units.
pub struct ProbeMap {
    pub x: Site,
    pub n: u64,
    pub k: u64,
    pub separation: u64,
    dm: usize,
    g: usize,
    /// `m[i*dm + j]` is the `g×g` matrix `M_ij`.
    m: Vec<CMat>,
    /// Parity of each basis state of `K`, when restricting to even observables.
    parity: Option<Vec<bool>>,
    rho: CMat,
}

impl ProbeMap {
    pub fn new(eta: &Interaction, ground: &GroundState, x: Site, n: u64, k: u64, even_only: bool) -> Result<Self> {
        let lam = ground.lam;
        let bd = lam.boundary_distances(x)?;
        if k > bd.r || n < k || n > bd.big_r {
            return domain(format!("probe (x={x}, n={n}, k={k}) outside 0 ≤ k ≤ {} and k ≤ n ≤ {}", bd.r, bd.big_r));
        }
        let d = eta.kind.local_dim();
        let ball = lam.ball(x, n)?;
        let kset = lam.ball(x, k)?;
        let v = kernel_basis(&eta.local_hamiltonian_matrix(&ball))?;
        let g = v.ncols();
        let (dl, dm, dr) = split_dims(d, &ball, &kset)?;
        let rho = ground.reduced(&kset)?;
        let mut m = vec![linalg::zeros(g, g); dm * dm];
        for l in 0..dl {
            for r in 0..dr {
                for i in 0..dm {
                    let ri = (l * dm + i) * dr + r;
                    for j in 0..dm {
                        let rj = (l * dm + j) * dr + r;
                        let t = &mut m[i * dm + j];
                        for p in 0..g {
                            let a = v[(ri, p)].conj();
                            if a == ZERO {
                                continue;
                            }
                            for q in 0..g {
                                t[(p, q)] += a * v[(rj, q)];
                            }
                        }
                    }
                }
            }
        }
        for i in 0..dm {
            for j in 0..dm {
                let w = rho[(j, i)];
                let t = &mut m[i * dm + j];
                for p in 0..g {
                    t[(p, p)] -= w;
                }
            }
        }
        let parity = (even_only && matches!(eta.kind, Kind::Fermion | Kind::Spin(2)))
            .then(|| (0..dm).map(|i| i.count_ones() % 2 == 1).collect());
        let separation = lam.cutoff(x, n)? - k;
        Ok(ProbeMap { x, n, k, separation, dm, g, m, parity, rho })
    }

    fn allowed(&self, i: usize, j: usize) -> bool {
        self.parity.as_ref().is_none_or(|p| p[i] == p[j])
    }

    /// `max ‖M_ij‖` over allowed matrix units.
    pub fn basis_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dm {
            for j in 0..self.dm {
                if self.allowed(i, j) {
                    worst = worst.max(linalg::max_abs(&self.m[i * self.dm + j]));
                }
            }
        }
        worst
    }

    /// `V*(A - ω_Λ(A))V` for `A` on `b(x,k)`.
    pub fn apply(&self, a: &CMat) -> CMat {
        let mut out = linalg::zeros(self.g, self.g);
        for i in 0..self.dm {
            for j in 0..self.dm {
                let c = a[(i, j)];
                if c != ZERO {
                    linalg::add_scaled(&mut out, &self.m[i * self.dm + j], c);
                }
            }
        }
        out
    }

    /// `‖V*(Â - ω_Λ(Â))V‖` with `Â = A/‖A‖`.
    pub fn objective(&self, a: &CMat) -> f64 {
        let na = linalg::op_norm(a);
        if na == 0.0 {
            return 0.0;
        }
        linalg::op_norm(&self.apply(a)) / na
    }

    /// `ω_Λ(A)` for `A` on `b(x,k)`.
    pub fn expectation(&self, a: &CMat) -> C64 {
        linalg::trace(&(&self.rho * a))
    }

    fn blocks(&self) -> Vec<Vec<usize>> {
        match &self.parity {
            None => vec![(0..self.dm).collect()],
            Some(p) => {
                let even: Vec<usize> = (0..self.dm).filter(|&i| !p[i]).collect();
                let odd: Vec<usize> = (0..self.dm).filter(|&i| p[i]).collect();
                vec![even, odd].into_iter().filter(|b| !b.is_empty()).collect()
            }
        }
    }

    /// Best unitary for a fixed pair `(u, v)`: the polar factor of `C(u,v)`,
    /// block by block.
    fn best_unitary(&self, u: &[C64], v: &[C64]) -> Result<CMat> {
        let mut a = linalg::zeros(self.dm, self.dm);
        for block in self.blocks() {
            let b = block.len();
            // ct[j][i] = ⟨u, M_ij v⟩; we maximize Re Σ_ij A_ij ct[j][i] = Re tr(A ct).
            let ct = linalg::from_fn(b, b, |jj, ii| {
                let mm = &self.m[block[ii] * self.dm + block[jj]];
                let mut s = ZERO;
                for p in 0..self.g {
                    for q in 0..self.g {
                        s += u[p].conj() * mm[(p, q)] * v[q];
                    }
                }
                s
            });
            let (w, _, z) = linalg::svd(&ct)?;
            let ab = &z * w.adjoint();
            for (ii, &i) in block.iter().enumerate() {
                for (jj, &j) in block.iter().enumerate() {
                    a[(i, j)] = ab[(ii, jj)];
                }
            }
        }
        Ok(a)
    }

    /// Alternating ascent from one start; returns (value, unitary, u, v, iterations).
    fn ascend(&self, mut u: Vec<C64>, mut v: Vec<C64>, opts: &WitnessOptions) -> Result<(f64, CMat, Vec<C64>, Vec<C64>, usize)> {
        let mut best = -1.0;
        let mut best_a = linalg::eye(self.dm);
        let mut it = 0;
        while it < opts.max_iter {
            it += 1;
            let a = self.best_unitary(&u, &v)?;
            let la = self.apply(&a);
            let (w, s, z) = linalg::svd(&la)?;
            let val = s[0];
            let improved = val > best;
            if improved {
                best_a = a;
            }
            let rel = (val - best) / val.max(1e-300);
            best = best.max(val);
            u = (0..self.g).map(|p| w[(p, 0)]).collect();
            v = (0..self.g).map(|q| z[(q, 0)]).collect();
            if !improved || rel < opts.rel_tol {
                break;
            }
        }
        Ok((best.max(0.0), best_a, u, v, it))
    }

    /// Lower bound on the supremum by restarted ascent.
    pub fn witness(&self, opts: &WitnessOptions) -> Result<Witness> {
        let basis_residual = self.basis_residual();
        let mut out = Witness {
            x: self.x,
            n: self.n,
            k: self.k,
            separation: self.separation,
            lower_bound: 0.0,
            exact_zero: basis_residual <= EXACT_ZERO_TOL,
            basis_residual,
            iterations: 0,
            best_pair: None,
            maximizer: None,
        };
        if out.exact_zero {
            return Ok(out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((self.x as u64) << 32) ^ (self.n << 16) ^ self.k);
        let mut starts: Vec<(Vec<C64>, Vec<C64>)> = Vec::new();
        if let Some(ws) = &opts.warm_start {
            if ws.0.len() == self.g && ws.1.len() == self.g {
                starts.push(ws.clone());
            }
        }
        for _ in 0..opts.restarts {
            starts.push((random_unit(self.g, &mut rng), random_unit(self.g, &mut rng)));
        }
        for (u, v) in starts {
            let (val, a, u, v, it) = self.ascend(u, v, opts)?;
            out.iterations += it;
            if val > out.lower_bound || out.maximizer.is_none() {
                // Report the objective of the explicit unitary, not the dual estimate.
                out.lower_bound = self.objective(&a).min(2.0).max(val.min(2.0));
                out.best_pair = Some((u, v));
                out.maximizer = Some(a);
            }
        }
        Ok(out)
    }
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let mut v: Vec<C64> = (0..n)
        .map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
        .collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in &mut v {
        *z /= norm;
    }
    v
}

/// Estimates `sup_{‖A‖=1} ‖P_{b(x,n)}(A - ω_Λ(A))P_{b(x,n)}‖` over `A` on
/// `b(x,k)` (even `A` only when `even_only`).
pub fn ltqo_witness(eta: &Interaction, lam: &Interval, x: Site, n: u64, k: u64, even_only: bool) -> Result<Witness> {
    let ground = GroundState::new(eta, lam)?;
    ProbeMap::new(eta, &ground, x, n, k, even_only)?.witness(&WitnessOptions::default())
}

// ---------------------------------------------------------------------------
// Decay profiles

/// A decay function `Ω` on separations, clamped to the trivial bound 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OmegaModel {
    Zero,
    /// `Ω(r) = height` for `r < cutoff`, `0` beyond.
    Step { cutoff: u64, height: f64 },
    /// `Ω(r) = min(2, amplitude·ratio^r)`.
    Geometric { amplitude: f64, ratio: f64 },
    /// `Ω(r) = min(2, amplitude·r^{-exponent})`.
    Power { amplitude: f64, exponent: f64 },
}

impl OmegaModel {
    /// `Ω(r)`, with negative arguments clamped to `Ω(0)`.
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        match *self {
            OmegaModel::Zero => 0.0,
            OmegaModel::Step { cutoff, height } => {
                if r >= cutoff as f64 {
                    0.0
                } else {
                    height
                }
            }
            OmegaModel::Geometric { amplitude, ratio } => (amplitude * ratio.powf(r)).min(2.0),
            OmegaModel::Power { amplitude, exponent } => {
                if r == 0.0 {
                    2.0
                } else {
                    (amplitude * r.powf(-exponent)).min(2.0)
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OmegaFit {
    pub model: OmegaModel,
    /// RMS residual of the fit in log space (0 for step detection).
    pub residual: f64,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (xs.iter().zip(ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum::<f64>() / n).sqrt();
    (icpt, slope, rms)
}

/// Fits `(separation, value)` samples. Values at or below `1e-11` count as zero.
pub fn fit_omega(samples: &[(u64, f64)]) -> Result<OmegaFit> {
    let zero = |v: f64| v <= EXACT_ZERO_TOL;
    if samples.iter().all(|s| zero(s.1)) {
        return Ok(OmegaFit { model: OmegaModel::Step { cutoff: 0, height: 2.0 }, residual: 0.0 });
    }
    let mut seps: Vec<u64> = samples.iter().map(|s| s.0).collect();
    seps.sort_unstable();
    seps.dedup();
    if seps.len() < 3 {
        return domain("fitting needs at least 3 distinct separations");
    }
    // Envelope: largest value per separation.
    let env: Vec<(u64, f64)> = seps
        .iter()
        .map(|&s| (s, samples.iter().filter(|p| p.0 == s).map(|p| p.1).fold(0.0, f64::max)))
        .collect();
    let last_nonzero = env.iter().rposition(|p| !zero(p.1)).unwrap();
    if last_nonzero + 1 < env.len() {
        return Ok(OmegaFit {
            model: OmegaModel::Step { cutoff: env[last_nonzero + 1].0, height: 2.0 },
            residual: 0.0,
        });
    }
    let pos: Vec<(f64, f64)> = env.iter().filter(|p| !zero(p.1)).map(|p| (p.0 as f64, p.1.ln())).collect();
    let mut best: Option<OmegaFit> = None;
    if pos.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pos.iter().copied().unzip();
        let (a, b, rms) = least_squares(&xs, &ys);
        best = Some(OmegaFit { model: OmegaModel::Geometric { amplitude: a.exp(), ratio: b.exp() }, residual: rms });
    }
    let pw: Vec<(f64, f64)> = pos.iter().filter(|p| p.0 >= 1.0).map(|p| (p.0.ln(), p.1)).collect();
    if pw.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pw.iter().copied().unzip();
        let (a, b, rms) = least_squares(&xs, &ys);
        if best.as_ref().is_none_or(|f| rms < f.residual) {
            best = Some(OmegaFit { model: OmegaModel::Power { amplitude: a.exp(), exponent: -b }, residual: rms });
        }
    }
    best.ok_or_else(|| Error::Domain("too few nonzero samples to fit".into()))
}

/// One row of an LTQO profile.
#[derive(Clone, Debug, Serialize)]
pub struct LtqoRow {
    pub model: String,
    pub length: usize,
    pub x: Site,
    pub n: u64,
    pub k: u64,
    pub separation: u64,
    pub lower_bound: f64,
    pub exact_zero: bool,
}

/// Witness samples over a set of probes. The profile is evidence from
/// finitely many volumes, not a proof of a volume-uniform `Ω`.
#[derive(Clone, Debug, Serialize)]
pub struct LtqoProfile {
    pub samples: Vec<Witness>,
    pub fitted: Option<OmegaFit>,
}

impl LtqoProfile {
    pub fn from_samples(samples: Vec<Witness>) -> Self {
        let pts: Vec<(u64, f64)> = samples.iter().map(|w| (w.separation, w.lower_bound)).collect();
        let fitted = fit_omega(&pts).ok();
        LtqoProfile { samples, fitted }
    }

    pub fn rows(&self, model: &str, length: usize) -> Vec<LtqoRow> {
        self.samples
            .iter()
            .map(|w| LtqoRow {
                model: model.to_string(),
                length,
                x: w.x,
                n: w.n,
                k: w.k,
                separation: w.separation,
                lower_bound: w.lower_bound,
                exact_zero: w.exact_zero,
            })
            .collect()
    }
}

/// Probes `(x, n, k)` for every `x` in `lam` with `k ≤ max_k`, warm-starting
/// each `k` from the maximizer at `k - 1` (same `x`, `n`).
pub fn profile(eta: &Interaction, lam: &Interval, max_k: u64, even_only: bool, seed: u64) -> Result<LtqoProfile> {
    let ground = GroundState::new(eta, lam)?;
    let mut samples = Vec::new();
    for x in lam.sites() {
        let bd = lam.boundary_distances(x)?;
        for n in 0..=bd.big_r {
            let mut warm = None;
            for k in 0..=max_k.min(bd.r).min(n) {
                let map = ProbeMap::new(eta, &ground, x, n, k, even_only)?;
                let opts = WitnessOptions { seed, warm_start: warm.take(), ..Default::default() };
                let w = map.witness(&opts)?;
                warm = w.best_pair.clone();
                samples.push(w);
            }
        }
    }
    Ok(LtqoProfile::from_samples(samples))
}
