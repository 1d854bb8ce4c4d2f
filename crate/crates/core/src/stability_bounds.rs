//! The constants ledger behind the gap-stability bounds: the decay sums
//! `J₁`, `J₂`, `J₃`, the form-bound constants `δ, β, α, p, q`, the threshold
//! `m` with `ε(γ₀)`, the edge and bulk strengths `M_D`, `M_Int`, and checks of
//! the resulting inequalities against measured spectra.
//!
//! Every infinite sum is reported as a partial sum plus a certified tail
//! bound, and the reported value is their sum, so it is an upper estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ffunction::{Decay, DerivedFSpec, DerivedKind, FFunctionSpec};
use crate::interaction::{split_edge_bulk, Interaction};
use crate::lattice::Interval;
use crate::linalg::{self, C64};
use crate::ltqo::OmegaModel;
use crate::operator_algebra::LocalOperator;

const REL_TAIL: f64 = 1e-6;
const MAX_TERMS: u64 = 1 << 20;

/// A truncated nonnegative series with a certified bound on what was dropped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSum {
    pub partial: f64,
    pub tail: f64,
    /// Largest index included in `partial`.
    pub terms: u64,
}

impl TailSum {
    pub fn value(&self) -> f64 {
        self.partial + self.tail
    }

    fn scaled(self, s: f64) -> TailSum {
        TailSum { partial: s * self.partial, tail: s * self.tail, ..self }
    }
}

/// `Σ_{n ≥ 0} term(n)`, truncated at the first `N = start·2^j` where
/// `tail(N)` (a bound on `Σ_{n > N}`) drops below `REL_TAIL` of the partial
/// sum, or at `MAX_TERMS`. `tail` returns `∞` where its bound is not yet valid.
fn certified_sum(start: u64, term: impl Fn(u64) -> f64, tail: impl Fn(u64) -> f64, what: &str) -> Result<TailSum> {
    if !tail(MAX_TERMS).is_finite() {
        return Err(Error::Divergence(format!("{what}: decay is not summable")));
    }
    let mut partial = 0.0;
    let mut next = 0u64;
    let mut n = start.max(1);
    loop {
        while next <= n {
            partial += term(next);
            next += 1;
        }
        let t = tail(n);
        if t.is_finite() && (t <= REL_TAIL * partial || t == 0.0) || n >= MAX_TERMS {
            return Ok(TailSum { partial, tail: t, terms: n });
        }
        n = (2 * n).min(MAX_TERMS);
    }
}

/// `Σ_{m ≥ M} m^{-t} ≤ M^{-t} + M^{1-t}/(t-1)` for `M ≥ 1`, `t > 1`.
fn zeta_tail(m: f64, t: f64) -> f64 {
    if t <= 1.0 || m < 1.0 {
        return f64::INFINITY;
    }
    m.powf(-t) + m.powf(1.0 - t) / (t - 1.0)
}

/// Bound on `Σ_{n > N} n^{[weighted]} Ω((n - o)/w)^p` for integer `o ≥ 0`.
fn omega_tail(model: &OmegaModel, n: u64, w: f64, o: f64, p: f64, weighted: bool) -> f64 {
    let nf = n as f64;
    match *model {
        OmegaModel::Zero => 0.0,
        OmegaModel::Step { cutoff, height } => {
            if height == 0.0 || nf + 1.0 >= w * cutoff as f64 + o {
                0.0
            } else {
                f64::INFINITY
            }
        }
        OmegaModel::Geometric { amplitude, ratio } => {
            if amplitude == 0.0 {
                return 0.0;
            }
            if !(ratio < 1.0) {
                return f64::INFINITY;
            }
            let rho = ratio.powf(p / w);
            let lead = amplitude.powf(p) * ratio.powf(p * (nf + 1.0 - o) / w);
            if weighted {
                lead * ((nf + 1.0) / (1.0 - rho) + rho / ((1.0 - rho) * (1.0 - rho)))
            } else {
                lead / (1.0 - rho)
            }
        }
        OmegaModel::Power { amplitude, exponent } => {
            if amplitude == 0.0 {
                return 0.0;
            }
            let s = exponent * p;
            let m = nf - o + 1.0;
            let pre = amplitude.powf(p) * w.powf(s);
            if weighted {
                pre * (zeta_tail(m, s - 1.0) + o * zeta_tail(m, s))
            } else {
                pre * zeta_tail(m, s)
            }
        }
    }
}

/// Bound on `Σ_{n > N} n^{[weighted]} F^b((n - n0)/w)` with
/// `F^b(u) = L (1 + c u)^{-κ}`, valid once the summand is decreasing past `N ≥ n0`.
fn poly_tail(base: &FFunctionSpec, n: u64, n0: f64, w: f64, weighted: bool) -> f64 {
    let (l, c, kappa) = (base.l, base.c, base.kappa);
    let nf = n as f64;
    if nf < n0 {
        return f64::INFINITY;
    }
    let s = 1.0 + c * (nf - n0) / w;
    let scale = w / c;
    if !weighted {
        return l * scale * s.powf(1.0 - kappa) / (kappa - 1.0);
    }
    // t·F^b is decreasing once (κ-1) c t ≥ w - c n0
    if (kappa - 1.0) * c * nf < w - c * n0 {
        return f64::INFINITY;
    }
    l * scale * ((n0 - scale) * s.powf(1.0 - kappa) / (kappa - 1.0) + scale * s.powf(2.0 - kappa) / (kappa - 2.0))
}

fn check_f0(f0: &DerivedFSpec) -> Result<()> {
    if f0.kind != DerivedKind::F0 {
        return domain("J constants need the shifted base F-function F₀");
    }
    f0.base.validate()
}

/// `Ω((|n|-1)/2)^{1/2} + F₀((|n|-3)/2)`, the bracket shared by `κ`, `J₁`, `J₂`.
pub fn bracket(n: u64, omega: &OmegaModel, f0: &DerivedFSpec) -> f64 {
    let n = n as f64;
    omega.eval((n - 1.0) / 2.0).sqrt() + f0.eval((n - 3.0) / 2.0)
}

fn bracket_tail(n: u64, omega: &OmegaModel, f0: &DerivedFSpec, weighted: bool) -> f64 {
    let n0 = 36.0 * f0.params.range as f64 + 57.0;
    omega_tail(omega, n, 2.0, 1.0, 0.5, weighted) + poly_tail(&f0.base, n, n0, 36.0, weighted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JConstants {
    pub c: f64,
    pub j1: TailSum,
    pub j2: TailSum,
    pub j3: TailSum,
    /// `Σ_{|n|≥3} 20C(3|n|+2)[…]`, summed on its own.
    pub display_sum: TailSum,
    /// `Σ_{|n|≤2} 20C(3|n|+2)[…]`, the block the display sum leaves out.
    pub low_block: f64,
}

/// `J₁ = Σ_{n∈ℤ} 20C|n|[Ω((|n|-1)/2)^{1/2} + F₀((|n|-3)/2)]`, `J₂` the same
/// without `|n|`, and `J₃ = Σ_{z∈ℤ} Ω(|z|/2) + 2F₀(⌊|z|/2⌋)`. Negative
/// arguments of `Ω` and `F₀` are clamped to 0.
pub fn j_constants(omega: &OmegaModel, f0: &DerivedFSpec, c: f64) -> Result<JConstants> {
    check_f0(f0)?;
    if !(c > 0.0) {
        return domain("the constant C must be positive");
    }
    let start = 64.max(2 * (36 * f0.params.range + 60));
    let b = |n: u64| bracket(n, omega, f0);
    // C-free sums, scaled at the end so that J₁, J₂ are exactly linear in C
    let j1 = certified_sum(
        start,
        |n| 2.0 * 20.0 * n as f64 * b(n),
        |n| 2.0 * 20.0 * bracket_tail(n, omega, f0, true),
        "J1",
    )?;
    let j2 = certified_sum(
        start,
        |n| if n == 0 { 20.0 * b(0) } else { 2.0 * 20.0 * b(n) },
        |n| 2.0 * 20.0 * bracket_tail(n, omega, f0, false),
        "J2",
    )?;
    let display = certified_sum(
        start,
        |n| if n < 3 { 0.0 } else { 2.0 * 20.0 * (3.0 * n as f64 + 2.0) * b(n) },
        |n| 2.0 * 20.0 * (3.0 * bracket_tail(n, omega, f0, true) + 2.0 * bracket_tail(n, omega, f0, false)),
        "display form of m",
    )?;
    let low_block = 20.0 * (2.0 * b(0) + 2.0 * 5.0 * b(1) + 2.0 * 8.0 * b(2));
    let z0 = 36.0 * f0.params.range as f64 + 55.0;
    let j3_term = |z: u64| omega.eval(z as f64 / 2.0) + 2.0 * f0.eval((z / 2) as f64);
    let j3 = certified_sum(
        start,
        |z| if z == 0 { j3_term(0) } else { 2.0 * j3_term(z) },
        |z| 2.0 * (omega_tail(omega, z, 2.0, 0.0, 1.0, false) + 2.0 * poly_tail(&f0.base, z, z0, 36.0, false)),
        "J3",
    )?;
    Ok(JConstants {
        c,
        j1: j1.scaled(c),
        j2: j2.scaled(c),
        j3,
        display_sum: display.scaled(c),
        low_block: c * low_block,
    })
}

/// `κ(n,ε) = 20Cε(‖η‖_F + ‖Φ^Int‖_F)[Ω((n-1)/2)^{1/2} + F₀((n-3)/2)]`.
pub fn kappa(n: u64, eps: f64, c: f64, eta_norm: f64, bulk_norm: f64, omega: &OmegaModel, f0: &DerivedFSpec) -> f64 {
    20.0 * c * eps * (eta_norm + bulk_norm) * bracket(n, omega, f0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormConstants {
    pub delta: f64,
    pub beta: f64,
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
}

/// `δ = J₂ S`, `β = (3/γ₀) J₁ S`, `α = C S (J₃ + 4) + δ`, `p = (3/γ₀) J₁ S`,
/// `q = [C(J₃ + 4) + J₂] S` with `S = ‖η‖_F + strength`. Pass the per-volume
/// bulk norm for the volume-level constants or `M_Int` for the uniform ones.
pub fn form_bound_constants(eta_norm: f64, strength: f64, gamma0: f64, j: &JConstants) -> Result<FormConstants> {
    if !(gamma0 > 0.0) || !(eta_norm >= 0.0) || !(strength >= 0.0) {
        return domain("form bound constants need γ₀ > 0 and nonnegative norms");
    }
    let s = eta_norm + strength;
    let (j1, j2, j3) = (j.j1.value(), j.j2.value(), j.j3.value());
    let delta = j2 * s;
    let beta = 3.0 / gamma0 * j1 * s;
    Ok(FormConstants {
        delta,
        beta,
        alpha: j.c * s * (j3 + 4.0) + delta,
        p: 3.0 / gamma0 * j1 * s,
        q: (j.c * (j3 + 4.0) + j2) * s,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// `(3J₁ + 2J₂ + C(J₃ + 8))(‖η‖_F + M_Int)`.
    pub m: f64,
    /// `(Σ_{|n|≥3} 20C(3|n|+2)[…] + C(J₃ + 8))(‖η‖_F + M_Int)`.
    pub m_display: f64,
    /// The `|n| ≤ 2` block times `‖η‖_F + M_Int`; `m - m_display` up to tails.
    pub low_block: f64,
    /// Tail slack available to the comparison of the two forms.
    pub slack: f64,
    pub forms_agree_raw: bool,
    pub forms_agree_with_block: bool,
    /// `min{1, γ₀/m}`.
    pub eps_int: f64,
    /// `min{1, γ₀/(m + 2M_D)}`.
    pub eps_star: f64,
}

pub fn stability_threshold(eta_norm: f64, m_int: f64, m_d: f64, gamma0: f64, j: &JConstants) -> Result<Threshold> {
    if !(gamma0 > 0.0) || !(m_d >= 0.0) {
        return domain("threshold needs γ₀ > 0 and M_D ≥ 0");
    }
    let s = eta_norm + m_int;
    let tail3 = j.c * (j.j3.value() + 8.0);
    let m = (3.0 * j.j1.value() + 2.0 * j.j2.value() + tail3) * s;
    let m_display = (j.display_sum.value() + tail3) * s;
    let low_block = j.low_block * s;
    let slack = (3.0 * j.j1.tail + 2.0 * j.j2.tail + j.display_sum.tail) * s + 1e-12 * m.abs();
    let min1 = |x: f64| if x.is_finite() { x.min(1.0) } else { 1.0 };
    Ok(Threshold {
        m,
        m_display,
        low_block,
        slack,
        forms_agree_raw: (m - m_display).abs() <= slack,
        forms_agree_with_block: (m - m_display - low_block).abs() <= slack,
        eps_int: min1(gamma0 / m),
        eps_star: min1(gamma0 / (m + 2.0 * m_d)),
    })
}

/// Where the constant `C` came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CSource {
    Supplied,
    Calibrated,
}

/// One decomposition's contribution to the calibration of `C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CSample {
    pub eps: f64,
    pub phi1_norm: f64,
    pub eta_norm: f64,
    pub psi_norm: f64,
}

/// `max ‖Φ¹(ε)‖_{F_φ} / (ε(‖η‖_F + ‖Ψ‖_F))` over samples with `ε > 0`.
pub fn calibrate_c(samples: &[CSample]) -> Result<f64> {
    let c = samples
        .iter()
        .filter(|s| s.eps > 0.0 && s.eta_norm + s.psi_norm > 0.0)
        .map(|s| s.phi1_norm / (s.eps * (s.eta_norm + s.psi_norm)))
        .fold(f64::NAN, f64::max);
    if !(c > 0.0) {
        return domain("calibrating C needs a decomposition with ε > 0 and nonzero Φ¹");
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub gamma0: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub c_source: CSource,
    pub eta_norm: f64,
    pub m_int: f64,
    pub m_d: f64,
    pub omega: OmegaModel,
    pub f0: DerivedFSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub inputs: BoundInputs,
    pub j: JConstants,
    pub form: FormConstants,
    pub threshold: Threshold,
    /// `m′_D = m + 2M_D`.
    pub m_prime_d: f64,
    pub eps_star_fermion: f64,
}

impl BoundConstants {
    pub fn new(inputs: BoundInputs) -> Result<Self> {
        let j = j_constants(&inputs.omega, &inputs.f0, inputs.c)?;
        let form = form_bound_constants(inputs.eta_norm, inputs.m_int, inputs.gamma0, &j)?;
        let threshold = stability_threshold(inputs.eta_norm, inputs.m_int, inputs.m_d, inputs.gamma0, &j)?;
        let (m_prime_d, eps_star_fermion) = fermion_constants(threshold.m, inputs.m_d, threshold.eps_star);
        Ok(BoundConstants { inputs, j, form, threshold, m_prime_d, eps_star_fermion })
    }

    pub fn eps_star(&self) -> f64 {
        self.threshold.eps_star
    }

    /// `γ₀ - (m + 2M_D) ε`.
    pub fn gap_lower_bound(&self, eps: f64) -> f64 {
        self.inputs.gamma0 - (self.threshold.m + 2.0 * self.inputs.m_d) * eps
    }

    /// `(1 - pε)γ - 2(q + pT + M_D)ε`.
    pub fn higher_gap_lower_bound(&self, gamma: f64, t: f64, eps: f64) -> f64 {
        let FormConstants { p, q, .. } = self.form;
        (1.0 - p * eps) * gamma - 2.0 * (q + p * t + self.inputs.m_d) * eps
    }

    pub fn ledger(&self) -> ConstantsLedger {
        let entry = |name: &str, formula: &str, value: f64, tail: Option<f64>| LedgerEntry {
            name: name.into(),
            formula: formula.into(),
            value,
            tail,
        };
        let j = &self.j;
        let t = &self.threshold;
        let f = &self.form;
        let entries = vec![
            entry("J1", "sum_{n in Z} 20C|n|[Omega((|n|-1)/2)^(1/2) + F0((|n|-3)/2)]", j.j1.value(), Some(j.j1.tail)),
            entry("J2", "sum_{n in Z} 20C[Omega((|n|-1)/2)^(1/2) + F0((|n|-3)/2)]", j.j2.value(), Some(j.j2.tail)),
            entry("J3", "sum_{z in Z} Omega(|z|/2) + 2F0(floor(|z|/2))", j.j3.value(), Some(j.j3.tail)),
            entry("delta", "J2(|eta|_F + M_Int)", f.delta, None),
            entry("beta", "(3/gamma0) J1(|eta|_F + M_Int)", f.beta, None),
            entry("alpha", "C(|eta|_F + M_Int)(J3 + 4) + delta", f.alpha, None),
            entry("p", "(3/gamma0) J1(|eta|_F + M_Int)", f.p, None),
            entry("q", "[C(J3 + 4) + J2](|eta|_F + M_Int)", f.q, None),
            entry("m", "(3J1 + 2J2 + C(J3 + 8))(|eta|_F + M_Int)", t.m, Some(t.slack)),
            entry(
                "m_display",
                "(sum_{|n|>=3} 20C(3|n|+2)[Omega((|n|-1)/2)^(1/2) + F0((|n|-3)/2)] + C(J3 + 8))(|eta|_F + M_Int)",
                t.m_display,
                Some(j.display_sum.tail * (self.inputs.eta_norm + self.inputs.m_int)),
            ),
            entry("m_low_block", "sum_{|n|<=2} 20C(3|n|+2)[...](|eta|_F + M_Int)", t.low_block, None),
            entry("eps_int", "min{1, gamma0/m}", t.eps_int, None),
            entry("eps_star", "min{1, gamma0/(m + 2M_D)}", t.eps_star, None),
            entry("m_prime_D", "m + 2M_D", self.m_prime_d, None),
            entry("eps_star_fermion", "min{1, gamma0/(m + 2M_D)} on the Jordan-Wigner image", self.eps_star_fermion, None),
            entry("M_Int", "sup over probes of |Phi^Int(Lambda)|_F", self.inputs.m_int, None),
            entry("M_D", "sup over probes of |Phi^D_Lambda|", self.inputs.m_d, None),
            entry("C", "spectral flow decomposition constant", self.inputs.c, None),
        ];
        ConstantsLedger {
            inputs: self.inputs.clone(),
            forms_agree_raw: t.forms_agree_raw,
            forms_agree_with_block: t.forms_agree_with_block,
            entries,
            gap_checks: Vec::new(),
            higher_gap_checks: Vec::new(),
        }
    }
}

/// `m′_D = m + 2M_D` and `ε′(γ₀) = ε(γ₀)`, both read off the Jordan-Wigner
/// image, which has the same bound, range and gap as the fermionic system.
pub fn fermion_constants(m: f64, m_d: f64, eps_star: f64) -> (f64, f64) {
    (m + 2.0 * m_d, eps_star)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub name: String,
    pub formula: String,
    pub value: f64,
    pub tail: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub inputs: BoundInputs,
    pub forms_agree_raw: bool,
    pub forms_agree_with_block: bool,
    pub entries: Vec<LedgerEntry>,
    pub gap_checks: Vec<GapBoundRow>,
    pub higher_gap_checks: Vec<HigherGapBoundRow>,
}

impl ConstantsLedger {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// ---------------------------------------------------------------------------
// Edge and bulk strengths

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeStrength {
    pub length: usize,
    pub bulk_f_norm: f64,
    pub edge_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strengths {
    pub m_int: f64,
    pub m_d: f64,
    pub probes: Vec<ProbeStrength>,
}

/// `M_Int = sup ‖Φ^Int(Λ)‖_F` and `M_D = sup ‖Φ^D_Λ‖` over the probe volumes,
/// each of which must have `diam Λ > max{2D, R}`.
pub fn edge_bulk_strengths(
    phi_for: impl Fn(&Interval) -> Result<Interaction>,
    probes: &[Interval],
    d: u64,
    range: u64,
    decay: &dyn Decay,
) -> Result<Strengths> {
    if probes.is_empty() {
        return domain("edge/bulk strengths need at least one probe volume");
    }
    let mut out = Strengths { m_int: 0.0, m_d: 0.0, probes: Vec::with_capacity(probes.len()) };
    for lam in probes {
        if lam.diam() <= (2 * d).max(range) {
            return domain(format!("probe {lam:?} has diameter ≤ max{{2D, R}} = {}", (2 * d).max(range)));
        }
        let phi = phi_for(lam)?;
        let split = split_edge_bulk(&phi, lam, d)?;
        let bulk_f_norm = split.bulk.f_norm(decay);
        let edge_norm = linalg::op_norm(&split.edge.local_hamiltonian_matrix(lam));
        out.m_int = out.m_int.max(bulk_f_norm);
        out.m_d = out.m_d.max(edge_norm);
        out.probes.push(ProbeStrength { length: lam.len(), bulk_f_norm, edge_norm });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Empirical form bound

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormBoundReport {
    pub eps: f64,
    pub delta: f64,
    pub beta: f64,
    pub random_vectors: usize,
    pub eigenvectors: usize,
    pub violations: usize,
    /// Smallest `δε‖v‖² + βε⟨v,Hv⟩ - |⟨v,Φ²v⟩|` over unit vectors.
    pub min_slack: f64,
    /// Largest `|⟨v,Φ²v⟩| / (δε + βε⟨v,Hv⟩)`; 0 when both sides vanish.
    pub max_ratio: f64,
}

impl FormBoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Tests `|⟨v,Φ²v⟩| ≤ δε‖v‖² + βε⟨v,Hv⟩ + 10⁻¹⁰` on `trials` Haar-random unit
/// vectors (normalized complex Gaussians) and on every eigenvector of `H`.
pub fn verify_form_bound(
    h: &LocalOperator,
    phi2: &LocalOperator,
    delta: f64,
    beta: f64,
    eps: f64,
    trials: usize,
    seed: u64,
) -> Result<FormBoundReport> {
    if h.dim() != phi2.dim() {
        return domain("H and Φ² must act on the same space");
    }
    let n = h.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vs = linalg::from_fn(n, trials, |_, _| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)));
    for j in 0..trials {
        let norm = (0..n).map(|i| vs[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        for i in 0..n {
            vs[(i, j)] /= norm;
        }
    }
    let hm = linalg::hermitian_part(&h.matrix);
    let eig = linalg::eigh(&hm)?;
    let mut report = FormBoundReport {
        eps,
        delta,
        beta,
        random_vectors: trials,
        eigenvectors: n,
        violations: 0,
        min_slack: f64::INFINITY,
        max_ratio: 0.0,
    };
    for block in [&vs, &eig.vectors] {
        let hv = linalg::mul(&hm, block);
        let pv = linalg::mul(&phi2.matrix, block);
        for j in 0..block.ncols() {
            let (mut eh, mut ep) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for i in 0..n {
                let c = block[(i, j)].conj();
                eh += c * hv[(i, j)];
                ep += c * pv[(i, j)];
            }
            let lhs = ep.norm();
            let rhs = delta * eps + beta * eps * eh.re;
            report.min_slack = report.min_slack.min(rhs - lhs);
            if rhs > 0.0 {
                report.max_ratio = report.max_ratio.max(lhs / rhs);
            } else if lhs > 0.0 {
                report.max_ratio = f64::INFINITY;
            }
            if lhs > rhs + 1e-10 {
                report.violations += 1;
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Gap bounds against measurements

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapBoundRow {
    pub length: usize,
    pub eps: f64,
    pub measured: f64,
    pub bound: f64,
    /// `ε < ε(γ₀)`.
    pub in_range: bool,
    /// The bound is `≤ 0` at this `ε`.
    pub vacuous: bool,
    /// `measured ≥ bound`, checked only where the bound is in range and positive.
    pub dominates: Option<bool>,
}

impl GapBoundRow {
    pub fn passed(&self) -> bool {
        self.measured > 0.0 && self.dominates != Some(false)
    }
}

/// Compares measured gaps `(ε, γ(ε))` on one volume with `γ₀ - (m + 2M_D)ε`.
pub fn gap_bound_check(bc: &BoundConstants, length: usize, measured: &[(f64, f64)]) -> Vec<GapBoundRow> {
    measured
        .iter()
        .map(|&(eps, gap)| {
            let bound = bc.gap_lower_bound(eps);
            let in_range = eps < bc.eps_star();
            let vacuous = bound <= 0.0;
            GapBoundRow {
                length,
                eps,
                measured: gap,
                bound,
                in_range,
                vacuous,
                dominates: (in_range && !vacuous).then_some(gap >= bound - 1e-12),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HigherGapBoundRow {
    pub length: usize,
    pub eps: f64,
    /// Unperturbed gap `μ - ν` used as `γ`.
    pub gamma: f64,
    pub t: f64,
    pub measured: f64,
    pub bound: f64,
    pub vacuous: bool,
    pub dominates: Option<bool>,
}

impl HigherGapBoundRow {
    pub fn passed(&self) -> bool {
        self.measured > 0.0 && self.dominates != Some(false)
    }
}

/// Compares measured higher gaps with `(1 - pε)γ - 2(q + pT + M_D)ε`, taking
/// `T = μ`, the smallest window containing `(ν, μ)`.
pub fn higher_gap_bound_check(
    bc: &BoundConstants,
    length: usize,
    nu: f64,
    mu: f64,
    measured: &[(f64, f64)],
) -> Vec<HigherGapBoundRow> {
    let gamma = mu - nu;
    measured
        .iter()
        .map(|&(eps, gap)| {
            let bound = bc.higher_gap_lower_bound(gamma, mu, eps);
            let vacuous = bound <= 0.0;
            HigherGapBoundRow {
                length,
                eps,
                gamma,
                t: mu,
                measured: gap,
                bound,
                vacuous,
                dominates: (!vacuous).then_some(gap >= bound - 1e-12),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Lower-cluster diameter envelope

/// `𝒢(r) = Σ_{k ≥ ⌊r⌋} F̃(⌊k/4⌋) + 16C(M_Int + ‖η‖_F)[Ω(k/4) + F₀(⌊k/4⌋)]`
/// for a user-supplied `F̃`.
pub fn sp0_envelope(
    r: f64,
    f_tilde: &FFunctionSpec,
    c: f64,
    m_int: f64,
    eta_norm: f64,
    omega: &OmegaModel,
    f0: &DerivedFSpec,
) -> Result<TailSum> {
    check_f0(f0)?;
    f_tilde.validate()?;
    if !(r >= 0.0) {
        return domain("the envelope is defined for r ≥ 0");
    }
    let k_min = r.floor() as u64;
    let s = 16.0 * c * (m_int + eta_norm);
    let k0 = 72.0 * f0.params.range as f64 + 111.0;
    let base = f_tilde.base();
    let term = |k: u64| {
        if k < k_min {
            return 0.0;
        }
        let q = (k / 4) as f64;
        f_tilde.eval(q) + s * (omega.eval(k as f64 / 4.0) + f0.eval(q))
    };
    let tail = |n: u64| {
        // F̃(⌊k/4⌋) ≤ F̃^b((k-3)/4) and the same for F₀
        poly_tail(&base, n, 3.0, 4.0, false) + s * (omega_tail(omega, n, 4.0, 0.0, 1.0, false) + poly_tail(&f0.base, n, k0, 72.0, false))
    };
    certified_sum((4 * k_min).max(2 * k0 as u64), term, tail, "sp0 envelope")
}
