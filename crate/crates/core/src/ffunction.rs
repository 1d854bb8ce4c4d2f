//! F-functions on ℤ, `F(r) = e^{-h(r)} L / (1 + c r)^κ`, and the derived decay
//! functions used by the spectral-flow decomposition and the regrouping step.
//!
//! Everything is evaluated in log space and exponentiated once.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::interaction::Interaction;
use crate::lattice::Interval;

/// Subadditive, nondecreasing weight `h` with `h(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Weight {
    Zero,
    /// `h(r) = k r^s`.
    StretchedExp { k: f64, s: f64 },
    /// `h(n) = values[n]`, linearly interpolated, held constant past the table.
    Tabulated { values: Vec<f64> },
}

impl Weight {
    pub fn h(&self, r: f64) -> f64 {
        match self {
            Weight::Zero => 0.0,
            Weight::StretchedExp { k, s } => {
                if r <= 0.0 {
                    0.0
                } else {
                    k * r.powf(*s)
                }
            }
            Weight::Tabulated { values } => {
                if values.is_empty() || r <= 0.0 {
                    return 0.0;
                }
                let last = values.len() - 1;
                if r >= last as f64 {
                    return values[last];
                }
                let i = r.floor() as usize;
                let t = r - i as f64;
                values[i] * (1.0 - t) + values[i + 1] * t
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Weight::Zero => Ok(()),
            Weight::StretchedExp { k, s } => {
                if !(*k > 0.0) || !(*s > 0.0 && *s <= 1.0) {
                    return domain(format!("stretched exponential needs k > 0, s in (0,1]; got k={k}, s={s}"));
                }
                Ok(())
            }
            Weight::Tabulated { values } => {
                if values.first().is_some_and(|v| *v != 0.0) {
                    return domain("tabulated weight must start at h(0) = 0");
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return domain("tabulated weight must be nondecreasing");
                }
                let n = values.len();
                for u in 0..n {
                    for v in 0..n - u {
                        if values[u + v] > values[u] + values[v] + 1e-12 {
                            return domain(format!("tabulated weight not subadditive at ({u},{v})"));
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

/// Anything that behaves like a positive, nonincreasing decay profile on `[0, ∞)`.
pub trait Decay {
    fn ln_eval(&self, r: f64) -> f64;

    fn eval(&self, r: f64) -> f64 {
        self.ln_eval(r).exp()
    }
}

/// `F(r) = e^{-h(r)} L / (1 + c r)^κ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FFunctionSpec {
    #[serde(rename = "L")]
    pub l: f64,
    pub c: f64,
    pub kappa: f64,
    pub weight: Weight,
}

impl FFunctionSpec {
    pub fn new(l: f64, c: f64, kappa: f64, weight: Weight) -> Result<Self> {
        let s = FFunctionSpec { l, c, kappa, weight };
        s.validate()?;
        Ok(s)
    }

    pub fn polynomial(l: f64, c: f64, kappa: f64) -> Result<Self> {
        Self::new(l, c, kappa, Weight::Zero)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0) || !(self.c > 0.0) {
            return domain(format!("F-function needs L > 0 and c > 0 (L={}, c={})", self.l, self.c));
        }
        if !(self.kappa > 2.0) {
            return domain(format!("F-function needs kappa > 2, got {}", self.kappa));
        }
        self.weight.validate()
    }

    /// The polynomial part `F^b`.
    pub fn base(&self) -> FFunctionSpec {
        FFunctionSpec { weight: Weight::Zero, ..self.clone() }
    }

    pub fn scaled(&self, lambda: f64) -> FFunctionSpec {
        FFunctionSpec { l: self.l * lambda, ..self.clone() }
    }

    pub fn h(&self, r: f64) -> f64 {
        self.weight.h(r)
    }

    fn ln_base(&self, r: f64) -> f64 {
        self.l.ln() - self.kappa * (self.c * r).ln_1p()
    }

    /// Certified upper bound on `Σ_{k > n} F^b(k)` (integral comparison).
    pub fn base_tail(&self, n: u64) -> f64 {
        self.l * (1.0 + self.c * n as f64).powf(1.0 - self.kappa) / (self.c * (self.kappa - 1.0))
    }

    /// `Σ_{x ∈ ℤ} F(|x|)` as (partial sum over `|x| ≤ n`, certified tail bound).
    pub fn l1_norm(&self, n: u64) -> (f64, f64) {
        let mut s = self.eval(0.0);
        for k in 1..=n {
            s += 2.0 * self.eval(k as f64);
        }
        (s, 2.0 * self.base_tail(n))
    }
}

impl Decay for FFunctionSpec {
    fn ln_eval(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        self.ln_base(r) - self.h(r)
    }
}

/// `sup_{x,y} Σ_z F(|x-z|) F(|z-y|) / F(|x-y|)`, returned as a certified upper bound.
///
/// Separations `d ≤ truncation` are summed directly (with a tail bound for the
/// truncated `z` range); larger separations are covered by the monotone bound
/// `2 Σ_z F^b(|z|) min(2, 1 + c|z|/(1 + cN/2))^κ`, which also dominates the
/// weighted case by subadditivity of `h`.
pub fn convolution_constant(spec: &FFunctionSpec, truncation: u64) -> Result<f64> {
    if truncation == 0 {
        return domain("convolution constant needs truncation >= 1");
    }
    spec.validate()?;
    let n = truncation;
    let z_max: u64 = 4000.max(n / 4);
    let table: Vec<f64> = (0..=n + z_max).map(|k| spec.ln_eval(k as f64)).collect();
    // |z| beyond z_max on either side: F(|z-d|)/F(d) <= 1, so each side is at most Σ_{k>z_max} F(k).
    let outer_tail = 2.0 * spec.base_tail(z_max);
    let mut best = 0.0f64;
    for d in 0..=n {
        let ln_fd = table[d as usize];
        let lo = -(z_max as i64);
        let hi = (d + z_max) as i64;
        let mut s = 0.0;
        for z in lo..=hi {
            let a = z.unsigned_abs() as usize;
            let b = (z - d as i64).unsigned_abs() as usize;
            s += (table[a] + table[b] - ln_fd).exp();
        }
        best = best.max(s + outer_tail);
    }
    let base = spec.base();
    let denom = 1.0 + base.c * n as f64 / 2.0;
    let mut far = 0.0;
    for z in -(z_max as i64)..=(z_max as i64) {
        let az = z.unsigned_abs() as f64;
        let factor = (1.0 + base.c * az / denom).min(2.0).powf(base.kappa);
        far += base.eval(az) * factor;
    }
    far = 2.0 * (far + 2.0 * 2f64.powf(base.kappa) * base.base_tail(z_max));
    Ok(best.max(far))
}

/// Default Lieb-Robinson velocity estimate `ν = 2 C_F ‖Φ‖_F`.
pub fn lieb_robinson_velocity(c_f: f64, phi_norm: f64) -> f64 {
    2.0 * c_f * phi_norm
}

/// F-norm of a finite family of (support, norm) pairs:
/// `sup_{x,y} Σ_{Z ∋ x,y} ‖Φ(Z)‖ / F(|x-y|)`.
pub fn f_norm_of_terms(terms: &[(Interval, f64)], decay: &dyn Decay) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    let lo = terms.iter().map(|t| t.0.a).min().unwrap();
    let hi = terms.iter().map(|t| t.0.b).max().unwrap();
    let n = (hi - lo + 1) as usize;
    // w[a][b] accumulates norms of terms supported on [a,b]; then suffix/prefix sums
    // give W(x,y) = Σ_{a<=x, b>=y} w[a][b].
    let mut w = vec![vec![0.0f64; n]; n];
    for (iv, nrm) in terms {
        w[(iv.a - lo) as usize][(iv.b - lo) as usize] += nrm;
    }
    for a in 0..n {
        for b in (0..n - 1).rev() {
            w[a][b] += w[a][b + 1];
        }
    }
    for a in 1..n {
        for b in 0..n {
            w[a][b] += w[a - 1][b];
        }
    }
    let mut best = 0.0f64;
    for x in 0..n {
        for y in x..n {
            let v = w[x][y];
            if v > 0.0 {
                best = best.max(v / decay.eval((y - x) as f64));
            }
        }
    }
    best
}

/// `‖Φ‖_F` for an interaction, using operator norms of its terms.
pub fn f_norm(phi: &Interaction, decay: &dyn Decay) -> f64 {
    f_norm_of_terms(&phi.support_norms(), decay)
}

/// `μ(r) = (e/κ)^κ` for `r ≤ e^κ`, `r / (ln r)^κ` beyond.
pub fn mu(kappa: f64, r: f64) -> f64 {
    if r <= kappa.exp() {
        (std::f64::consts::E / kappa).powf(kappa)
    } else {
        r / r.ln().powf(kappa)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivedKind {
    FPhi,
    F0,
    GRegrouped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub gamma: f64,
    pub nu: f64,
    /// Stretched-exponential prefactor `𝒦` of the base weight.
    pub k: f64,
    /// `𝒦₀ = min(𝒦, 2/7)`.
    pub k0: f64,
    pub t: f64,
    pub range: u64,
    pub c_phi: f64,
}

/// F-functions built from a base spec: `F_φ`, the shifted `F₀`, and the regrouped `G`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedFSpec {
    pub kind: DerivedKind,
    pub base: FFunctionSpec,
    pub params: DerivedParams,
}

impl DerivedFSpec {
    /// `F_φ` plateau edge `18R + 27`.
    pub fn plateau(&self) -> f64 {
        18.0 * self.params.range as f64 + 27.0
    }

    fn shift(&self, r: f64) -> f64 {
        (r / 18.0 - self.params.range as f64 - 1.5).max(0.0)
    }

    fn ln_g_phi(&self, r: f64) -> f64 {
        let p = &self.params;
        let kappa = self.base.kappa;
        let arg = p.k * p.gamma * self.base.h(r) / (2.0 * p.nu);
        -(p.k0 / p.k) * mu(kappa, arg) + self.base.base().ln_eval(r)
    }
}

impl Decay for DerivedFSpec {
    fn ln_eval(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        match self.kind {
            DerivedKind::FPhi => {
                if r <= self.plateau() {
                    self.ln_g_phi(0.0)
                } else {
                    self.ln_g_phi(r / 18.0 - self.params.range as f64 - 1.5)
                }
            }
            DerivedKind::F0 => self.base.base().ln_eval(self.shift(r)),
            DerivedKind::GRegrouped => {
                let b = &self.base;
                self.params.c_phi.ln() - 0.5 * b.h(r) - b.kappa * (b.c * r).ln_1p()
            }
        }
    }
}

/// Builds `F_φ` from the perturbation's F-function.
pub fn transform_f_phi(
    base: &FFunctionSpec,
    gamma: f64,
    nu: f64,
    k: f64,
    t: f64,
    range: u64,
) -> Result<DerivedFSpec> {
    base.validate()?;
    if !(gamma > 0.0 && nu > 0.0 && k > 0.0) || !(t > 0.0 && t <= 1.0) {
        return domain(format!("F_phi needs gamma, nu, K > 0 and t in (0,1]; got {gamma}, {nu}, {k}, {t}"));
    }
    Ok(DerivedFSpec {
        kind: DerivedKind::FPhi,
        base: base.clone(),
        params: DerivedParams { gamma, nu, k, k0: k.min(2.0 / 7.0), t, range, c_phi: 0.0 },
    })
}

/// `F₀(r) = F^b(r/18 - R - 3/2)`, clamped to `F^b(0)` for negative arguments.
pub fn shifted_base(base: &FFunctionSpec, range: u64) -> DerivedFSpec {
    DerivedFSpec {
        kind: DerivedKind::F0,
        base: base.clone(),
        params: DerivedParams { gamma: 0.0, nu: 0.0, k: 0.0, k0: 0.0, t: 1.0, range, c_phi: 0.0 },
    }
}

/// `Σ_{n≥1} n e^{-h(n)/2}` for `h(n) = k n^s`, certified by an incomplete-gamma tail bound.
fn weighted_moment(k: f64, s: f64) -> f64 {
    let a = 2.0 / s;
    // the summand is decreasing past this point
    let n_mono = (2.0 / (k * s)).powf(1.0 / s).ceil() as u64 + 1;
    let mut sum = 0.0;
    let mut n: u64 = 1;
    loop {
        sum += n as f64 * (-0.5 * k * (n as f64).powf(s)).exp();
        if n >= n_mono {
            let x = 0.5 * k * (n as f64).powf(s);
            if x > 2.0 * (a - 1.0).max(0.0) + 1.0 {
                let gamma_tail = x.powf(a - 1.0) * (-x).exp() / (1.0 - (a - 1.0).max(0.0) / x);
                let tail = gamma_tail * (2.0 / k).powf(a) / s;
                if tail <= 1e-15 * sum || n > 50_000_000 {
                    return sum + tail;
                }
            }
        }
        n += 1;
    }
}

/// The regrouped decay `G(r) = e^{-h(r)/2} C_Φ / (1 + c r)^κ`, `C_Φ = L Σ_{n≥1} n e^{-h(n)/2}`.
pub fn regroup_decay(base: &FFunctionSpec) -> Result<DerivedFSpec> {
    base.validate()?;
    let (k, s) = match base.weight {
        Weight::StretchedExp { k, s } => (k, s),
        Weight::Zero => return domain("regrouping needs a nonzero weight: Σ n e^{-h(n)/2} diverges for h = 0"),
        Weight::Tabulated { .. } => {
            return Err(Error::Domain(
                "regrouping needs a stretched-exponential weight to certify Σ n e^{-h(n)/2}".into(),
            ))
        }
    };
    let c_phi = base.l * weighted_moment(k, s);
    Ok(DerivedFSpec {
        kind: DerivedKind::GRegrouped,
        base: base.clone(),
        params: DerivedParams { gamma: 0.0, nu: 0.0, k, k0: 0.0, t: s, range: 0, c_phi },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn poly(kappa: f64) -> FFunctionSpec {
        FFunctionSpec::polynomial(1.0, 1.0, kappa).unwrap()
    }

    fn sexp(k: f64, s: f64) -> FFunctionSpec {
        FFunctionSpec::new(1.0, 1.0, 3.0, Weight::StretchedExp { k, s }).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let f = poly(3.0);
        assert_eq!(f.eval(0.0), 1.0);
        assert!((f.eval(1.0) - 0.125).abs() < 1e-15);
        let f0 = shifted_base(&f, 1);
        assert_eq!(f0.eval(0.0), f.eval(0.0));
        assert!((f0.eval(18.0 * 4.5) - f.eval(2.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(FFunctionSpec::polynomial(1.0, 1.0, 2.0).is_err());
        assert!(FFunctionSpec::polynomial(0.0, 1.0, 3.0).is_err());
        assert!(FFunctionSpec::new(1.0, 1.0, 3.0, Weight::StretchedExp { k: 1.0, s: 1.5 }).is_err());
        assert!(FFunctionSpec::new(1.0, 1.0, 3.0, Weight::Tabulated { values: vec![0.0, 1.0, 3.0] }).is_err());
        assert!(FFunctionSpec::new(1.0, 1.0, 3.0, Weight::Tabulated { values: vec![0.0, 1.0, 1.5] }).is_ok());
    }

    fn brute_convolution(spec: &FFunctionSpec, d_max: i64, z: i64) -> f64 {
        (0..=d_max)
            .map(|d| {
                (-z..=z + d)
                    .map(|y| spec.eval(y.unsigned_abs() as f64) * spec.eval((y - d).unsigned_abs() as f64))
                    .sum::<f64>()
                    / spec.eval(d as f64)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn convolution_constant_dominates_brute_force() {
        let f = poly(3.0);
        let c = convolution_constant(&f, 10_000).unwrap();
        let brute = brute_convolution(&f, 300, 100_000);
        assert!(c >= brute, "{c} < {brute}");
        // not wildly loose: the far-separation supremum is 2 Σ_z F(|z|)
        assert!(c <= 1.05 * 2.0 * f.l1_norm(100_000).0 + 1e-6, "{c}");
        assert!(convolution_constant(&f, 0).is_err());
    }

    #[test]
    fn convolution_constant_weight_and_scaling() {
        let f = poly(3.0);
        let w = FFunctionSpec::new(1.0, 1.0, 3.0, Weight::StretchedExp { k: 0.1, s: 1.0 }).unwrap();
        let cf = convolution_constant(&f, 50).unwrap();
        let cw = convolution_constant(&w, 50).unwrap();
        assert!(cw <= cf + 1e-12);
        let c2 = convolution_constant(&f.scaled(2.5), 50).unwrap();
        assert!((c2 - 2.5 * cf).abs() < 1e-9 * cf);
    }

    #[test]
    fn f_phi_plateau_and_mu() {
        let base = sexp(1.0, 0.5);
        let fphi = transform_f_phi(&base, 1.0, 2.0, 1.0, 0.5, 1).unwrap();
        let p0 = fphi.eval(0.0);
        assert_eq!(fphi.eval(45.0), p0);
        assert_eq!(fphi.eval(20.0), p0);
        assert!(fphi.eval(46.0) <= p0);
        let kappa = 3.0;
        assert_eq!(mu(kappa, 1.0), (std::f64::consts::E / kappa).powf(kappa));
        assert_eq!(mu(kappa, kappa.exp()), (std::f64::consts::E / kappa).powf(kappa));
        let r: f64 = 1e3;
        assert!((mu(kappa, r) - r / r.ln().powi(3)).abs() < 1e-12);
    }

    #[test]
    fn f_phi_decays_faster_than_polynomials() {
        // Strong prefactor so the super-polynomial regime starts inside the sampled window;
        // checked in log space against the closed form.
        let base = FFunctionSpec::new(1.0, 1.0, 2.5, Weight::StretchedExp { k: 1.0, s: 1.0 }).unwrap();
        let fphi = transform_f_phi(&base, 1.0, 0.05, 1.0, 1.0, 0).unwrap();
        for p in 1..=6 {
            let vals: Vec<f64> = (2..=6)
                .map(|k| {
                    let r = 10f64.powi(k);
                    fphi.ln_eval(r) + p as f64 * r.ln()
                })
                .collect();
            assert!(vals[2..].windows(2).all(|w| w[1] < w[0]), "p={p}: {vals:?}");
            assert!(*vals.last().unwrap() < -50.0, "p={p}: {vals:?}");
        }
    }

    #[test]
    fn regroup_closed_form() {
        let base = sexp(1.0, 1.0);
        let g = regroup_decay(&base).unwrap();
        let q = (-0.5f64).exp();
        let exact = q / (1.0 - q).powi(2);
        assert!((g.params.c_phi - exact).abs() < 1e-12 * exact);
        for r in [0.0, 1.0, 3.5, 10.0] {
            let ratio = g.eval(r) / base.eval(r);
            let expect = g.params.c_phi / base.l * (0.5 * base.h(r)).exp();
            assert!((ratio - expect).abs() < 1e-12 * expect);
        }
        let g2 = regroup_decay(&base.scaled(2.0)).unwrap();
        assert!((g2.params.c_phi - 2.0 * g.params.c_phi).abs() < 1e-12);
        assert!(regroup_decay(&poly(3.0)).is_err());
    }

    #[test]
    fn regroup_moment_matches_long_partial_sum() {
        for (k, s) in [(0.3, 0.5), (1.0, 0.4), (2.0, 1.0)] {
            let exact: f64 = (1..2_000_000u64)
                .map(|n| n as f64 * (-0.5 * k * (n as f64).powf(s)).exp())
                .sum();
            let m = weighted_moment(k, s);
            assert!(m >= exact * (1.0 - 1e-13), "{k} {s}: {m} {exact}");
            assert!(m <= exact * (1.0 + 1e-9), "{k} {s}: {m} {exact}");
        }
    }

    #[test]
    fn f_norm_examples() {
        let f = poly(3.0);
        assert_eq!(f_norm_of_terms(&[], &f), 0.0);
        let singles: Vec<_> = (0..10).map(|x| (Interval::point(x), 1.0)).collect();
        assert!((f_norm_of_terms(&singles, &f) - 1.0 / f.eval(0.0)).abs() < 1e-15);
        let nn: Vec<_> = (0..9).map(|x| (Interval::new(x, x + 1).unwrap(), 1.0)).collect();
        let mut brute = 0.0f64;
        for x in 0..10i64 {
            for y in 0..10i64 {
                let s: f64 = nn
                    .iter()
                    .filter(|(iv, _)| iv.contains(x) && iv.contains(y))
                    .map(|t| t.1)
                    .sum();
                brute = brute.max(s / f.eval((x - y).unsigned_abs() as f64));
            }
        }
        assert!((f_norm_of_terms(&nn, &f) - brute).abs() < 1e-14);
        assert!((brute - 8.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn stretched_weight_is_subadditive(k in 0.01f64..3.0, s in 0.05f64..1.0, u in 0.0f64..200.0, v in 0.0f64..200.0) {
            let w = Weight::StretchedExp { k, s };
            prop_assert!(w.h(u + v) <= w.h(u) + w.h(v) + 1e-9);
            prop_assert!(w.h(u + v) >= w.h(u));
        }

        #[test]
        fn summable_with_tail(kappa in 2.01f64..6.0, c in 0.1f64..3.0) {
            let f = FFunctionSpec::polynomial(1.0, c, kappa).unwrap();
            let (s, tail) = f.l1_norm(2000);
            prop_assert!(s.is_finite() && tail.is_finite() && s > 0.0);
            let (s2, _) = f.l1_norm(4000);
            prop_assert!(s2 <= s + tail + 1e-12);
        }

        #[test]
        fn f_norm_matches_pairwise_sweep(seed in 0u64..500) {
            let f = poly(3.0);
            let mut st = seed.wrapping_mul(2654435761) + 7;
            let mut next = || { st = st.wrapping_mul(6364136223846793005).wrapping_add(1); (st >> 33) as i64 };
            let terms: Vec<(Interval, f64)> = (0..8).map(|_| {
                let a = next() % 8;
                let b = a + next() % 4;
                (Interval::new(a, b).unwrap(), (next() % 100) as f64 / 10.0)
            }).collect();
            let mut brute = 0.0f64;
            for x in 0..12i64 { for y in 0..12i64 {
                let s: f64 = terms.iter().filter(|(iv, _)| iv.contains(x) && iv.contains(y)).map(|t| t.1).sum();
                brute = brute.max(s / f.eval((x - y).unsigned_abs() as f64));
            }}
            prop_assert!((f_norm_of_terms(&terms, &f) - brute).abs() < 1e-12);
        }
    }
}
