//! Finite intervals of ℤ: balls, boundary distances, cut-offs and interiors.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{domain, Result};

pub type Site = i64;

/// The nonempty interval `[a, b]` of lattice sites, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub a: Site,
    pub b: Site,
}

/// Distances from a site to the two endpoints of its interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryDistances {
    /// Distance to the nearer endpoint.
    pub r: u64,
    /// Distance to the farther endpoint.
    pub big_r: u64,
}

impl Interval {
    pub fn new(a: Site, b: Site) -> Result<Self> {
        if a > b {
            return domain(format!("empty interval [{a},{b}]"));
        }
        Ok(Interval { a, b })
    }

    /// `[0, len-1]`.
    pub fn chain(len: usize) -> Result<Self> {
        if len == 0 {
            return domain("chain length must be positive");
        }
        Ok(Interval { a: 0, b: len as Site - 1 })
    }

    pub fn point(x: Site) -> Self {
        Interval { a: x, b: x }
    }

    pub fn diam(&self) -> u64 {
        (self.b - self.a) as u64
    }

    pub fn len(&self) -> usize {
        (self.b - self.a + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: Site) -> bool {
        self.a <= x && x <= self.b
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.a <= other.a && other.b <= self.b
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let a = self.a.max(other.a);
        let b = self.b.min(other.b);
        (a <= b).then_some(Interval { a, b })
    }

    /// Smallest interval containing both.
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { a: self.a.min(other.a), b: self.b.max(other.b) }
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> {
        self.a..=self.b
    }

    /// Position of `x` counted from the left endpoint.
    pub fn offset(&self, x: Site) -> Result<usize> {
        self.check(x)?;
        Ok((x - self.a) as usize)
    }

    fn check(&self, x: Site) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            domain(format!("site {x} outside {self}"))
        }
    }

    pub fn boundary_distances(&self, x: Site) -> Result<BoundaryDistances> {
        self.check(x)?;
        let l = (x - self.a) as u64;
        let r = (self.b - x) as u64;
        Ok(BoundaryDistances { r: l.min(r), big_r: l.max(r) })
    }

    /// `b_Λ(x, n) = [x-n, x+n] ∩ Λ`.
    pub fn ball(&self, x: Site, n: u64) -> Result<Interval> {
        self.check(x)?;
        let n = n.min(i64::MAX as u64 / 4) as Site;
        Ok(Interval { a: self.a.max(x - n), b: self.b.min(x + n) })
    }

    /// The cut-off `z_x(m) = min(m, r_x)`.
    pub fn cutoff(&self, x: Site, m: u64) -> Result<u64> {
        Ok(m.min(self.boundary_distances(x)?.r))
    }

    /// `Int_D(Λ) = [a+D, b-D]`, or `None` when `D` over-shrinks the interval.
    pub fn interior(&self, d: u64) -> Option<Interval> {
        let d = d.min(i64::MAX as u64 / 4) as Site;
        let (a, b) = (self.a + d, self.b - d);
        (a <= b).then_some(Interval { a, b })
    }

    /// Whether `x` lies in `Int_D(Λ)`.
    pub fn in_interior(&self, x: Site, d: u64) -> bool {
        self.interior(d).is_some_and(|i| i.contains(x))
    }

    /// Ball re-keying of this interval: center `⌈(a+b)/2⌉` and radius `⌈(b-a)/2⌉`.
    pub fn ball_key(&self) -> (Site, u64) {
        let center = (self.a + self.b).div_euclid(2) + (self.a + self.b).rem_euclid(2);
        let radius = self.diam().div_ceil(2);
        (center, radius)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.a, self.b)
    }
}
