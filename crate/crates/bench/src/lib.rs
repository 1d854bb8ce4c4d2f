//! Fixtures shared by the benchmarks.

use ffgap::models::{orbital_interaction, random_even_perturbation, OrbitalModel, PerturbationParams, RandomPerturbation};
use ffgap::{Interaction, Interval, Kind};

pub fn params() -> PerturbationParams {
    PerturbationParams { max_radius: 2, ..Default::default() }
}

/// Orbital chain on `[offset, offset + len - 1]` with a seeded even perturbation.
pub fn orbital_chain(len: usize, offset: i64, d: u64) -> (Interval, Interaction, RandomPerturbation) {
    let lam = Interval::new(offset, offset + len as i64 - 1).unwrap();
    let eta = orbital_interaction(&OrbitalModel::default_instance(&lam)).unwrap();
    let pert = random_even_perturbation(&lam, d, &params(), 7, Kind::Fermion).unwrap();
    (lam, eta, pert)
}
