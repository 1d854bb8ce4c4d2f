//! Structural invariants checked on generated inputs.

use ffgap::ffunction::{convolution_constant, lieb_robinson_velocity, transform_f_phi, Decay};
use ffgap::interaction::regroup_intervals;
use ffgap::linalg::{self, CMat, C64};
use ffgap::ltqo::{profile, GroundState, OmegaModel, ProbeMap};
use ffgap::models::{aklt_interaction, orbital_interaction, random_even_perturbation, OrbitalModel, PerturbationParams};
use ffgap::operator_algebra::{jordan_wigner, parity_grade_matrix, parity_parts, partial_trace};
use ffgap::spectra::PerturbedPath;
use ffgap::spectral_flow::{analyze_flow, flow_unitaries, FlowOptions, FlowSetup};
use ffgap::stability_bounds::edge_bulk_strengths;
use ffgap::{Interaction, Interval, Kind, LocalOperator, ParityGrade, Region, Weight};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(dim: usize, rng: &mut ChaCha8Rng) -> CMat {
    linalg::from_fn(dim, dim, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

fn iv(a: i64, b: i64) -> Interval {
    Interval::new(a, b).unwrap()
}

fn params() -> PerturbationParams {
    PerturbationParams { max_radius: 2, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn balls_saturate_and_zero_interior_is_identity(a in -20i64..20, len in 1i64..30, off in 0i64..30) {
        let lam = iv(a, a + len - 1);
        let x = a + off % len;
        let big_r = lam.boundary_distances(x).unwrap().big_r;
        prop_assert_eq!(lam.ball(x, big_r).unwrap(), lam);
        prop_assert_eq!(lam.ball(x, big_r + 5).unwrap(), lam);
        prop_assert_eq!(lam.interior(0), Some(lam));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nested_chains_obey_the_f_norm_bound(seed in 0u64..1000, len in 3usize..8) {
        let lam = Interval::chain(len).unwrap();
        let f = params().decay().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phi = Interaction::new(Kind::Spin(2));
        for a in 0..len as i64 {
            for b in a..(len as i64).min(a + 3) {
                let sup = iv(a, b);
                let m = linalg::hermitian_part(&random_matrix(1 << sup.len(), &mut rng));
                phi.insert(Region::interval(sup), LocalOperator::new(m, sup, Kind::Spin(2)).unwrap()).unwrap();
            }
        }
        let norm = phi.f_norm(&f);
        // grow a random chain Z₁ ⊂ Z₂ ⊂ … outward from a random seed interval
        let a0 = rng.random_range(0..len as i64);
        let mut z = iv(a0, (a0 + rng.random_range(0..2)).min(len as i64 - 1));
        let z1 = z;
        let mut total = 0.0;
        loop {
            total += phi.get(&Region::interval(z)).map_or(0.0, |t| t.norm());
            let grow_left = z.a > lam.a && (z.b == lam.b || rng.random::<bool>());
            if z.a == lam.a && z.b == lam.b {
                break;
            }
            z = if grow_left { iv(z.a - 1, z.b) } else { iv(z.a, z.b + 1) };
        }
        prop_assert!(total <= norm * f.eval(z1.diam() as f64) * (1.0 + 1e-12));
    }

    #[test]
    fn parity_grades_multiply(seed in 0u64..1000, sites in 1usize..4, ga in any::<bool>(), gb in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = |m: CMat, odd: bool| {
            let (e, o) = parity_parts(&m);
            if odd { o } else { e }
        };
        let a = pick(random_matrix(1 << sites, &mut rng), ga);
        let b = pick(random_matrix(1 << sites, &mut rng), gb);
        let expect = if ga == gb { ParityGrade::Even } else { ParityGrade::Odd };
        prop_assert_eq!(parity_grade_matrix(&(&a * &b)), expect);
    }

    #[test]
    fn jordan_wigner_is_a_star_homomorphism(seed in 0u64..1000, left in 0i64..3, width in 1i64..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ambient = iv(0, left + width + 1);
        let x = iv(left, left + width - 1);
        let a = LocalOperator::new(random_matrix(1 << x.len(), &mut rng), x, Kind::Fermion).unwrap();
        let b = LocalOperator::new(random_matrix(1 << x.len(), &mut rng), x, Kind::Fermion).unwrap();
        let ext = iv(ambient.a, x.b);
        let img = |op: &LocalOperator| jordan_wigner(op, &ambient).unwrap().embed(&ext).unwrap().matrix;
        let ab = a.mul(&b).unwrap();
        prop_assert!(linalg::max_abs_diff(&img(&ab), &(&img(&a) * &img(&b))) < 1e-12);
        prop_assert!(linalg::max_abs_diff(&img(&a.adjoint()), &img(&a).adjoint().to_owned()) < 1e-12);
    }

    #[test]
    fn jordan_wigner_commutes_with_even_inclusions(seed in 0u64..1000, left in 0i64..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ambient = iv(0, 6);
        let x = iv(left + 1, left + 2);
        let y = iv(left, left + 3);
        let (even, _) = parity_parts(&random_matrix(4, &mut rng));
        let a = LocalOperator::new(even, x, Kind::Fermion).unwrap();
        let lhs = jordan_wigner(&a.embed(&y).unwrap(), &ambient).unwrap();
        let rhs = jordan_wigner(&a, &ambient).unwrap().embed(&y).unwrap();
        prop_assert_eq!(lhs.support, rhs.support);
        prop_assert!(linalg::max_abs_diff(&lhs.matrix, &rhs.matrix) < 1e-14);
    }

    #[test]
    fn partial_traces_are_unital_positive_and_nest(seed in 0u64..1000, len in 2i64..5, ka in 0i64..4, kb in 0i64..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sup = iv(0, len - 1);
        let (ka, kb) = (ka.min(len - 1), kb.min(len - 1));
        let x = iv(ka.min(kb), ka.max(kb));
        let y = iv(x.a, x.a);
        let id = LocalOperator::identity(sup, Kind::Spin(2));
        prop_assert!(linalg::max_abs_diff(&partial_trace(&id, &x).unwrap().matrix, &linalg::eye(1 << x.len())) < 1e-14);
        let g = random_matrix(1 << len, &mut rng);
        let pos = LocalOperator::new(linalg::mul(&g.adjoint().to_owned(), &g), sup, Kind::Spin(2)).unwrap();
        let tx = partial_trace(&pos, &x).unwrap();
        prop_assert!(linalg::eigvalsh(&tx.matrix).unwrap()[0] >= -1e-12);
        let direct = partial_trace(&pos, &y).unwrap();
        let nested = partial_trace(&tx, &y).unwrap();
        prop_assert!(linalg::max_abs_diff(&direct.matrix, &nested.matrix) < 1e-12);
    }

    #[test]
    fn bulk_parts_are_smaller_and_their_tails_bounded(seed in 0u64..1000, len in 6usize..10, d in 1u64..3) {
        let lam = Interval::chain(len).unwrap();
        let f = params().decay().unwrap();
        let pert = random_even_perturbation(&lam, d, &params(), seed, Kind::Fermion).unwrap();
        let whole = pert.whole.f_norm(&f);
        prop_assert!(pert.split.bulk.f_norm(&f) <= whole * (1.0 + 1e-12));
        let int = lam.interior(d).unwrap();
        for t in pert.whole.terms() {
            if let Region::Ball { center, radius } = t.region {
                if int.contains(center) && radius >= lam.boundary_distances(center).unwrap().r {
                    prop_assert!(t.norm() <= whole * f.eval(d as f64) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn strengths_are_monotone_in_the_probe_set(seed in 0u64..1000) {
        let f = params().decay().unwrap();
        let phi_for = |lam: &Interval| Ok(random_even_perturbation(lam, 2, &params(), seed, Kind::Fermion)?.whole);
        let small = [Interval::chain(6).unwrap()];
        let large = [Interval::chain(6).unwrap(), Interval::chain(8).unwrap()];
        let s = edge_bulk_strengths(phi_for, &small, 2, 1, &f).unwrap();
        let l = edge_bulk_strengths(phi_for, &large, 2, 1, &f).unwrap();
        prop_assert!(s.m_int <= l.m_int && s.m_d <= l.m_d);
    }

    #[test]
    fn sorted_eigenvalues_move_at_most_by_the_weyl_bound(seed in 0u64..1000, e1 in 0.0f64..0.3, e2 in 0.0f64..0.3) {
        let lam = Interval::chain(6).unwrap();
        let eta = orbital_interaction(&OrbitalModel::default_instance(&lam)).unwrap();
        let pert = random_even_perturbation(&lam, 0, &params(), seed, Kind::Fermion).unwrap();
        let path = PerturbedPath::new(&eta, &pert.whole, &lam).unwrap();
        let at = |e: f64| {
            let mut h = path.h0.clone();
            linalg::add_scaled(&mut h, &path.phi, linalg::re(e));
            linalg::eigvalsh(&h).unwrap()
        };
        let (a, b) = (at(e1), at(e2));
        let bound = (e1 - e2).abs() * path.phi_bound;
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= bound + 1e-12));
    }

    #[test]
    fn witness_objective_is_scale_invariant(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let lam = Interval::chain(5).unwrap();
        let eta = aklt_interaction(&lam).unwrap();
        let ground = GroundState::new(&eta, &lam).unwrap();
        let map = ProbeMap::new(&eta, &ground, 2, 1, 1, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(27, &mut rng);
        let sa = linalg::scale(&a, linalg::re(scale));
        prop_assert!((map.objective(&a) - map.objective(&sa)).abs() <= 1e-12 * map.objective(&a).max(1.0));
    }
}

#[test]
fn ground_state_expectation_is_a_state() {
    let lam = Interval::chain(6).unwrap();
    let eta = aklt_interaction(&lam).unwrap();
    let ground = GroundState::new(&eta, &lam).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [iv(0, 0), iv(1, 3), iv(2, 5)] {
        let one = ground.expectation(&LocalOperator::identity(k, Kind::Spin(3))).unwrap();
        assert!((one - C64::new(1.0, 0.0)).norm() < 1e-12);
        let h = linalg::hermitian_part(&random_matrix(3usize.pow(k.len() as u32), &mut rng));
        let w = ground.expectation(&LocalOperator::new(h, k, Kind::Spin(3)).unwrap()).unwrap();
        assert!(w.im.abs() < 1e-12);
    }
}

#[test]
fn witness_lower_bounds_grow_with_the_observable_region() {
    let orbital_lam = Interval::chain(8).unwrap();
    let aklt_lam = Interval::chain(5).unwrap();
    let cases = [
        (orbital_interaction(&OrbitalModel::default_instance(&orbital_lam)).unwrap(), orbital_lam, 2, true),
        (aklt_interaction(&aklt_lam).unwrap(), aklt_lam, 1, false),
    ];
    for (eta, lam, max_k, even_only) in &cases {
        let prof = profile(eta, lam, *max_k, *even_only, 11).unwrap();
        for w in &prof.samples {
            if let Some(prev) = prof.samples.iter().find(|p| p.x == w.x && p.n == w.n && p.k + 1 == w.k) {
                assert!(w.lower_bound >= prev.lower_bound - 1e-6, "{w:?} vs {prev:?}");
            }
        }
    }
}

#[test]
fn regrouped_orbital_model_keeps_range_gap_and_bound() {
    let lam = Interval::chain(8).unwrap();
    let eta = orbital_interaction(&OrbitalModel::default_instance(&lam)).unwrap();
    let phi = regroup_intervals(&eta).unwrap();
    assert_eq!(phi.max_diameter(), eta.max_diameter());
    let r = eta.max_diameter() as i32;
    assert!(phi.max_norm() <= 2f64.powi(r) * eta.max_norm() * (1.0 + 1e-12));
    for a in lam.a..=lam.b {
        for b in a..=lam.b {
            let sub = iv(a, b);
            let x = linalg::eigvalsh(&eta.local_hamiltonian_matrix(&sub)).unwrap();
            let y = linalg::eigvalsh(&phi.local_hamiltonian_matrix(&sub)).unwrap();
            assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }
}

#[test]
fn flow_is_unitary_conjugation_invariant_even_and_within_its_estimates() {
    let lam = Interval::chain(6).unwrap();
    let eta = orbital_interaction(&OrbitalModel::default_instance(&lam)).unwrap();
    let pert = random_even_perturbation(&lam, 1, &params(), 5, Kind::Fermion).unwrap();
    let setup = FlowSetup::new(&eta, &pert.split.bulk, &lam, 0.5).unwrap();
    let grid = [0.0, 0.01, 0.02];
    let flow = flow_unitaries(&setup, &grid, &FlowOptions::default()).unwrap();
    assert!(flow.unitarity.iter().all(|&u| u <= 1e-9));
    for (u, &eps) in flow.unitaries.iter().zip(&grid) {
        let h = setup.hamiltonian(eps);
        let moved = linalg::mul3(&u.adjoint().to_owned(), &h, u);
        let (a, b) = (linalg::eigvalsh(&h).unwrap(), linalg::eigvalsh(&linalg::hermitian_part(&moved)).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
    }
    let f = params().decay().unwrap();
    let Weight::StretchedExp { k, s } = f.weight else { unreachable!() };
    let nu = lieb_robinson_velocity(convolution_constant(&f, 64).unwrap(), eta.f_norm(&f) + pert.split.bulk.f_norm(&f));
    let f_phi = transform_f_phi(&f, 0.5, nu, k, s, 1).unwrap();
    let omega = OmegaModel::Step { cutoff: 3, height: 2.0 };
    let analysis = analyze_flow(&setup, &eta, &flow, &omega, &f_phi).unwrap();
    for dec in &analysis.decompositions {
        assert!(dec.terms.values().all(|t| parity_grade_matrix(&t.matrix) == ParityGrade::Even));
    }
    for p in &analysis.points {
        assert_eq!(p.lemma_violations, 0, "{p:?}");
        assert_eq!(p.kappa_violations, 0, "{p:?}");
    }
}
