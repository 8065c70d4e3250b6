use std::f64::consts::PI;

use chiralsim_core::gauge::{apply_gauge, compile_cycle_fluxes, compile_fluxes, loop_flux, wrap_angle, GaugeTransform};
use chiralsim_core::hamiltonian::{build_effective, build_lab, eigensystem, number_commutator_norm};
use chiralsim_core::observables::{bond_current, current_from_correlators, random_state};
use chiralsim_core::{reference_ring, FockBasis, Graph};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn angle_close(a: f64, b: f64) -> bool {
    wrap_angle(a - b).abs() < 1e-9
}

proptest! {
    #[test]
    fn basis_indexing_round_trips(n in 1usize..5, d in 2usize..4) {
        let b = FockBasis::new(n, d, None).unwrap();
        prop_assert_eq!(b.dim(), d.pow(n as u32));
        for i in 0..b.dim() {
            prop_assert_eq!(b.index_of(b.state(i)), Some(i));
        }
    }

    #[test]
    fn hard_core_sector_sizes(n in 1usize..6, k in 0usize..6) {
        prop_assume!(k <= n);
        let b = FockBasis::new(n, 2, Some(k)).unwrap();
        prop_assert_eq!(b.dim(), binomial(n, k));
    }

    #[test]
    fn loop_flux_is_gauge_invariant(
        phases in prop::collection::vec(-PI..PI, 3),
        angles in prop::collection::vec(-PI..PI, 3),
    ) {
        let g = Graph::ring(3);
        let before = loop_flux(&g, &phases, &[0, 1, 2]).unwrap();
        let after = loop_flux(&g, &apply_gauge(&g, &phases, &GaugeTransform { angles }), &[0, 1, 2]).unwrap();
        prop_assert!(angle_close(before, after));
    }

    #[test]
    fn compiled_phases_realize_targets(targets in prop::collection::vec(-PI..PI, 2)) {
        let g = Graph::square_lattice(2, 3);
        let cycles = g.fundamental_cycles();
        let phases = compile_fluxes(&g, &targets).unwrap();
        for (c, t) in cycles.iter().zip(&targets) {
            prop_assert!(angle_close(loop_flux(&g, &phases, c).unwrap(), *t));
        }
        let plaquettes = Graph::square_plaquettes(2, 3);
        let phases = compile_cycle_fluxes(&g, &plaquettes, &targets).unwrap();
        for (c, t) in plaquettes.iter().zip(&targets) {
            prop_assert!(angle_close(loop_flux(&g, &phases, c).unwrap(), *t));
        }
    }

    #[test]
    fn device_flux_setter_round_trips(flux in -3.1f64..3.1, g0 in 1.0f64..8.0) {
        let d = reference_ring().with_g0(g0).with_flux(flux).unwrap();
        prop_assert!(angle_close(d.flux().unwrap(), flux));
        let u = reference_ring().with_uniform_flux(flux).unwrap();
        prop_assert!(angle_close(u.flux().unwrap(), flux));
    }

    #[test]
    fn hamiltonians_hermitian_and_number_conserving(flux in -PI..PI, g0 in 0.5f64..8.0, levels in 2usize..4) {
        let d = reference_ring().with_g0(g0).with_levels(levels).with_flux(flux).unwrap();
        let h = build_effective(&d, None).unwrap();
        prop_assert!(h.op().is_hermitian());
        prop_assert!(number_commutator_norm(h.op()) < 1e-12);
        let lab = build_lab(&d, h.basis()).unwrap();
        for t in [0.0, 3.7, 41.3] {
            let m = chiralsim_core::Generator::matrix_at(&lab, t);
            prop_assert!((&m - m.adjoint()).camax() < 1e-12);
        }
    }

    #[test]
    fn spectrum_is_gauge_invariant(flux in -PI..PI, angles in prop::collection::vec(-PI..PI, 3)) {
        let d = reference_ring().with_flux(flux).unwrap();
        let t = apply_gauge(&d.graph(), &d.phases(), &GaugeTransform { angles });
        let e0 = eigensystem(build_effective(&d, Some(1)).unwrap().op()).unwrap().values;
        let e1 = eigensystem(build_effective(&d.with_phases(&t), Some(1)).unwrap().op()).unwrap().values;
        for (a, b) in e0.iter().zip(&e1) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn correlators_reproduce_bond_current(seed in any::<u64>(), phi in -PI..PI) {
        let b = FockBasis::new(3, 2, None).unwrap();
        let psi = random_state(&b, &mut ChaCha8Rng::seed_from_u64(seed));
        let direct = bond_current(&b, &psi, 0, 1, phi).unwrap();
        let pauli = current_from_correlators(&b, &psi, 0, 1, phi).unwrap();
        prop_assert!((direct - pauli).abs() < 1e-12);
    }
}
