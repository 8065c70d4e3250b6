//! Occupations, bond and chiral currents, chirality, correlators, purity,
//! fidelity, energy and the continuity-equation check.
//!
//! Signed quantities follow the loop orientation 1→2→3→1. The bond current
//! Î_jk = i(e^{iφ} a†_j a_k − e^{−iφ} a_j a†_k) measures flow from j to k
//! for a hop term |h| e^{iφ} a†_j a_k + h.c., so that
//! d⟨n̂_j⟩/dt = Σ_k |h_kj| ⟨Î_kj⟩ − Σ_k |h_jk| ⟨Î_jk⟩.

use crate::device::DeviceSpec;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::fock::{
    hop_product, ladder, number, site_diagonal, CMatrix, CVector, DensityMatrix, FockBasis, LadderKind, Operator,
    QuantumState, StateVector, C64,
};
use crate::hamiltonian::EffectiveHamiltonian;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// (⟨n̂_j⟩, P(n_j ≥ 1)).
pub fn occupation(basis: &FockBasis, state: &dyn QuantumState, site: usize) -> Result<(f64, f64)> {
    let n = number(basis, site)?;
    let p = site_diagonal(basis, site, |k| if k >= 1 { 1.0 } else { 0.0 })?;
    Ok((state.expect(&n).re, state.expect(&p).re))
}

pub fn bond_current_operator(basis: &FockBasis, j: usize, k: usize, phi: f64) -> Result<Operator> {
    let a = hop_product(basis, j, k)?;
    let e = C64::from_polar(1.0, phi);
    let m = (&a.matrix * e - a.matrix.adjoint() * e.conj()) * C64::new(0.0, 1.0);
    Ok(Operator::new(basis.tag(), m))
}

pub fn bond_current(basis: &FockBasis, state: &dyn QuantumState, j: usize, k: usize, phi: f64) -> Result<f64> {
    Ok(state.expect(&bond_current_operator(basis, j, k, phi)?).re)
}

/// Î_chiral summed along `cycle` using the link phases of `links`.
pub fn chiral_current_operator(
    basis: &FockBasis,
    links: &[(usize, usize)],
    phases: &[f64],
    cycle: &[usize],
) -> Result<Operator> {
    let mut out = Operator::zeros(basis);
    for i in 0..cycle.len() {
        let (a, b) = (cycle[i], cycle[(i + 1) % cycle.len()]);
        let (idx, forward) = links
            .iter()
            .enumerate()
            .find_map(|(n, &(p, q))| {
                if (p, q) == (a, b) {
                    Some((n, true))
                } else if (p, q) == (b, a) {
                    Some((n, false))
                } else {
                    None
                }
            })
            .ok_or_else(|| Error::Config(format!("loop step {}->{} has no link", a + 1, b + 1)))?;
        let op = if forward {
            bond_current_operator(basis, a, b, phases[idx])?
        } else {
            bond_current_operator(basis, a, b, -phases[idx])?
        };
        out = out.plus(&op);
    }
    Ok(out)
}

fn pauli_single(basis: &FockBasis, site: usize, axis: Axis) -> Result<Operator> {
    if basis.levels() != 2 {
        return Err(Error::Unsupported("Pauli operators need two levels per site".into()));
    }
    let a = ladder(basis, site, LadderKind::Lower)?.matrix;
    let ad = a.adjoint();
    let m = match axis {
        Axis::X => &a + &ad,
        Axis::Y => (&a - &ad) * C64::new(0.0, 1.0),
        Axis::Z => number(basis, site)?.matrix * C64::new(2.0, 0.0) - CMatrix::identity(basis.dim(), basis.dim()),
    };
    Ok(Operator::new(basis.tag(), m))
}

/// Pauli operator on one site; σ⁻ = a, excited state is spin up.
pub fn pauli(basis: &FockBasis, site: usize, axis: Axis) -> Result<Operator> {
    pauli_single(basis, site, axis)
}

pub fn pauli_correlator(
    basis: &FockBasis,
    state: &dyn QuantumState,
    pair: (usize, usize),
    axes: (Axis, Axis),
) -> Result<f64> {
    let (full, rho) = qubit_projection(basis, state)?;
    let op = pauli(&full, pair.0, axes.0)?.times(&pauli(&full, pair.1, axes.1)?);
    Ok(rho.expect(&op).re)
}

/// I_jk from two-qubit correlators:
/// cos φ (⟨XY⟩ − ⟨YX⟩)/2 − sin φ (⟨XX⟩ + ⟨YY⟩)/2.
pub fn current_from_correlators(basis: &FockBasis, state: &dyn QuantumState, j: usize, k: usize, phi: f64) -> Result<f64> {
    let c = |a, b| pauli_correlator(basis, state, (j, k), (a, b));
    let xy = c(Axis::X, Axis::Y)?;
    let yx = c(Axis::Y, Axis::X)?;
    let xx = c(Axis::X, Axis::X)?;
    let yy = c(Axis::Y, Axis::Y)?;
    Ok(phi.cos() * (xy - yx) / 2.0 - phi.sin() * (xx + yy) / 2.0)
}

/// Map a state into the unrestricted two-level basis of the same sites,
/// renormalizing away weight on higher levels.
fn qubit_projection(basis: &FockBasis, state: &dyn QuantumState) -> Result<(FockBasis, DensityMatrix)> {
    let (full, rho, _) = project_to_qubits(basis, state)?;
    Ok((full, rho))
}

/// Returns the qubit basis, the renormalized qubit-subspace density matrix
/// and the weight that was inside the subspace.
pub fn project_to_qubits(basis: &FockBasis, state: &dyn QuantumState) -> Result<(FockBasis, DensityMatrix, f64)> {
    if basis.tag() != state.tag() {
        return Err(Error::Dimension("state and basis disagree".into()));
    }
    let full = FockBasis::new(basis.num_sites(), 2, None)?;
    if basis.levels() == 2 && basis.sector().is_none() {
        return Ok((full, state.density(), 1.0));
    }
    let rho = state.density().matrix;
    let map: Vec<Option<usize>> = full.states().iter().map(|s| basis.index_of(s)).collect();
    let n = full.dim();
    let mut out = CMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            if let (Some(a), Some(b)) = (map[r], map[c]) {
                out[(r, c)] = rho[(a, b)];
            }
        }
    }
    let weight = out.trace().re;
    if weight <= 1e-12 {
        return Err(Error::Numerical("state has no weight in the qubit subspace".into()));
    }
    Ok((full.clone(), DensityMatrix::new(full.tag(), out / C64::new(weight, 0.0)), weight))
}

/// χ̂ = σ⃗₁·(σ⃗₂ × σ⃗₃) on the first three sites.
pub fn chirality_operator(full: &FockBasis) -> Result<Operator> {
    if full.num_sites() < 3 {
        return Err(Error::Unsupported("chirality needs three sites".into()));
    }
    let axes = [Axis::X, Axis::Y, Axis::Z];
    let mut out = Operator::zeros(full);
    for (a, b, c, sign) in [(0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0), (0, 2, 1, -1.0), (2, 1, 0, -1.0), (1, 0, 2, -1.0)] {
        let term = pauli(full, 0, axes[a])?.times(&pauli(full, 1, axes[b])?).times(&pauli(full, 2, axes[c])?);
        out = out.plus(&term.scaled(C64::new(sign, 0.0)));
    }
    Ok(out)
}

/// tr(ρχ̂) after projection onto the qubit subspace, with the projected
/// weight.
pub fn chirality(basis: &FockBasis, state: &dyn QuantumState) -> Result<(f64, f64)> {
    if basis.levels() != 2 && basis.levels() != 3 {
        return Err(Error::Unsupported("chirality is defined for qubits".into()));
    }
    let (full, rho, weight) = project_to_qubits(basis, state)?;
    Ok((rho.expect(&chirality_operator(&full)?).re, weight))
}

pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.purity()
}

/// |⟨ψ|φ⟩|².
pub fn fidelity(a: &StateVector, b: &StateVector) -> f64 {
    a.inner(b).norm_sqr()
}

/// ⟨ψ|ρ|ψ⟩.
pub fn fidelity_mixed(psi: &StateVector, state: &dyn QuantumState) -> f64 {
    state.expect_matrix(&(&psi.amps * psi.amps.adjoint())).re
}

pub fn energy(state: &dyn QuantumState, h: &Operator) -> f64 {
    state.expect(h).re
}

pub fn energy_variance(state: &dyn QuantumState, h: &Operator) -> f64 {
    let e = energy(state, h);
    (state.expect(&h.times(h)).re - e * e).max(0.0)
}

/// Frobenius norm of the coherence block between two excitation manifolds.
pub fn manifold_coherence(basis: &FockBasis, state: &dyn QuantumState, m: usize, n: usize) -> f64 {
    let rho = state.density().matrix;
    let ex = basis.excitation_numbers();
    let mut acc = 0.0;
    for (r, &er) in ex.iter().enumerate() {
        for (c, &ec) in ex.iter().enumerate() {
            if er == m && ec == n {
                acc += rho[(r, c)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Hermitian observables for one basis and one gauge.
#[derive(Clone, Debug)]
pub struct ObservableSet {
    pub basis: FockBasis,
    pub numbers: Vec<Operator>,
    /// Projectors onto n_j ≥ 1.
    pub occupied: Vec<Operator>,
    /// Projectors onto n_j = 0.
    pub vacancy: Vec<Operator>,
    pub links: Vec<(usize, usize)>,
    /// Complex hop amplitude per link (coefficient of a†_j a_k).
    pub hops: Vec<C64>,
    pub currents: Vec<Operator>,
    pub chiral: Option<Operator>,
}

impl ObservableSet {
    pub fn new(basis: &FockBasis, links: &[(usize, usize)], hops: &[C64], cycle: Option<&[usize]>) -> Result<Self> {
        let n = basis.num_sites();
        let numbers = (0..n).map(|j| number(basis, j)).collect::<Result<Vec<_>>>()?;
        let occupied = (0..n)
            .map(|j| site_diagonal(basis, j, |k| if k >= 1 { 1.0 } else { 0.0 }))
            .collect::<Result<Vec<_>>>()?;
        let vacancy = (0..n)
            .map(|j| site_diagonal(basis, j, |k| if k == 0 { 1.0 } else { 0.0 }))
            .collect::<Result<Vec<_>>>()?;
        let phases: Vec<f64> = hops.iter().map(|h| h.arg()).collect();
        let currents = links
            .iter()
            .zip(&phases)
            .map(|(&(j, k), &p)| bond_current_operator(basis, j, k, p))
            .collect::<Result<Vec<_>>>()?;
        let chiral = match cycle {
            Some(c) => Some(chiral_current_operator(basis, links, &phases, c)?),
            None => None,
        };
        Ok(Self { basis: basis.clone(), numbers, occupied, vacancy, links: links.to_vec(), hops: hops.to_vec(), currents, chiral })
    }

    /// Observables in the gauge of a rotating-frame Hamiltonian.
    pub fn for_effective(device: &DeviceSpec, h: &EffectiveHamiltonian) -> Result<Self> {
        let links: Vec<_> = device.links.iter().map(|l| l.pair).collect();
        let cycle = device.default_loop();
        let cycle = if cycle.len() >= 3 { Some(cycle.as_slice()) } else { None };
        Self::new(h.basis(), &links, &h.hops, cycle)
    }

    pub fn occupations(&self, state: &dyn QuantumState) -> Vec<f64> {
        self.occupied.iter().map(|p| state.expect(p).re).collect()
    }

    pub fn mean_numbers(&self, state: &dyn QuantumState) -> Vec<f64> {
        self.numbers.iter().map(|n| state.expect(n).re).collect()
    }

    pub fn bond_currents(&self, state: &dyn QuantumState) -> Vec<f64> {
        self.currents.iter().map(|c| state.expect(c).re).collect()
    }

    pub fn chiral_current(&self, state: &dyn QuantumState) -> Option<f64> {
        self.chiral.as_ref().map(|c| state.expect(c).re)
    }

    /// d⟨n̂_j⟩/dt predicted from the bond currents (1/ns).
    pub fn occupation_rates(&self, state: &dyn QuantumState) -> Vec<f64> {
        let mut rates = vec![0.0; self.numbers.len()];
        for ((&(j, k), h), i) in self.links.iter().zip(&self.hops).zip(self.bond_currents(state)) {
            rates[j] -= h.norm() * i;
            rates[k] += h.norm() * i;
        }
        rates
    }
}

/// Largest deviation between the centered finite difference of ⟨n̂_j⟩ and
/// the current-based rate, over interior points of a uniform grid (1/ns).
pub fn continuity_check(traj: &Trajectory, obs: &ObservableSet) -> Result<f64> {
    if traj.len() < 3 {
        return Err(Error::Config("continuity check needs at least three samples".into()));
    }
    let dt = traj.times[1] - traj.times[0];
    if traj.times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0)) {
        return Err(Error::Config("continuity check needs a uniform grid".into()));
    }
    let n: Vec<Vec<f64>> = (0..traj.len()).map(|i| obs.mean_numbers(traj.state(i))).collect();
    let mut worst: f64 = 0.0;
    for i in 1..traj.len() - 1 {
        let rates = obs.occupation_rates(traj.state(i));
        for (j, r) in rates.iter().enumerate() {
            let fd = (n[i + 1][j] - n[i - 1][j]) / (2.0 * dt);
            worst = worst.max((fd - r).abs());
        }
    }
    Ok(worst)
}

pub fn column_p(site: usize) -> String {
    format!("p_q{}", site + 1)
}

pub fn column_n(site: usize) -> String {
    format!("n_q{}", site + 1)
}

pub fn column_current(j: usize, k: usize) -> String {
    format!("i_{}{}", j + 1, k + 1)
}

pub fn column_purity(site: usize) -> String {
    format!("purity_q{}", site + 1)
}

pub const COLUMN_CHIRAL: &str = "i_chiral";
pub const COLUMN_CHI: &str = "chi";
pub const COLUMN_ENERGY: &str = "energy_mhz";
pub const COLUMN_FIDELITY: &str = "fidelity";

/// Normalized random state on a basis, for property checks.
pub fn random_state(basis: &FockBasis, rng: &mut impl rand::Rng) -> StateVector {
    use rand_distr::{Distribution, StandardNormal};
    let amps = CVector::from_iterator(
        basis.dim(),
        (0..basis.dim()).map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))),
    );
    let norm = amps.norm();
    StateVector::new(basis.tag(), amps / C64::new(norm, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::reference_ring;
    use crate::fock::reduced_density;
    use crate::hamiltonian::{build_effective, eigensystem};
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn b3() -> FockBasis {
        FockBasis::new(3, 2, None).unwrap()
    }

    fn state(b: &FockBasis, terms: &[(&[u8], C64)]) -> StateVector {
        let mut v = CVector::zeros(b.dim());
        for (occ, a) in terms {
            v[b.index_of(occ).unwrap()] += *a;
        }
        StateVector::new(b.tag(), v).normalized().unwrap()
    }

    fn w_state(b: &FockBasis) -> StateVector {
        let one = C64::new(1.0, 0.0);
        state(b, &[(&[1, 0, 0], one), (&[0, 1, 0], one), (&[0, 0, 1], one)])
    }

    #[test]
    fn occupation_examples() {
        let b = b3();
        let s = b.ket(&[1, 0, 0]).unwrap();
        assert_eq!(occupation(&b, &s, 0).unwrap(), (1.0, 1.0));
        assert_eq!(occupation(&b, &s, 2).unwrap(), (0.0, 0.0));
        let w = w_state(&b);
        for j in 0..3 {
            let (n, p) = occupation(&b, &w, j).unwrap();
            assert!((n - 1.0 / 3.0).abs() < 1e-15 && (p - 1.0 / 3.0).abs() < 1e-15);
        }
        let q = FockBasis::new(3, 3, None).unwrap();
        assert_eq!(occupation(&q, &q.ket(&[0, 2, 0]).unwrap(), 1).unwrap(), (2.0, 1.0));
    }

    #[test]
    fn real_states_carry_no_current() {
        let b = b3();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = random_state(&b, &mut rng);
            let real = StateVector::new(b.tag(), s.amps.map(|z| C64::new(z.re, 0.0))).normalized().unwrap();
            assert!(bond_current(&b, &real, 0, 1, 0.0).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn ground_state_currents_at_quarter_flux() {
        let d = reference_ring().with_flux(PI / 2.0).unwrap();
        let h = build_effective(&d, Some(1)).unwrap();
        let obs = ObservableSet::for_effective(&d, &h).unwrap();
        let g = StateVector::new(h.basis().tag(), eigensystem(h.op()).unwrap().vector(0));
        let total = obs.chiral_current(&g).unwrap();
        assert!((total + 1.0).abs() < 1e-12, "{total}");

        // uniform gauge: each link carries a third
        let uniform = d.with_phases(&[PI / 6.0; 3]);
        let hu = build_effective(&uniform, Some(1)).unwrap();
        let ou = ObservableSet::for_effective(&uniform, &hu).unwrap();
        let gu = StateVector::new(hu.basis().tag(), eigensystem(hu.op()).unwrap().vector(0));
        for i in ou.bond_currents(&gu) {
            assert!((i + 1.0 / 3.0).abs() < 1e-12);
        }

        // photon current of the hard-core two-photon ground state: the hole
        // moves against the flux, the photons with it
        let h2 = build_effective(&d, Some(2)).unwrap();
        let o2 = ObservableSet::for_effective(&d, &h2).unwrap();
        let g2 = StateVector::new(h2.basis().tag(), eigensystem(h2.op()).unwrap().vector(0));
        assert!((o2.chiral_current(&g2).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_flux_ground_state_has_no_current() {
        let d = reference_ring();
        let h = build_effective(&d, Some(1)).unwrap();
        let obs = ObservableSet::for_effective(&d, &h).unwrap();
        let g = StateVector::new(h.basis().tag(), eigensystem(h.op()).unwrap().vector(2));
        for i in obs.bond_currents(&g) {
            assert!(i.abs() < 1e-12);
        }
    }

    #[test]
    fn correlators_match_bond_current() {
        let b = b3();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for sector in [1, 2] {
            let sb = FockBasis::new(3, 2, Some(sector)).unwrap();
            for _ in 0..50 {
                let s = random_state(&sb, &mut rng);
                let phi = 0.7 * sector as f64;
                let a = bond_current(&sb, &s, 0, 2, phi).unwrap();
                let c = current_from_correlators(&sb, &s, 0, 2, phi).unwrap();
                assert!((a - c).abs() < 1e-10);
            }
        }
        let s = b.ket(&[1, 0, 0]).unwrap();
        assert!(current_from_correlators(&b, &s, 0, 1, 0.0).unwrap().abs() < 1e-15);
        let s = state(&b, &[(&[1, 0, 0], C64::new(1.0, 0.0)), (&[0, 1, 0], C64::new(0.0, 1.0))]);
        assert!((current_from_correlators(&b, &s, 0, 1, 0.0).unwrap() + 1.0).abs() < 1e-12);
        assert!((bond_current(&b, &s, 0, 1, 0.0).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn chirality_examples() {
        let b = b3();
        let (chi, w) = chirality(&b, &b.ket(&[1, 0, 0]).unwrap()).unwrap();
        assert!(chi.abs() < 1e-15 && w == 1.0);
        let om = C64::from_polar(1.0, 2.0 * PI / 3.0);
        let s = state(&b, &[(&[1, 0, 0], C64::new(1.0, 0.0)), (&[0, 1, 0], om), (&[0, 0, 1], om * om)]);
        let (chi, _) = chirality(&b, &s).unwrap();
        assert!((chi.abs() - 2.0 * 3f64.sqrt()).abs() < 1e-12, "{chi}");
        let mixed = DensityMatrix::maximally_mixed(&b);
        assert!(chirality(&b, &mixed).unwrap().0.abs() < 1e-15);
        // a sector state is embedded before evaluation
        let sb = FockBasis::new(3, 2, Some(1)).unwrap();
        let (chi, w) = chirality(&sb, &sb.ket(&[0, 1, 0]).unwrap()).unwrap();
        assert!(chi.abs() < 1e-15 && (w - 1.0).abs() < 1e-15);
        let four = FockBasis::new(3, 4, None).unwrap();
        assert!(matches!(chirality(&four, &four.ket(&[0, 0, 0]).unwrap()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn purity_examples() {
        let b = b3();
        let s = b.ket(&[1, 0, 0]).unwrap();
        for j in 0..3 {
            assert!((reduced_density(&b, &s, j).unwrap().purity() - 1.0).abs() < 1e-15);
        }
        let w = w_state(&b);
        assert!((purity(&reduced_density(&b, &w, 0).unwrap()) - 5.0 / 9.0).abs() < 1e-12);
        let bell = state(&b, &[(&[1, 0, 0], C64::new(1.0, 0.0)), (&[0, 1, 0], C64::new(1.0, 0.0))]);
        assert!((purity(&reduced_density(&b, &bell, 0).unwrap()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fidelity_and_energy() {
        let b = b3();
        let w = w_state(&b);
        let s = b.ket(&[1, 0, 0]).unwrap();
        assert!((fidelity(&w, &s) - 1.0 / 3.0).abs() < 1e-12);
        assert!((fidelity_mixed(&w, &s.to_density()) - 1.0 / 3.0).abs() < 1e-12);
        let d = reference_ring();
        let h = build_effective(&d, None).unwrap();
        let j = crate::units::mhz(2.0);
        assert!((energy(&w, h.op()) - 2.0 * j).abs() < 1e-12);
        assert!(energy_variance(&w, h.op()) < 1e-15);
    }

    #[test]
    fn manifold_coherence_of_superposition() {
        let b = b3();
        let one = C64::new(1.0, 0.0);
        let s = state(&b, &[(&[0, 0, 0], one), (&[1, 0, 0], one)]);
        assert!((manifold_coherence(&b, &s, 0, 1) - 0.5).abs() < 1e-12);
        assert_eq!(manifold_coherence(&b, &s, 0, 2), 0.0);
    }

    #[test]
    fn operators_are_hermitian() {
        let d = reference_ring().with_flux(1.3).unwrap();
        let h = build_effective(&d, None).unwrap();
        let obs = ObservableSet::for_effective(&d, &h).unwrap();
        for op in obs.currents.iter().chain(obs.numbers.iter()).chain(std::iter::once(obs.chiral.as_ref().unwrap())) {
            assert!(op.is_hermitian());
        }
        assert!(chirality_operator(&h.basis().clone()).unwrap().is_hermitian());
    }
}
