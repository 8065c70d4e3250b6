//! Lab-frame and rotating-frame Hamiltonians, eigensystems and flux sweeps.
//!
//! Every generator splits into a diagonal part that the propagators treat
//! exactly (as accumulated phases) and a residual that is integrated
//! numerically. For the lab frame the diagonal carries the GHz qubit
//! energies and anharmonicities, so only the MHz-scale couplings and their
//! modulation are stepped.

use nalgebra::DVector;

use crate::device::DeviceSpec;
use crate::error::{Error, Result};
use crate::fock::{hop, hop_product, number, BasisTag, CMatrix, CVector, FockBasis, Operator, C64};
use crate::gauge::{self, Graph};
use crate::units;

/// Degenerate eigenvalues closer than this (rad/ns) are grouped.
pub const DEGENERACY_TOL: f64 = 1e-9;

pub trait Generator: Sync {
    fn basis(&self) -> &FockBasis;

    /// Diagonal rates (rad/ns) treated exactly by the propagator.
    fn frame_rates(&self, t: f64) -> DVector<f64>;

    /// Time integral of [`Generator::frame_rates`] from 0 to `t`.
    fn frame_phases(&self, t: f64) -> DVector<f64>;

    /// H(t) minus the frame diagonal.
    fn residual(&self, t: f64) -> CMatrix;

    /// Largest explicit modulation frequency in the residual (rad/ns).
    fn drive_frequency(&self) -> f64 {
        0.0
    }

    fn matrix_at(&self, t: f64) -> CMatrix {
        let mut m = self.residual(t);
        for (i, r) in self.frame_rates(t).iter().enumerate() {
            m[(i, i)] += C64::new(*r, 0.0);
        }
        m
    }
}

/// Split a static Hermitian operator into real diagonal and off-diagonal.
fn split_diagonal(m: &CMatrix) -> (DVector<f64>, CMatrix) {
    let diag = DVector::from_iterator(m.nrows(), m.diagonal().iter().map(|z| z.re));
    let mut off = m.clone();
    for i in 0..m.nrows() {
        off[(i, i)] = C64::new(0.0, 0.0);
    }
    (diag, off)
}

/// Time-independent Hamiltonian.
#[derive(Clone, Debug)]
pub struct StaticHamiltonian {
    basis: FockBasis,
    pub op: Operator,
    diag: DVector<f64>,
    off: CMatrix,
}

impl StaticHamiltonian {
    pub fn new(basis: &FockBasis, op: Operator) -> Result<Self> {
        if op.tag != basis.tag() {
            return Err(Error::Dimension("operator and basis disagree".into()));
        }
        let (diag, off) = split_diagonal(&op.matrix);
        Ok(Self { basis: basis.clone(), op, diag, off })
    }
}

impl Generator for StaticHamiltonian {
    fn basis(&self) -> &FockBasis {
        &self.basis
    }
    fn frame_rates(&self, _t: f64) -> DVector<f64> {
        self.diag.clone()
    }
    fn frame_phases(&self, t: f64) -> DVector<f64> {
        &self.diag * t
    }
    fn residual(&self, _t: f64) -> CMatrix {
        self.off.clone()
    }
}

/// Anharmonic on-site energy −(U₂/2) n(n−1) + (U₃/6) n(n−1)(n−2), rad/ns.
pub fn interaction_energy(n: u8, u2: f64, u3: f64) -> f64 {
    let n = n as f64;
    -0.5 * u2 * n * (n - 1.0) + u3 / 6.0 * n * (n - 1.0) * (n - 2.0)
}

#[derive(Clone, Debug)]
enum LinkDrive {
    /// g_dc + g0 cos(Δ t + φ), real.
    Modulated { gdc: f64, g0: f64, delta: f64, phi: f64 },
    /// Static complex coefficient of a†_j a_k.
    Resonant(C64),
}

#[derive(Clone, Debug)]
struct LabLink {
    /// Nonzero entries (row, col, value) of a†_j a_k.
    entries: Vec<(usize, usize, f64)>,
    drive: LinkDrive,
}

/// Lab-frame H(t) = Σ ω_j n̂_j + H_int + Σ g_jk(t)(a†_j a_k + h.c.).
///
/// Links with Δ = 0 have no carrier to mix down; they realize the resonant
/// hop (g0/2) e^{iφ} a†_j a_k + h.c. directly, so that lab and rotating
/// frame describe the same device. The ω/2 zero-point shift is dropped.
#[derive(Clone, Debug)]
pub struct LabHamiltonian {
    basis: FockBasis,
    diag: DVector<f64>,
    links: Vec<LabLink>,
}

fn nonzero_entries(op: &Operator) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for c in 0..op.matrix.ncols() {
        for r in 0..op.matrix.nrows() {
            let v = op.matrix[(r, c)];
            if v.norm() > 0.0 {
                out.push((r, c, v.re));
            }
        }
    }
    out
}

fn check_basis(device: &DeviceSpec, basis: &FockBasis) -> Result<()> {
    if basis.num_sites() != device.num_sites() || basis.levels() != device.levels {
        return Err(Error::Dimension(format!(
            "basis has {} sites x {} levels, device has {} sites x {} levels",
            basis.num_sites(),
            basis.levels(),
            device.num_sites(),
            device.levels
        )));
    }
    Ok(())
}

fn onsite_diagonal(device: &DeviceSpec, basis: &FockBasis, frame: Option<&[f64]>) -> DVector<f64> {
    DVector::from_iterator(
        basis.dim(),
        basis.states().iter().map(|s| {
            s.iter()
                .enumerate()
                .map(|(j, &n)| {
                    let site = &device.sites[j];
                    let mut omega = units::ghz(site.omega_ghz);
                    if let Some(nu) = frame {
                        omega -= nu[j];
                        if omega.abs() <= units::mhz(crate::device::MATCHING_TOL_MHZ) {
                            omega = 0.0;
                        }
                    }
                    omega * n as f64 + interaction_energy(n, units::mhz(site.u2_mhz), units::mhz(site.u3_mhz))
                })
                .sum()
        }),
    )
}

pub fn build_lab(device: &DeviceSpec, basis: &FockBasis) -> Result<LabHamiltonian> {
    check_basis(device, basis)?;
    let diag = onsite_diagonal(device, basis, None);
    let mut links = Vec::new();
    for l in &device.links {
        let entries = nonzero_entries(&hop_product(basis, l.pair.0, l.pair.1)?);
        let drive = if l.is_resonant() {
            LinkDrive::Resonant(
                C64::from_polar(units::mhz(l.g0_mhz) / 2.0, l.phi_rad) + C64::new(units::mhz(l.gdc_mhz), 0.0),
            )
        } else {
            LinkDrive::Modulated {
                gdc: units::mhz(l.gdc_mhz),
                g0: units::mhz(l.g0_mhz),
                delta: units::mhz(l.delta_mhz),
                phi: l.phi_rad,
            }
        };
        links.push(LabLink { entries, drive });
    }
    Ok(LabHamiltonian { basis: basis.clone(), diag, links })
}

impl LabHamiltonian {
    /// Coefficient of a†_j a_k on link `index` at time `t` (rad/ns).
    pub fn link_coupling(&self, index: usize, t: f64) -> C64 {
        match self.links[index].drive {
            LinkDrive::Modulated { gdc, g0, delta, phi } => C64::new(gdc + g0 * (delta * t + phi).cos(), 0.0),
            LinkDrive::Resonant(c) => c,
        }
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.diag
    }
}

impl Generator for LabHamiltonian {
    fn basis(&self) -> &FockBasis {
        &self.basis
    }
    fn frame_rates(&self, _t: f64) -> DVector<f64> {
        self.diag.clone()
    }
    fn frame_phases(&self, t: f64) -> DVector<f64> {
        &self.diag * t
    }
    fn residual(&self, t: f64) -> CMatrix {
        let n = self.basis.dim();
        let mut m = CMatrix::zeros(n, n);
        for (i, link) in self.links.iter().enumerate() {
            let c = self.link_coupling(i, t);
            for &(r, col, v) in &link.entries {
                m[(r, col)] += c * v;
                m[(col, r)] += c.conj() * v;
            }
        }
        m
    }
    fn drive_frequency(&self) -> f64 {
        self.links
            .iter()
            .map(|l| match l.drive {
                LinkDrive::Modulated { delta, .. } => delta.abs(),
                LinkDrive::Resonant(_) => 0.0,
            })
            .fold(0.0, f64::max)
    }
}

/// Rotating-frame Hamiltonian Σ J e^{iθ_jk} a†_j a_k + h.c. plus residual
/// detunings and on-site interactions.
#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    pub hamiltonian: StaticHamiltonian,
    /// Complex hop amplitude of each link, coefficient of a†_j a_k (rad/ns).
    pub hops: Vec<C64>,
    pub flux: Option<f64>,
    pub warnings: Vec<String>,
}

impl EffectiveHamiltonian {
    pub fn op(&self) -> &Operator {
        &self.hamiltonian.op
    }

    pub fn basis(&self) -> &FockBasis {
        self.hamiltonian.basis()
    }

    /// Hop phases of each link in the gauge of this Hamiltonian.
    pub fn phases(&self) -> Vec<f64> {
        self.hops.iter().map(|h| h.arg()).collect()
    }
}

/// Rotating-frame Hamiltonian of `device` in the given excitation sector,
/// with hop amplitude g0/2 on every modulated link.
pub fn build_effective(device: &DeviceSpec, sector: Option<usize>) -> Result<EffectiveHamiltonian> {
    let basis = FockBasis::new(device.num_sites(), device.levels, sector)?;
    build_effective_in(device, &basis)
}

pub fn build_effective_in(device: &DeviceSpec, basis: &FockBasis) -> Result<EffectiveHamiltonian> {
    check_basis(device, basis)?;
    let nu = device.frame_frequencies();
    let diag = onsite_diagonal(device, basis, Some(&nu));
    let mut m = CMatrix::from_diagonal(&diag.map(|x| C64::new(x, 0.0)));
    let mut hops = Vec::new();
    for l in &device.links {
        let (delta, phase, _) = l.resonant_form(&device.sites);
        let mut amp = C64::from_polar(units::mhz(l.g0_mhz) / 2.0, phase);
        if delta == 0.0 {
            amp += C64::new(units::mhz(l.gdc_mhz), 0.0);
        }
        let f = hop_product(basis, l.pair.0, l.pair.1)?;
        m += &f.matrix * amp + f.matrix.adjoint() * amp.conj();
        hops.push(amp);
    }
    let warnings = device.frequency_warnings().iter().map(|w| w.to_string()).collect();
    let flux = if device.num_sites() >= 3 && device.graph().is_connected() {
        device.flux().ok()
    } else {
        None
    };
    let op = Operator::new(basis.tag(), m);
    Ok(EffectiveHamiltonian { hamiltonian: StaticHamiltonian::new(basis, op)?, hops, flux, warnings })
}

/// Uniform-amplitude hopping Hamiltonian on an arbitrary graph.
pub fn hopping_operator(basis: &FockBasis, graph: &Graph, phases: &[f64], amplitude: f64) -> Result<Operator> {
    let mut out = Operator::zeros(basis);
    for (&(j, k), &p) in graph.edges.iter().zip(phases) {
        out = out.plus(&hop(basis, j, k, p)?.scaled(C64::new(amplitude, 0.0)));
    }
    Ok(out)
}

/// Rotating frame ψ → exp(i Σ ν_j n̂_j t) ψ.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMap {
    pub frequencies: Vec<f64>,
}

impl FrameMap {
    pub fn for_device(device: &DeviceSpec) -> Self {
        Self { frequencies: device.frame_frequencies() }
    }

    /// Phase of each basis state at time `t`.
    pub fn phases(&self, basis: &FockBasis, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            basis.dim(),
            basis
                .states()
                .iter()
                .map(|s| s.iter().zip(&self.frequencies).map(|(&n, nu)| n as f64 * nu * t).sum()),
        )
    }

    pub fn apply(&self, basis: &FockBasis, t: f64, psi: &CVector) -> CVector {
        let ph = self.phases(basis, t);
        CVector::from_iterator(psi.len(), psi.iter().zip(ph.iter()).map(|(a, p)| a * C64::from_polar(1.0, *p)))
    }

    pub fn apply_density(&self, basis: &FockBasis, t: f64, rho: &CMatrix) -> CMatrix {
        let ph = self.phases(basis, t);
        CMatrix::from_fn(rho.nrows(), rho.ncols(), |r, c| rho[(r, c)] * C64::from_polar(1.0, ph[r] - ph[c]))
    }
}

/// Eigenvalues ascending with canonical eigenvectors (columns).
///
/// Within each degenerate cluster the vectors are rebuilt by Gram–Schmidt
/// from the projected basis vectors taken in enumeration order, so the
/// output depends only on the operator, not on solver internals. Each
/// vector's first significant component is real and positive.
#[derive(Clone, Debug)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl Eigensystem {
    pub fn vector(&self, i: usize) -> CVector {
        self.vectors.column(i).into_owned()
    }

    /// Index ranges of clusters of degenerate eigenvalues.
    pub fn clusters(&self) -> Vec<std::ops::Range<usize>> {
        clusters(&self.values)
    }
}

fn clusters(values: &[f64]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] > DEGENERACY_TOL {
            out.push(start..i);
            start = i;
        }
    }
    out
}

pub fn eigensystem(op: &Operator) -> Result<Eigensystem> {
    if op.hermiticity_error() > 1e-9 {
        return Err(Error::Numerical(format!(
            "eigensystem needs a Hermitian operator (asymmetry {:.3e})",
            op.hermiticity_error()
        )));
    }
    let n = op.dim();
    let eig = op.matrix.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let raw = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);

    let mut vectors = CMatrix::zeros(n, n);
    for range in clusters(&values) {
        let block = raw.columns(range.start, range.len()).into_owned();
        let projector = &block * block.adjoint();
        let mut chosen: Vec<CVector> = Vec::new();
        for i in 0..n {
            if chosen.len() == range.len() {
                break;
            }
            let mut v: CVector = projector.column(i).into_owned();
            for u in &chosen {
                let c = u.dotc(&v);
                v -= u * c;
            }
            let norm = v.norm();
            if norm > 1e-3 {
                chosen.push(v / C64::new(norm, 0.0));
            }
        }
        if chosen.len() != range.len() {
            return Err(Error::Numerical("failed to orthonormalize a degenerate eigenspace".into()));
        }
        for (offset, mut v) in chosen.into_iter().enumerate() {
            if let Some(first) = v.iter().find(|z| z.norm() > 1e-3).copied() {
                v *= first.conj() / C64::new(first.norm(), 0.0);
            }
            vectors.set_column(range.start + offset, &v);
        }
    }
    Ok(Eigensystem { values, vectors })
}

/// Sorted spectra of the effective Hamiltonian on a flux grid.
#[derive(Clone, Debug)]
pub struct FluxSweep {
    pub fluxes: Vec<f64>,
    pub sector: Option<usize>,
    pub spectra: Vec<Eigensystem>,
}

impl FluxSweep {
    pub fn gaps(&self) -> Vec<f64> {
        self.spectra
            .iter()
            .map(|e| if e.values.len() > 1 { e.values[1] - e.values[0] } else { 0.0 })
            .collect()
    }
}

pub fn flux_sweep(device: &DeviceSpec, grid: &[f64], sector: Option<usize>) -> Result<FluxSweep> {
    if grid.is_empty() {
        return Err(Error::Config("flux grid is empty".into()));
    }
    use rayon::prelude::*;
    let spectra = grid
        .par_iter()
        .map(|&phi| {
            let h = build_effective(&device.with_flux(phi)?, sector)?;
            eigensystem(h.op())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FluxSweep { fluxes: grid.to_vec(), sector, spectra })
}

/// Bands followed by maximal eigenvector overlap between neighbouring
/// grid points. `bands[b][i]` is the energy of band `b` at grid point `i`.
#[derive(Clone, Debug)]
pub struct TrackedBands {
    pub bands: Vec<Vec<f64>>,
    /// `assignment[i][b]` is the sorted index at point `i` carried by band `b`.
    pub assignment: Vec<Vec<usize>>,
}

pub fn track_bands(sweep: &FluxSweep) -> Result<TrackedBands> {
    let first = &sweep.spectra[0];
    let n = first.values.len();
    let mut prev: Vec<CVector> = (0..n).map(|b| first.vector(b)).collect();
    let mut bands: Vec<Vec<f64>> = first.values.iter().map(|&e| vec![e]).collect();
    let mut assignment = vec![(0..n).collect::<Vec<_>>()];

    for i in 1..sweep.spectra.len() {
        let cur = &sweep.spectra[i];
        let overlap = |a: &CVector, b: usize| a.dotc(&cur.vectors.column(b).into_owned()).norm_sqr();
        let mut next: Vec<Option<CVector>> = vec![None; n];
        let mut assign = vec![usize::MAX; n];
        for range in cur.clusters() {
            // bands whose weight falls mostly inside this cluster
            let mut weights: Vec<(f64, usize)> = (0..n)
                .map(|b| (range.clone().map(|c| overlap(&prev[b], c)).sum::<f64>(), b))
                .collect();
            weights.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            let owners: Vec<usize> = weights.iter().take(range.len()).map(|w| w.1).collect();
            if weights[range.len() - 1].0 < 0.5 {
                return Err(Error::Numerical(format!(
                    "ambiguous band overlap between flux {:.6} and {:.6}; refine the grid",
                    sweep.fluxes[i - 1],
                    sweep.fluxes[i]
                )));
            }
            if range.len() == 1 {
                let b = owners[0];
                next[b] = Some(cur.vector(range.start));
                assign[b] = range.start;
                continue;
            }
            // degenerate: carry the previous vectors into the eigenspace
            let block = cur.vectors.columns(range.start, range.len()).into_owned();
            let projector = &block * block.adjoint();
            let mut owners_sorted = owners.clone();
            owners_sorted.sort();
            let mut done: Vec<CVector> = Vec::new();
            for (slot, &b) in owners_sorted.iter().enumerate() {
                let mut v = &projector * &prev[b];
                for u in &done {
                    let c = u.dotc(&v);
                    v -= u * c;
                }
                let norm = v.norm();
                if norm < 1e-6 {
                    return Err(Error::Numerical(format!(
                        "band {b} lost at flux {:.6}; refine the grid",
                        sweep.fluxes[i]
                    )));
                }
                let v = v / C64::new(norm, 0.0);
                done.push(v.clone());
                next[b] = Some(v);
                assign[b] = range.start + slot;
            }
        }
        for b in 0..n {
            bands[b].push(cur.values[assign[b]]);
            prev[b] = next[b].take().expect("every band assigned");
        }
        assignment.push(assign);
    }
    Ok(TrackedBands { bands, assignment })
}

/// ⟨[H, N]⟩-style check that an operator conserves total excitation.
pub fn number_commutator_norm(op: &Operator) -> f64 {
    let basis_tag: BasisTag = op.tag;
    let diag: Vec<f64> = {
        // reconstruct excitation numbers from a matching basis
        let b = FockBasis::new(basis_tag.num_sites, basis_tag.levels, basis_tag.sector)
            .expect("tag describes a valid basis");
        b.excitation_numbers().into_iter().map(|x| x as f64).collect()
    };
    let mut worst: f64 = 0.0;
    for r in 0..op.dim() {
        for c in 0..op.dim() {
            worst = worst.max((op.matrix[(r, c)] * (diag[c] - diag[r])).norm());
        }
    }
    worst
}

/// Flux of the default loop in a phase list on `graph`.
pub fn ring_flux(graph: &Graph, phases: &[f64]) -> Result<f64> {
    gauge::loop_flux(graph, phases, &(0..graph.num_sites).collect::<Vec<_>>())
}

/// Number operators for every site.
pub fn number_operators(basis: &FockBasis) -> Result<Vec<Operator>> {
    (0..basis.num_sites()).map(|j| number(basis, j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::reference_ring;
    use std::f64::consts::PI;

    fn j_ring() -> f64 {
        units::mhz(2.0)
    }

    #[test]
    fn lab_diagonal_double_occupancy() {
        let d = reference_ring().with_levels(3);
        let b = FockBasis::new(3, 3, None).unwrap();
        let h = build_lab(&d, &b).unwrap();
        let m = h.matrix_at(0.0);
        let i = b.index_of(&[2, 0, 0]).unwrap();
        let expected = 2.0 * units::ghz(5.8) - units::mhz(200.0);
        assert!((m[(i, i)].re - expected).abs() < 1e-12);
        let i = b.index_of(&[0, 0, 3 - 1]).unwrap();
        assert!((m[(i, i)].re - (2.0 * units::ghz(5.835) - units::mhz(200.0))).abs() < 1e-12);
    }

    #[test]
    fn lab_without_coupling_is_static_diagonal() {
        let d = reference_ring().with_g0(0.0);
        let b = FockBasis::new(3, 2, None).unwrap();
        let h = build_lab(&d, &b).unwrap();
        for t in [0.0, 3.3, 170.0] {
            let m = h.matrix_at(t);
            let off: f64 = m.iter().enumerate().filter(|(i, _)| i % 9 != 0).map(|(_, z)| z.norm()).sum();
            assert_eq!(off, 0.0);
            assert_eq!(m, h.matrix_at(0.0));
        }
    }

    #[test]
    fn modulated_coupling_vanishes_at_quarter_phase() {
        let d = reference_ring().with_flux(PI / 2.0).unwrap();
        let b = FockBasis::new(3, 2, None).unwrap();
        let h = build_lab(&d, &b).unwrap();
        assert!(h.link_coupling(2, 0.0).norm() < 1e-15);
        assert!((h.link_coupling(1, 0.0).re - units::mhz(4.0)).abs() < 1e-15);
    }

    #[test]
    fn lab_is_hermitian_and_conserves_number() {
        let d = reference_ring().with_levels(3).with_flux(0.7).unwrap();
        let b = FockBasis::new(3, 3, None).unwrap();
        let h = build_lab(&d, &b).unwrap();
        for k in 0..100 {
            let t = 7.31 * k as f64;
            let op = Operator::new(b.tag(), h.matrix_at(t));
            assert!(op.hermiticity_error() <= 1e-12);
            assert!(number_commutator_norm(&op) <= 1e-12);
        }
    }

    #[test]
    fn effective_spectra() {
        let j = j_ring();
        let e = build_effective(&reference_ring(), Some(1)).unwrap();
        let ev = eigensystem(e.op()).unwrap().values;
        for (a, b) in ev.iter().zip([-j, -j, 2.0 * j]) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
        let e = build_effective(&reference_ring().with_flux(PI / 2.0).unwrap(), Some(1)).unwrap();
        let ev = eigensystem(e.op()).unwrap().values;
        let s = 3f64.sqrt() * j;
        for (a, b) in ev.iter().zip([-s, 0.0, s]) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
        assert!(number_commutator_norm(e.op()) < 1e-12);
    }

    #[test]
    fn two_photon_is_hole_with_reversed_flux() {
        for phi in [0.3, PI / 2.0, 2.0, -1.1] {
            let two = build_effective(&reference_ring().with_flux(phi).unwrap(), Some(2)).unwrap();
            let one = build_effective(&reference_ring().with_flux(-phi).unwrap(), Some(1)).unwrap();
            let a = eigensystem(two.op()).unwrap().values;
            let b = eigensystem(one.op()).unwrap().values;
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flux_sweep_examples() {
        let grid: Vec<f64> = (0..=40).map(|i| -PI + 2.0 * PI * i as f64 / 40.0).collect();
        let sweep = flux_sweep(&reference_ring(), &grid, Some(1)).unwrap();
        let gaps = sweep.gaps();
        let j = j_ring();
        assert!(gaps[20].abs() < 1e-12);
        let (imax, gmax) = gaps.iter().enumerate().fold((0, 0.0), |a, (i, &g)| if g > a.1 { (i, g) } else { a });
        assert!(imax == 0 || imax == 40);
        assert!((gmax - 3.0 * j).abs() < 1e-12);
        for s in &sweep.spectra {
            assert!(s.values.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_eigenvectors_are_deterministic() {
        let e = build_effective(&reference_ring(), Some(1)).unwrap();
        let a = eigensystem(e.op()).unwrap();
        let b = eigensystem(e.op()).unwrap();
        assert_eq!(a.vectors, b.vectors);
        // eigen-equation holds for canonical vectors
        for i in 0..3 {
            let v = a.vector(i);
            let r = &e.op().matrix * &v - &v * C64::new(a.values[i], 0.0);
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn tracked_bands_are_shifted_cosines() {
        let n = 200;
        let grid: Vec<f64> = (0..=n).map(|i| -PI + 2.0 * PI * i as f64 / n as f64).collect();
        let sweep = flux_sweep(&reference_ring(), &grid, Some(1)).unwrap();
        let tracked = track_bands(&sweep).unwrap();
        let j = j_ring();
        for band in &tracked.bands {
            // find the branch m with E = 2J cos((Φ + 2πm)/3)
            let m = (-1..=1)
                .min_by(|&a: &i32, &b: &i32| {
                    let err = |m: i32| {
                        band.iter()
                            .zip(&grid)
                            .map(|(e, p)| (e - 2.0 * j * ((p + 2.0 * PI * m as f64) / 3.0).cos()).abs())
                            .fold(0.0, f64::max)
                    };
                    err(a).total_cmp(&err(b))
                })
                .unwrap();
            for (e, p) in band.iter().zip(&grid) {
                assert!((e - 2.0 * j * ((p + 2.0 * PI * m as f64) / 3.0).cos()).abs() < 1e-10);
            }
        }
        // two tracked bands pass through each other at Φ = 0
        let mid = n / 2;
        let a = &tracked.assignment;
        assert_ne!(a[mid - 1], a[mid + 1]);
    }

    #[test]
    fn constant_sweep_tracks_identity() {
        let d = reference_ring().with_flux(0.4).unwrap();
        let h = build_effective(&d, Some(1)).unwrap();
        let es = eigensystem(h.op()).unwrap();
        let sweep = FluxSweep { fluxes: vec![0.0, 0.1, 0.2], sector: Some(1), spectra: vec![es.clone(), es.clone(), es] };
        let t = track_bands(&sweep).unwrap();
        for a in &t.assignment {
            assert_eq!(a, &vec![0, 1, 2]);
        }
    }

    #[test]
    fn frame_map_preserves_occupations_and_rotates_coherence() {
        let b = FockBasis::new(2, 2, None).unwrap();
        let delta = units::mhz(35.0);
        let frame = FrameMap { frequencies: vec![0.0, delta] };
        let mut psi = CVector::zeros(4);
        psi[b.index_of(&[1, 0]).unwrap()] = C64::new(0.6, 0.0);
        psi[b.index_of(&[0, 1]).unwrap()] = C64::new(0.0, 0.8);
        let t = 12.5;
        let out = frame.apply(&b, t, &psi);
        for i in 0..4 {
            assert!((out[i].norm() - psi[i].norm()).abs() < 1e-15);
        }
        let rho = &psi * psi.adjoint();
        let rho_rot = frame.apply_density(&b, t, &rho);
        let (i01, i10) = (b.index_of(&[0, 1]).unwrap(), b.index_of(&[1, 0]).unwrap());
        let ratio = rho_rot[(i01, i10)] / rho[(i01, i10)];
        assert!((ratio - C64::from_polar(1.0, delta * t)).norm() < 1e-12);
    }
}
