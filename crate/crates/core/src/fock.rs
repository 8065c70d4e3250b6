//! Truncated bosonic Fock space for a handful of sites.
//!
//! Basis states are occupation tuples enumerated lexicographically with
//! site 1 as the most significant digit. A basis may be restricted to a
//! fixed total excitation number (a "sector" or manifold); in that case
//! only number-conserving operators can be represented.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const HERMITIAN_TOL: f64 = 1e-12;

/// Shape of a basis without its enumeration, cheap to copy and compare.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BasisTag {
    pub num_sites: usize,
    pub levels: usize,
    pub sector: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct FockBasis {
    tag: BasisTag,
    states: Vec<Vec<u8>>,
    lookup: HashMap<Vec<u8>, usize>,
}

impl PartialEq for FockBasis {
    fn eq(&self, other: &Self) -> bool {
        self.tag == other.tag
    }
}

impl FockBasis {
    pub fn new(num_sites: usize, levels: usize, sector: Option<usize>) -> Result<Self> {
        if num_sites == 0 {
            return Err(Error::Config("basis needs at least one site".into()));
        }
        if levels < 2 {
            return Err(Error::Config(format!("levels per site must be >= 2, got {levels}")));
        }
        if levels > u8::MAX as usize {
            return Err(Error::Config(format!("levels per site too large: {levels}")));
        }
        if let Some(n) = sector {
            let max = num_sites * (levels - 1);
            if n > max {
                return Err(Error::Config(format!(
                    "sector {n} outside 0..={max} for {num_sites} sites with {levels} levels"
                )));
            }
        }
        let total = (levels as u64)
            .checked_pow(num_sites as u32)
            .filter(|&t| t <= 1 << 24)
            .ok_or_else(|| Error::Config("Hilbert space too large for dense storage".into()))?;

        let mut states = Vec::new();
        let mut digits = vec![0u8; num_sites];
        for _ in 0..total {
            let keep = match sector {
                Some(n) => digits.iter().map(|&d| d as usize).sum::<usize>() == n,
                None => true,
            };
            if keep {
                states.push(digits.clone());
            }
            // increment, last site least significant
            for d in digits.iter_mut().rev() {
                *d += 1;
                if (*d as usize) < levels {
                    break;
                }
                *d = 0;
            }
        }
        let lookup = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self { tag: BasisTag { num_sites, levels, sector }, states, lookup })
    }

    pub fn tag(&self) -> BasisTag {
        self.tag
    }

    pub fn num_sites(&self) -> usize {
        self.tag.num_sites
    }

    pub fn levels(&self) -> usize {
        self.tag.levels
    }

    pub fn sector(&self) -> Option<usize> {
        self.tag.sector
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<u8>] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &[u8] {
        &self.states[index]
    }

    pub fn index_of(&self, occupations: &[u8]) -> Option<usize> {
        self.lookup.get(occupations).copied()
    }

    /// Total excitation number of each basis state.
    pub fn excitation_numbers(&self) -> Vec<usize> {
        self.states.iter().map(|s| s.iter().map(|&n| n as usize).sum()).collect()
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.num_sites() {
            return Err(Error::Config(format!(
                "site index {site} out of range for {} sites",
                self.num_sites()
            )));
        }
        Ok(())
    }

    /// Basis vector for an occupation tuple.
    pub fn ket(&self, occupations: &[u8]) -> Result<StateVector> {
        let idx = self.index_of(occupations).ok_or_else(|| {
            Error::Config(format!("occupation {occupations:?} not in basis {:?}", self.tag))
        })?;
        let mut amps = CVector::zeros(self.dim());
        amps[idx] = C64::new(1.0, 0.0);
        Ok(StateVector { tag: self.tag, amps })
    }

    /// Isometry whose columns embed `sub` (a sector basis) into `self`.
    pub fn embedding(&self, sub: &FockBasis) -> Result<CMatrix> {
        if sub.num_sites() != self.num_sites() || sub.levels() != self.levels() {
            return Err(Error::Dimension("embedding between incompatible bases".into()));
        }
        let mut m = CMatrix::zeros(self.dim(), sub.dim());
        for (col, s) in sub.states.iter().enumerate() {
            let row = self
                .index_of(s)
                .ok_or_else(|| Error::Dimension(format!("state {s:?} missing from target basis")))?;
            m[(row, col)] = C64::new(1.0, 0.0);
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LadderKind {
    Lower,
    Raise,
    Number,
}

/// Dense operator tagged with the basis it acts on.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    pub tag: BasisTag,
    pub matrix: CMatrix,
}

impl Operator {
    pub fn new(tag: BasisTag, matrix: CMatrix) -> Self {
        Self { tag, matrix }
    }

    pub fn zeros(basis: &FockBasis) -> Self {
        Self::new(basis.tag(), CMatrix::zeros(basis.dim(), basis.dim()))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest entry of |M - M†|.
    pub fn hermiticity_error(&self) -> f64 {
        let adj = self.matrix.adjoint();
        (&self.matrix - adj).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_error() <= HERMITIAN_TOL
    }

    pub fn adjoint(&self) -> Self {
        Self::new(self.tag, self.matrix.adjoint())
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self::new(self.tag, &self.matrix * factor)
    }

    pub fn plus(&self, other: &Operator) -> Self {
        Self::new(self.tag, &self.matrix + &other.matrix)
    }

    pub fn times(&self, other: &Operator) -> Self {
        Self::new(self.tag, &self.matrix * &other.matrix)
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        Self::new(self.tag, &self.matrix * &other.matrix - &other.matrix * &self.matrix)
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Single-site ladder or number operator embedded in the full space.
pub fn ladder(basis: &FockBasis, site: usize, kind: LadderKind) -> Result<Operator> {
    basis.check_site(site)?;
    if basis.sector().is_some() && kind != LadderKind::Number {
        return Err(Error::Unsupported(
            "bare ladder operators leave a fixed-excitation sector; use hop or number".into(),
        ));
    }
    let d = basis.levels() as u8;
    let mut m = CMatrix::zeros(basis.dim(), basis.dim());
    for (col, s) in basis.states().iter().enumerate() {
        let n = s[site];
        match kind {
            LadderKind::Number => m[(col, col)] = C64::new(n as f64, 0.0),
            LadderKind::Lower if n > 0 => {
                let mut t = s.clone();
                t[site] -= 1;
                let row = basis.index_of(&t).expect("unrestricted basis is closed");
                m[(row, col)] = C64::new((n as f64).sqrt(), 0.0);
            }
            LadderKind::Raise if n + 1 < d => {
                let mut t = s.clone();
                t[site] += 1;
                let row = basis.index_of(&t).expect("unrestricted basis is closed");
                m[(row, col)] = C64::new(((n + 1) as f64).sqrt(), 0.0);
            }
            _ => {}
        }
    }
    Ok(Operator::new(basis.tag(), m))
}

pub fn number(basis: &FockBasis, site: usize) -> Result<Operator> {
    ladder(basis, site, LadderKind::Number)
}

/// Total excitation number Σ n̂_j.
pub fn total_number(basis: &FockBasis) -> Operator {
    let diag = CVector::from_iterator(
        basis.dim(),
        basis.excitation_numbers().into_iter().map(|n| C64::new(n as f64, 0.0)),
    );
    Operator::new(basis.tag(), CMatrix::from_diagonal(&diag))
}

/// Function of the occupation of one site, as a diagonal operator.
pub fn site_diagonal(basis: &FockBasis, site: usize, f: impl Fn(u8) -> f64) -> Result<Operator> {
    basis.check_site(site)?;
    let diag =
        CVector::from_iterator(basis.dim(), basis.states().iter().map(|s| C64::new(f(s[site]), 0.0)));
    Ok(Operator::new(basis.tag(), CMatrix::from_diagonal(&diag)))
}

/// The bilinear a†_j a_k, truncated at the top level. Valid in any basis.
pub fn hop_product(basis: &FockBasis, j: usize, k: usize) -> Result<Operator> {
    basis.check_site(j)?;
    basis.check_site(k)?;
    if j == k {
        return number(basis, j);
    }
    let d = basis.levels() as u8;
    let mut m = CMatrix::zeros(basis.dim(), basis.dim());
    for (col, s) in basis.states().iter().enumerate() {
        if s[k] == 0 || s[j] + 1 >= d {
            continue;
        }
        let mut t = s.clone();
        let amp = (s[k] as f64).sqrt() * ((s[j] + 1) as f64).sqrt();
        t[k] -= 1;
        t[j] += 1;
        if let Some(row) = basis.index_of(&t) {
            m[(row, col)] = C64::new(amp, 0.0);
        }
    }
    Ok(Operator::new(basis.tag(), m))
}

/// Complex hop e^{iφ} a†_j a_k + e^{-iφ} a_j a†_k.
pub fn hop(basis: &FockBasis, j: usize, k: usize, phase: f64) -> Result<Operator> {
    if j == k {
        return Err(Error::Config(format!("hop needs two distinct sites, got ({j}, {k})")));
    }
    let forward = hop_product(basis, j, k)?;
    let w = C64::from_polar(1.0, phase);
    let m = &forward.matrix * w + forward.matrix.adjoint() * w.conj();
    Ok(Operator::new(basis.tag(), m))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub tag: BasisTag,
    pub amps: CVector,
}

impl StateVector {
    pub fn new(tag: BasisTag, amps: CVector) -> Self {
        Self { tag, amps }
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(Error::Numerical("cannot normalize a zero state".into()));
        }
        self.amps /= C64::new(n, 0.0);
        Ok(self)
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix { tag: self.tag, matrix: &self.amps * self.amps.adjoint() }
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.dotc(&other.amps)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub tag: BasisTag,
    pub matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(tag: BasisTag, matrix: CMatrix) -> Self {
        Self { tag, matrix }
    }

    pub fn maximally_mixed(basis: &FockBasis) -> Self {
        let d = basis.dim();
        Self::new(basis.tag(), CMatrix::identity(d, d) / C64::new(d as f64, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }
}

/// Anything that can be measured: a pure state or a density matrix.
pub trait QuantumState {
    fn tag(&self) -> BasisTag;
    fn expect_matrix(&self, m: &CMatrix) -> C64;
    fn density(&self) -> DensityMatrix;

    fn expect(&self, op: &Operator) -> C64 {
        self.expect_matrix(&op.matrix)
    }
}

impl QuantumState for StateVector {
    fn tag(&self) -> BasisTag {
        self.tag
    }
    fn expect_matrix(&self, m: &CMatrix) -> C64 {
        self.amps.dotc(&(m * &self.amps))
    }
    fn density(&self) -> DensityMatrix {
        self.to_density()
    }
}

impl QuantumState for DensityMatrix {
    fn tag(&self) -> BasisTag {
        self.tag
    }
    fn expect_matrix(&self, m: &CMatrix) -> C64 {
        (&self.matrix * m).trace()
    }
    fn density(&self) -> DensityMatrix {
        self.clone()
    }
}

/// Partial trace over every site except `site`; the result is d×d.
pub fn reduced_density<S: QuantumState + ?Sized>(
    basis: &FockBasis,
    state: &S,
    site: usize,
) -> Result<DensityMatrix> {
    basis.check_site(site)?;
    if state.tag() != basis.tag() {
        return Err(Error::Dimension("state does not live in this basis".into()));
    }
    let rho = state.density();
    let d = basis.levels();
    // group basis states by the occupations of the traced-out sites
    let mut groups: HashMap<Vec<u8>, Vec<(u8, usize)>> = HashMap::new();
    for (i, s) in basis.states().iter().enumerate() {
        let mut rest = s.clone();
        rest.remove(site);
        groups.entry(rest).or_default().push((s[site], i));
    }
    let mut out = CMatrix::zeros(d, d);
    for members in groups.values() {
        for &(m, i) in members {
            for &(n, k) in members {
                out[(m as usize, n as usize)] += rho.matrix[(i, k)];
            }
        }
    }
    Ok(DensityMatrix::new(BasisTag { num_sites: 1, levels: d, sector: None }, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn dimensions() {
        assert_eq!(FockBasis::new(3, 2, Some(1)).unwrap().dim(), 3);
        assert_eq!(FockBasis::new(3, 2, None).unwrap().dim(), 8);
        assert_eq!(FockBasis::new(3, 3, None).unwrap().dim(), 27);
    }

    #[test]
    fn sector_dimension_matches_enumeration() {
        // brute-force count of (n1, n2, n3) with n <= 2 summing to 2
        let mut count = 0;
        for a in 0..3 {
            for b in 0..3 {
                for cc in 0..3 {
                    if a + b + cc == 2 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 6);
        assert_eq!(FockBasis::new(3, 3, Some(2)).unwrap().dim(), count);
    }

    #[test]
    fn invalid_sector_rejected() {
        assert!(matches!(FockBasis::new(3, 2, Some(4)), Err(Error::Config(_))));
        assert!(FockBasis::new(0, 2, None).is_err());
        assert!(FockBasis::new(2, 1, None).is_err());
    }

    #[test]
    fn lexicographic_order_site_one_most_significant() {
        let b = FockBasis::new(3, 2, None).unwrap();
        assert_eq!(b.state(0), &[0, 0, 0]);
        assert_eq!(b.state(1), &[0, 0, 1]);
        assert_eq!(b.state(4), &[1, 0, 0]);
        let s = FockBasis::new(3, 2, Some(1)).unwrap();
        assert_eq!(s.states(), &[vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 0]]);
    }

    #[test]
    fn qubit_lowering_matrix() {
        let b = FockBasis::new(1, 2, None).unwrap();
        let a = ladder(&b, 0, LadderKind::Lower).unwrap();
        assert_eq!(a.matrix, CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]));
    }

    #[test]
    fn qutrit_number_eigenvalues() {
        let b = FockBasis::new(1, 3, None).unwrap();
        let n = number(&b, 0).unwrap();
        let diag: Vec<f64> = n.matrix.diagonal().iter().map(|z| z.re).collect();
        assert_eq!(diag, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn truncated_commutator() {
        let b = FockBasis::new(1, 3, None).unwrap();
        let a = ladder(&b, 0, LadderKind::Lower).unwrap();
        let ad = ladder(&b, 0, LadderKind::Raise).unwrap();
        let comm = a.commutator(&ad).matrix;
        let mut expected = CMatrix::identity(3, 3);
        expected[(2, 2)] = c(1.0 - 3.0);
        assert!((comm - expected).norm() < 1e-14);
    }

    #[test]
    fn ladder_in_sector_unsupported() {
        let b = FockBasis::new(3, 2, Some(1)).unwrap();
        assert!(matches!(ladder(&b, 0, LadderKind::Lower), Err(Error::Unsupported(_))));
        assert!(number(&b, 0).is_ok());
    }

    #[test]
    fn hop_two_sites_single_excitation() {
        let b = FockBasis::new(2, 2, Some(1)).unwrap();
        let h = hop(&b, 0, 1, 0.0).unwrap();
        assert_eq!(h.matrix, CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]));
        let hpi = hop(&b, 0, 1, PI).unwrap();
        assert!((hpi.matrix + h.matrix).norm() < 1e-15);
        assert!(matches!(hop(&b, 1, 1, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn hop_ring_quarter_phase_spectrum() {
        let b = FockBasis::new(3, 2, Some(1)).unwrap();
        let h = hop(&b, 0, 1, PI / 2.0)
            .unwrap()
            .plus(&hop(&b, 1, 2, PI / 2.0).unwrap())
            .plus(&hop(&b, 2, 0, PI / 2.0).unwrap());
        assert!(h.is_hermitian());
        let mut ev: Vec<f64> = h.matrix.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        let s3 = 3f64.sqrt();
        for (got, want) in ev.iter().zip([-s3, 0.0, s3]) {
            assert!((got - want).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn sector_projection_commutes_with_hop() {
        let full = FockBasis::new(3, 3, None).unwrap();
        for n in 0..=6 {
            let sec = FockBasis::new(3, 3, Some(n)).unwrap();
            let p = full.embedding(&sec).unwrap();
            for (j, k) in [(0, 1), (1, 2), (2, 0)] {
                let hf = hop(&full, j, k, 0.7).unwrap().matrix;
                let hs = hop(&sec, j, k, 0.7).unwrap().matrix;
                let lhs = &hf * &p;
                let rhs = &p * &hs;
                assert!((lhs - rhs).iter().all(|z| z.norm() < 1e-12));
            }
        }
    }

    #[test]
    fn reduced_density_of_product_and_w() {
        let b = FockBasis::new(3, 2, None).unwrap();
        let psi = b.ket(&[1, 0, 0]).unwrap();
        let r = reduced_density(&b, &psi, 0).unwrap();
        assert!((r.matrix[(1, 1)].re - 1.0).abs() < 1e-15);
        assert!((r.purity() - 1.0).abs() < 1e-15);

        let s = 1.0 / 3f64.sqrt();
        let mut w = CVector::zeros(8);
        for occ in [[1u8, 0, 0], [0, 1, 0], [0, 0, 1]] {
            w[b.index_of(&occ).unwrap()] = c(s);
        }
        let w = StateVector::new(b.tag(), w);
        for site in 0..3 {
            let r = reduced_density(&b, &w, site).unwrap();
            assert!((r.matrix[(0, 0)].re - 2.0 / 3.0).abs() < 1e-12);
            assert!((r.matrix[(1, 1)].re - 1.0 / 3.0).abs() < 1e-12);
            assert!(r.matrix[(0, 1)].norm() < 1e-12);
            assert!((r.purity() - 5.0 / 9.0).abs() < 1e-12);
        }

        let mixed = DensityMatrix::maximally_mixed(&b);
        let r = reduced_density(&b, &mixed, 1).unwrap();
        assert!((r.matrix[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!((r.matrix[(1, 1)].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reduced_density_in_sector_basis() {
        let b = FockBasis::new(3, 2, Some(1)).unwrap();
        let w = StateVector::new(b.tag(), CVector::from_element(3, c(1.0 / 3f64.sqrt())));
        let r = reduced_density(&b, &w, 2).unwrap();
        assert!((r.purity() - 5.0 / 9.0).abs() < 1e-12);
    }
}
