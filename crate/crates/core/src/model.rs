//! Lattices, spin configurations and Hamiltonians written as sums of Pauli
//! strings.
//!
//! Conventions used throughout the crate:
//!
//! * site `i` carries spin up (`↑`) when bit `i` of the configuration word is
//!   0 and spin down (`↓`) when it is 1;
//! * `Z|↑⟩ = +|↑⟩`, so the spin variable `s_i = +1` for bit 0 and `-1` for bit 1;
//! * `Y = [[0, -i], [i, 0]]` in the `(↑, ↓)` basis.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of sites a [`SpinConfiguration`] can hold.
pub const MAX_SITES: usize = 64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Bit-packed computational basis label of `n_sites` spin-1/2 sites.
///
/// Ordering is lexicographic on `(n_sites, bits)`, which makes sets of
/// configurations canonicalizable.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpinConfiguration {
    n_sites: u8,
    bits: u64,
}

impl SpinConfiguration {
    pub fn new(bits: u64, n_sites: usize) -> Result<Self> {
        if n_sites == 0 || n_sites > MAX_SITES {
            return Err(Error::InvalidInput(format!(
                "site count {n_sites} outside 1..={MAX_SITES}"
            )));
        }
        if bits & !full_mask(n_sites) != 0 {
            return Err(Error::InvalidInput(format!(
                "bits {bits:#b} set above site {n_sites}"
            )));
        }
        Ok(Self {
            n_sites: n_sites as u8,
            bits,
        })
    }

    /// Caller guarantees `bits` fits in `n_sites`.
    pub(crate) fn from_bits_unchecked(bits: u64, n_sites: usize) -> Self {
        debug_assert!(n_sites <= MAX_SITES && bits & !full_mask(n_sites) == 0);
        Self {
            n_sites: n_sites as u8,
            bits,
        }
    }

    pub fn all_up(n_sites: usize) -> Self {
        Self::from_bits_unchecked(0, n_sites)
    }

    /// `true` entries are spin down.
    pub fn from_down_spins(down: &[bool]) -> Result<Self> {
        let bits = down
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &d)| if d { acc | (1 << i) } else { acc });
        Self::new(bits, down.len())
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn n_sites(&self) -> usize {
        self.n_sites as usize
    }

    /// Index of this configuration in the full basis (equal to the bit word).
    #[inline]
    pub fn index(&self) -> usize {
        self.bits as usize
    }

    #[inline]
    pub fn is_up(&self, site: usize) -> bool {
        self.bits >> site & 1 == 0
    }

    /// Spin variable `s_i ∈ {+1, -1}`.
    #[inline]
    pub fn spin(&self, site: usize) -> f64 {
        if self.is_up(site) {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    pub fn flipped(&self, mask: u64) -> Self {
        Self::from_bits_unchecked(self.bits ^ mask, self.n_sites())
    }

    /// `Σ_i s_i`.
    pub fn magnetization(&self) -> i64 {
        let down = self.bits.count_ones() as i64;
        self.n_sites as i64 - 2 * down
    }

    /// Parity `Π_{i ∈ mask} s_i`.
    #[inline]
    pub fn parity(&self, mask: u64) -> f64 {
        if (self.bits & mask).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Iterator over the full `2^n` basis in index order.
    pub fn basis(n_sites: usize) -> impl ExactSizeIterator<Item = SpinConfiguration> + DoubleEndedIterator {
        assert!(n_sites >= 1 && n_sites < 63, "basis enumeration needs 1..=62 sites");
        (0..1usize << n_sites).map(move |b| SpinConfiguration::from_bits_unchecked(b as u64, n_sites))
    }
}

impl fmt::Debug for SpinConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.n_sites())
            .map(|i| if self.is_up(i) { '↑' } else { '↓' })
            .collect();
        write!(f, "|{s}⟩")
    }
}

#[inline]
pub(crate) fn full_mask(n_sites: usize) -> u64 {
    if n_sites >= 64 {
        u64::MAX
    } else {
        (1u64 << n_sites) - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Open,
}

/// A nearest-neighbour bond. `multiplicity > 1` only arises for a periodic
/// chain of two sites, where both neighbours of a site coincide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub multiplicity: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    extents: Vec<usize>,
    boundary: Boundary,
    bonds: Vec<Bond>,
}

impl Lattice {
    /// One-dimensional chain. A periodic chain of length `L ≥ 2` carries `L`
    /// bonds counted with multiplicity.
    pub fn chain(length: usize, boundary: Boundary) -> Result<Self> {
        if length == 0 || length > MAX_SITES {
            return Err(Error::InvalidInput(format!("chain length {length}")));
        }
        let mut bonds = BondSet::default();
        for i in 0..length.saturating_sub(1) {
            bonds.add(i, i + 1);
        }
        if boundary == Boundary::Periodic && length >= 2 {
            bonds.add(length - 1, 0);
        }
        Ok(Self {
            extents: vec![length],
            boundary,
            bonds: bonds.finish(),
        })
    }

    /// Rectangular `lx × ly` lattice, site index `x + lx * y`. Wrap-around
    /// bonds along an extent of 2 duplicate the direct ones and are dropped.
    pub fn square(lx: usize, ly: usize, boundary: Boundary) -> Result<Self> {
        if lx == 0 || ly == 0 || lx * ly > MAX_SITES {
            return Err(Error::InvalidInput(format!("square lattice {lx}x{ly}")));
        }
        let site = |x: usize, y: usize| x + lx * y;
        let mut bonds = BondSet::default();
        for y in 0..ly {
            for x in 0..lx {
                if x + 1 < lx {
                    bonds.add(site(x, y), site(x + 1, y));
                } else if boundary == Boundary::Periodic && lx > 2 {
                    bonds.add(site(x, y), site(0, y));
                }
                if y + 1 < ly {
                    bonds.add(site(x, y), site(x, y + 1));
                } else if boundary == Boundary::Periodic && ly > 2 {
                    bonds.add(site(x, y), site(x, 0));
                }
            }
        }
        Ok(Self {
            extents: vec![lx, ly],
            boundary,
            bonds: bonds.finish_dedup(),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn dimension(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Distinct bonds, `i < j`, sorted.
    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bond_count_with_multiplicity(&self) -> usize {
        self.bonds.iter().map(|b| b.multiplicity as usize).sum()
    }
}

#[derive(Default)]
struct BondSet(BTreeMap<(usize, usize), u32>);

impl BondSet {
    fn add(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        *self.0.entry((a.min(b), a.max(b))).or_default() += 1;
    }

    fn finish(self) -> Vec<Bond> {
        self.0
            .into_iter()
            .map(|((i, j), multiplicity)| Bond { i, j, multiplicity })
            .collect()
    }

    fn finish_dedup(self) -> Vec<Bond> {
        self.0
            .into_keys()
            .map(|(i, j)| Bond {
                i,
                j,
                multiplicity: 1,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    /// `σ_a σ_b = phase · σ_c` (`None` for the identity).
    fn mul(self, other: PauliAxis) -> (Complex64, Option<PauliAxis>) {
        use PauliAxis::*;
        match (self, other) {
            (a, b) if a == b => (Complex64::new(1.0, 0.0), None),
            (X, Y) => (I, Some(Z)),
            (Y, X) => (-I, Some(Z)),
            (Y, Z) => (I, Some(X)),
            (Z, Y) => (-I, Some(X)),
            (Z, X) => (I, Some(Y)),
            (X, Z) => (-I, Some(Y)),
            _ => unreachable!(),
        }
    }
}

/// Weighted tensor product of single-site Pauli matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliString {
    coefficient: Complex64,
    factors: Vec<(usize, PauliAxis)>,
}

impl PauliString {
    /// Factors are sorted by site; two factors on the same site are rejected.
    pub fn new(coefficient: impl Into<Complex64>, factors: Vec<(usize, PauliAxis)>) -> Result<Self> {
        let mut factors = factors;
        factors.sort_by_key(|f| f.0);
        if factors.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput(
                "Pauli string with two factors on one site".into(),
            ));
        }
        if factors.iter().any(|f| f.0 >= MAX_SITES) {
            return Err(Error::InvalidInput("Pauli factor site out of range".into()));
        }
        Ok(Self {
            coefficient: coefficient.into(),
            factors,
        })
    }

    pub fn identity(coefficient: impl Into<Complex64>) -> Self {
        Self {
            coefficient: coefficient.into(),
            factors: Vec::new(),
        }
    }

    pub fn coefficient(&self) -> Complex64 {
        self.coefficient
    }

    pub fn factors(&self) -> &[(usize, PauliAxis)] {
        &self.factors
    }

    pub fn locality(&self) -> usize {
        self.factors.len()
    }

    pub fn max_site(&self) -> Option<usize> {
        self.factors.last().map(|f| f.0)
    }

    /// Sites where the string flips the spin (X or Y factors).
    pub fn flip_mask(&self) -> u64 {
        self.mask_of(|a| a != PauliAxis::Z)
    }

    pub fn is_diagonal(&self) -> bool {
        self.flip_mask() == 0
    }

    fn mask_of(&self, pred: impl Fn(PauliAxis) -> bool) -> u64 {
        self.factors
            .iter()
            .filter(|f| pred(f.1))
            .fold(0, |m, f| m | 1 << f.0)
    }

    pub fn scaled(&self, c: impl Into<Complex64>) -> Self {
        Self {
            coefficient: self.coefficient * c.into(),
            factors: self.factors.clone(),
        }
    }

    /// Operator product `self · other`.
    pub fn mul(&self, other: &PauliString) -> PauliString {
        let mut phase = self.coefficient * other.coefficient;
        let mut out = Vec::with_capacity(self.factors.len() + other.factors.len());
        let (mut a, mut b) = (self.factors.iter().peekable(), other.factors.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&(sa, pa)), Some(&&(sb, pb))) => {
                    if sa == sb {
                        let (ph, axis) = pa.mul(pb);
                        phase *= ph;
                        if let Some(axis) = axis {
                            out.push((sa, axis));
                        }
                        a.next();
                        b.next();
                    } else if sa < sb {
                        out.push((sa, pa));
                        a.next();
                    } else {
                        out.push((sb, pb));
                        b.next();
                    }
                }
                (Some(&&f), None) => {
                    out.push(f);
                    a.next();
                }
                (None, Some(&&f)) => {
                    out.push(f);
                    b.next();
                }
                (None, None) => break,
            }
        }
        PauliString {
            coefficient: phase,
            factors: out,
        }
    }

    /// Matrix element `⟨x|P|x ⊕ flip_mask⟩` including the coefficient.
    pub fn element(&self, x: SpinConfiguration) -> Complex64 {
        let compiled = CompiledTerm::from_string(self);
        compiled.value(x.bits())
    }
}

/// A string prepared for fast row evaluation: the value at row `x` is
/// `coefficient · (-1)^{popcount(x & sign_mask)}`, with the `∓i` phases of Y
/// factors folded into the coefficient.
#[derive(Clone, Debug)]
struct CompiledTerm {
    coefficient: Complex64,
    sign_mask: u64,
}

impl CompiledTerm {
    fn from_string(s: &PauliString) -> Self {
        let y_count = s.factors.iter().filter(|f| f.1 == PauliAxis::Y).count();
        let y_phase = match y_count % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => -I,
            2 => Complex64::new(-1.0, 0.0),
            _ => I,
        };
        Self {
            coefficient: s.coefficient * y_phase,
            sign_mask: s.mask_of(|a| a != PauliAxis::X),
        }
    }

    #[inline]
    fn value(&self, bits: u64) -> Complex64 {
        if (bits & self.sign_mask).count_ones() % 2 == 0 {
            self.coefficient
        } else {
            -self.coefficient
        }
    }
}

#[derive(Clone, Debug)]
struct FlipGroup {
    flip: u64,
    terms: Vec<CompiledTerm>,
}

/// Sum of Pauli strings on `n_sites` sites.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "PauliOperatorRepr", into = "PauliOperatorRepr")]
pub struct PauliOperator {
    n_sites: usize,
    terms: Vec<PauliString>,
    groups: Vec<FlipGroup>,
    hermitian: bool,
}

#[derive(Serialize, Deserialize)]
struct PauliOperatorRepr {
    n_sites: usize,
    terms: Vec<PauliString>,
}

impl From<PauliOperatorRepr> for PauliOperator {
    fn from(r: PauliOperatorRepr) -> Self {
        PauliOperator::build(r.n_sites, r.terms)
    }
}

impl From<PauliOperator> for PauliOperatorRepr {
    fn from(op: PauliOperator) -> Self {
        PauliOperatorRepr {
            n_sites: op.n_sites,
            terms: op.terms,
        }
    }
}

impl PartialEq for PauliOperator {
    fn eq(&self, other: &Self) -> bool {
        self.n_sites == other.n_sites && self.terms == other.terms
    }
}

impl PauliOperator {
    pub fn new(n_sites: usize, terms: Vec<PauliString>) -> Result<Self> {
        if n_sites == 0 || n_sites > MAX_SITES {
            return Err(Error::InvalidInput(format!("site count {n_sites}")));
        }
        if let Some(bad) = terms.iter().find(|t| t.max_site().is_some_and(|s| s >= n_sites)) {
            return Err(Error::InvalidInput(format!(
                "term acts on site {} of a {n_sites}-site system",
                bad.max_site().unwrap_or(0)
            )));
        }
        Ok(Self::build(n_sites, terms))
    }

    fn build(n_sites: usize, terms: Vec<PauliString>) -> Self {
        let mut by_flip: BTreeMap<u64, Vec<CompiledTerm>> = BTreeMap::new();
        for t in &terms {
            by_flip
                .entry(t.flip_mask())
                .or_default()
                .push(CompiledTerm::from_string(t));
        }
        let groups = by_flip
            .into_iter()
            .map(|(flip, terms)| FlipGroup { flip, terms })
            .collect();
        let hermitian = check_hermitian(&terms);
        Self {
            n_sites,
            terms,
            groups,
            hermitian,
        }
    }

    pub fn identity(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, vec![PauliString::identity(1.0)])
    }

    /// `coefficient · σ^axis_site`.
    pub fn single(n_sites: usize, site: usize, axis: PauliAxis, coefficient: f64) -> Result<Self> {
        Self::new(n_sites, vec![PauliString::new(coefficient, vec![(site, axis)])?])
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn terms(&self) -> &[PauliString] {
        &self.terms
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_diagonal(&self) -> bool {
        self.terms.iter().all(PauliString::is_diagonal)
    }

    pub fn max_locality(&self) -> usize {
        self.terms.iter().map(PauliString::locality).max().unwrap_or(0)
    }

    /// Upper bound on the number of connected configurations of any row.
    pub fn max_connections(&self) -> usize {
        self.groups.len()
    }

    pub fn scaled(&self, c: impl Into<Complex64>) -> Self {
        let c = c.into();
        Self::build(self.n_sites, self.terms.iter().map(|t| t.scaled(c)).collect())
    }

    pub fn plus(&self, other: &PauliOperator) -> Result<Self> {
        if self.n_sites != other.n_sites {
            return Err(Error::SiteMismatch {
                expected: self.n_sites,
                got: other.n_sites,
            });
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self::build(self.n_sites, terms).simplified())
    }

    /// Operator product, with identical Pauli words merged.
    pub fn mul(&self, other: &PauliOperator) -> Result<Self> {
        if self.n_sites != other.n_sites {
            return Err(Error::SiteMismatch {
                expected: self.n_sites,
                got: other.n_sites,
            });
        }
        let terms = self
            .terms
            .iter()
            .flat_map(|a| other.terms.iter().map(move |b| a.mul(b)))
            .collect();
        Ok(Self::build(self.n_sites, terms).simplified())
    }

    /// Merge strings with identical factors and drop exactly vanishing ones.
    pub fn simplified(&self) -> Self {
        let mut merged: BTreeMap<Vec<(usize, PauliAxis)>, Complex64> = BTreeMap::new();
        for t in &self.terms {
            *merged.entry(t.factors.clone()).or_insert(ZERO) += t.coefficient;
        }
        let terms = merged
            .into_iter()
            .filter(|(_, c)| *c != ZERO)
            .map(|(factors, coefficient)| PauliString {
                coefficient,
                factors,
            })
            .collect();
        Self::build(self.n_sites, terms)
    }

    /// Nonzero matrix elements `⟨x|O|x'⟩ = m` of row `x`, one entry per
    /// distinct `x'`, ordered by flip mask.
    pub fn connected_configurations(
        &self,
        x: SpinConfiguration,
    ) -> Result<Vec<(SpinConfiguration, Complex64)>> {
        if x.n_sites() != self.n_sites {
            return Err(Error::SiteMismatch {
                expected: self.n_sites,
                got: x.n_sites(),
            });
        }
        let mut out = Vec::with_capacity(self.groups.len());
        self.for_each_connected(x, |xp, m| out.push((xp, m)));
        Ok(out)
    }

    /// Allocation-free form of [`connected_configurations`](Self::connected_configurations).
    /// Sites are not re-checked.
    #[inline]
    pub fn for_each_connected(
        &self,
        x: SpinConfiguration,
        mut f: impl FnMut(SpinConfiguration, Complex64),
    ) {
        let bits = x.bits();
        for g in &self.groups {
            let m: Complex64 = g.terms.iter().map(|t| t.value(bits)).sum();
            if m != ZERO {
                f(x.flipped(g.flip), m);
            }
        }
    }

    /// `⟨x|O|x⟩`.
    pub fn diagonal_element(&self, x: SpinConfiguration) -> Complex64 {
        let bits = x.bits();
        self.groups
            .iter()
            .find(|g| g.flip == 0)
            .map(|g| g.terms.iter().map(|t| t.value(bits)).sum())
            .unwrap_or(ZERO)
    }
}

fn check_hermitian(terms: &[PauliString]) -> bool {
    let mut merged: BTreeMap<&[(usize, PauliAxis)], Complex64> = BTreeMap::new();
    let mut scale: f64 = 0.0;
    for t in terms {
        *merged.entry(&t.factors).or_insert(ZERO) += t.coefficient;
        scale = scale.max(t.coefficient.norm());
    }
    merged.values().all(|c| c.im.abs() <= 1e-12 * scale.max(1.0))
}

/// `H = -J Σ_bonds Z_i Z_j - hx Σ_i X_i - hz Σ_i Z_i`.
pub fn build_tfim(lattice: &Lattice, j: f64, hx: f64, hz: f64) -> Result<PauliOperator> {
    if [j, hx, hz].iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite coupling".into()));
    }
    if j == 0.0 && hx == 0.0 && hz == 0.0 {
        return Err(Error::DegenerateGenerator);
    }
    let n = lattice.n_sites();
    let mut terms = Vec::new();
    if j != 0.0 {
        for b in lattice.bonds() {
            terms.push(PauliString::new(
                -j * b.multiplicity as f64,
                vec![(b.i, PauliAxis::Z), (b.j, PauliAxis::Z)],
            )?);
        }
    }
    for (h, axis) in [(hx, PauliAxis::X), (hz, PauliAxis::Z)] {
        if h != 0.0 {
            for i in 0..n {
                terms.push(PauliString::new(-h, vec![(i, axis)])?);
            }
        }
    }
    PauliOperator::new(n, terms)
}

/// `H = J Σ_bonds (X_i X_j + Y_i Y_j + Z_i Z_j)`.
pub fn build_heisenberg(lattice: &Lattice, j: f64) -> Result<PauliOperator> {
    if !j.is_finite() {
        return Err(Error::InvalidInput("non-finite coupling".into()));
    }
    if j == 0.0 || lattice.bonds().is_empty() {
        return Err(Error::DegenerateGenerator);
    }
    let mut terms = Vec::new();
    for b in lattice.bonds() {
        for axis in [PauliAxis::X, PauliAxis::Y, PauliAxis::Z] {
            terms.push(PauliString::new(
                j * b.multiplicity as f64,
                vec![(b.i, axis), (b.j, axis)],
            )?);
        }
    }
    PauliOperator::new(lattice.n_sites(), terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn chain_bond_counts() {
        for l in 3..9 {
            assert_eq!(Lattice::chain(l, Boundary::Periodic).unwrap().bonds().len(), l);
            assert_eq!(Lattice::chain(l, Boundary::Open).unwrap().bonds().len(), l - 1);
        }
        let two = Lattice::chain(2, Boundary::Periodic).unwrap();
        assert_eq!(two.bonds().len(), 1);
        assert_eq!(two.bond_count_with_multiplicity(), 2);
        assert!(Lattice::chain(1, Boundary::Periodic).unwrap().bonds().is_empty());
    }

    #[test]
    fn square_torus_dedups_two_extent() {
        let l = Lattice::square(2, 2, Boundary::Periodic).unwrap();
        assert_eq!(l.bonds().len(), 4);
        let l = Lattice::square(2, 3, Boundary::Periodic).unwrap();
        // 3 rungs along x, 6 bonds along the periodic y direction of length 3
        assert_eq!(l.bonds().len(), 9);
        let l = Lattice::square(3, 3, Boundary::Periodic).unwrap();
        assert_eq!(l.bonds().len(), 18);
        for b in l.bonds() {
            assert!(b.i < b.j && b.j < 9);
        }
    }

    #[test]
    fn pauli_products() {
        let x = PauliString::new(1.0, vec![(0, PauliAxis::X)]).unwrap();
        let y = PauliString::new(1.0, vec![(0, PauliAxis::Y)]).unwrap();
        let xy = x.mul(&y);
        assert_eq!(xy.factors(), &[(0, PauliAxis::Z)]);
        assert_eq!(xy.coefficient(), c(0.0, 1.0));
        assert!(x.mul(&x).factors().is_empty());
    }

    #[test]
    fn diagonal_operator_single_pair() {
        let op = PauliOperator::new(
            3,
            vec![
                PauliString::new(2.0, vec![(0, PauliAxis::Z), (2, PauliAxis::Z)]).unwrap(),
                PauliString::new(0.5, vec![(1, PauliAxis::Z)]).unwrap(),
            ],
        )
        .unwrap();
        let x = SpinConfiguration::new(0b001, 3).unwrap();
        let row = op.connected_configurations(x).unwrap();
        assert_eq!(row, vec![(x, c(-2.0 + 0.5, 0.0))]);
    }

    #[test]
    fn single_x_flips() {
        let op = PauliOperator::single(2, 0, PauliAxis::X, 1.0).unwrap();
        let up = SpinConfiguration::all_up(2);
        let row = op.connected_configurations(up).unwrap();
        assert_eq!(row, vec![(SpinConfiguration::new(0b01, 2).unwrap(), c(1.0, 0.0))]);
    }

    #[test]
    fn y_phases() {
        let op = PauliOperator::single(1, 0, PauliAxis::Y, 1.0).unwrap();
        let up = SpinConfiguration::new(0, 1).unwrap();
        let down = SpinConfiguration::new(1, 1).unwrap();
        assert_eq!(op.connected_configurations(up).unwrap(), vec![(down, c(0.0, -1.0))]);
        assert_eq!(op.connected_configurations(down).unwrap(), vec![(up, c(0.0, 1.0))]);
    }

    #[test]
    fn duplicates_merged_and_zeros_dropped() {
        // XX + YY on aligned spins cancels exactly
        let l = Lattice::chain(2, Boundary::Open).unwrap();
        let h = build_heisenberg(&l, 1.0).unwrap();
        let up = SpinConfiguration::all_up(2);
        let row = h.connected_configurations(up).unwrap();
        assert_eq!(row, vec![(up, c(1.0, 0.0))]);
        let ud = SpinConfiguration::new(0b10, 2).unwrap();
        let row = h.connected_configurations(ud).unwrap();
        assert_eq!(row.len(), 2);
        assert!(row.contains(&(ud, c(-1.0, 0.0))));
        assert!(row.contains(&(SpinConfiguration::new(0b01, 2).unwrap(), c(2.0, 0.0))));
    }

    #[test]
    fn tfim_term_count_and_errors() {
        let l = Lattice::chain(5, Boundary::Periodic).unwrap();
        let h = build_tfim(&l, 1.0, 0.5, 0.2).unwrap();
        assert_eq!(h.terms().len(), 5 + 5 + 5);
        assert!(h.is_hermitian());
        assert!(matches!(build_tfim(&l, 0.0, 0.0, 0.0), Err(Error::DegenerateGenerator)));
        let one = Lattice::chain(1, Boundary::Periodic).unwrap();
        assert!(matches!(
            build_heisenberg(&one, 1.0),
            Err(Error::DegenerateGenerator)
        ));
    }

    #[test]
    fn hermiticity_flag() {
        let t = |c: Complex64| PauliString::new(c, vec![(0, PauliAxis::X), (1, PauliAxis::Y)]).unwrap();
        let non = PauliOperator::new(2, vec![t(c(0.0, 1.0))]).unwrap();
        assert!(!non.is_hermitian());
        let paired = PauliOperator::new(2, vec![t(c(1.0, 1.0)), t(c(1.0, -1.0))]).unwrap();
        assert!(paired.is_hermitian());
    }

    #[test]
    fn rejects_mismatched_sites() {
        let op = PauliOperator::single(3, 0, PauliAxis::X, 1.0).unwrap();
        assert!(op.connected_configurations(SpinConfiguration::all_up(2)).is_err());
        assert!(PauliOperator::single(2, 2, PauliAxis::X, 1.0).is_err());
    }

    #[test]
    fn configuration_ordering_and_spins() {
        let a = SpinConfiguration::new(0b011, 3).unwrap();
        let b = SpinConfiguration::new(0b100, 3).unwrap();
        assert!(a < b);
        assert_eq!(a.spin(0), -1.0);
        assert_eq!(a.spin(2), 1.0);
        assert_eq!(a.magnetization(), -1);
        assert!(SpinConfiguration::new(0b1000, 3).is_err());
    }
}
